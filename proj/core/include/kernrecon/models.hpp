#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "kernrecon/common.hpp"
#include "kernrecon/kernels.hpp"
#include "kernrecon/oracle.hpp"

namespace kernrecon {

struct Dataset {
  Matrix x;  // N x d inputs
  Matrix y;  // N x C targets, or N x 1 labels for SVM training
  std::optional<ImageShape> shape;

  /// Throws InputError unless N >= 1, x is finite and y has N rows.
  void validate() const;
};

/// f_c(z) = sum_i coeffs(i, c) * k(z, support_i).
class TrainedKernelModel {
 public:
  TrainedKernelModel(KernelSpec spec, Matrix support, Matrix coeffs);

  const KernelSpec& kernel() const { return spec_; }
  const Matrix& support() const { return support_; }
  const Matrix& coeffs() const { return coeffs_; }
  Index input_dim() const { return support_.cols(); }
  Index output_dim() const { return coeffs_.cols(); }
  Index size() const { return support_.rows(); }

  Matrix evaluate(const Matrix& queries) const;

 private:
  KernelSpec spec_;
  Matrix support_;
  Matrix coeffs_;
};

/// Gaussian KDE with diagonal bandwidth and uniform weights 1/N.
class KdeModel {
 public:
  KdeModel(Matrix support, Vector h_diag);

  const Matrix& support() const { return support_; }
  const Vector& h_diag() const { return h_diag_; }
  Index input_dim() const { return support_.cols(); }

  Matrix evaluate(const Matrix& queries) const;
  TrainedKernelModel as_kernel_model() const;

 private:
  Matrix support_;
  Vector h_diag_;
};

Matrix oracle_evaluate(const TrainedKernelModel& model, const Matrix& queries);
Matrix oracle_evaluate(const KdeModel& model, const Matrix& queries);

/// Hands the model to an opaque oracle; the caller keeps no reference to it.
std::unique_ptr<ModelOracle> make_oracle(TrainedKernelModel model);
std::unique_ptr<ModelOracle> make_oracle(const KdeModel& model);

// ---------------------------------------------------------------------------
// Kernel ridge regression

/// coeffs = (K + N lambda I)^{-1} Y, via Cholesky with diagonal jitter
/// escalation (1e-12 * trace(K) / N, growing 10x per retry, 6 retries).
///
/// lambda = 0 is only accepted for strictly positive definite kernels.
/// Duplicate inputs are rejected with InputError; a system that stays
/// indefinite after all retries raises TrainingError.
TrainedKernelModel train_krr(const Dataset& data, const KernelSpec& spec, double lambda);

/// ||(K + N lambda I) coeffs - Y||_F / ||Y||_F for a KRR model and its targets.
double krr_relative_residual(const TrainedKernelModel& model, const Matrix& targets, double lambda);

// ---------------------------------------------------------------------------
// Hinge-loss SVM trained by subgradient descent on the coefficients

struct HingeTerm {
  double value;
  double dvalue_df;  // subgradient with respect to the prediction f
};

/// max(0, 1 - y f) and its subgradient; the kink (y f == 1) counts as inactive.
HingeTerm binary_hinge(double prediction, double label);

/// Labels for SVM training: {-1, +1} (binary, one output) or class indices
/// 1..C (Crammer-Singer, C outputs).
struct SvmLabels {
  std::vector<int> labels;
  Index classes = 1;
  bool binary = true;

  static SvmLabels from_targets(const Matrix& y);
};

/// Mean hinge objective of predictions gram * coeffs.
double svm_objective(const Matrix& gram, const Matrix& coeffs, const SvmLabels& labels);

struct SvmOptions {
  std::size_t steps = 100000;
  double max_lr = 1e-2;
  std::size_t trace_stride = 1;
};

struct SvmResult {
  TrainedKernelModel model;
  /// (step, objective) pairs; the objective at step t is evaluated at the
  /// iterate before update t. The last entry is always (steps, objective at
  /// the returned coefficients).
  std::vector<std::pair<std::size_t, double>> loss_trace;

  double initial_loss() const { return loss_trace.front().second; }
  double final_loss() const { return loss_trace.back().second; }
};

/// Full-batch subgradient descent from zero coefficients under a OneCycle
/// learning-rate schedule. Throws TrainingError on a non-finite objective.
SvmResult train_svm_gd(const Dataset& data, const KernelSpec& spec, const SvmOptions& options = {});

// ---------------------------------------------------------------------------
// Kernel density estimation

/// Scott's rule: h_j = N^{-1/6} * sample standard deviation of coordinate j.
Vector scott_bandwidth(const Matrix& points);

/// Requires N >= 2 and nonzero spread in every coordinate.
KdeModel train_kde(const Matrix& points);

}  // namespace kernrecon
