#include "kernrecon/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "kernrecon/optim.hpp"

namespace kernrecon {
namespace {

constexpr double kJitterScale = 1e-12;
constexpr int kJitterRetries = 6;

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw InputError(std::string(what) + " contains non-finite values");
}

void check_query_dim(const Matrix& queries, Index d) {
  if (queries.cols() != d) {
    throw InputError("evaluate: queries have " + std::to_string(queries.cols()) +
                     " columns, model expects " + std::to_string(d));
  }
  require_finite(queries, "queries");
}

// Index of the first row that exactly duplicates an earlier row, or -1.
Index find_duplicate_row(const Matrix& x) {
  std::vector<Index> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  auto row_less = [&](Index a, Index b) {
    for (Index k = 0; k < x.cols(); ++k) {
      if (x(a, k) != x(b, k)) return x(a, k) < x(b, k);
    }
    return false;
  };
  std::sort(order.begin(), order.end(), row_less);
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (!row_less(order[i - 1], order[i]) && !row_less(order[i], order[i - 1])) {
      return std::max(order[i - 1], order[i]);
    }
  }
  return -1;
}

class KernelModelOracle final : public ModelOracle {
 public:
  explicit KernelModelOracle(TrainedKernelModel model) : model_(std::move(model)) {}

  Matrix evaluate(const Matrix& queries) const override { return model_.evaluate(queries); }
  const KernelSpec& kernel() const override { return model_.kernel(); }
  Index input_dim() const override { return model_.input_dim(); }
  Index output_dim() const override { return model_.output_dim(); }

 private:
  TrainedKernelModel model_;
};

}  // namespace

void Dataset::validate() const {
  if (x.rows() < 1) throw InputError("dataset: needs at least one point");
  if (y.rows() != x.rows()) {
    throw InputError("dataset: " + std::to_string(y.rows()) + " target rows for " +
                     std::to_string(x.rows()) + " inputs");
  }
  require_finite(x, "dataset inputs");
  require_finite(y, "dataset targets");
  if (shape && shape->size() != x.cols()) {
    throw InputError("dataset: image shape does not match input dimension");
  }
}

TrainedKernelModel::TrainedKernelModel(KernelSpec spec, Matrix support, Matrix coeffs)
    : spec_(std::move(spec)), support_(std::move(support)), coeffs_(std::move(coeffs)) {
  validate(spec_, support_.cols());
  if (support_.rows() != coeffs_.rows()) {
    throw InputError("model: support and coefficient row counts differ");
  }
  require_finite(support_, "model support");
  require_finite(coeffs_, "model coefficients");
}

Matrix TrainedKernelModel::evaluate(const Matrix& queries) const {
  check_query_dim(queries, input_dim());
  return eval_matrix(spec_, queries, support_) * coeffs_;
}

KdeModel::KdeModel(Matrix support, Vector h_diag)
    : support_(std::move(support)), h_diag_(std::move(h_diag)) {
  if (support_.rows() < 1) throw InputError("kde: empty support");
  validate(BandwidthGaussianKernel{h_diag_}, support_.cols());
  require_finite(support_, "kde support");
}

Matrix KdeModel::evaluate(const Matrix& queries) const { return as_kernel_model().evaluate(queries); }

TrainedKernelModel KdeModel::as_kernel_model() const {
  const Index n = support_.rows();
  return TrainedKernelModel(BandwidthGaussianKernel{h_diag_}, support_,
                            Matrix::Constant(n, 1, 1.0 / static_cast<double>(n)));
}

Matrix oracle_evaluate(const TrainedKernelModel& model, const Matrix& queries) {
  return model.evaluate(queries);
}

Matrix oracle_evaluate(const KdeModel& model, const Matrix& queries) {
  return model.evaluate(queries);
}

std::unique_ptr<ModelOracle> make_oracle(TrainedKernelModel model) {
  return std::make_unique<KernelModelOracle>(std::move(model));
}

std::unique_ptr<ModelOracle> make_oracle(const KdeModel& model) {
  return make_oracle(model.as_kernel_model());
}

// ---------------------------------------------------------------------------

TrainedKernelModel train_krr(const Dataset& data, const KernelSpec& spec, double lambda) {
  data.validate();
  validate(spec, data.x.cols());
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InputError("krr: lambda must be >= 0");
  if (lambda == 0.0 && !is_strictly_positive_definite(spec)) {
    throw InputError("krr: lambda = 0 requires a strictly positive definite kernel, got " +
                     kernel_name(spec));
  }
  if (const Index dup = find_duplicate_row(data.x); dup >= 0) {
    throw InputError("krr: training input " + std::to_string(dup) + " is a duplicate");
  }

  const Index n = data.x.rows();
  Eigen::MatrixXd system = eval_matrix(spec, data.x, data.x);
  system.diagonal().array() += static_cast<double>(n) * lambda;
  const Eigen::MatrixXd rhs = data.y;

  double jitter = kJitterScale * system.trace() / static_cast<double>(n);
  for (int attempt = 0; attempt <= kJitterRetries; ++attempt) {
    Eigen::MatrixXd shifted = system;
    if (attempt > 0) {
      shifted.diagonal().array() += jitter;
      jitter *= 10.0;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(shifted);
    if (llt.info() != Eigen::Success) continue;
    Matrix coeffs = llt.solve(rhs);
    if (!coeffs.allFinite()) continue;
    return TrainedKernelModel(spec, data.x, std::move(coeffs));
  }
  throw TrainingError("krr: kernel system is singular or indefinite after " +
                      std::to_string(kJitterRetries) + " jitter retries");
}

double krr_relative_residual(const TrainedKernelModel& model, const Matrix& targets,
                             double lambda) {
  Matrix system = eval_matrix(model.kernel(), model.support(), model.support());
  system.diagonal().array() += static_cast<double>(model.size()) * lambda;
  const double denom = targets.norm();
  const double num = (system * model.coeffs() - targets).norm();
  return denom > 0.0 ? num / denom : num;
}

// ---------------------------------------------------------------------------

HingeTerm binary_hinge(double prediction, double label) {
  const double slack = 1.0 - label * prediction;
  if (slack > 0.0) return {slack, -label};
  return {0.0, 0.0};
}

SvmLabels SvmLabels::from_targets(const Matrix& y) {
  if (y.cols() != 1) throw InputError("svm: labels must be a single column");
  SvmLabels out;
  out.labels.reserve(static_cast<std::size_t>(y.rows()));
  bool has_negative = false;
  int max_label = 0;
  for (Index i = 0; i < y.rows(); ++i) {
    const double v = y(i, 0);
    const int label = static_cast<int>(std::lround(v));
    if (static_cast<double>(label) != v) throw InputError("svm: labels must be integers");
    if (label == 0 || label < -1) throw InputError("svm: label " + std::to_string(label) + " invalid");
    has_negative = has_negative || label == -1;
    max_label = std::max(max_label, label);
    out.labels.push_back(label);
  }
  if (has_negative || max_label <= 1) {
    if (max_label > 1) throw InputError("svm: mixed {-1,+1} and class-index labels");
    out.binary = true;
    out.classes = 1;
  } else {
    out.binary = false;
    out.classes = max_label;
  }
  return out;
}

namespace {

// Mean hinge objective and its subgradient with respect to the predictions.
double hinge_objective(const Matrix& predictions, const SvmLabels& labels, Matrix* grad_pred) {
  const Index n = predictions.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  if (grad_pred) grad_pred->setZero(predictions.rows(), predictions.cols());
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const int y = labels.labels[static_cast<std::size_t>(i)];
    if (labels.binary) {
      const HingeTerm h = binary_hinge(predictions(i, 0), static_cast<double>(y));
      total += h.value;
      if (grad_pred) (*grad_pred)(i, 0) = h.dvalue_df * inv_n;
      continue;
    }
    const Index true_class = y - 1;
    Index rival = -1;
    for (Index c = 0; c < labels.classes; ++c) {
      if (c == true_class) continue;
      if (rival < 0 || predictions(i, c) > predictions(i, rival)) rival = c;
    }
    const double slack = 1.0 + predictions(i, rival) - predictions(i, true_class);
    if (slack > 0.0) {
      total += slack;
      if (grad_pred) {
        (*grad_pred)(i, rival) += inv_n;
        (*grad_pred)(i, true_class) -= inv_n;
      }
    }
  }
  return total * inv_n;
}

}  // namespace

double svm_objective(const Matrix& gram, const Matrix& coeffs, const SvmLabels& labels) {
  return hinge_objective(gram * coeffs, labels, nullptr);
}

SvmResult train_svm_gd(const Dataset& data, const KernelSpec& spec, const SvmOptions& options) {
  data.validate();
  validate(spec, data.x.cols());
  if (options.steps < 1) throw InputError("svm: steps must be >= 1");
  const SvmLabels labels = SvmLabels::from_targets(data.y);
  if (!labels.binary && labels.classes < 2) throw InputError("svm: need at least two classes");

  OneCycleSchedule schedule;
  schedule.max_lr = options.max_lr;
  schedule.total_steps = options.steps;
  schedule.validate();
  const std::size_t stride = std::max<std::size_t>(1, options.trace_stride);

  const Matrix gram = eval_matrix(spec, data.x, data.x);
  Matrix coeffs = Matrix::Zero(data.x.rows(), labels.classes);
  Matrix grad_pred;
  std::vector<std::pair<std::size_t, double>> trace;

  for (std::size_t t = 0; t < options.steps; ++t) {
    const double loss = hinge_objective(gram * coeffs, labels, &grad_pred);
    if (!std::isfinite(loss)) {
      throw TrainingError("svm: non-finite objective at step " + std::to_string(t));
    }
    if (t % stride == 0) trace.emplace_back(t, loss);
    // f = K alpha with K symmetric, so d/d alpha = K^T d/df = K d/df.
    coeffs.noalias() -= onecycle_lr(schedule, t) * (gram * grad_pred);
  }
  const double final_loss = svm_objective(gram, coeffs, labels);
  if (!std::isfinite(final_loss)) {
    throw TrainingError("svm: non-finite objective at step " + std::to_string(options.steps));
  }
  trace.emplace_back(options.steps, final_loss);
  return SvmResult{TrainedKernelModel(spec, data.x, std::move(coeffs)), std::move(trace)};
}

// ---------------------------------------------------------------------------

Vector scott_bandwidth(const Matrix& points) {
  const Index n = points.rows();
  if (n < 2) throw InputError("kde: need at least two points for a sample standard deviation");
  require_finite(points, "kde points");
  const Point mean = points.colwise().mean();
  const Vector sd =
      ((points.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(n - 1))
          .sqrt()
          .transpose();
  for (Index j = 0; j < sd.size(); ++j) {
    if (!(sd[j] > 0.0)) {
      throw InputError("kde: coordinate " + std::to_string(j) + " has zero variance");
    }
  }
  return std::pow(static_cast<double>(n), -1.0 / 6.0) * sd;
}

KdeModel train_kde(const Matrix& points) { return KdeModel(points, scott_bandwidth(points)); }

}  // namespace kernrecon
