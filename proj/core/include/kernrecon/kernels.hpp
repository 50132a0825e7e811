#pragma once

#include <string>
#include <variant>

#include "kernrecon/common.hpp"

namespace kernrecon {

/// k(x, x') = exp(-gamma * ||x - x'||)
struct LaplaceKernel {
  double gamma = 1.0;
};

/// k(x, x') = exp(-gamma * ||x - x'||^2)
struct RbfKernel {
  double gamma = 1.0;
};

/// k(x, x') = (c0 + gamma * <x, x'>)^degree
struct PolynomialKernel {
  double c0 = 1.0;
  double gamma = 1.0;
  int degree = 2;
};

/// Fully connected ReLU network NTK of the given depth, extended
/// homogeneously off the unit sphere.
struct NtkKernel {
  int depth = 1;
};

/// Normalized Gaussian with diagonal covariance H = diag(h_diag):
/// k(x, x') = (2 pi)^{-d/2} |H|^{-1/2} exp(-0.5 (x - x')^T H^{-1} (x - x')).
struct BandwidthGaussianKernel {
  Vector h_diag;
};

using KernelSpec =
    std::variant<LaplaceKernel, RbfKernel, PolynomialKernel, NtkKernel, BandwidthGaussianKernel>;

/// Throws InputError if a scale parameter is not strictly positive, degree or
/// depth is below one, or (when dim >= 0) a bandwidth has the wrong length.
void validate(const KernelSpec& spec, Index dim = -1);

/// Laplace, RBF and bandwidth-Gaussian kernels have invertible Gram matrices
/// on any set of distinct points.
bool is_strictly_positive_definite(const KernelSpec& spec);

/// True for kernels of the form g(x - x').
bool is_translation_invariant(const KernelSpec& spec);

/// Short family name: "laplace", "rbf", "polynomial", "ntk", "bandwidth_gaussian".
std::string kernel_name(const KernelSpec& spec);

double eval(const KernelSpec& spec, ConstPointRef x, ConstPointRef x2);

struct GramOptions {
  Index tile_rows = 4096;
  unsigned threads = 1;
};

/// Entry (i, j) is eval(spec, a.row(i), b.row(j)). The assembled matrix does
/// not depend on the tile schedule or thread count.
Matrix eval_matrix(const KernelSpec& spec, const Matrix& a, const Matrix& b,
                   const GramOptions& options = {});

/// Gradient of k(z, .) evaluated at xhat.
///
/// The Laplace kernel is not differentiable at xhat == z; within 1e-12 of
/// coincidence the zero vector (a valid subgradient) is returned.
Point grad_second(const KernelSpec& spec, ConstPointRef z, ConstPointRef xhat);

/// Row i of the result is sum_j weights(j, i) * grad_second(spec, z_j, xhat_i).
///
/// `gram` must equal eval_matrix(spec, queries, xhat); it is reused so the
/// kernel is not evaluated twice per optimization step.
Matrix accumulate_grad_second(const KernelSpec& spec, const Matrix& queries, const Matrix& xhat,
                              const Matrix& gram, const Matrix& weights);

/// For a bandwidth-Gaussian kernel, entry j of the result is
/// sum_{q,i} weights(q, i) * d k(z_q, xhat_i) / d log(h_j).
Vector accumulate_grad_log_bandwidth(const BandwidthGaussianKernel& spec, const Matrix& queries,
                                     const Matrix& xhat, const Matrix& gram,
                                     const Matrix& weights);

// Arc-cosine kernels of order 0 and 1. Arguments may lie anywhere in [-1, 1].
double ntk_kappa0(double u);
double ntk_kappa1(double u);

/// Depth-L NTK at (x, x2); both must be nonzero.
double ntk_eval(int depth, ConstPointRef x, ConstPointRef x2);

}  // namespace kernrecon
