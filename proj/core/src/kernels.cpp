#include "kernrecon/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

namespace kernrecon {
namespace {

constexpr double kLaplaceCoincidence = 1e-12;
constexpr double kArccosClamp = 1e-7;
constexpr double kArccosSlack = 1e-12;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

bool positive(double v) { return std::isfinite(v) && v > 0.0; }

double sq_dist(const double* a, const double* b, Index d) {
  double s = 0.0;
  for (Index k = 0; k < d; ++k) {
    const double t = a[k] - b[k];
    s += t * t;
  }
  return s;
}

double weighted_sq_dist(const double* a, const double* b, const double* inv_h, Index d) {
  double s = 0.0;
  for (Index k = 0; k < d; ++k) {
    const double t = a[k] - b[k];
    s += t * t * inv_h[k];
  }
  return s;
}

double dot(const double* a, const double* b, Index d) {
  double s = 0.0;
  for (Index k = 0; k < d; ++k) s += a[k] * b[k];
  return s;
}

void check_same_dim(Index a, Index b) {
  if (a != b) {
    throw InputError("kernel: dimension mismatch (" + std::to_string(a) + " vs " +
                     std::to_string(b) + ")");
  }
}

double log_normalizer(const Vector& h_diag) {
  const double d = static_cast<double>(h_diag.size());
  return -0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * h_diag.array().log().sum();
}

// Clamps round-off excursions just outside [-1, 1]; rejects anything further.
double checked_cosine(double u) {
  if (!(std::abs(u) <= 1.0 + kArccosSlack)) {
    throw InputError("ntk: cosine argument outside [-1, 1]: " + std::to_string(u));
  }
  return std::clamp(u, -1.0, 1.0);
}

double kappa0_prime(double u) {
  const double c = std::clamp(u, -1.0 + kArccosClamp, 1.0 - kArccosClamp);
  return 1.0 / (std::numbers::pi * std::sqrt(1.0 - c * c));
}

struct SphereNtk {
  double value;
  double derivative;  // d value / d u
};

// NTK on the unit sphere as a function of the cosine u, with its derivative
// accumulated forward through the layer recursion (kappa1' = kappa0).
SphereNtk ntk_sphere(int depth, double u) {
  double gpk = u;
  double d_gpk = 1.0;
  double ntk = u;
  double d_ntk = 1.0;
  for (int layer = 1; layer <= depth; ++layer) {
    const double k0 = ntk_kappa0(gpk);
    const double dk0 = kappa0_prime(gpk);
    const double next_gpk = ntk_kappa1(gpk);
    const double d_next_gpk = k0 * d_gpk;
    const double next_ntk = ntk * k0 + next_gpk;
    const double d_next_ntk = d_ntk * k0 + ntk * dk0 * d_gpk + d_next_gpk;
    gpk = next_gpk;
    d_gpk = d_next_gpk;
    ntk = next_ntk;
    d_ntk = d_next_ntk;
  }
  return {ntk, d_ntk};
}

double norm_or_throw(ConstPointRef x) {
  const double n = x.norm();
  if (!(n > 0.0)) throw InputError("ntk: input must be nonzero");
  return n;
}

Index spec_dim(const KernelSpec& spec) {
  if (const auto* bw = std::get_if<BandwidthGaussianKernel>(&spec)) return bw->h_diag.size();
  return -1;
}

void check_spec_dim(const KernelSpec& spec, Index d) {
  const Index expected = spec_dim(spec);
  if (expected >= 0) check_same_dim(expected, d);
}

// Fills out.row(r0..r1) with the kernel between a's rows and every row of b.
void fill_rows(const KernelSpec& spec, const Matrix& a, const Matrix& b, Matrix& out, Index r0,
               Index r1) {
  const Index d = a.cols();
  const Index nb = b.rows();
  std::visit(
      Overloaded{
          [&](const LaplaceKernel& k) {
            for (Index i = r0; i < r1; ++i) {
              const double* ai = a.data() + i * d;
              for (Index j = 0; j < nb; ++j) {
                out(i, j) = std::exp(-k.gamma * std::sqrt(sq_dist(ai, b.data() + j * d, d)));
              }
            }
          },
          [&](const RbfKernel& k) {
            for (Index i = r0; i < r1; ++i) {
              const double* ai = a.data() + i * d;
              for (Index j = 0; j < nb; ++j) {
                out(i, j) = std::exp(-k.gamma * sq_dist(ai, b.data() + j * d, d));
              }
            }
          },
          [&](const BandwidthGaussianKernel& k) {
            const Vector inv_h = k.h_diag.cwiseInverse();
            const double log_c = log_normalizer(k.h_diag);
            for (Index i = r0; i < r1; ++i) {
              const double* ai = a.data() + i * d;
              for (Index j = 0; j < nb; ++j) {
                out(i, j) = std::exp(
                    log_c - 0.5 * weighted_sq_dist(ai, b.data() + j * d, inv_h.data(), d));
              }
            }
          },
          [&](const auto&) {
            for (Index i = r0; i < r1; ++i) {
              for (Index j = 0; j < nb; ++j) out(i, j) = eval(spec, a.row(i), b.row(j));
            }
          },
      },
      spec);
}

}  // namespace

void validate(const KernelSpec& spec, Index dim) {
  std::visit(Overloaded{
                 [](const LaplaceKernel& k) {
                   if (!positive(k.gamma)) throw InputError("laplace: gamma must be > 0");
                 },
                 [](const RbfKernel& k) {
                   if (!positive(k.gamma)) throw InputError("rbf: gamma must be > 0");
                 },
                 [](const PolynomialKernel& k) {
                   if (!positive(k.c0)) throw InputError("polynomial: c0 must be > 0");
                   if (!positive(k.gamma)) throw InputError("polynomial: gamma must be > 0");
                   if (k.degree < 1) throw InputError("polynomial: degree must be >= 1");
                 },
                 [](const NtkKernel& k) {
                   if (k.depth < 1) throw InputError("ntk: depth must be >= 1");
                 },
                 [dim](const BandwidthGaussianKernel& k) {
                   if (k.h_diag.size() == 0) throw InputError("bandwidth: empty h_diag");
                   for (Index j = 0; j < k.h_diag.size(); ++j) {
                     if (!positive(k.h_diag[j])) {
                       throw InputError("bandwidth: h_diag entries must be > 0");
                     }
                   }
                   if (dim >= 0 && k.h_diag.size() != dim) {
                     throw InputError("bandwidth: h_diag length " +
                                      std::to_string(k.h_diag.size()) + " != dimension " +
                                      std::to_string(dim));
                   }
                 },
             },
             spec);
}

bool is_strictly_positive_definite(const KernelSpec& spec) {
  return std::holds_alternative<LaplaceKernel>(spec) || std::holds_alternative<RbfKernel>(spec) ||
         std::holds_alternative<BandwidthGaussianKernel>(spec);
}

bool is_translation_invariant(const KernelSpec& spec) { return is_strictly_positive_definite(spec); }

std::string kernel_name(const KernelSpec& spec) {
  return std::visit(Overloaded{
                        [](const LaplaceKernel&) { return std::string("laplace"); },
                        [](const RbfKernel&) { return std::string("rbf"); },
                        [](const PolynomialKernel&) { return std::string("polynomial"); },
                        [](const NtkKernel&) { return std::string("ntk"); },
                        [](const BandwidthGaussianKernel&) {
                          return std::string("bandwidth_gaussian");
                        },
                    },
                    spec);
}

double ntk_kappa0(double u) {
  const double c = checked_cosine(u);
  return (std::numbers::pi - std::acos(c)) / std::numbers::pi;
}

double ntk_kappa1(double u) {
  const double c = checked_cosine(u);
  return (c * (std::numbers::pi - std::acos(c)) + std::sqrt(std::max(0.0, 1.0 - c * c))) /
         std::numbers::pi;
}

double ntk_eval(int depth, ConstPointRef x, ConstPointRef x2) {
  check_same_dim(x.size(), x2.size());
  if (depth < 1) throw InputError("ntk: depth must be >= 1");
  const double nx = norm_or_throw(x);
  const double nx2 = norm_or_throw(x2);
  const double u = checked_cosine(x.dot(x2) / (nx * nx2));
  return nx * nx2 * ntk_sphere(depth, u).value;
}

double eval(const KernelSpec& spec, ConstPointRef x, ConstPointRef x2) {
  check_same_dim(x.size(), x2.size());
  check_spec_dim(spec, x.size());
  const Index d = x.size();
  return std::visit(
      Overloaded{
          [&](const LaplaceKernel& k) {
            return std::exp(-k.gamma * std::sqrt(sq_dist(x.data(), x2.data(), d)));
          },
          [&](const RbfKernel& k) { return std::exp(-k.gamma * sq_dist(x.data(), x2.data(), d)); },
          [&](const PolynomialKernel& k) {
            return std::pow(k.c0 + k.gamma * dot(x.data(), x2.data(), d), k.degree);
          },
          [&](const NtkKernel& k) { return ntk_eval(k.depth, x, x2); },
          [&](const BandwidthGaussianKernel& k) {
            const Vector inv_h = k.h_diag.cwiseInverse();
            return std::exp(log_normalizer(k.h_diag) -
                            0.5 * weighted_sq_dist(x.data(), x2.data(), inv_h.data(), d));
          },
      },
      spec);
}

Matrix eval_matrix(const KernelSpec& spec, const Matrix& a, const Matrix& b,
                   const GramOptions& options) {
  check_same_dim(a.cols(), b.cols());
  check_spec_dim(spec, a.cols());
  Matrix out(a.rows(), b.rows());
  const Index tile = std::max<Index>(1, options.tile_rows);
  const Index tiles = (a.rows() + tile - 1) / tile;
  const unsigned workers =
      static_cast<unsigned>(std::min<Index>(std::max(1u, options.threads), std::max<Index>(1, tiles)));

  auto run_tiles = [&](unsigned worker) {
    for (Index t = worker; t < tiles; t += workers) {
      fill_rows(spec, a, b, out, t * tile, std::min(a.rows(), (t + 1) * tile));
    }
  };
  if (workers == 1) {
    run_tiles(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run_tiles, w);
    for (auto& th : pool) th.join();
  }
  return out;
}

Point grad_second(const KernelSpec& spec, ConstPointRef z, ConstPointRef xhat) {
  check_same_dim(z.size(), xhat.size());
  check_spec_dim(spec, z.size());
  return std::visit(
      Overloaded{
          [&](const LaplaceKernel& k) -> Point {
            const Point diff = xhat - z;
            const double r = diff.norm();
            if (r < kLaplaceCoincidence) return Point::Zero(z.size());
            return (-k.gamma * std::exp(-k.gamma * r) / r) * diff;
          },
          [&](const RbfKernel& k) -> Point {
            const Point diff = xhat - z;
            return (-2.0 * k.gamma * std::exp(-k.gamma * diff.squaredNorm())) * diff;
          },
          [&](const PolynomialKernel& k) -> Point {
            const double base = k.c0 + k.gamma * z.dot(xhat);
            return (k.gamma * k.degree * std::pow(base, k.degree - 1)) * z;
          },
          [&](const NtkKernel& k) -> Point {
            const double nz = norm_or_throw(z);
            const double nx = norm_or_throw(xhat);
            const double u = checked_cosine(z.dot(xhat) / (nz * nx));
            const SphereNtk s = ntk_sphere(k.depth, u);
            return (nz * s.value / nx) * xhat + s.derivative * (z - (u * nz / nx) * xhat);
          },
          [&](const BandwidthGaussianKernel& k) -> Point {
            const Point diff = xhat - z;
            const double value = eval(spec, z, xhat);
            return -value * diff.cwiseQuotient(k.h_diag.transpose());
          },
      },
      spec);
}

Matrix accumulate_grad_second(const KernelSpec& spec, const Matrix& queries, const Matrix& xhat,
                              const Matrix& gram, const Matrix& weights) {
  check_same_dim(queries.cols(), xhat.cols());
  const Index m = queries.rows();
  const Index n = xhat.rows();
  const Index d = xhat.cols();
  if (gram.rows() != m || gram.cols() != n || weights.rows() != m || weights.cols() != n) {
    throw InputError("accumulate_grad_second: gram/weights must be queries x candidates");
  }
  Matrix grad = Matrix::Zero(n, d);

  // Translation-invariant kernels: grad = phi(z, xhat) * scale .* (xhat - z).
  auto radial = [&](auto&& phi, const double* inv_scale) {
    for (Index i = 0; i < n; ++i) {
      const double* xi = xhat.data() + i * d;
      double* gi = grad.data() + i * d;
      for (Index j = 0; j < m; ++j) {
        const double w = weights(j, i);
        if (w == 0.0) continue;
        const double* zj = queries.data() + j * d;
        const double c = w * phi(gram(j, i), xi, zj);
        if (c == 0.0) continue;
        for (Index k = 0; k < d; ++k) {
          gi[k] += c * (xi[k] - zj[k]) * (inv_scale ? inv_scale[k] : 1.0);
        }
      }
    }
  };

  std::visit(
      Overloaded{
          [&](const LaplaceKernel& k) {
            radial(
                [&](double kv, const double* xi, const double* zj) {
                  const double r = std::sqrt(sq_dist(xi, zj, d));
                  return r < kLaplaceCoincidence ? 0.0 : -k.gamma * kv / r;
                },
                nullptr);
          },
          [&](const RbfKernel& k) {
            radial([&](double kv, const double*, const double*) { return -2.0 * k.gamma * kv; },
                   nullptr);
          },
          [&](const BandwidthGaussianKernel& k) {
            check_spec_dim(spec, d);
            const Vector inv_h = k.h_diag.cwiseInverse();
            radial([](double kv, const double*, const double*) { return -kv; }, inv_h.data());
          },
          [&](const PolynomialKernel& k) {
            for (Index i = 0; i < n; ++i) {
              const double* xi = xhat.data() + i * d;
              double* gi = grad.data() + i * d;
              for (Index j = 0; j < m; ++j) {
                const double w = weights(j, i);
                if (w == 0.0) continue;
                const double* zj = queries.data() + j * d;
                const double base = k.c0 + k.gamma * dot(zj, xi, d);
                const double c = w * k.gamma * k.degree * std::pow(base, k.degree - 1);
                for (Index q = 0; q < d; ++q) gi[q] += c * zj[q];
              }
            }
          },
          [&](const NtkKernel&) {
            for (Index i = 0; i < n; ++i) {
              for (Index j = 0; j < m; ++j) {
                const double w = weights(j, i);
                if (w == 0.0) continue;
                grad.row(i) += w * grad_second(spec, queries.row(j), xhat.row(i));
              }
            }
          },
      },
      spec);
  return grad;
}

Vector accumulate_grad_log_bandwidth(const BandwidthGaussianKernel& spec, const Matrix& queries,
                                     const Matrix& xhat, const Matrix& gram,
                                     const Matrix& weights) {
  const Index m = queries.rows();
  const Index n = xhat.rows();
  const Index d = xhat.cols();
  check_same_dim(queries.cols(), d);
  check_same_dim(spec.h_diag.size(), d);
  const Vector inv_h = spec.h_diag.cwiseInverse();
  // d k / d log h_k = k * (-1/2 + (x_k - z_k)^2 / (2 h_k))
  Vector grad = Vector::Zero(d);
  for (Index j = 0; j < m; ++j) {
    const double* zj = queries.data() + j * d;
    for (Index i = 0; i < n; ++i) {
      const double c = weights(j, i) * gram(j, i);
      if (c == 0.0) continue;
      const double* xi = xhat.data() + i * d;
      for (Index k = 0; k < d; ++k) {
        const double t = xi[k] - zj[k];
        grad[k] += c * (0.5 * t * t * inv_h[k] - 0.5);
      }
    }
  }
  return grad;
}

}  // namespace kernrecon
