#include "kernrecon/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace kernrecon {
namespace {

// Separable Gaussian smoothing of one h x w plane, window truncated at the
// borders and renormalized.
class BorderGaussian {
 public:
  BorderGaussian(Index window, double sigma) : half_(window / 2), taps_(2 * (window / 2) + 1) {
    if (window < 1 || !(sigma > 0.0)) throw InputError("ssim: bad window parameters");
    for (Index k = -half_; k <= half_; ++k) {
      taps_[k + half_] = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
    }
  }

  // Returns the filtered plane; `in` is row-major h x w.
  std::vector<double> apply(const double* in, Index h, Index w) const {
    std::vector<double> tmp(static_cast<std::size_t>(h * w));
    std::vector<double> out(static_cast<std::size_t>(h * w));
    for (Index r = 0; r < h; ++r) {
      for (Index c = 0; c < w; ++c) {
        double acc = 0.0;
        double norm = 0.0;
        for (Index k = std::max(-half_, -c); k <= std::min(half_, w - 1 - c); ++k) {
          acc += taps_[k + half_] * in[r * w + c + k];
          norm += taps_[k + half_];
        }
        tmp[r * w + c] = acc / norm;
      }
    }
    for (Index r = 0; r < h; ++r) {
      for (Index c = 0; c < w; ++c) {
        double acc = 0.0;
        double norm = 0.0;
        for (Index k = std::max(-half_, -r); k <= std::min(half_, h - 1 - r); ++k) {
          acc += taps_[k + half_] * tmp[(r + k) * w + c];
          norm += taps_[k + half_];
        }
        out[r * w + c] = acc / norm;
      }
    }
    return out;
  }

 private:
  Index half_;
  std::vector<double> taps_;
};

// Per-image quantities reused across every pair the image takes part in.
struct SsimPlanes {
  std::vector<std::vector<double>> mean;    // per channel
  std::vector<std::vector<double>> second;  // filtered x^2 per channel
};

SsimPlanes precompute(const double* x, const ImageShape& s, const BorderGaussian& g) {
  const Index plane = s.height * s.width;
  SsimPlanes p;
  std::vector<double> sq(static_cast<std::size_t>(plane));
  for (Index ch = 0; ch < s.channels; ++ch) {
    const double* xc = x + ch * plane;
    p.mean.push_back(g.apply(xc, s.height, s.width));
    for (Index i = 0; i < plane; ++i) sq[i] = xc[i] * xc[i];
    p.second.push_back(g.apply(sq.data(), s.height, s.width));
  }
  return p;
}

double ssim_from_planes(const double* x, const double* y, const SsimPlanes& px,
                        const SsimPlanes& py, const ImageShape& s, const BorderGaussian& g,
                        double c1, double c2) {
  const Index plane = s.height * s.width;
  std::vector<double> prod(static_cast<std::size_t>(plane));
  double total = 0.0;
  for (Index ch = 0; ch < s.channels; ++ch) {
    const double* xc = x + ch * plane;
    const double* yc = y + ch * plane;
    for (Index i = 0; i < plane; ++i) prod[i] = xc[i] * yc[i];
    const std::vector<double> cross = g.apply(prod.data(), s.height, s.width);
    const auto& mx = px.mean[ch];
    const auto& my = py.mean[ch];
    double sum = 0.0;
    for (Index i = 0; i < plane; ++i) {
      const double var_x = px.second[ch][i] - mx[i] * mx[i];
      const double var_y = py.second[ch][i] - my[i] * my[i];
      const double cov = cross[i] - mx[i] * my[i];
      sum += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (var_x + var_y + c2));
    }
    total += sum / static_cast<double>(plane);
  }
  return total / static_cast<double>(s.channels);
}

void check_shape(Index size, const ImageShape& s) {
  if (s.height < 1 || s.width < 1 || s.channels < 1 || s.size() != size) {
    throw InputError("ssim: vector of length " + std::to_string(size) +
                     " does not match image shape");
  }
}

double dynamic_range(const double* x, const double* y, Index n, const SsimOptions& o) {
  if (o.dynamic_range) {
    if (!(*o.dynamic_range > 0.0)) throw InputError("ssim: dynamic range must be > 0");
    return *o.dynamic_range;
  }
  double lo = x[0];
  double hi = x[0];
  for (Index i = 0; i < n; ++i) {
    lo = std::min({lo, x[i], y[i]});
    hi = std::max({hi, x[i], y[i]});
  }
  return hi > lo ? hi - lo : 1.0;
}

}  // namespace

double ssim(const Vector& x, const Vector& x2, const ImageShape& shape,
            const SsimOptions& options) {
  check_shape(x.size(), shape);
  check_shape(x2.size(), shape);
  if (!x.allFinite() || !x2.allFinite()) throw InputError("ssim: non-finite input");
  const BorderGaussian g(options.window, options.sigma);
  const double range = dynamic_range(x.data(), x2.data(), x.size(), options);
  const double c1 = std::pow(options.k1 * range, 2);
  const double c2 = std::pow(options.k2 * range, 2);
  return ssim_from_planes(x.data(), x2.data(), precompute(x.data(), shape, g),
                          precompute(x2.data(), shape, g), shape, g, c1, c2);
}

double dssim(const Vector& x, const Vector& x2, const ImageShape& shape,
             const SsimOptions& options) {
  return std::clamp((1.0 - ssim(x, x2, shape, options)) / 2.0, 0.0, 1.0);
}

double l2(const Vector& x, const Vector& x2) {
  if (x.size() != x2.size()) throw InputError("l2: dimension mismatch");
  return (x - x2).norm();
}

Matrix distance_matrix(const Matrix& recons, const Matrix& train, DistanceKind kind,
                       const std::optional<ImageShape>& shape, const SsimOptions& options) {
  if (recons.cols() != train.cols()) throw InputError("distance_matrix: dimension mismatch");
  Matrix d(train.rows(), recons.rows());
  if (kind == DistanceKind::L2) {
    for (Index i = 0; i < train.rows(); ++i) {
      for (Index j = 0; j < recons.rows(); ++j) d(i, j) = (train.row(i) - recons.row(j)).norm();
    }
    return d;
  }
  if (!shape) throw InputError("distance_matrix: DSSIM needs an image shape");
  check_shape(train.cols(), *shape);
  const BorderGaussian g(options.window, options.sigma);
  std::vector<SsimPlanes> train_planes;
  std::vector<SsimPlanes> recon_planes;
  for (Index i = 0; i < train.rows(); ++i) {
    train_planes.push_back(precompute(train.row(i).data(), *shape, g));
  }
  for (Index j = 0; j < recons.rows(); ++j) {
    recon_planes.push_back(precompute(recons.row(j).data(), *shape, g));
  }
  for (Index i = 0; i < train.rows(); ++i) {
    for (Index j = 0; j < recons.rows(); ++j) {
      const double* a = train.row(i).data();
      const double* b = recons.row(j).data();
      const double range = dynamic_range(a, b, train.cols(), options);
      const double c1 = std::pow(options.k1 * range, 2);
      const double c2 = std::pow(options.k2 * range, 2);
      const double s = ssim_from_planes(a, b, train_planes[i], recon_planes[j], *shape, g, c1, c2);
      d(i, j) = std::clamp((1.0 - s) / 2.0, 0.0, 1.0);
    }
  }
  return d;
}

MutualMatch mutual_nn_from_distances(const Matrix& distances, double max_distance) {
  const Index nt = distances.rows();
  const Index nr = distances.cols();
  if (nt < 1 || nr < 1) throw InputError("mutual_nn: both sets must be nonempty");
  std::vector<Index> nearest_recon(static_cast<std::size_t>(nt), 0);
  std::vector<Index> nearest_train(static_cast<std::size_t>(nr), 0);
  for (Index i = 0; i < nt; ++i) {
    for (Index j = 1; j < nr; ++j) {
      if (distances(i, j) < distances(i, nearest_recon[i])) nearest_recon[i] = j;
    }
  }
  for (Index j = 0; j < nr; ++j) {
    for (Index i = 1; i < nt; ++i) {
      if (distances(i, j) < distances(nearest_train[j], j)) nearest_train[j] = i;
    }
  }
  MutualMatch out;
  for (Index i = 0; i < nt; ++i) {
    const Index j = nearest_recon[i];
    if (nearest_train[j] == i && distances(i, j) <= max_distance) {
      out.pairs.emplace_back(i, j);
      out.pair_distance.push_back(distances(i, j));
    }
  }
  out.percentage = 100.0 * static_cast<double>(out.pairs.size()) / static_cast<double>(nt);
  return out;
}

MutualMatch mutual_nn_recovery(const Matrix& recons, const Matrix& train, DistanceKind kind,
                               const std::optional<ImageShape>& shape, double max_distance) {
  if (recons.rows() < 1 || train.rows() < 1) {
    throw InputError("mutual_nn: both sets must be nonempty");
  }
  return mutual_nn_from_distances(distance_matrix(recons, train, kind, shape), max_distance);
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw InputError("percentile: empty input");
  if (!(q >= 0.0 && q <= 100.0)) throw InputError("percentile: q must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

Percentiles percentiles_of(const std::vector<double>& values) {
  return {percentile(values, 25.0), percentile(values, 50.0), percentile(values, 75.0)};
}

ReconReport report(const Matrix& recons, const Matrix& train, const ReportOptions& options) {
  if (recons.rows() < 1) throw InputError("report: no reconstructions");
  if (train.rows() < 1) throw InputError("report: no training points");
  const Matrix dl2 = distance_matrix(recons, train, DistanceKind::L2);

  ReconReport r;
  r.nearest_l2.resize(static_cast<std::size_t>(train.rows()));
  for (Index i = 0; i < train.rows(); ++i) r.nearest_l2[i] = dl2.row(i).minCoeff();
  r.l2 = percentiles_of(r.nearest_l2);

  if (!options.shape) {
    r.matches = mutual_nn_from_distances(dl2, options.l2_tolerance);
    r.recovery_pct = r.matches.percentage;
    return r;
  }

  const Matrix dd = distance_matrix(recons, train, DistanceKind::Dssim, options.shape, options.ssim);
  std::vector<double> nearest(static_cast<std::size_t>(train.rows()));
  for (Index i = 0; i < train.rows(); ++i) nearest[i] = dd.row(i).minCoeff();
  r.dssim = percentiles_of(nearest);
  r.nearest_dssim = std::move(nearest);
  r.matches = mutual_nn_from_distances(dd);
  r.recovery_pct = r.matches.percentage;
  std::size_t good = 0;
  for (double v : r.matches.pair_distance) good += v < options.dssim_threshold ? 1 : 0;
  r.recovery_below_threshold_pct =
      100.0 * static_cast<double>(good) / static_cast<double>(train.rows());
  return r;
}

}  // namespace kernrecon
