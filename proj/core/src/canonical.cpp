#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>

#include "kernrecon/attack.hpp"

namespace kernrecon {
namespace {

class DisjointSets {
 public:
  explicit DisjointSets(Index n) : parent_(static_cast<std::size_t>(n)) {
    std::iota(parent_.begin(), parent_.end(), Index{0});
  }
  Index find(Index i) {
    while (parent_[i] != i) {
      parent_[i] = parent_[parent_[i]];
      i = parent_[i];
    }
    return i;
  }
  // Keeps the smaller index as the root so cluster order follows input order.
  bool unite(Index a, Index b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
    return true;
  }

 private:
  std::vector<Index> parent_;
};

// One round of single-linkage merging. Returns true if anything merged.
bool merge_round(Matrix& x, Matrix& a, double merge_tol) {
  const Index n = x.rows();
  DisjointSets sets(n);
  bool merged = false;
  const double tol2 = merge_tol * merge_tol;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      if ((x.row(i) - x.row(j)).squaredNorm() <= tol2) merged |= sets.unite(i, j);
    }
  }
  if (!merged) return false;

  std::vector<Index> roots;
  std::vector<Index> slot(static_cast<std::size_t>(n), -1);
  for (Index i = 0; i < n; ++i) {
    const Index r = sets.find(i);
    if (slot[r] < 0) {
      slot[r] = static_cast<Index>(roots.size());
      roots.push_back(r);
    }
  }
  const Index k = static_cast<Index>(roots.size());
  Matrix weighted = Matrix::Zero(k, x.cols());
  Matrix plain = Matrix::Zero(k, x.cols());
  Vector weight = Vector::Zero(k);
  Vector count = Vector::Zero(k);
  Matrix coeffs = Matrix::Zero(k, a.cols());
  for (Index i = 0; i < n; ++i) {
    const Index c = slot[sets.find(i)];
    const double w = a.row(i).cwiseAbs().sum();
    weighted.row(c) += w * x.row(i);
    plain.row(c) += x.row(i);
    weight[c] += w;
    count[c] += 1.0;
    coeffs.row(c) += a.row(i);
  }
  Matrix points(k, x.cols());
  for (Index c = 0; c < k; ++c) {
    points.row(c) = weight[c] > 0.0 ? Point(weighted.row(c) / weight[c])
                                    : Point(plain.row(c) / count[c]);
  }
  x = std::move(points);
  a = std::move(coeffs);
  return true;
}

double percentile_median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

}  // namespace

CanonicalTolerances CanonicalTolerances::defaults_for(const ReconstructionParams& params) {
  const double d = static_cast<double>(std::max<Index>(1, params.xhat.cols()));
  const double amax = params.ahat.size() ? params.ahat.cwiseAbs().maxCoeff() : 0.0;
  const double coeff_tol = amax > 0.0 ? 1e-6 * amax : std::numeric_limits<double>::min();
  return {1e-3 * std::sqrt(d), coeff_tol};
}

ReconstructionParams canonicalize(const ReconstructionParams& params, double merge_tol,
                                  double coeff_tol) {
  if (!(merge_tol > 0.0) || !(coeff_tol > 0.0)) {
    throw InputError("canonicalize: tolerances must be > 0");
  }
  if (params.ahat.rows() != params.xhat.rows()) {
    throw InputError("canonicalize: xhat and ahat row counts differ");
  }
  Matrix x = params.xhat;
  Matrix a = params.ahat;
  // Merged centroids can land within tolerance of another cluster; repeat
  // until stable so a second pass is a no-op.
  while (x.rows() > 1 && merge_round(x, a, merge_tol)) {
  }

  std::vector<Index> keep;
  for (Index i = 0; i < x.rows(); ++i) {
    const double amax = a.cols() ? a.row(i).cwiseAbs().maxCoeff() : 0.0;
    if (!(amax < coeff_tol)) keep.push_back(i);
  }
  ReconstructionParams out;
  out.xhat.resize(static_cast<Index>(keep.size()), x.cols());
  out.ahat.resize(static_cast<Index>(keep.size()), a.cols());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    out.xhat.row(static_cast<Index>(r)) = x.row(keep[r]);
    out.ahat.row(static_cast<Index>(r)) = a.row(keep[r]);
  }
  out.log_h = params.log_h;
  return out;
}

ReconstructionParams canonicalize(const ReconstructionParams& params) {
  const CanonicalTolerances tol = CanonicalTolerances::defaults_for(params);
  return canonicalize(params, tol.merge_tol, tol.coeff_tol);
}

double MatchReport::median_best_distance() const { return percentile_median(best_distance); }

double MatchReport::max_coeff_discrepancy() const {
  double worst = 0.0;
  for (double v : coeff_discrepancy) {
    if (std::isnan(v)) return std::numeric_limits<double>::quiet_NaN();
    worst = std::max(worst, v);
  }
  return worst;
}

MatchReport match_to_truth(const Matrix& recon_x, const Matrix& recon_a, const Matrix& truth_x,
                           const Matrix& truth_a, const MatchOptions& options) {
  if (recon_x.rows() > 0 && recon_x.cols() != truth_x.cols()) {
    throw InputError("match_to_truth: dimension mismatch");
  }
  const bool compare_coeffs = recon_a.size() > 0 && truth_a.size() > 0;
  if (compare_coeffs && (recon_a.rows() != recon_x.rows() || truth_a.rows() != truth_x.rows() ||
                         recon_a.cols() != truth_a.cols())) {
    throw InputError("match_to_truth: coefficient shapes do not match points");
  }
  const Index nt = truth_x.rows();
  const Index nr = recon_x.rows();
  const double inf = std::numeric_limits<double>::infinity();
  const double nan = std::numeric_limits<double>::quiet_NaN();

  MatchReport report;
  report.best_distance.assign(static_cast<std::size_t>(nt), inf);
  report.assignment.assign(static_cast<std::size_t>(nt), -1);
  report.assigned_distance.assign(static_cast<std::size_t>(nt), inf);
  report.coeff_discrepancy.assign(static_cast<std::size_t>(nt), nan);

  std::vector<std::tuple<double, Index, Index>> pairs;
  pairs.reserve(static_cast<std::size_t>(nt * nr));
  for (Index i = 0; i < nt; ++i) {
    const double scale = options.relative ? truth_x.row(i).norm() : 1.0;
    for (Index j = 0; j < nr; ++j) {
      double dist = (truth_x.row(i) - recon_x.row(j)).norm();
      dist = scale > 0.0 ? dist / scale : (dist > 0.0 ? inf : 0.0);
      pairs.emplace_back(dist, i, j);
      report.best_distance[i] = std::min(report.best_distance[i], dist);
    }
  }
  std::sort(pairs.begin(), pairs.end());
  std::vector<bool> recon_used(static_cast<std::size_t>(nr), false);
  Index matched = 0;
  for (const auto& [dist, i, j] : pairs) {
    if (report.assignment[i] >= 0 || recon_used[j]) continue;
    report.assignment[i] = j;
    report.assigned_distance[i] = dist;
    recon_used[j] = true;
    if (compare_coeffs) {
      report.coeff_discrepancy[i] = (truth_a.row(i) - recon_a.row(j)).cwiseAbs().maxCoeff();
    }
    if (dist <= options.tol) ++matched;
  }
  report.matched_fraction = nt > 0 ? static_cast<double>(matched) / static_cast<double>(nt) : 0.0;
  return report;
}

}  // namespace kernrecon
