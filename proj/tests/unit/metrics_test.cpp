#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "kernrecon/metrics.hpp"
#include "test_support.hpp"

namespace kernrecon {
namespace {

using testing::random_matrix;

// Direct two-dimensional SSIM: for every pixel, sum the 11x11 Gaussian window
// over the in-bounds neighbours and divide by the in-bounds weight.
double reference_ssim(const Vector& x, const Vector& y, const ImageShape& s) {
  const int half = 5;
  const double sigma = 1.5;
  double lo = std::min(x.minCoeff(), y.minCoeff());
  double hi = std::max(x.maxCoeff(), y.maxCoeff());
  const double range = hi > lo ? hi - lo : 1.0;
  const double c1 = std::pow(0.01 * range, 2);
  const double c2 = std::pow(0.03 * range, 2);
  double total = 0.0;
  for (Index ch = 0; ch < s.channels; ++ch) {
    const Index base = ch * s.height * s.width;
    double sum = 0.0;
    for (Index r = 0; r < s.height; ++r) {
      for (Index c = 0; c < s.width; ++c) {
        double w = 0.0, mx = 0.0, my = 0.0, xx = 0.0, yy = 0.0, xy = 0.0;
        for (int dr = -half; dr <= half; ++dr) {
          for (int dc = -half; dc <= half; ++dc) {
            const Index rr = r + dr;
            const Index cc = c + dc;
            if (rr < 0 || rr >= s.height || cc < 0 || cc >= s.width) continue;
            const double g = std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
            const double a = x[base + rr * s.width + cc];
            const double b = y[base + rr * s.width + cc];
            w += g;
            mx += g * a;
            my += g * b;
            xx += g * a * a;
            yy += g * b * b;
            xy += g * a * b;
          }
        }
        mx /= w;
        my /= w;
        const double vx = xx / w - mx * mx;
        const double vy = yy / w - my * my;
        const double cov = xy / w - mx * my;
        sum += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
    }
    total += sum / static_cast<double>(s.height * s.width);
  }
  return total / static_cast<double>(s.channels);
}

Vector pattern_8x8() {
  Vector v(64);
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 8; ++c) v[r * 8 + c] = std::sin(0.7 * r) * std::cos(1.3 * c) + 0.1 * ((r + 2 * c) % 3);
  }
  return v.array() - v.mean();
}

TEST(Ssim, MatchesDirectTwoDimensionalReference) {
  std::mt19937_64 rng(1);
  for (const ImageShape shape : {ImageShape{8, 8, 1}, ImageShape{13, 7, 3}, ImageShape{16, 16, 2}}) {
    const Matrix pair = random_matrix(2, shape.size(), rng);
    const Vector x = pair.row(0).transpose();
    const Vector y = (pair.row(0) + 0.5 * pair.row(1)).transpose();
    EXPECT_NEAR(ssim(x, y, shape), reference_ssim(x, y, shape), 1e-12);
  }
}

TEST(Dssim, IdenticalAndConstantImages) {
  const ImageShape shape{8, 8, 1};
  const Vector x = pattern_8x8();
  EXPECT_NEAR(dssim(x, x, shape), 0.0, 1e-15);
  const Vector c = Vector::Constant(64, 0.3);
  EXPECT_NEAR(dssim(c, c, shape), 0.0, 1e-15);
}

TEST(Dssim, NegatedPatternIsDissimilar) {
  const ImageShape shape{8, 8, 1};
  const Vector x = pattern_8x8();
  const double expected = (1.0 - reference_ssim(x, -x, shape)) / 2.0;
  EXPECT_NEAR(dssim(x, -x, shape), expected, 1e-12);
  EXPECT_GT(dssim(x, -x, shape), dssim(x, Vector(0.9 * x), shape));
  EXPECT_GT(dssim(x, Vector(0.9 * x), shape), 0.0);
}

TEST(Dssim, SymmetricAndInRange) {
  std::mt19937_64 rng(2);
  const ImageShape shape{6, 5, 2};
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix p = random_matrix(2, shape.size(), rng);
    const double ab = dssim(p.row(0).transpose(), p.row(1).transpose(), shape);
    const double ba = dssim(p.row(1).transpose(), p.row(0).transpose(), shape);
    EXPECT_NEAR(ab, ba, 1e-14);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(Dssim, RejectsShapeMismatch) {
  EXPECT_THROW(dssim(Vector::Zero(10), Vector::Zero(10), ImageShape{3, 3, 1}), InputError);
  EXPECT_THROW(dssim(Vector::Zero(9), Vector::Zero(8), ImageShape{3, 3, 1}), InputError);
}

TEST(Dssim, ExplicitDynamicRange) {
  const ImageShape shape{8, 8, 1};
  const Vector x = pattern_8x8();
  const Vector y = 0.5 * x;
  SsimOptions options;
  options.dynamic_range = 255.0;
  // A huge range inflates the stabilizers, so the images look more alike.
  EXPECT_LT(dssim(x, y, shape, options), dssim(x, y, shape));
}

// ---------------------------------------------------------------------------

TEST(L2, Values) {
  EXPECT_EQ(l2(Vector::Ones(3), Vector::Ones(3)), 0.0);
  Vector a = Vector::Zero(3);
  Vector b = Vector::Zero(3);
  b[1] = 1.0;
  EXPECT_EQ(l2(a, b), 1.0);
  EXPECT_DOUBLE_EQ(l2(Vector::Zero(2), (Vector(2) << 3.0, 4.0).finished()), 5.0);
  EXPECT_THROW(l2(Vector::Zero(2), Vector::Zero(3)), InputError);
}

TEST(L2, TriangleInequality) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix p = random_matrix(3, 4, rng);
    const Vector a = p.row(0).transpose(), b = p.row(1).transpose(), c = p.row(2).transpose();
    EXPECT_LE(l2(a, c), l2(a, b) + l2(b, c) + 1e-15);
  }
}

// ---------------------------------------------------------------------------

TEST(MutualNn, SameSetsRecoverEverything) {
  std::mt19937_64 rng(4);
  const Matrix train = random_matrix(12, 3, rng);
  const MutualMatch m = mutual_nn_recovery(train, train, DistanceKind::L2);
  EXPECT_DOUBLE_EQ(m.percentage, 100.0);
  EXPECT_EQ(m.pairs.size(), 12u);
}

TEST(MutualNn, SingleFarReconMatchesAtMostOne) {
  Matrix train(2, 1);
  train << 0.0, 1.0;
  Matrix recon(1, 1);
  recon << 100.0;
  EXPECT_LE(mutual_nn_recovery(recon, train, DistanceKind::L2).percentage, 50.0);
}

TEST(MutualNn, HandEnumeratedExample) {
  Matrix train(2, 1);
  train << 0.0, 10.0;
  Matrix recon(3, 1);
  recon << 0.1, 9.8, 5.0;
  const MutualMatch m = mutual_nn_recovery(recon, train, DistanceKind::L2);
  EXPECT_DOUBLE_EQ(m.percentage, 100.0);
  ASSERT_EQ(m.pairs.size(), 2u);
  EXPECT_EQ(m.pairs[0], std::make_pair(Index{0}, Index{0}));
  EXPECT_EQ(m.pairs[1], std::make_pair(Index{1}, Index{1}));
}

TEST(MutualNn, TiesGoToLowestIndex) {
  Matrix d(2, 2);
  d << 1.0, 1.0, 1.0, 1.0;
  const MutualMatch m = mutual_nn_from_distances(d);
  ASSERT_EQ(m.pairs.size(), 1u);
  EXPECT_EQ(m.pairs[0], std::make_pair(Index{0}, Index{0}));
}

TEST(MutualNn, PermutationInvariant) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix train = random_matrix(9, 2, rng);
    const Matrix recon = random_matrix(7, 2, rng);
    const double base = mutual_nn_recovery(recon, train, DistanceKind::L2).percentage;
    Eigen::PermutationMatrix<Eigen::Dynamic> pt(9);
    pt.setIdentity();
    std::shuffle(pt.indices().data(), pt.indices().data() + 9, rng);
    Eigen::PermutationMatrix<Eigen::Dynamic> pr(7);
    pr.setIdentity();
    std::shuffle(pr.indices().data(), pr.indices().data() + 7, rng);
    EXPECT_DOUBLE_EQ(mutual_nn_recovery(Matrix(pr * recon), Matrix(pt * train), DistanceKind::L2).percentage,
                     base);
  }
}

TEST(MutualNn, ToleranceAndEmptyInputs) {
  Matrix train(1, 1);
  train << 0.0;
  Matrix recon(1, 1);
  recon << 0.5;
  EXPECT_DOUBLE_EQ(mutual_nn_recovery(recon, train, DistanceKind::L2, std::nullopt, 0.4).percentage, 0.0);
  EXPECT_DOUBLE_EQ(mutual_nn_recovery(recon, train, DistanceKind::L2, std::nullopt, 0.6).percentage, 100.0);
  EXPECT_THROW(mutual_nn_recovery(Matrix(0, 1), train, DistanceKind::L2), InputError);
  EXPECT_THROW(mutual_nn_recovery(recon, train, DistanceKind::Dssim), InputError);
}

// ---------------------------------------------------------------------------

TEST(Percentile, MatchesLinearInterpolationReference) {
  const std::vector<double> v = {3.5, -1.0, 2.0, 10.0, 7.25, 0.0, 4.0};
  const std::pair<double, double> expected[] = {{0, -1.0},    {10, -0.3999999999999999}, {25, 1.0},
                                                {50, 3.5},    {75, 5.625},               {90, 8.350000000000001},
                                                {100, 10.0},  {33.3, 1.9959999999999996}};
  for (const auto& [q, value] : expected) EXPECT_NEAR(percentile(v, q), value, 1e-12) << q;
  const Percentiles p = percentiles_of({1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(p.p25, 1.75);
  EXPECT_DOUBLE_EQ(p.p50, 2.5);
  EXPECT_DOUBLE_EQ(p.p75, 3.25);
  EXPECT_THROW(percentile({}, 50), InputError);
  EXPECT_THROW(percentile({1.0}, 101), InputError);
}

// ---------------------------------------------------------------------------

// Recomputes every report field from scratch with plain loops.
void check_report_against_exhaustive_pass(const Matrix& recons, const Matrix& train,
                                          const ReportOptions& options, const ReconReport& r) {
  const Index nt = train.rows();
  const Index nr = recons.rows();
  std::vector<double> nearest_l2(static_cast<std::size_t>(nt));
  std::vector<double> nearest_dssim(static_cast<std::size_t>(nt));
  Matrix dd(nt, nr);
  for (Index i = 0; i < nt; ++i) {
    double best_l2 = INFINITY, best_d = INFINITY;
    for (Index j = 0; j < nr; ++j) {
      best_l2 = std::min(best_l2, l2(train.row(i).transpose(), recons.row(j).transpose()));
      if (options.shape) {
        dd(i, j) = dssim(train.row(i).transpose(), recons.row(j).transpose(), *options.shape);
        best_d = std::min(best_d, dd(i, j));
      }
    }
    nearest_l2[i] = best_l2;
    nearest_dssim[i] = best_d;
  }
  const Percentiles pl = percentiles_of(nearest_l2);
  EXPECT_NEAR(r.l2.p25, pl.p25, 1e-14);
  EXPECT_NEAR(r.l2.p50, pl.p50, 1e-14);
  EXPECT_NEAR(r.l2.p75, pl.p75, 1e-14);
  EXPECT_LE(r.l2.p25, r.l2.p50);
  EXPECT_LE(r.l2.p50, r.l2.p75);

  // Recovery from the returned pair list.
  std::size_t below = 0;
  for (std::size_t k = 0; k < r.matches.pairs.size(); ++k) {
    const auto [i, j] = r.matches.pairs[k];
    if (options.shape) {
      EXPECT_NEAR(r.matches.pair_distance[k], dd(i, j), 1e-14);
      below += dd(i, j) < options.dssim_threshold;
    }
  }
  EXPECT_NEAR(r.recovery_pct, 100.0 * static_cast<double>(r.matches.pairs.size()) / nt, 1e-12);
  if (options.shape) {
    const Percentiles pd = percentiles_of(nearest_dssim);
    ASSERT_TRUE(r.dssim.has_value());
    EXPECT_NEAR(r.dssim->p50, pd.p50, 1e-14);
    EXPECT_NEAR(r.dssim->p75, pd.p75, 1e-14);
    EXPECT_NEAR(*r.recovery_below_threshold_pct, 100.0 * static_cast<double>(below) / nt, 1e-12);
    EXPECT_LE(*r.recovery_below_threshold_pct, r.recovery_pct);
  } else {
    EXPECT_FALSE(r.dssim.has_value());
    EXPECT_FALSE(r.recovery_below_threshold_pct.has_value());
  }
  EXPECT_GE(r.recovery_pct, 0.0);
  EXPECT_LE(r.recovery_pct, 100.0);
}

TEST(Report, EqualsExhaustiveRecomputation) {
  std::mt19937_64 rng(6);
  const ImageShape shape{6, 6, 1};
  const Matrix train = random_matrix(10, 36, rng);
  const Matrix recons = Matrix(train.topRows(7)) + 0.3 * random_matrix(7, 36, rng);
  ReportOptions image;
  image.shape = shape;
  check_report_against_exhaustive_pass(recons, train, image, report(recons, train, image));
  ReportOptions plain;
  plain.l2_tolerance = 3.0;
  check_report_against_exhaustive_pass(recons, train, plain, report(recons, train, plain));
}

TEST(Report, IdenticalSets) {
  std::mt19937_64 rng(7);
  const Matrix train = random_matrix(5, 16, rng);
  ReportOptions options;
  options.shape = ImageShape{4, 4, 1};
  const ReconReport r = report(train, train, options);
  EXPECT_DOUBLE_EQ(r.recovery_pct, 100.0);
  EXPECT_DOUBLE_EQ(*r.recovery_below_threshold_pct, 100.0);
  EXPECT_DOUBLE_EQ(r.l2.p75, 0.0);
  EXPECT_NEAR(r.dssim->p75, 0.0, 1e-15);
}

TEST(Report, RejectsEmptySets) {
  EXPECT_THROW(report(Matrix(0, 2), Matrix::Zero(2, 2), {}), InputError);
  EXPECT_THROW(report(Matrix::Zero(2, 2), Matrix(0, 2), {}), InputError);
}

}  // namespace
}  // namespace kernrecon
