#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <type_traits>

#include "kernrecon/attack.hpp"
#include "kernrecon/matrix_io.hpp"
#include "kernrecon/models.hpp"
#include "test_support.hpp"

namespace kernrecon {
namespace {

using testing::CountingOracle;
using testing::random_matrix;

// The facade must not offer any path back to the model's internals.
template <typename T>
concept ExposesSupport = requires(const T& t) { t.support(); };
template <typename T>
concept ExposesCoeffs = requires(const T& t) { t.coeffs(); };
template <typename T>
concept ExposesModel = requires(const T& t) { t.model(); };
static_assert(!ExposesSupport<ModelOracle> && !ExposesCoeffs<ModelOracle> &&
              !ExposesModel<ModelOracle>);
static_assert(ExposesSupport<TrainedKernelModel>);
// The attack entry points accept only the facade.
static_assert(!std::is_invocable_v<decltype(&run_attack), const TrainedKernelModel&,
                                   const AttackConfig&>);
static_assert(std::is_invocable_v<decltype(&run_attack), const ModelOracle&, const AttackConfig&>);

TrainedKernelModel krr_model(const KernelSpec& spec, Index n, Index d, Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset data;
  data.x = random_matrix(n, d, rng);
  data.y = random_matrix(n, c, rng);
  return train_krr(data, spec, 0.0);
}

AttackConfig small_config(Index n, Index m, std::size_t steps, std::uint64_t seed = 0) {
  AttackConfig c;
  c.n = n;
  c.m = m;
  c.steps = steps;
  c.seed = seed;
  return c;
}

// ---------------------------------------------------------------------------
// Query sampling

TEST(Queries, GridCorners) {
  QueryDistribution dist;
  dist.kind = QueryKind::Grid;
  const Matrix q = sample_queries(dist, 4, 2, 0);
  Matrix expected(4, 2);
  expected << -1, -1, -1, 1, 1, -1, 1, 1;
  EXPECT_TRUE(q == expected);
}

TEST(Queries, GridShapeFollowsDivisors) {
  QueryDistribution dist;
  dist.kind = QueryKind::Grid;
  dist.low = -6.0;
  dist.high = 6.0;
  const Matrix q = sample_queries(dist, 2500, 2, 0);
  EXPECT_EQ(q.rows(), 2500);
  EXPECT_DOUBLE_EQ(q.minCoeff(), -6.0);
  EXPECT_DOUBLE_EQ(q.maxCoeff(), 6.0);
  EXPECT_THROW(sample_queries(dist, 9, 3, 0), InputError);
}

TEST(Queries, DeterministicPerSeed) {
  for (QueryKind kind : {QueryKind::Normal, QueryKind::Uniform, QueryKind::Mixture}) {
    QueryDistribution dist;
    dist.kind = kind;
    EXPECT_TRUE(sample_queries(dist, 30, 3, 5) == sample_queries(dist, 30, 3, 5));
    EXPECT_FALSE(sample_queries(dist, 30, 3, 5) == sample_queries(dist, 30, 3, 6));
  }
}

TEST(Queries, NormalMeanWithinStandardError) {
  const Index m = 10000;
  const Matrix q = sample_queries(QueryDistribution{}, m, 1, 11);
  EXPECT_LT(std::abs(q.mean()), 4.0 / std::sqrt(static_cast<double>(m)));
}

TEST(Queries, UniformStaysInBox) {
  QueryDistribution dist;
  dist.kind = QueryKind::Uniform;
  dist.low = 2.0;
  dist.high = 3.0;
  const Matrix q = sample_queries(dist, 500, 4, 1);
  EXPECT_GE(q.minCoeff(), 2.0);
  EXPECT_LE(q.maxCoeff(), 3.0);
}

TEST(Queries, FileSource) {
  const auto dir = testing::scratch_dir("queries_file");
  std::mt19937_64 rng(3);
  const Matrix stored = random_matrix(5, 2, rng);
  save_matrix(dir / "z.txt", stored);
  QueryDistribution dist;
  dist.kind = QueryKind::File;
  dist.path = (dir / "z.txt").string();
  EXPECT_TRUE(sample_queries(dist, 3, 2, 0) == Matrix(stored.topRows(3)));
  EXPECT_THROW(sample_queries(dist, 6, 2, 0), InputError);
  EXPECT_THROW(sample_queries(dist, 3, 4, 0), InputError);
}

TEST(Queries, KindNames) {
  for (QueryKind k : {QueryKind::Normal, QueryKind::Uniform, QueryKind::Mixture, QueryKind::Grid,
                      QueryKind::File}) {
    EXPECT_EQ(parse_query_kind(query_kind_name(k)), k);
  }
  EXPECT_THROW(parse_query_kind("sobol"), InputError);
}

// ---------------------------------------------------------------------------
// Loss and gradients

TEST(Loss, ZeroAtTruth) {
  const TrainedKernelModel model = krr_model(LaplaceKernel{0.5}, 4, 3, 2, 1);
  const auto oracle = make_oracle(model);
  const QuerySet q = make_query_set(*oracle, sample_queries(QueryDistribution{}, 20, 3, 2));
  ReconstructionParams truth{model.support(), model.coeffs(), std::nullopt};
  EXPECT_LT(reconstruction_loss(truth, q, model.kernel()), 1e-28);
}

TEST(Loss, TrivialValues) {
  ReconstructionParams p{Matrix::Zero(1, 1), Matrix::Zero(1, 1), std::nullopt};
  QuerySet q{Matrix::Zero(1, 1), Matrix::Zero(1, 1)};
  EXPECT_EQ(reconstruction_loss(p, q, RbfKernel{1.0}), 0.0);
  // k(0, 0) = 1, coefficient 2: prediction 2 against target 0.
  p.ahat(0, 0) = 2.0;
  EXPECT_DOUBLE_EQ(reconstruction_loss(p, q, RbfKernel{1.0}), 4.0);
}

TEST(Loss, PermutationInvariant) {
  std::mt19937_64 rng(3);
  ReconstructionParams p{random_matrix(5, 2, rng), random_matrix(5, 2, rng), std::nullopt};
  const QuerySet q{random_matrix(11, 2, rng), random_matrix(11, 2, rng)};
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(5);
  perm.indices() << 3, 0, 4, 1, 2;
  const ReconstructionParams shuffled{perm * p.xhat, perm * p.ahat, std::nullopt};
  for (const KernelSpec& spec : {KernelSpec(LaplaceKernel{0.3}), KernelSpec(RbfKernel{0.3})}) {
    EXPECT_NEAR(reconstruction_loss(p, q, spec), reconstruction_loss(shuffled, q, spec), 1e-15);
    const LossGradients g = loss_gradients(p, q, spec);
    const LossGradients gs = loss_gradients(shuffled, q, spec);
    EXPECT_LT((Matrix(perm * g.xhat) - gs.xhat).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((Matrix(perm * g.ahat) - gs.ahat).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Loss, ZeroResidualGivesZeroGradients) {
  const TrainedKernelModel model = krr_model(RbfKernel{0.5}, 3, 2, 1, 4);
  const auto oracle = make_oracle(model);
  const QuerySet q = make_query_set(*oracle, sample_queries(QueryDistribution{}, 9, 2, 5));
  const LossGradients g =
      loss_gradients({model.support(), model.coeffs(), std::nullopt}, q, model.kernel());
  EXPECT_LT(g.xhat.cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT(g.ahat.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Loss, GradientsMatchCentralDifferences) {
  const Index n = 3;
  const Index m = 7;
  const Index d = 2;
  std::mt19937_64 rng(6);
  const std::vector<KernelSpec> specs = {LaplaceKernel{0.8}, RbfKernel{0.6},
                                         PolynomialKernel{1.0, 0.5, 3}, NtkKernel{2},
                                         BandwidthGaussianKernel{Vector::Constant(d, 0.8)}};
  for (const KernelSpec& spec : specs) {
    double worst = 0.0;
    for (int probe = 0; probe < 20; ++probe) {
      ReconstructionParams p{random_matrix(n, d, rng), random_matrix(n, 2, rng), std::nullopt};
      if (std::holds_alternative<BandwidthGaussianKernel>(spec)) {
        p.log_h = Vector::Constant(d, std::log(0.8)) + 0.2 * random_matrix(d, 1, rng);
      }
      const QuerySet q{random_matrix(m, d, rng), random_matrix(m, 2, rng)};
      const LossGradients g = loss_gradients(p, q, spec);

      ReconstructionParams probe_params = p;
      const Matrix num_x = testing::central_difference(
          [&](const Matrix& x) {
            probe_params.xhat = x;
            return reconstruction_loss(probe_params, q, spec);
          },
          p.xhat);
      probe_params = p;
      const Matrix num_a = testing::central_difference(
          [&](const Matrix& a) {
            probe_params.ahat = a;
            return reconstruction_loss(probe_params, q, spec);
          },
          p.ahat);
      worst = std::max({worst, testing::relative_error(g.xhat, num_x),
                        testing::relative_error(g.ahat, num_a)});
      if (p.log_h) {
        probe_params = p;
        const Matrix num_h = testing::central_difference(
            [&](const Matrix& lh) {
              probe_params.log_h = lh.transpose();
              return reconstruction_loss(probe_params, q, spec);
            },
            Matrix(p.log_h->transpose()));
        worst = std::max(worst, testing::relative_error(Matrix(g.log_h->transpose()), num_h));
      }
    }
    EXPECT_LT(worst, 1e-5) << kernel_name(spec);
  }
}

TEST(Loss, EffectiveKernelUsesLearnedBandwidth) {
  ReconstructionParams p{Matrix::Zero(1, 2), Matrix::Ones(1, 1), Vector::Constant(2, std::log(2.0))};
  const KernelSpec k = effective_kernel(p, BandwidthGaussianKernel{Vector::Ones(2)});
  EXPECT_NEAR(std::get<BandwidthGaussianKernel>(k).h_diag[1], 2.0, 1e-15);
  p.log_h.reset();
  EXPECT_TRUE(std::holds_alternative<RbfKernel>(effective_kernel(p, RbfKernel{})));
}

// ---------------------------------------------------------------------------
// The attack loop

TEST(Attack, RecoversSinglePoint) {
  const TrainedKernelModel model = krr_model(RbfKernel{1.0}, 1, 1, 1, 7);
  const auto oracle = make_oracle(model);
  const AttackResult r = run_attack(*oracle, small_config(1, 8, 20000, 1));
  EXPECT_LT(r.final_loss, 1e-10);
  EXPECT_LT(std::abs(r.params.xhat(0, 0) - model.support()(0, 0)), 1e-4);
}

TEST(Attack, ZeroStepsReturnsInitialization) {
  const auto oracle = make_oracle(krr_model(LaplaceKernel{1.0}, 3, 2, 1, 8));
  const AttackResult r = run_attack(*oracle, small_config(4, 20, 0, 3));
  EXPECT_TRUE(r.params.xhat == r.initial.xhat);
  EXPECT_TRUE(r.params.ahat == r.initial.ahat);
  ASSERT_EQ(r.trace.size(), 1u);
  EXPECT_EQ(r.trace[0].step, 0u);
}

TEST(Attack, InitializationScales) {
  const auto oracle = make_oracle(krr_model(LaplaceKernel{1.0}, 3, 20, 1, 9));
  AttackConfig c = small_config(400, 5, 0, 4);
  const AttackResult r = run_attack(*oracle, c);
  const double point_sd = std::sqrt(r.initial.xhat.squaredNorm() / static_cast<double>(r.initial.xhat.size()));
  const double coeff_var = r.initial.ahat.squaredNorm() / static_cast<double>(r.initial.ahat.size());
  EXPECT_NEAR(point_sd, 0.3, 0.01);
  EXPECT_NEAR(coeff_var, 0.05, 0.01);
}

TEST(Attack, BitwiseReproducible) {
  const auto oracle = make_oracle(krr_model(LaplaceKernel{0.5}, 3, 2, 2, 10));
  AttackConfig c = small_config(4, 30, 300, 5);
  c.batch_size = 8;
  const AttackResult a = run_attack(*oracle, c);
  const AttackResult b = run_attack(*oracle, c);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].loss, b.trace[i].loss);
  EXPECT_TRUE(a.params.xhat == b.params.xhat);
}

TEST(Attack, TraceStrideAndFinalEntry) {
  const auto oracle = make_oracle(krr_model(RbfKernel{0.5}, 2, 2, 1, 11));
  AttackConfig c = small_config(2, 10, 100, 6);
  c.trace_stride = 25;
  const AttackResult r = run_attack(*oracle, c);
  ASSERT_EQ(r.trace.size(), 5u);
  EXPECT_EQ(r.trace[1].step, 25u);
  EXPECT_EQ(r.trace.back().step, 100u);
  EXPECT_EQ(r.trace.back().loss, r.final_loss);
}

TEST(Attack, SnapshotsBracketTheRun) {
  const auto oracle = make_oracle(krr_model(RbfKernel{0.5}, 2, 2, 1, 12));
  AttackConfig c = small_config(2, 10, 50, 7);
  c.snapshot_steps = {50, 0, 20};
  const AttackResult r = run_attack(*oracle, c);
  ASSERT_EQ(r.snapshots.size(), 3u);
  EXPECT_EQ(r.snapshots[0].step, 0u);
  EXPECT_TRUE(r.snapshots[0].params.xhat == r.initial.xhat);
  EXPECT_EQ(r.snapshots[2].step, 50u);
  EXPECT_TRUE(r.snapshots[2].params.xhat == r.params.xhat);
}

TEST(Attack, EvaluatesOracleExactlyOnce) {
  for (Index batch : {Index{0}, Index{16}}) {
    CountingOracle oracle(make_oracle(krr_model(LaplaceKernel{0.5}, 4, 3, 1, 13)));
    AttackConfig c = small_config(5, 64, 200, 8);
    c.batch_size = batch;
    run_attack(oracle, c);
    EXPECT_EQ(oracle.calls(), 1);
    EXPECT_EQ(oracle.last_rows(), 64);
  }
}

TEST(Attack, PcaVariantEvaluatesOracleExactlyOnce) {
  CountingOracle oracle(make_oracle(krr_model(LaplaceKernel{0.5}, 4, 3, 1, 14)));
  run_attack_pca(oracle, small_config(5, 33, 100, 9), Matrix::Identity(3, 2));
  EXPECT_EQ(oracle.calls(), 1);
  EXPECT_EQ(oracle.total_rows(), 33);
}

// Returns NaN outputs so the first loss is already non-finite.
class PoisonedOracle : public ModelOracle {
 public:
  Matrix evaluate(const Matrix& queries) const override {
    return Matrix::Constant(queries.rows(), 1, std::numeric_limits<double>::quiet_NaN());
  }
  const KernelSpec& kernel() const override { return spec_; }
  Index input_dim() const override { return 2; }
  Index output_dim() const override { return 1; }

 private:
  KernelSpec spec_ = RbfKernel{1.0};
};

TEST(Attack, AbortsOnNonFiniteLoss) {
  PoisonedOracle oracle;
  try {
    run_attack(oracle, small_config(2, 5, 10));
    FAIL() << "expected AttackAborted";
  } catch (const AttackAborted& e) {
    EXPECT_EQ(e.step(), std::optional<std::size_t>(0));
    EXPECT_EQ(e.last_finite().xhat.rows(), 2);
  }
}

TEST(Attack, ConfigValidation) {
  const auto oracle = make_oracle(krr_model(RbfKernel{1.0}, 2, 2, 1, 15));
  AttackConfig c = small_config(0, 5, 10);
  EXPECT_THROW(run_attack(*oracle, c), InputError);
  c = small_config(2, 5, 10);
  c.lr_points = 0.0;
  EXPECT_THROW(run_attack(*oracle, c), InputError);
  c = small_config(2, 5, 10);
  c.point_init_std = -1.0;
  EXPECT_THROW(run_attack(*oracle, c), InputError);
}

TEST(Attack, KdeBandwidthStartsAtScottRuleOfQueries) {
  std::mt19937_64 rng(16);
  const KdeModel kde = train_kde(random_matrix(6, 2, rng));
  const auto oracle = make_oracle(kde);
  AttackConfig c = small_config(6, 40, 200, 10);
  const AttackResult r = run_attack(*oracle, c);
  const Matrix queries = sample_queries(c.queries, c.m, 2, c.seed);
  ASSERT_TRUE(r.initial.log_h.has_value());
  EXPECT_LT((r.initial.log_h->array().exp().matrix() - scott_bandwidth(queries)).norm(), 1e-14);
  ASSERT_TRUE(r.params.log_h.has_value());
  EXPECT_TRUE(r.params.log_h->allFinite());

  c.learn_bandwidth = false;
  EXPECT_FALSE(run_attack(*oracle, c).params.log_h.has_value());
}

// ---------------------------------------------------------------------------
// PCA variant

TEST(Pca, IdentityBasisReproducesPlainAttack) {
  const auto oracle = make_oracle(krr_model(RbfKernel{0.5}, 3, 3, 1, 17));
  const AttackConfig c = small_config(4, 30, 200, 11);
  const AttackResult plain = run_attack(*oracle, c);
  const AttackResult pca = run_attack_pca(*oracle, c, Matrix::Identity(3, 3));
  ASSERT_EQ(plain.trace.size(), pca.trace.size());
  for (std::size_t i = 0; i < plain.trace.size(); ++i) {
    EXPECT_EQ(plain.trace[i].loss, pca.trace[i].loss);
  }
}

TEST(Pca, CandidatesStayInSubspace) {
  std::mt19937_64 rng(18);
  const Matrix data = random_matrix(40, 5, rng);
  const Matrix basis = pca_basis(data, 2);
  EXPECT_LT((basis.transpose() * basis - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-12);
  const auto oracle = make_oracle(krr_model(LaplaceKernel{0.3}, 3, 5, 1, 19));
  const AttackResult r = run_attack_pca(*oracle, small_config(4, 40, 300, 12), basis);
  const Matrix residual = r.params.xhat - r.params.xhat * basis * basis.transpose();
  EXPECT_LT(residual.rowwise().norm().maxCoeff(), 1e-10);
}

TEST(Pca, BasisFollowsDominantDirections) {
  std::mt19937_64 rng(20);
  Matrix data = random_matrix(200, 3, rng);
  data.col(1) *= 10.0;
  data.col(2) *= 0.1;
  const Matrix basis = pca_basis(data, 1);
  EXPECT_GT(std::abs(basis(1, 0)), 0.99);
}

TEST(Pca, RejectsBadBasis) {
  const auto oracle = make_oracle(krr_model(RbfKernel{0.5}, 2, 3, 1, 21));
  Matrix skew = Matrix::Identity(3, 2);
  skew(0, 1) = 0.5;
  EXPECT_THROW(run_attack_pca(*oracle, small_config(2, 10, 5), skew), InputError);
  EXPECT_THROW(run_attack_pca(*oracle, small_config(2, 10, 5), Matrix::Identity(2, 2)), InputError);
  EXPECT_THROW(pca_basis(Matrix::Zero(4, 3), 4), InputError);
}

// ---------------------------------------------------------------------------

TEST(QueryBound, Values) {
  EXPECT_EQ(query_count_bound(10, 2), 41u);
  EXPECT_EQ(query_count_bound(1, 1), 4u);
  EXPECT_EQ(query_count_bound(25, 10), 301u);
  EXPECT_THROW(query_count_bound(0, 1), InputError);
}

}  // namespace
}  // namespace kernrecon
