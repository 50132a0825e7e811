#include "kernrecon/attack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>

#include "kernrecon/matrix_io.hpp"
#include "kernrecon/models.hpp"
#include "kernrecon/optim.hpp"

namespace kernrecon {
namespace {

std::span<double> flat(Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<double> flat(Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

Matrix gaussian_matrix(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix out(rows, cols);
  for (Index i = 0; i < out.size(); ++i) out.data()[i] = normal(rng);
  return out;
}

void check_consistent(const ReconstructionParams& params, const QuerySet& queries) {
  params.validate();
  if (queries.points.rows() != queries.targets.rows() || queries.points.rows() < 1) {
    throw InputError("queries: need m >= 1 points with one target row each");
  }
  if (queries.points.cols() != params.xhat.cols()) {
    throw InputError("queries: dimension does not match candidates");
  }
  if (queries.targets.cols() != params.ahat.cols()) {
    throw InputError("queries: output count does not match candidate coefficients");
  }
}

struct LossAndGrad {
  double loss;
  LossGradients grads;
};

// Loss and, optionally, its gradients on one batch of queries.
LossAndGrad evaluate_loss(const ReconstructionParams& params, const Matrix& points,
                          const Matrix& targets, const KernelSpec& spec, bool with_grad) {
  const KernelSpec kernel = effective_kernel(params, spec);
  const Matrix gram = eval_matrix(kernel, points, params.xhat);
  const Matrix residual = gram * params.ahat - targets;
  const double scale = 1.0 / static_cast<double>(residual.size());
  const double loss = residual.squaredNorm() * scale;
  if (!with_grad || !std::isfinite(loss)) return {loss, {}};

  LossGradients g;
  g.ahat = 2.0 * scale * (gram.transpose() * residual);
  const Matrix weights = 2.0 * scale * (residual * params.ahat.transpose());
  g.xhat = accumulate_grad_second(kernel, points, params.xhat, gram, weights);
  if (params.log_h) {
    g.log_h = accumulate_grad_log_bandwidth(std::get<BandwidthGaussianKernel>(kernel), points,
                                            params.xhat, gram, weights);
  }
  return {loss, std::move(g)};
}

OneCycleSchedule make_schedule(const AttackConfig& c, double max_lr) {
  OneCycleSchedule s;
  s.max_lr = max_lr;
  s.pct_start = c.pct_start;
  s.div_factor = c.div_factor;
  s.final_div_factor = c.final_div_factor;
  s.total_steps = std::max<std::size_t>(1, c.steps);
  s.validate();
  return s;
}

// Shared optimization loop. Candidates are xhat = latent * projection when a
// projection is given, otherwise xhat = latent.
AttackResult optimize(const ModelOracle& oracle, const AttackConfig& config,
                      const Matrix* projection) {
  config.validate();
  const Index d = oracle.input_dim();
  const Index outputs = oracle.output_dim();
  validate(oracle.kernel(), -1);

  std::mt19937_64 rng(config.seed);
  const QuerySet queries =
      make_query_set(oracle, sample_queries(config.queries, config.m, d, rng));

  const bool bandwidth =
      config.learn_bandwidth && std::holds_alternative<BandwidthGaussianKernel>(oracle.kernel());

  Matrix latent = gaussian_matrix(config.n, d, config.point_init_std, rng);
  ReconstructionParams params;
  params.ahat = gaussian_matrix(config.n, outputs, std::sqrt(config.coeff_init_variance), rng);
  if (bandwidth) params.log_h = scott_bandwidth(queries.points).array().log().matrix();
  auto sync_candidates = [&] { params.xhat = projection ? Matrix(latent * *projection) : latent; };
  sync_candidates();

  const KernelSpec& spec = oracle.kernel();
  AttackResult result;
  result.initial = params;

  std::vector<std::size_t> snapshot_steps = config.snapshot_steps;
  std::sort(snapshot_steps.begin(), snapshot_steps.end());
  auto maybe_snapshot = [&](std::size_t step) {
    if (std::binary_search(snapshot_steps.begin(), snapshot_steps.end(), step)) {
      result.snapshots.push_back({step, params});
    }
  };

  const Index m = queries.points.rows();
  const bool minibatch = config.batch_size > 0 && config.batch_size < m;
  std::vector<Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), Index{0});
  std::size_t cursor = order.size();
  Matrix batch_points;
  Matrix batch_targets;

  AdamState adam_points(static_cast<std::size_t>(latent.size()), config.adam);
  AdamState adam_coeffs(static_cast<std::size_t>(params.ahat.size()), config.adam);
  AdamState adam_bandwidth(bandwidth ? static_cast<std::size_t>(d) : 0, config.adam);
  const OneCycleSchedule sched_points = make_schedule(config, config.lr_points);
  const OneCycleSchedule sched_coeffs = make_schedule(config, config.lr_coeffs);
  const OneCycleSchedule sched_bandwidth = make_schedule(config, config.lr_bandwidth);
  const std::size_t stride = std::max<std::size_t>(1, config.trace_stride);

  for (std::size_t t = 0; t < config.steps; ++t) {
    maybe_snapshot(t);
    const Matrix* pts = &queries.points;
    const Matrix* tgt = &queries.targets;
    if (minibatch) {
      batch_points.resize(config.batch_size, d);
      batch_targets.resize(config.batch_size, outputs);
      for (Index b = 0; b < config.batch_size; ++b) {
        if (cursor == order.size()) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        const Index row = order[cursor++];
        batch_points.row(b) = queries.points.row(row);
        batch_targets.row(b) = queries.targets.row(row);
      }
      pts = &batch_points;
      tgt = &batch_targets;
    }

    LossAndGrad lg = evaluate_loss(params, *pts, *tgt, spec, true);
    if (!std::isfinite(lg.loss)) {
      throw AttackAborted("attack: non-finite loss at step " + std::to_string(t), t, params);
    }
    if (t % stride == 0) result.trace.push_back({t, lg.loss});

    try {
      Matrix latent_grad = projection ? Matrix(lg.grads.xhat * *projection) : lg.grads.xhat;
      adam_points.step(flat(latent), flat(latent_grad), onecycle_lr(sched_points, t));
      adam_coeffs.step(flat(params.ahat), flat(lg.grads.ahat), onecycle_lr(sched_coeffs, t));
      if (bandwidth) {
        adam_bandwidth.step(flat(*params.log_h), flat(*lg.grads.log_h),
                            onecycle_lr(sched_bandwidth, t));
      }
    } catch (const NumericalError& e) {
      throw AttackAborted(std::string(e.what()) + " at step " + std::to_string(t), t, params);
    }
    sync_candidates();
  }

  result.final_loss = evaluate_loss(params, queries.points, queries.targets, spec, false).loss;
  if (!std::isfinite(result.final_loss)) {
    throw AttackAborted("attack: non-finite final loss", config.steps, params);
  }
  result.trace.push_back({config.steps, result.final_loss});
  maybe_snapshot(config.steps);
  result.params = std::move(params);
  return result;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string query_kind_name(QueryKind kind) {
  switch (kind) {
    case QueryKind::Normal: return "normal";
    case QueryKind::Uniform: return "uniform";
    case QueryKind::Mixture: return "mixture";
    case QueryKind::Grid: return "grid";
    case QueryKind::File: return "file";
  }
  return "unknown";
}

QueryKind parse_query_kind(const std::string& name) {
  for (QueryKind k : {QueryKind::Normal, QueryKind::Uniform, QueryKind::Mixture, QueryKind::Grid,
                      QueryKind::File}) {
    if (query_kind_name(k) == name) return k;
  }
  throw InputError("unknown query distribution '" + name + "'");
}

void QueryDistribution::validate() const {
  if ((kind == QueryKind::Normal || kind == QueryKind::Mixture) && !(sigma > 0.0)) {
    throw InputError("queries: sigma must be > 0");
  }
  if ((kind == QueryKind::Uniform || kind == QueryKind::Grid) && !(high > low)) {
    throw InputError("queries: box needs high > low");
  }
  if (kind == QueryKind::File && path.empty()) throw InputError("queries: file path missing");
}

Matrix sample_queries(const QueryDistribution& dist, Index m, Index d, std::mt19937_64& rng) {
  dist.validate();
  if (m < 1 || d < 1) throw InputError("queries: need m >= 1 and d >= 1");
  Matrix z(m, d);
  switch (dist.kind) {
    case QueryKind::Normal:
      return gaussian_matrix(m, d, dist.sigma, rng);
    case QueryKind::Uniform: {
      std::uniform_real_distribution<double> u(dist.low, dist.high);
      for (Index i = 0; i < z.size(); ++i) z.data()[i] = u(rng);
      return z;
    }
    case QueryKind::Mixture: {
      std::bernoulli_distribution coin(0.5);
      std::normal_distribution<double> normal(0.0, dist.sigma);
      for (Index i = 0; i < m; ++i) {
        const double centre = coin(rng) ? dist.mixture_offset : -dist.mixture_offset;
        for (Index k = 0; k < d; ++k) z(i, k) = centre + normal(rng);
      }
      return z;
    }
    case QueryKind::Grid: {
      if (d != 2) throw InputError("queries: grid sampling supports d = 2 only");
      Index rows = static_cast<Index>(std::floor(std::sqrt(static_cast<double>(m))));
      while (m % rows != 0) --rows;
      const Index cols = m / rows;
      auto axis = [&](Index count, Index i) {
        if (count == 1) return 0.5 * (dist.low + dist.high);
        return dist.low + (dist.high - dist.low) * static_cast<double>(i) /
                              static_cast<double>(count - 1);
      };
      for (Index a = 0; a < rows; ++a) {
        for (Index b = 0; b < cols; ++b) {
          z(a * cols + b, 0) = axis(rows, a);
          z(a * cols + b, 1) = axis(cols, b);
        }
      }
      return z;
    }
    case QueryKind::File: {
      const Matrix all = load_matrix(dist.path);
      if (all.cols() != d) throw InputError("queries: file dimension does not match model");
      if (all.rows() < m) {
        throw InputError("queries: file has " + std::to_string(all.rows()) + " rows, need " +
                         std::to_string(m));
      }
      return all.topRows(m);
    }
  }
  throw InputError("queries: unsupported distribution");
}

Matrix sample_queries(const QueryDistribution& dist, Index m, Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_queries(dist, m, d, rng);
}

void ReconstructionParams::validate() const {
  if (xhat.rows() < 1) throw InputError("params: need at least one candidate");
  if (ahat.rows() != xhat.rows()) throw InputError("params: xhat and ahat row counts differ");
  if (!xhat.allFinite() || !ahat.allFinite()) throw InputError("params: non-finite entries");
  if (log_h) {
    if (log_h->size() != xhat.cols()) throw InputError("params: log_h length != dimension");
    if (!log_h->allFinite()) throw InputError("params: non-finite log_h");
  }
}

QuerySet make_query_set(const ModelOracle& oracle, Matrix points) {
  QuerySet q;
  q.targets = oracle.evaluate(points);
  q.points = std::move(points);
  return q;
}

KernelSpec effective_kernel(const ReconstructionParams& params, const KernelSpec& spec) {
  if (!params.log_h) return spec;
  if (!std::holds_alternative<BandwidthGaussianKernel>(spec)) {
    throw InputError("params: a learned bandwidth needs a bandwidth-Gaussian kernel");
  }
  return BandwidthGaussianKernel{params.log_h->array().exp().matrix()};
}

double reconstruction_loss(const ReconstructionParams& params, const QuerySet& queries,
                           const KernelSpec& spec) {
  check_consistent(params, queries);
  const double loss = evaluate_loss(params, queries.points, queries.targets, spec, false).loss;
  if (!std::isfinite(loss)) throw NumericalError("reconstruction loss is not finite");
  return loss;
}

LossGradients loss_gradients(const ReconstructionParams& params, const QuerySet& queries,
                             const KernelSpec& spec) {
  check_consistent(params, queries);
  LossAndGrad lg = evaluate_loss(params, queries.points, queries.targets, spec, true);
  if (!std::isfinite(lg.loss)) throw NumericalError("reconstruction loss is not finite");
  return std::move(lg.grads);
}

void AttackConfig::validate() const {
  if (n < 1 || m < 1) throw InputError("attack: n and m must be >= 1");
  if (!(point_init_std > 0.0) || !(coeff_init_variance > 0.0)) {
    throw InputError("attack: initialization scales must be > 0");
  }
  if (!(lr_points > 0.0) || !(lr_coeffs > 0.0) || !(lr_bandwidth > 0.0)) {
    throw InputError("attack: learning rates must be > 0");
  }
  if (batch_size < 0) throw InputError("attack: batch_size must be >= 0");
  queries.validate();
}

AttackResult run_attack(const ModelOracle& oracle, const AttackConfig& config) {
  return optimize(oracle, config, nullptr);
}

AttackResult run_attack_pca(const ModelOracle& oracle, const AttackConfig& config,
                            const Matrix& basis) {
  const Index d = oracle.input_dim();
  if (basis.rows() != d || basis.cols() < 1 || basis.cols() > d) {
    throw InputError("pca: basis must be d x k with 1 <= k <= d");
  }
  const Matrix gram = basis.transpose() * basis;
  const double deviation =
      (gram - Matrix::Identity(basis.cols(), basis.cols())).cwiseAbs().maxCoeff();
  if (!(deviation <= 1e-10)) throw InputError("pca: basis columns are not orthonormal");
  const Matrix projection = basis * basis.transpose();
  return optimize(oracle, config, &projection);
}

Matrix pca_basis(const Matrix& data, Index k) {
  if (k < 1 || k > data.cols()) throw InputError("pca: rank must lie in [1, d]");
  if (data.rows() < 1) throw InputError("pca: empty data");
  const Eigen::MatrixXd centred = data.rowwise() - data.colwise().mean();
  const Eigen::MatrixXd cov = centred.transpose() * centred;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericalError("pca: eigendecomposition failed");
  // Eigenvalues ascend; take the last k columns, largest first.
  return eig.eigenvectors().rightCols(k).rowwise().reverse();
}

std::size_t query_count_bound(Index n, Index d) {
  if (n < 1 || d < 1) throw InputError("query_count_bound: n and d must be >= 1");
  return static_cast<std::size_t>(n * (d + 2) + 1);
}

}  // namespace kernrecon
