#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "kernrecon/common.hpp"
#include "kernrecon/kernels.hpp"
#include "kernrecon/optim.hpp"
#include "kernrecon/oracle.hpp"

namespace kernrecon {

// ---------------------------------------------------------------------------
// Query sampling

enum class QueryKind { Normal, Uniform, Mixture, Grid, File };

struct QueryDistribution {
  QueryKind kind = QueryKind::Normal;
  double sigma = 1.0;           // Normal: N(0, sigma^2 I). Mixture: component std.
  double low = -1.0;            // Uniform and Grid: box [low, high]^d.
  double high = 1.0;
  double mixture_offset = 2.0;  // Mixture: 0.5 N(-offset 1, .) + 0.5 N(+offset 1, .)
  std::string path;             // File: MatrixFile with at least m rows.

  void validate() const;
};

std::string query_kind_name(QueryKind kind);
QueryKind parse_query_kind(const std::string& name);

/// Draws m query points in R^d. Grid (d = 2 only) returns the a x b lattice
/// over the box with a * b = m and a the largest divisor of m not above
/// sqrt(m); the first coordinate varies slowest.
Matrix sample_queries(const QueryDistribution& dist, Index m, Index d, std::mt19937_64& rng);
Matrix sample_queries(const QueryDistribution& dist, Index m, Index d, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Reconstruction loss

/// The attack's optimization variables. log_h is present only when the
/// bandwidth of a Gaussian KDE is learned jointly.
struct ReconstructionParams {
  Matrix xhat;  // n x d candidate points
  Matrix ahat;  // n x C candidate coefficients
  std::optional<Vector> log_h;

  Index size() const { return xhat.rows(); }
  void validate() const;
};

struct QuerySet {
  Matrix points;   // m x d
  Matrix targets;  // m x C oracle outputs
};

/// Evaluates the oracle exactly once, on all of `points`.
QuerySet make_query_set(const ModelOracle& oracle, Matrix points);

/// The kernel actually used for the candidate expansion: `spec`, with the
/// bandwidth replaced by exp(log_h) when the params carry one.
KernelSpec effective_kernel(const ReconstructionParams& params, const KernelSpec& spec);

/// (1/mC) sum_j sum_c (sum_i ahat(i,c) k(z_j, xhat_i) - target(j,c))^2
double reconstruction_loss(const ReconstructionParams& params, const QuerySet& queries,
                           const KernelSpec& spec);

struct LossGradients {
  Matrix xhat;
  Matrix ahat;
  std::optional<Vector> log_h;
};

LossGradients loss_gradients(const ReconstructionParams& params, const QuerySet& queries,
                             const KernelSpec& spec);

// ---------------------------------------------------------------------------
// The attack

struct AttackConfig {
  Index n = 1;                 // number of candidates; an upper bound on N
  Index m = 1;                 // number of queries
  std::size_t steps = 20000;
  std::uint64_t seed = 0;
  QueryDistribution queries;

  double point_init_std = 0.3;
  double coeff_init_variance = 0.05;
  double lr_points = 2e-2;
  double lr_coeffs = 1e-2;
  double lr_bandwidth = 1e-2;
  double pct_start = 0.15;
  double div_factor = 10.0;
  double final_div_factor = 100.0;
  AdamHyperParams adam;

  /// Learn a log-diagonal bandwidth when attacking a bandwidth-Gaussian
  /// kernel instead of trusting the one the oracle reports.
  bool learn_bandwidth = true;
  /// Queries per step; 0 means full batch.
  Index batch_size = 0;
  std::size_t trace_stride = 1;
  /// Steps at which to record the parameters (0 is the initialization,
  /// `steps` the final state).
  std::vector<std::size_t> snapshot_steps;

  void validate() const;
};

struct TracePoint {
  std::size_t step;
  double loss;
};

struct Snapshot {
  std::size_t step;
  ReconstructionParams params;
};

struct AttackResult {
  ReconstructionParams initial;
  ReconstructionParams params;
  /// Loss before update t for every trace_stride-th t, then (steps, final_loss).
  std::vector<TracePoint> trace;
  double final_loss = 0.0;
  std::vector<Snapshot> snapshots;
};

/// Raised when the loss or a gradient becomes non-finite.
class AttackAborted : public NumericalError {
 public:
  AttackAborted(const std::string& what, std::size_t step, ReconstructionParams last)
      : NumericalError(what, step), last_(std::move(last)) {}
  const ReconstructionParams& last_finite() const { return last_; }

 private:
  ReconstructionParams last_;
};

/// Query-only reconstruction: sample m queries, evaluate the oracle once,
/// then run `steps` Adam updates on (xhat, ahat[, log_h]) with per-group
/// OneCycle schedules. One generator seeded with config.seed is consumed in
/// order: queries, xhat init, ahat init, then mini-batch permutations.
AttackResult run_attack(const ModelOracle& oracle, const AttackConfig& config);

/// As run_attack, but candidates are xhat_i = U U^T v_i with v_i optimized in
/// the full dimension. `basis` is d x k with orthonormal columns.
AttackResult run_attack_pca(const ModelOracle& oracle, const AttackConfig& config,
                            const Matrix& basis);

/// Top-k principal directions (d x k, orthonormal columns) of `data`.
Matrix pca_basis(const Matrix& data, Index k);

// ---------------------------------------------------------------------------
// Post-processing

struct CanonicalTolerances {
  double merge_tol;
  double coeff_tol;

  /// merge_tol = 1e-3 sqrt(d), coeff_tol = 1e-6 max|ahat|.
  static CanonicalTolerances defaults_for(const ReconstructionParams& params);
};

/// Merges candidates connected by single linkage within merge_tol (the merged
/// point is the |coefficient|-weighted mean, coefficients are summed), then
/// drops candidates whose largest |coefficient| is below coeff_tol.
/// Idempotent for fixed tolerances.
ReconstructionParams canonicalize(const ReconstructionParams& params, double merge_tol,
                                  double coeff_tol);
ReconstructionParams canonicalize(const ReconstructionParams& params);

/// Smallest m with m > n (d + 2).
std::size_t query_count_bound(Index n, Index d);

struct MatchOptions {
  double tol = 1e-3;
  /// Divide distances by the norm of the truth point.
  bool relative = false;
};

struct MatchReport {
  /// Per truth point: distance to its nearest candidate (+inf if none).
  std::vector<double> best_distance;
  /// Per truth point: candidate assigned by greedy one-to-one matching, or -1.
  std::vector<Index> assignment;
  std::vector<double> assigned_distance;
  /// Per truth point: max_c |alpha - ahat| for its assigned candidate (NaN if
  /// unassigned or coefficients unavailable).
  std::vector<double> coeff_discrepancy;
  /// Fraction of truth points whose assigned candidate lies within tol.
  double matched_fraction = 0.0;

  double median_best_distance() const;
  double max_coeff_discrepancy() const;
};

/// Greedy nearest-neighbour matching under L2: pairs are taken in order of
/// increasing distance, each truth point and candidate used at most once.
/// Coefficient matrices may be empty to skip coefficient comparison.
MatchReport match_to_truth(const Matrix& recon_x, const Matrix& recon_a, const Matrix& truth_x,
                           const Matrix& truth_a, const MatchOptions& options);

}  // namespace kernrecon
