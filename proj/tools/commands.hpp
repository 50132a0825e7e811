#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "kernrecon/attack.hpp"
#include "kernrecon/config.hpp"
#include "kernrecon/metrics.hpp"
#include "kernrecon/models.hpp"
#include "kernrecon/oracle.hpp"

namespace kernrecon::cli {

/// Raised when a verification suite completes but does not pass.
class VerificationFailure : public Error {
 public:
  using Error::Error;
};

struct Context {
  ExperimentConfig config;
  std::filesystem::path out = "out";
  unsigned threads = 1;
  std::ostream* log = nullptr;  // progress and tables; null for silence
};

/// Applies the global --seed / --out overrides to a parsed config.
ExperimentConfig with_overrides(const ExperimentConfig& config, std::optional<std::uint64_t> seed,
                                const std::optional<std::string>& out);

/// Synthetic or file-backed training set described by [data].
Dataset generate_data(const DataSection& data);

/// FNV-1a over the raw bytes of a matrix, as 16 hex digits.
std::string fingerprint(const Matrix& m);

// ---------------------------------------------------------------------------

struct GenDataResult {
  Dataset data;
  std::filesystem::path x_path;
  std::filesystem::path y_path;
};

/// Writes X.txt and Y.txt under ctx.out.
GenDataResult cmd_gen_data(const Context& ctx);

struct TrainResult {
  std::string kind;
  std::filesystem::path model_path;
  std::optional<double> krr_residual;
  std::optional<double> svm_initial_loss;
  std::optional<double> svm_final_loss;
  std::optional<Vector> kde_bandwidth;
};

/// Trains the [model] on the dataset at data.x_path / data.y_path (default:
/// X.txt and Y.txt under ctx.out) and writes model.txt.
TrainResult cmd_train(const Context& ctx);

struct AttackRun {
  std::uint64_t seed = 0;
  std::string status = "ok";  // ok | aborted
  std::string message;
  double final_loss = 0.0;
  double wall_seconds = 0.0;
  ReconstructionParams params;     // final, or last finite state on abort
  ReconstructionParams canonical;  // canonicalized params
  std::vector<TracePoint> trace;
};

struct AttackSummary {
  std::vector<AttackRun> runs;
  std::size_t best = 0;  // lowest final loss among runs that finished
  Index n = 0;
  Index d = 0;
  Index m = 0;
  std::size_t query_count_bound = 0;

  const AttackRun& best_run() const { return runs.at(best); }
};

/// Runs the configured attack against an oracle, once per seed, without
/// writing anything.
AttackSummary attack_oracle(const Context& ctx, const ModelOracle& oracle);

/// Serves the model file behind an oracle, attacks it and writes Xhat.txt,
/// Ahat.txt, their canonical variants, trace.txt and manifest.jsonl for the
/// lowest-loss seed. Throws NumericalError if every seed aborted.
AttackSummary cmd_attack(const Context& ctx, const std::filesystem::path& model_path);

/// Same outputs, against an oracle supplied by the caller.
AttackSummary cmd_attack(const Context& ctx, const ModelOracle& oracle);

/// Writes evaluate.jsonl and prints the summary table.
ReconReport cmd_evaluate(const Context& ctx, const std::filesystem::path& recon_path,
                         const std::filesystem::path& train_path);

/// The record evaluate.jsonl and the table are both rendered from.
std::vector<std::pair<std::string, double>> report_fields(const ReconReport& report);
/// Shortest round-trip decimal, as used in both the table and the JSON.
std::string metric_text(double value);

struct DemoResult {
  Matrix truth;
  Vector h_true;
  Vector h_learned;
  ReconstructionParams canonical;
  /// Per truth point: L-infinity distance to the nearest canonical candidate.
  std::vector<double> nearest_linf;
  double max_nearest_linf = 0.0;
  double max_h_relative_error = 0.0;
  double final_loss = 0.0;
  double wall_seconds = 0.0;
  Matrix f_grid;     // lattice x lattice, true density
  Matrix fhat_grid;  // lattice x lattice, reconstruction at the final step
  std::vector<Snapshot> snapshots;
  ReconstructionParams initial;
};

/// Samples [data] (d = 2), fits a Scott's-rule KDE, attacks it with the
/// bandwidth learned jointly and exports lattice grids and point snapshots.
DemoResult cmd_demo_kde2d(const Context& ctx);

struct AblationRow {
  std::string parameter;  // "m" or "gamma"
  double value = 0.0;
  std::uint64_t seed = 0;
  std::string status = "ok";
  double final_loss = 0.0;
  double median_error = 0.0;
  double matched_fraction = 0.0;
  double recovery_pct = 0.0;
  double wall_seconds = 0.0;
  std::string data_fingerprint;
  bool selected = false;  // lowest final loss among the seeds for this value
};

/// One row per (m, seed); writes ablate_queries.jsonl.
std::vector<AblationRow> cmd_ablate_queries(const Context& ctx);
/// One row per (gamma, seed); writes ablate_gamma.jsonl.
std::vector<AblationRow> cmd_ablate_gamma(const Context& ctx);

struct SoundnessRun {
  std::uint64_t seed = 0;
  double final_loss = 0.0;
  bool converged = false;
  bool matches_truth = false;
  double max_point_error = 0.0;
  double max_coeff_error = 0.0;
  Index canonical_size = 0;
};

struct EigenCheck {
  std::string kernel;
  Index points = 0;
  Index dim = 0;
  double min_eigenvalue = 0.0;
};

struct VerifyReport {
  std::size_t m = 0;
  std::size_t query_count_bound = 0;
  bool within_hypothesis = false;  // m >= query_count_bound
  std::vector<SoundnessRun> runs;
  std::size_t converged = 0;
  std::size_t sound = 0;  // converged runs that canonicalize to the truth
  std::vector<EigenCheck> eigen;
  double min_eigenvalue = 0.0;
  bool soundness_passed = false;
  bool optimization_passed = false;
  bool eigen_passed = false;

  bool passed() const { return soundness_passed && optimization_passed && eigen_passed; }
};

/// Zero-loss soundness and gram invertibility suites; writes verify.jsonl.
VerifyReport cmd_verify_uniqueness(const Context& ctx);

/// Median (over truth points) distance to the nearest candidate and the
/// fraction matched within tol, honouring [metrics] relative.
MatchReport match_against(const ExperimentConfig& config, const ReconstructionParams& canonical,
                          const Matrix& truth_x, const Matrix& truth_a);

}  // namespace kernrecon::cli
