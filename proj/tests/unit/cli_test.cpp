#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "json.hpp"
#include "kernrecon/matrix_io.hpp"
#include "test_support.hpp"

namespace kernrecon::cli {
namespace {

using nlohmann::json;

Context context(const std::string& text, const std::string& name) {
  Context ctx;
  ctx.config = parse_config(text);
  ctx.out = testing::scratch_dir(name);
  return ctx;
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

TEST(Cli, OverridesReplaceSeedAndOutput) {
  const ExperimentConfig c = with_overrides(parse_config(""), 9, std::string("elsewhere"));
  EXPECT_EQ(c.attack.seed, 9u);
  EXPECT_EQ(c.output_dir, "elsewhere");
  const ExperimentConfig same = with_overrides(parse_config(""), std::nullopt, std::nullopt);
  EXPECT_EQ(same.attack.seed, 0u);
  EXPECT_EQ(same.output_dir, "out");
}

TEST(Cli, GenDataIsDeterministic) {
  const Context ctx = context("[data]\nsource = mixture\nn_points = 10\ndim = 2\n", "gen_data");
  const GenDataResult r = cmd_gen_data(ctx);
  EXPECT_EQ(r.data.x.rows(), 10);
  EXPECT_EQ(r.data.x.cols(), 2);
  EXPECT_EQ(r.data.y.rows(), 10);
  EXPECT_TRUE(load_matrix(r.x_path) == r.data.x);
  EXPECT_EQ(fingerprint(generate_data(ctx.config.data).x), fingerprint(r.data.x));

  DataSection other = ctx.config.data;
  other.seed = 1;
  EXPECT_NE(fingerprint(generate_data(other).x), fingerprint(r.data.x));
  EXPECT_EQ(fingerprint(Matrix::Zero(1, 1)).size(), 16u);
}

TEST(Cli, BinaryLabelsAreSigns) {
  const Dataset d = generate_data(parse_config("[data]\nlabels = binary\nn_points = 30\n").data);
  for (Index i = 0; i < d.y.rows(); ++i) EXPECT_TRUE(d.y(i, 0) == 1.0 || d.y(i, 0) == -1.0);
}

TEST(Cli, TrainKrrInterpolates) {
  const Context ctx = context("[data]\nn_points = 12\ndim = 3\n", "train_krr");
  cmd_gen_data(ctx);
  const TrainResult r = cmd_train(ctx);
  EXPECT_EQ(r.kind, "krr");
  ASSERT_TRUE(r.krr_residual.has_value());
  EXPECT_LT(*r.krr_residual, 1e-8);
  EXPECT_EQ(load_model(r.model_path).kind, "krr");
}

TEST(Cli, TrainKdeUsesScottsRule) {
  const Context ctx = context("[data]\nn_points = 15\ndim = 2\n[model]\nkind = kde\n", "train_kde");
  const GenDataResult data = cmd_gen_data(ctx);
  const TrainResult r = cmd_train(ctx);
  ASSERT_TRUE(r.kde_bandwidth.has_value());
  EXPECT_TRUE(r.kde_bandwidth->isApprox(scott_bandwidth(data.data.x), 1e-14));
}

TEST(Cli, TrainSvmReducesObjective) {
  const Context ctx = context(
      "[data]\nlabels = binary\nn_points = 20\ndim = 3\n[model]\nkind = svm\nkernel = rbf\n"
      "gamma = 0.5\nsteps = 2000\n",
      "train_svm");
  cmd_gen_data(ctx);
  const TrainResult r = cmd_train(ctx);
  ASSERT_TRUE(r.svm_initial_loss && r.svm_final_loss);
  EXPECT_LT(*r.svm_final_loss, *r.svm_initial_loss);
}

TEST(Cli, AttackQueriesTheOracleOnce) {
  Context ctx = context(
      "[data]\nn_points = 3\ndim = 2\n[model]\nkernel = rbf\ngamma = 1\n"
      "[attack]\nn = 3\nm = 40\nsteps = 50\nseeds = 2\n",
      "attack_once");
  Dataset data = generate_data(ctx.config.data);
  testing::CountingOracle oracle(make_oracle(train_krr(data, ctx.config.kernel(), 0.0)));
  const AttackSummary s = cmd_attack(ctx, oracle);
  // One call per seed, each on exactly m rows.
  EXPECT_EQ(oracle.calls(), 2);
  EXPECT_EQ(oracle.last_rows(), 40);
  EXPECT_EQ(oracle.total_rows(), 80);
  EXPECT_EQ(s.runs.size(), 2u);
  for (const char* f : {"Xhat.txt", "Ahat.txt", "Xhat_canonical.txt", "Ahat_canonical.txt",
                        "trace.txt", "manifest.jsonl"}) {
    EXPECT_TRUE(std::filesystem::exists(ctx.out / f)) << f;
  }
  EXPECT_TRUE(load_matrix(ctx.out / "Xhat.txt") == s.best_run().params.xhat);
  for (const AttackRun& run : s.runs) EXPECT_LE(s.best_run().final_loss, run.final_loss);
}

TEST(Cli, EvaluateTableMatchesJson) {
  Context ctx = context("[metrics]\nrelative = false\n", "evaluate");
  std::mt19937_64 rng(4);
  const Matrix train = testing::random_matrix(5, 3, rng);
  const Matrix recon = train + 1e-3 * testing::random_matrix(5, 3, rng);
  save_matrix(ctx.out / "train.txt", train);
  save_matrix(ctx.out / "recon.txt", recon);
  std::ostringstream log;
  ctx.log = &log;
  const ReconReport r = cmd_evaluate(ctx, ctx.out / "recon.txt", ctx.out / "train.txt");

  const auto records = read_jsonl(ctx.out / "evaluate.jsonl");
  ASSERT_FALSE(records.empty());
  const json& summary = records.front();
  EXPECT_EQ(summary["record"], "summary");
  EXPECT_FALSE(summary.contains("dssim_p50"));
  for (const auto& [name, value] : report_fields(r)) {
    EXPECT_EQ(summary[name].get<double>(), value) << name;
    EXPECT_NE(log.str().find(name), std::string::npos);
    EXPECT_NE(log.str().find(metric_text(value)), std::string::npos);
  }
  EXPECT_DOUBLE_EQ(r.recovery_pct, 100.0);
}

TEST(Cli, EvaluateDssimNeedsShapeAndMatchingDims) {
  Context ctx = context("[metrics]\ndistance = dssim\nimage_height = 2\nimage_width = 2\n", "evaluate_dssim");
  std::mt19937_64 rng(5);
  save_matrix(ctx.out / "train.txt", testing::random_matrix(3, 4, rng));
  save_matrix(ctx.out / "recon.txt", testing::random_matrix(2, 4, rng));
  save_matrix(ctx.out / "wide.txt", testing::random_matrix(2, 5, rng));
  const ReconReport r = cmd_evaluate(ctx, ctx.out / "recon.txt", ctx.out / "train.txt");
  EXPECT_TRUE(r.dssim.has_value());
  EXPECT_THROW(cmd_evaluate(ctx, ctx.out / "wide.txt", ctx.out / "train.txt"), InputError);
}

TEST(Cli, DemoFirstSnapshotIsTheInitialization) {
  const Context ctx = context(
      "[data]\nsource = mixture\nn_points = 4\ndim = 2\n[model]\nkind = kde\n"
      "[attack]\nn = 4\nm = 100\nsteps = 30\nqueries = grid\nquery_low = -4\nquery_high = 4\n"
      "snapshot_steps = 0, 30\n[demo]\nlattice = 11\n",
      "demo");
  const DemoResult r = cmd_demo_kde2d(ctx);
  ASSERT_EQ(r.snapshots.size(), 2u);
  EXPECT_EQ(r.snapshots[0].step, 0u);
  EXPECT_TRUE(r.snapshots[0].params.xhat == r.initial.xhat);
  EXPECT_EQ(r.f_grid.rows(), 11);
  EXPECT_EQ(r.fhat_grid.cols(), 11);
  EXPECT_EQ(r.nearest_linf.size(), 4u);
  EXPECT_TRUE(std::filesystem::exists(ctx.out / "demo.jsonl"));
}

TEST(Cli, AblationSharesOneDataset) {
  const Context ctx = context(
      "[data]\nn_points = 3\ndim = 2\n[attack]\nn = 3\nsteps = 20\nseeds = 2\nm_list = 10, 20\n",
      "ablate");
  const auto rows = cmd_ablate_queries(ctx);
  ASSERT_EQ(rows.size(), 4u);
  std::size_t selected = 0;
  for (const AblationRow& row : rows) {
    EXPECT_EQ(row.data_fingerprint, rows.front().data_fingerprint);
    EXPECT_EQ(row.parameter, "m");
    selected += row.selected;
  }
  EXPECT_EQ(selected, 2u);
  EXPECT_EQ(read_jsonl(ctx.out / "ablate_queries.jsonl").size(), 4u);
  EXPECT_THROW(cmd_ablate_gamma(ctx), InputError);
}

TEST(Cli, VerifyFlagsQueryCountsBelowTheBound) {
  const Context ctx = context(
      "[data]\nn_points = 2\ndim = 1\n[model]\ngamma = 1\n[attack]\nn = 2\nm = 3\nsteps = 20\n"
      "seeds = 2\n[verify]\neigen_instances = 4\n",
      "verify_bound");
  const VerifyReport r = cmd_verify_uniqueness(ctx);
  EXPECT_FALSE(r.within_hypothesis);
  EXPECT_EQ(r.runs.size(), 2u);
  EXPECT_EQ(r.eigen.size(), 4u);
  EXPECT_TRUE(std::filesystem::exists(ctx.out / "verify.jsonl"));
  EXPECT_THROW(cmd_verify_uniqueness(context("[data]\nn_points = 9\n", "verify_big")), InputError);
}

// ---------------------------------------------------------------------------

int run_tool(const std::string& args) {
  const std::string cmd = std::string(KERNRECON_TOOL_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(CliBinary, ExitCodes) {
  const auto dir = testing::scratch_dir("binary");
  EXPECT_EQ(run_tool("--list-keys"), 0);
  EXPECT_EQ(run_tool(""), 1);
  EXPECT_EQ(run_tool("no-such-command"), 1);
  EXPECT_EQ(run_tool("--config /nonexistent.ini gen-data"), 1);
  EXPECT_EQ(run_tool("--out " + dir.string() + " gen-data"), 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "X.txt"));
  EXPECT_EQ(run_tool("--out " + dir.string() + " attack"), 1);
  EXPECT_EQ(run_tool("--out " + dir.string() + " evaluate --recon " + (dir / "missing.txt").string() +
                     " --train " + (dir / "X.txt").string()),
            1);
}

}  // namespace
}  // namespace kernrecon::cli
