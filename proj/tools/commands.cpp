#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <mutex>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include <Eigen/Eigenvalues>
#include "json.hpp"

#include "kernrecon/matrix_io.hpp"

namespace kernrecon::cli {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::ostream* logger(const Context& ctx) { return ctx.log; }

template <typename... Args>
void say(const Context& ctx, const Args&... args) {
  if (std::ostream* os = logger(ctx)) {
    ((*os) << ... << args);
    (*os) << '\n';
  }
}

fs::path prepare_out(const Context& ctx) {
  std::error_code ec;
  fs::create_directories(ctx.out, ec);
  if (ec) throw InputError("cannot create output directory " + ctx.out.string());
  return ctx.out;
}

class JsonLines {
 public:
  explicit JsonLines(const fs::path& path) : out_(path) {
    if (!out_) throw InputError("cannot write " + path.string());
  }
  void write(const json& record) { out_ << record.dump() << '\n'; }

 private:
  std::ofstream out_;
};

json config_echo(const ExperimentConfig& config) {
  json echo = json::object();
  for (const auto& [key, value] : config.raw) {
    const auto dot = key.find('.');
    echo[key.substr(0, dot)][key.substr(dot + 1)] = value;
  }
  return echo;
}

json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

// Runs jobs 0..count-1 on up to `threads` workers; results keep job order.
template <typename Result>
std::vector<Result> fan_out(std::size_t count, unsigned threads,
                            const std::function<Result(std::size_t)>& job) {
  std::vector<std::optional<Result>> slots(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        slots[i].emplace(job(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned k = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < k; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  std::vector<Result> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    out.push_back(std::move(*slots[i]));
  }
  return out;
}

Matrix standard_normal(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix out(rows, cols);
  for (Index i = 0; i < out.size(); ++i) out.data()[i] = normal(rng);
  return out;
}

TrainedKernelModel train_model(const ExperimentConfig& config, const Dataset& data,
                               std::optional<double> gamma = std::nullopt) {
  const auto& m = config.model;
  if (m.kind == "kde") return train_kde(data.x).as_kernel_model();
  const KernelSpec spec = config.kernel(gamma);
  if (m.kind == "krr") return train_krr(data, spec, m.lambda);
  SvmOptions options;
  options.steps = m.steps;
  options.max_lr = m.lr;
  options.trace_stride = std::max<std::size_t>(1, m.steps / 100);
  return train_svm_gd(data, spec, options).model;
}

ReconstructionParams canonical_of(const ExperimentConfig& config, const ReconstructionParams& p) {
  const CanonicalTolerances defaults = CanonicalTolerances::defaults_for(p);
  return canonicalize(p, config.attack.merge_tol.value_or(defaults.merge_tol),
                      config.attack.coeff_tol.value_or(defaults.coeff_tol));
}

fs::path data_path(const Context& ctx, const std::string& configured, const char* fallback) {
  return configured.empty() ? ctx.out / fallback : fs::path(configured);
}

void write_trace(const fs::path& path, const std::vector<TracePoint>& trace) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& tp : trace) out << tp.step << ' ' << format_double(tp.loss) << '\n';
}

std::string step_tag(std::size_t step) { return "step" + std::to_string(step); }

}  // namespace

// ---------------------------------------------------------------------------

ExperimentConfig with_overrides(const ExperimentConfig& config, std::optional<std::uint64_t> seed,
                                const std::optional<std::string>& out) {
  RawConfig raw = config.raw;
  if (seed) raw["data.seed"] = raw["attack.seed"] = std::to_string(*seed);
  if (out) raw["output.dir"] = *out;
  return config_from_raw(raw);
}

Dataset generate_data(const DataSection& d) {
  Dataset data;
  if (d.source == "file") {
    data.x = load_matrix(d.x_path);
    data.y = d.y_path.empty() ? Matrix::Zero(data.x.rows(), 1) : load_matrix(d.y_path);
    data.validate();
    return data;
  }
  // Inputs are drawn first, then labels, from one generator.
  std::mt19937_64 rng(d.seed);
  const Index n = d.n_points;
  std::vector<int> component(static_cast<std::size_t>(n), 1);
  if (d.source == "gaussian") {
    data.x = standard_normal(n, d.dim, rng);
  } else if (d.source == "uniform") {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    data.x.resize(n, d.dim);
    for (Index i = 0; i < data.x.size(); ++i) data.x.data()[i] = u(rng);
  } else {
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> normal;
    data.x.resize(n, d.dim);
    for (Index i = 0; i < n; ++i) {
      component[i] = coin(rng) ? 1 : -1;
      for (Index k = 0; k < d.dim; ++k) data.x(i, k) = component[i] * d.mixture_offset + normal(rng);
    }
  }

  if (d.labels == "regression") {
    data.y = standard_normal(n, d.outputs, rng);
  } else if (d.labels == "binary") {
    data.y.resize(n, 1);
    for (Index i = 0; i < n; ++i) {
      data.y(i, 0) = d.source == "mixture" ? component[i] : (data.x.row(i).sum() >= 0.0 ? 1 : -1);
    }
  } else {
    const Matrix centres = standard_normal(d.outputs, d.dim, rng);
    data.y.resize(n, 1);
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      (centres.rowwise() - data.x.row(i)).rowwise().squaredNorm().minCoeff(&best);
      data.y(i, 0) = static_cast<double>(best + 1);
    }
  }
  data.validate();
  return data;
}

std::string fingerprint(const Matrix& m) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* p, std::size_t bytes) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= c[i];
      h *= 1099511628211ULL;
    }
  };
  const Index shape[2] = {m.rows(), m.cols()};
  mix(shape, sizeof shape);
  mix(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

MatchReport match_against(const ExperimentConfig& config, const ReconstructionParams& canonical,
                          const Matrix& truth_x, const Matrix& truth_a) {
  MatchOptions options;
  options.tol = config.metrics.l2_tolerance;
  options.relative = config.metrics.relative;
  return match_to_truth(canonical.xhat, truth_a.size() ? canonical.ahat : Matrix(), truth_x,
                        truth_a, options);
}

// ---------------------------------------------------------------------------

GenDataResult cmd_gen_data(const Context& ctx) {
  const fs::path out = prepare_out(ctx);
  GenDataResult r{generate_data(ctx.config.data), out / "X.txt", out / "Y.txt"};
  save_matrix(r.x_path, r.data.x);
  save_matrix(r.y_path, r.data.y);
  say(ctx, "wrote ", r.data.x.rows(), "x", r.data.x.cols(), " inputs to ", r.x_path.string());
  return r;
}

TrainResult cmd_train(const Context& ctx) {
  const fs::path out = prepare_out(ctx);
  const auto& cfg = ctx.config;
  Dataset data;
  data.x = load_matrix(data_path(ctx, cfg.data.x_path, "X.txt"));
  const fs::path y_path = data_path(ctx, cfg.data.y_path, "Y.txt");
  data.y = cfg.model.kind == "kde" && !fs::exists(y_path) ? Matrix::Zero(data.x.rows(), 1)
                                                          : load_matrix(y_path);
  data.validate();

  TrainResult r;
  r.kind = cfg.model.kind;
  r.model_path = out / "model.txt";
  std::optional<TrainedKernelModel> model;
  if (r.kind == "krr") {
    model.emplace(train_krr(data, cfg.kernel(), cfg.model.lambda));
    r.krr_residual = krr_relative_residual(*model, data.y, cfg.model.lambda);
    say(ctx, "krr: N=", data.x.rows(), " relative residual ", format_double(*r.krr_residual));
  } else if (r.kind == "svm") {
    SvmOptions options;
    options.steps = cfg.model.steps;
    options.max_lr = cfg.model.lr;
    options.trace_stride = std::max<std::size_t>(1, cfg.model.steps / 100);
    SvmResult svm = train_svm_gd(data, cfg.kernel(), options);
    r.svm_initial_loss = svm.initial_loss();
    r.svm_final_loss = svm.final_loss();
    say(ctx, "svm: hinge loss ", format_double(svm.initial_loss()), " -> ",
        format_double(svm.final_loss()), " after ", cfg.model.steps, " steps");
    model.emplace(std::move(svm.model));
  } else {
    const KdeModel kde = train_kde(data.x);
    r.kde_bandwidth = kde.h_diag();
    say(ctx, "kde: N=", data.x.rows(), " bandwidth ", format_kernel(BandwidthGaussianKernel{kde.h_diag()}));
    model.emplace(kde.as_kernel_model());
  }
  save_model(r.model_path, r.kind, *model);
  return r;
}

AttackSummary attack_oracle(const Context& ctx, const ModelOracle& oracle) {
  const auto& cfg = ctx.config;
  AttackSummary s;
  s.n = cfg.attack.base.n;
  s.d = oracle.input_dim();
  s.m = cfg.attack.base.m;
  s.query_count_bound = query_count_bound(s.n, s.d);
  std::optional<Matrix> basis;
  if (cfg.attack.pca_rank > 0) basis = pca_basis(load_matrix(cfg.attack.pca_reference), cfg.attack.pca_rank);

  bool any_ok = false;
  for (Index i = 0; i < cfg.attack.seeds; ++i) {
    AttackRun run;
    run.seed = cfg.attack.seed + static_cast<std::uint64_t>(i);
    const AttackConfig ac = cfg.attack_config(run.seed);
    const Stopwatch clock;
    try {
      AttackResult result = basis ? run_attack_pca(oracle, ac, *basis) : run_attack(oracle, ac);
      run.final_loss = result.final_loss;
      run.params = std::move(result.params);
      run.trace = std::move(result.trace);
    } catch (const AttackAborted& e) {
      run.status = "aborted";
      run.message = e.what();
      run.final_loss = std::numeric_limits<double>::quiet_NaN();
      run.params = e.last_finite();
    }
    run.wall_seconds = clock.seconds();
    run.canonical = canonical_of(cfg, run.params);
    say(ctx, "attack seed ", run.seed, ": ", run.status, " final loss ", format_double(run.final_loss),
        " (", run.wall_seconds, " s)");
    if (run.status == "ok" && (!any_ok || run.final_loss < s.runs[s.best].final_loss)) {
      s.best = s.runs.size();
      any_ok = true;
    }
    s.runs.push_back(std::move(run));
  }
  return s;
}

AttackSummary cmd_attack(const Context& ctx, const ModelOracle& oracle) {
  const fs::path out = prepare_out(ctx);
  AttackSummary s = attack_oracle(ctx, oracle);

  JsonLines manifest(out / "manifest.jsonl");
  for (std::size_t i = 0; i < s.runs.size(); ++i) {
    const AttackRun& run = s.runs[i];
    json rec = {{"command", "attack"},
                {"status", run.status},
                {"seed", run.seed},
                {"final_loss", std::isfinite(run.final_loss) ? json(run.final_loss) : json(nullptr)},
                {"wall_seconds", run.wall_seconds},
                {"n", s.n},
                {"d", s.d},
                {"m", s.m},
                {"query_count_bound", s.query_count_bound},
                {"m_meets_bound", static_cast<std::size_t>(s.m) >= s.query_count_bound},
                {"canonical_size", run.canonical.size()},
                {"selected", run.status == "ok" && i == s.best},
                {"config", config_echo(ctx.config)}};
    if (!run.message.empty()) rec["message"] = run.message;
    if (run.params.log_h) rec["bandwidth"] = vector_json(run.params.log_h->array().exp().matrix());
    manifest.write(rec);
  }

  const bool any_ok = std::any_of(s.runs.begin(), s.runs.end(),
                                  [](const AttackRun& r) { return r.status == "ok"; });
  const AttackRun& chosen = any_ok ? s.best_run() : s.runs.back();
  save_matrix(out / "Xhat.txt", chosen.params.xhat);
  save_matrix(out / "Ahat.txt", chosen.params.ahat);
  save_matrix(out / "Xhat_canonical.txt", chosen.canonical.xhat);
  save_matrix(out / "Ahat_canonical.txt", chosen.canonical.ahat);
  if (chosen.params.log_h) {
    save_matrix(out / "bandwidth.txt", Matrix(chosen.params.log_h->array().exp().matrix().transpose()));
  }
  write_trace(out / "trace.txt", chosen.trace);
  if (!any_ok) throw NumericalError("attack: every seed aborted: " + chosen.message);
  return s;
}

AttackSummary cmd_attack(const Context& ctx, const fs::path& model_path) {
  // The parsed model lives only inside the oracle; nothing else survives.
  const std::unique_ptr<ModelOracle> oracle = serve_model(model_path);
  return cmd_attack(ctx, *oracle);
}

// ---------------------------------------------------------------------------

std::string metric_text(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc()) throw InputError("metric_text: conversion failed");
  return std::string(buf, ptr);
}

std::vector<std::pair<std::string, double>> report_fields(const ReconReport& r) {
  std::vector<std::pair<std::string, double>> f = {
      {"n_train", static_cast<double>(r.nearest_l2.size())},
      {"recovery_pct", r.recovery_pct},
  };
  if (r.recovery_below_threshold_pct) f.emplace_back("recovery_dssim_below_pct", *r.recovery_below_threshold_pct);
  f.emplace_back("l2_p25", r.l2.p25);
  f.emplace_back("l2_p50", r.l2.p50);
  f.emplace_back("l2_p75", r.l2.p75);
  if (r.dssim) {
    f.emplace_back("dssim_p25", r.dssim->p25);
    f.emplace_back("dssim_p50", r.dssim->p50);
    f.emplace_back("dssim_p75", r.dssim->p75);
  }
  return f;
}

ReconReport cmd_evaluate(const Context& ctx, const fs::path& recon_path, const fs::path& train_path) {
  const fs::path out = prepare_out(ctx);
  const auto& mc = ctx.config.metrics;
  const Matrix recons = load_matrix(recon_path);
  const Matrix train = load_matrix(train_path);
  if (recons.cols() != train.cols()) throw InputError("evaluate: reconstruction and training dimensions differ");

  ReportOptions options;
  if (mc.distance == DistanceKind::Dssim) {
    if (!mc.shape) throw InputError("evaluate: dssim needs metrics.image_height/width");
    options.shape = mc.shape;
  }
  options.l2_tolerance = mc.l2_tolerance;
  options.dssim_threshold = mc.dssim_threshold;
  const ReconReport report = kernrecon::report(recons, train, options);

  JsonLines lines(out / "evaluate.jsonl");
  json summary = {{"record", "summary"}};
  const auto fields = report_fields(report);
  for (const auto& [name, value] : fields) summary[name] = value;
  lines.write(summary);
  for (std::size_t k = 0; k < report.matches.pairs.size(); ++k) {
    lines.write({{"record", "pair"},
                 {"train", report.matches.pairs[k].first},
                 {"recon", report.matches.pairs[k].second},
                 {"distance", report.matches.pair_distance[k]}});
  }

  if (std::ostream* os = logger(ctx)) {
    std::size_t width = 0;
    for (const auto& f : fields) width = std::max(width, f.first.size());
    for (const auto& [name, value] : fields) {
      *os << std::left << std::setw(static_cast<int>(width) + 2) << name << metric_text(value) << '\n';
    }
  }
  return report;
}

// ---------------------------------------------------------------------------

DemoResult cmd_demo_kde2d(const Context& ctx) {
  const fs::path out = prepare_out(ctx);
  const auto& cfg = ctx.config;
  if (cfg.data.dim != 2) throw InputError("demo-kde2d: data.dim must be 2");

  DemoResult r;
  r.truth = generate_data(cfg.data).x;
  const KdeModel kde = train_kde(r.truth);
  r.h_true = kde.h_diag();
  const std::unique_ptr<ModelOracle> oracle = make_oracle(kde);

  AttackConfig ac = cfg.attack_config(cfg.attack.seed);
  ac.learn_bandwidth = true;
  ac.snapshot_steps.push_back(0);
  ac.snapshot_steps.push_back(ac.steps);
  std::sort(ac.snapshot_steps.begin(), ac.snapshot_steps.end());
  ac.snapshot_steps.erase(std::unique(ac.snapshot_steps.begin(), ac.snapshot_steps.end()),
                          ac.snapshot_steps.end());

  const Stopwatch clock;
  AttackResult result = run_attack(*oracle, ac);
  r.wall_seconds = clock.seconds();
  r.final_loss = result.final_loss;
  r.initial = result.initial;
  r.snapshots = result.snapshots;
  r.h_learned = result.params.log_h->array().exp();
  r.canonical = canonical_of(cfg, result.params);

  for (Index i = 0; i < r.truth.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < r.canonical.size(); ++j) {
      best = std::min(best, (r.truth.row(i) - r.canonical.xhat.row(j)).cwiseAbs().maxCoeff());
    }
    r.nearest_linf.push_back(best);
  }
  r.max_nearest_linf = *std::max_element(r.nearest_linf.begin(), r.nearest_linf.end());
  r.max_h_relative_error = ((r.h_learned - r.h_true).array() / r.h_true.array()).abs().maxCoeff();

  // Lattice over the query box; row a, column b holds (axis[a], axis[b]).
  const Index g = cfg.demo.lattice;
  const double lo = ac.queries.kind == QueryKind::Grid || ac.queries.kind == QueryKind::Uniform ? ac.queries.low : -6.0;
  const double hi = ac.queries.kind == QueryKind::Grid || ac.queries.kind == QueryKind::Uniform ? ac.queries.high : 6.0;
  Matrix axis(1, g);
  for (Index a = 0; a < g; ++a) axis(0, a) = lo + (hi - lo) * static_cast<double>(a) / static_cast<double>(g - 1);
  Matrix lattice(g * g, 2);
  for (Index a = 0; a < g; ++a) {
    for (Index b = 0; b < g; ++b) lattice.row(a * g + b) << axis(0, a), axis(0, b);
  }
  auto as_grid = [g](const Matrix& values) {
    return Matrix(Eigen::Map<const Matrix>(values.data(), g, g));
  };
  auto fhat_on = [&](const ReconstructionParams& p) {
    const KernelSpec spec = effective_kernel(p, oracle->kernel());
    return as_grid(TrainedKernelModel(spec, p.xhat, p.ahat).evaluate(lattice));
  };
  r.f_grid = as_grid(kde.evaluate(lattice));
  r.fhat_grid = fhat_on(result.params);

  save_matrix(out / "lattice_axis.txt", axis);
  save_matrix(out / "truth.txt", r.truth);
  save_matrix(out / "f_grid.txt", r.f_grid);
  save_matrix(out / "canonical_points.txt", r.canonical.xhat);
  save_matrix(out / "canonical_coeffs.txt", r.canonical.ahat);
  const QuerySet queries = make_query_set(*oracle, sample_queries(ac.queries, ac.m, 2, ac.seed));
  JsonLines lines(out / "demo.jsonl");
  for (const Snapshot& snap : r.snapshots) {
    const std::string tag = step_tag(snap.step);
    save_matrix(out / ("points_" + tag + ".txt"), snap.params.xhat);
    save_matrix(out / ("coeffs_" + tag + ".txt"), snap.params.ahat);
    save_matrix(out / ("fhat_grid_" + tag + ".txt"), fhat_on(snap.params));
    lines.write({{"record", "snapshot"},
                 {"step", snap.step},
                 {"loss", reconstruction_loss(snap.params, queries, oracle->kernel())},
                 {"bandwidth", vector_json(snap.params.log_h->array().exp().matrix())}});
  }
  write_trace(out / "trace.txt", result.trace);
  lines.write({{"record", "summary"},
               {"final_loss", r.final_loss},
               {"wall_seconds", r.wall_seconds},
               {"h_true", vector_json(r.h_true)},
               {"h_learned", vector_json(r.h_learned)},
               {"max_h_relative_error", r.max_h_relative_error},
               {"nearest_linf", r.nearest_linf},
               {"max_nearest_linf", r.max_nearest_linf},
               {"grid_max_abs_diff", (r.f_grid - r.fhat_grid).cwiseAbs().maxCoeff()},
               {"query_count_bound", query_count_bound(ac.n, 2)},
               {"m", ac.m},
               {"config", config_echo(cfg)}});
  say(ctx, "demo-kde2d: final loss ", format_double(r.final_loss), ", max L-inf error ",
      metric_text(r.max_nearest_linf), ", bandwidth relative error ", metric_text(r.max_h_relative_error));
  return r;
}

// ---------------------------------------------------------------------------

namespace {

struct AblationJob {
  double value;
  std::uint64_t seed;
};

std::vector<AblationRow> run_ablation(const Context& ctx, const std::string& parameter,
                                      const std::vector<double>& values, const fs::path& file) {
  if (values.empty()) throw InputError("ablate-" + parameter + ": list is empty");
  const auto& cfg = ctx.config;
  const Dataset data = generate_data(cfg.data);
  const std::string fp = fingerprint(data.x);

  std::vector<std::optional<TrainedKernelModel>> models;
  if (parameter == "m") {
    models.emplace_back(train_model(cfg, data));
  } else {
    for (double gamma : values) models.emplace_back(train_model(cfg, data, gamma));
  }

  std::vector<AblationJob> jobs;
  for (double v : values) {
    for (Index s = 0; s < cfg.attack.seeds; ++s) jobs.push_back({v, cfg.attack.seed + static_cast<std::uint64_t>(s)});
  }
  const std::function<AblationRow(std::size_t)> job = [&](std::size_t i) {
    const AblationJob& jb = jobs[i];
    const std::size_t value_index = i / static_cast<std::size_t>(cfg.attack.seeds);
    const TrainedKernelModel& model = *models[parameter == "m" ? 0 : value_index];
    const std::unique_ptr<ModelOracle> oracle = make_oracle(model);
    AttackConfig ac = cfg.attack_config(jb.seed);
    if (parameter == "m") ac.m = static_cast<Index>(jb.value);

    AblationRow row;
    row.parameter = parameter;
    row.value = jb.value;
    row.seed = jb.seed;
    row.data_fingerprint = fp;
    const Stopwatch clock;
    ReconstructionParams params;
    try {
      AttackResult result = run_attack(*oracle, ac);
      row.final_loss = result.final_loss;
      params = std::move(result.params);
    } catch (const AttackAborted& e) {
      row.status = "aborted";
      row.final_loss = std::numeric_limits<double>::quiet_NaN();
      params = e.last_finite();
    }
    row.wall_seconds = clock.seconds();
    const ReconstructionParams canonical = canonical_of(cfg, params);
    const MatchReport match = match_against(cfg, canonical, data.x, Matrix());
    row.median_error = match.median_best_distance();
    row.matched_fraction = match.matched_fraction;
    if (canonical.size() > 0) {
      row.recovery_pct = mutual_nn_recovery(canonical.xhat, data.x, DistanceKind::L2, std::nullopt,
                                            cfg.metrics.l2_tolerance)
                             .percentage;
    }
    return row;
  };
  std::vector<AblationRow> rows = fan_out(jobs.size(), ctx.threads, job);

  for (std::size_t v = 0; v < values.size(); ++v) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].value != values[v] || rows[i].status != "ok") continue;
      if (!best || rows[i].final_loss < rows[*best].final_loss) best = i;
    }
    if (best) rows[*best].selected = true;
  }

  prepare_out(ctx);
  JsonLines lines(ctx.out / file);
  for (const AblationRow& row : rows) {
    lines.write({{"command", "ablate-" + std::string(parameter == "m" ? "queries" : "gamma")},
                 {parameter, row.value},
                 {"seed", row.seed},
                 {"status", row.status},
                 {"final_loss", std::isfinite(row.final_loss) ? json(row.final_loss) : json(nullptr)},
                 {"median_error", row.median_error},
                 {"matched_fraction", row.matched_fraction},
                 {"recovery_pct", row.recovery_pct},
                 {"wall_seconds", row.wall_seconds},
                 {"data_fingerprint", row.data_fingerprint},
                 {"selected", row.selected},
                 {"config", config_echo(cfg)}});
    say(ctx, parameter, "=", metric_text(row.value), " seed ", row.seed, ": loss ",
        format_double(row.final_loss), " median error ", metric_text(row.median_error),
        row.selected ? " *" : "");
  }
  return rows;
}

}  // namespace

std::vector<AblationRow> cmd_ablate_queries(const Context& ctx) {
  std::vector<double> values;
  for (Index m : ctx.config.attack.m_list) values.push_back(static_cast<double>(m));
  return run_ablation(ctx, "m", values, "ablate_queries.jsonl");
}

std::vector<AblationRow> cmd_ablate_gamma(const Context& ctx) {
  const auto& model = ctx.config.model;
  if ((model.kind != "krr" && model.kind != "svm") || (model.kernel != "laplace" && model.kernel != "rbf")) {
    throw InputError("ablate-gamma: needs a krr or svm model with a laplace or rbf kernel");
  }
  for (double g : ctx.config.attack.gamma_list) {
    if (!(g > 0.0)) throw InputError("ablate-gamma: gamma must be > 0");
  }
  return run_ablation(ctx, "gamma", ctx.config.attack.gamma_list, "ablate_gamma.jsonl");
}

// ---------------------------------------------------------------------------

VerifyReport cmd_verify_uniqueness(const Context& ctx) {
  const auto& cfg = ctx.config;
  const Index big_n = cfg.data.n_points;
  const Index d = cfg.data.dim;
  if (big_n > 5 || d > 3) throw InputError("verify-uniqueness: needs data.n_points <= 5 and data.dim <= 3");
  if (cfg.attack.base.n < big_n) throw InputError("verify-uniqueness: attack.n must be >= data.n_points");
  const KernelSpec spec = cfg.kernel();
  if (!is_strictly_positive_definite(spec)) {
    throw InputError("verify-uniqueness: needs a strictly positive definite kernel");
  }

  VerifyReport rep;
  rep.m = static_cast<std::size_t>(cfg.attack.base.m);
  rep.query_count_bound = query_count_bound(cfg.attack.base.n, d);
  rep.within_hypothesis = rep.m >= rep.query_count_bound;

  const std::function<SoundnessRun(std::size_t)> job = [&](std::size_t i) {
    std::mt19937_64 rng(cfg.data.seed + i);
    Dataset data;
    data.x = standard_normal(big_n, d, rng);
    data.y = standard_normal(big_n, 1, rng);
    const TrainedKernelModel model = train_krr(data, spec, 0.0);
    const std::unique_ptr<ModelOracle> oracle = make_oracle(model);

    SoundnessRun run;
    run.seed = cfg.attack.seed + i;
    ReconstructionParams params;
    try {
      AttackResult result = run_attack(*oracle, cfg.attack_config(run.seed));
      run.final_loss = result.final_loss;
      params = std::move(result.params);
    } catch (const AttackAborted& e) {
      run.final_loss = std::numeric_limits<double>::infinity();
      params = e.last_finite();
    }
    run.converged = run.final_loss < cfg.verify.loss_threshold;
    const ReconstructionParams canonical = canonical_of(cfg, params);
    run.canonical_size = canonical.size();
    MatchOptions mo;
    mo.tol = cfg.verify.match_tol;
    const MatchReport match = match_to_truth(canonical.xhat, canonical.ahat, data.x, model.coeffs(), mo);
    run.max_point_error = *std::max_element(match.assigned_distance.begin(), match.assigned_distance.end());
    run.max_coeff_error = match.max_coeff_discrepancy();
    run.matches_truth = canonical.size() == big_n && match.matched_fraction == 1.0 &&
                        run.max_coeff_error <= cfg.verify.match_tol;
    return run;
  };
  rep.runs = fan_out(static_cast<std::size_t>(cfg.attack.seeds), ctx.threads, job);
  for (const auto& run : rep.runs) {
    rep.converged += run.converged;
    rep.sound += run.converged && run.matches_truth;
  }
  rep.soundness_passed = rep.sound == rep.converged;
  rep.optimization_passed = rep.converged >= static_cast<std::size_t>(cfg.verify.min_converged);

  std::mt19937_64 rng(cfg.data.seed);
  std::uniform_int_distribution<Index> points(2, std::max<Index>(2, cfg.verify.eigen_max_points));
  std::uniform_int_distribution<Index> dims(1, cfg.verify.eigen_max_dim);
  rep.min_eigenvalue = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < cfg.verify.eigen_instances; ++i) {
    EigenCheck check;
    const KernelSpec k = i % 2 == 0 ? KernelSpec(LaplaceKernel{cfg.verify.eigen_gamma})
                                    : KernelSpec(RbfKernel{cfg.verify.eigen_gamma});
    check.kernel = kernel_name(k);
    check.points = points(rng);
    check.dim = dims(rng);
    const Matrix u = standard_normal(check.points, check.dim, rng);
    const Matrix gram = eval_matrix(k, u, u);
    check.min_eigenvalue = Eigen::SelfAdjointEigenSolver<Matrix>(gram, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
    rep.min_eigenvalue = std::min(rep.min_eigenvalue, check.min_eigenvalue);
    rep.eigen.push_back(check);
  }
  rep.eigen_passed = rep.eigen.empty() || rep.min_eigenvalue > 1e-10;

  prepare_out(ctx);
  JsonLines lines(ctx.out / "verify.jsonl");
  for (const auto& run : rep.runs) {
    lines.write({{"record", "soundness"},
                 {"seed", run.seed},
                 {"final_loss", std::isfinite(run.final_loss) ? json(run.final_loss) : json(nullptr)},
                 {"converged", run.converged},
                 {"matches_truth", run.matches_truth},
                 {"max_point_error", run.max_point_error},
                 {"max_coeff_error", std::isnan(run.max_coeff_error) ? json(nullptr) : json(run.max_coeff_error)},
                 {"canonical_size", run.canonical_size}});
  }
  for (const auto& e : rep.eigen) {
    lines.write({{"record", "gram_eigenvalue"},
                 {"kernel", e.kernel},
                 {"points", e.points},
                 {"dim", e.dim},
                 {"min_eigenvalue", e.min_eigenvalue}});
  }
  lines.write({{"record", "summary"},
               {"m", rep.m},
               {"query_count_bound", rep.query_count_bound},
               {"within_hypothesis", rep.within_hypothesis},
               {"runs", rep.runs.size()},
               {"converged", rep.converged},
               {"sound", rep.sound},
               {"min_eigenvalue", rep.min_eigenvalue},
               {"soundness_passed", rep.soundness_passed},
               {"optimization_passed", rep.optimization_passed},
               {"eigen_passed", rep.eigen_passed},
               {"passed", rep.passed()},
               {"config", config_echo(cfg)}});

  if (!rep.within_hypothesis) {
    say(ctx, "note: m = ", rep.m, " is below the bound ", rep.query_count_bound,
        "; uniqueness is not guaranteed for this instance");
  }
  say(ctx, "zero-loss soundness: ", rep.sound, "/", rep.converged, " converged runs match the truth (",
      rep.converged, "/", rep.runs.size(), " runs reached loss < ", format_double(cfg.verify.loss_threshold), ")");
  say(ctx, "gram eigenvalues: smallest ", format_double(rep.min_eigenvalue), " over ", rep.eigen.size(),
      " instances");
  return rep;
}

}  // namespace kernrecon::cli
