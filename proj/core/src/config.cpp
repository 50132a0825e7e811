#include "kernrecon/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>

namespace kernrecon {
namespace {

const std::vector<ConfigKey> kKeys = {
    {"data", "source", "gaussian", "gaussian | mixture | uniform | file"},
    {"data", "n_points", "20", "number of training points N"},
    {"data", "dim", "10", "input dimension d"},
    {"data", "outputs", "1", "regression outputs C (or classes for multiclass labels)"},
    {"data", "labels", "regression", "regression | binary | multiclass"},
    {"data", "mixture_offset", "2", "mixture source: component means at -/+ offset * 1"},
    {"data", "seed", "0", "data generation seed"},
    {"data", "x_path", "", "file source, or training inputs for train/evaluate"},
    {"data", "y_path", "", "file source targets, or training targets for train"},

    {"model", "kind", "krr", "krr | svm | kde"},
    {"model", "kernel", "laplace", "laplace | rbf | polynomial | ntk (kde is always gaussian)"},
    {"model", "gamma", "0.15", "laplace/rbf/polynomial scale"},
    {"model", "c0", "1", "polynomial offset"},
    {"model", "degree", "2", "polynomial degree"},
    {"model", "depth", "1", "ntk hidden layers"},
    {"model", "lambda", "0", "krr ridge penalty"},
    {"model", "steps", "100000", "svm gradient steps"},
    {"model", "lr", "0.01", "svm peak learning rate"},

    {"attack", "n", "25", "number of candidate points"},
    {"attack", "m", "350", "number of queries"},
    {"attack", "steps", "20000", "optimization steps T"},
    {"attack", "seed", "0", "attack seed (first of `seeds` consecutive seeds)"},
    {"attack", "seeds", "1", "number of seeds; the best final loss is kept"},
    {"attack", "queries", "normal", "normal | uniform | mixture | grid | file"},
    {"attack", "query_sigma", "1", "normal/mixture standard deviation"},
    {"attack", "query_low", "-1", "uniform/grid box lower edge"},
    {"attack", "query_high", "1", "uniform/grid box upper edge"},
    {"attack", "query_offset", "2", "mixture component offset"},
    {"attack", "query_path", "", "file queries: MatrixFile with at least m rows"},
    {"attack", "point_init_std", "0.3", "candidate point init standard deviation"},
    {"attack", "coeff_init_variance", "0.05", "candidate coefficient init variance"},
    {"attack", "lr_points", "0.02", "peak learning rate for candidate points"},
    {"attack", "lr_coeffs", "0.01", "peak learning rate for coefficients"},
    {"attack", "lr_bandwidth", "0.01", "peak learning rate for the log bandwidth"},
    {"attack", "pct_start", "0.15", "warm-up fraction of the one-cycle schedule"},
    {"attack", "div_factor", "10", "initial lr = peak / div_factor"},
    {"attack", "final_div_factor", "100", "final lr = initial / final_div_factor"},
    {"attack", "learn_bandwidth", "true", "learn the kde bandwidth jointly"},
    {"attack", "batch_size", "0", "queries per step, 0 for full batch"},
    {"attack", "trace_stride", "1", "record the loss every k steps"},
    {"attack", "snapshot_steps", "", "comma-separated steps at which to save candidates"},
    {"attack", "merge_tol", "auto", "canonicalization merge radius (auto: 1e-3 sqrt(d))"},
    {"attack", "coeff_tol", "auto", "canonicalization coefficient cutoff (auto: 1e-6 max|a|)"},
    {"attack", "pca_rank", "0", "restrict candidates to a rank-k PCA subspace, 0 to disable"},
    {"attack", "pca_reference", "", "MatrixFile the PCA basis is fitted on"},
    {"attack", "m_list", "", "ablate-queries: comma-separated query counts"},
    {"attack", "gamma_list", "", "ablate-gamma: comma-separated kernel scales"},

    {"metrics", "distance", "l2", "l2 | dssim"},
    {"metrics", "image_height", "0", "image height, 0 for non-image data"},
    {"metrics", "image_width", "0", "image width"},
    {"metrics", "image_channels", "1", "image channels"},
    {"metrics", "l2_tolerance", "0.05", "non-image match / recovery tolerance"},
    {"metrics", "relative", "true", "divide match distances by the truth norm"},
    {"metrics", "dssim_threshold", "0.3", "high-quality reconstruction cutoff"},

    {"verify", "loss_threshold", "1e-12", "runs below this final loss must match truth"},
    {"verify", "match_tol", "0.001", "point and coefficient tolerance for a match"},
    {"verify", "min_converged", "10", "runs that must reach loss_threshold"},
    {"verify", "eigen_instances", "50", "random instances for the gram eigenvalue check"},
    {"verify", "eigen_max_points", "10", "largest point count in the eigenvalue check"},
    {"verify", "eigen_max_dim", "5", "largest dimension in the eigenvalue check"},
    {"verify", "eigen_gamma", "1", "laplace and rbf scale in the eigenvalue check"},

    {"demo", "lattice", "121", "density lattice resolution per axis"},

    {"output", "dir", "out", "output directory"},
};

std::string trim(const std::string& s) {
  const auto begin = std::find_if_not(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
  const auto end = std::find_if_not(s.rbegin(), s.rend(), [](unsigned char c) { return std::isspace(c); }).base();
  return begin < end ? std::string(begin, end) : std::string();
}

bool known_section(const std::string& s) {
  return std::any_of(kKeys.begin(), kKeys.end(), [&](const ConfigKey& k) { return s == k.section; });
}

RawConfig defaults() {
  RawConfig raw;
  for (const auto& k : kKeys) raw[std::string(k.section) + "." + k.key] = k.default_value;
  return raw;
}

class Reader {
 public:
  explicit Reader(const RawConfig& raw) : raw_(raw) {}

  const std::string& text(const std::string& key) const {
    const auto it = raw_.find(key);
    if (it == raw_.end()) throw InputError("config: missing key " + key);
    return it->second;
  }

  double real(const std::string& key) const {
    const std::string& v = text(key);
    if (v == "inf") return std::numeric_limits<double>::infinity();
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) bad(key, "a number");
    return out;
  }

  std::optional<double> real_or_auto(const std::string& key) const {
    if (text(key) == "auto") return std::nullopt;
    return real(key);
  }

  long long integer(const std::string& key, long long min = 0) const {
    const std::string& v = text(key);
    long long out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) bad(key, "an integer");
    if (out < min) bad(key, "an integer >= " + std::to_string(min));
    return out;
  }

  std::uint64_t seed(const std::string& key) const {
    const std::string& v = text(key);
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) bad(key, "an unsigned 64-bit integer");
    return out;
  }

  bool boolean(const std::string& key) const {
    const std::string& v = text(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    bad(key, "true or false");
  }

  std::string choice(const std::string& key, std::initializer_list<const char*> options) const {
    const std::string& v = text(key);
    for (const char* o : options) {
      if (v == o) return v;
    }
    std::string all;
    for (const char* o : options) all += std::string(all.empty() ? "" : " | ") + o;
    bad(key, all);
  }

  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> items;
    std::stringstream ss(text(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) bad(key, "a comma-separated list without empty items");
      items.push_back(item);
    }
    return items;
  }

  [[noreturn]] static void bad(const std::string& key, const std::string& what) {
    throw InputError("config: " + key + " must be " + what);
  }

 private:
  const RawConfig& raw_;
};

template <typename T>
std::vector<T> parse_list(const Reader& r, const std::string& key, bool integral,
                          long long min = 1) {
  std::vector<T> out;
  for (const std::string& item : r.list(key)) {
    RawConfig one{{key, item}};
    Reader single(one);
    out.push_back(integral ? static_cast<T>(single.integer(key, min)) : static_cast<T>(single.real(key)));
  }
  return out;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() { return kKeys; }

RawConfig parse_raw_config(const std::string& text) {
  RawConfig raw = defaults();
  RawConfig seen;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    const auto comment = line.find_first_of("#;");
    line = trim(comment == std::string::npos ? line : line.substr(0, comment));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw InputError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!known_section(section)) throw InputError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError(where + "expected key = value");
    if (section.empty()) throw InputError(where + "key outside of a section");
    const std::string key = section + "." + trim(line.substr(0, eq));
    if (!raw.count(key)) throw InputError(where + "unknown key " + key);
    if (seen.count(key)) throw InputError(where + "duplicate key " + key);
    seen[key] = raw[key] = trim(line.substr(eq + 1));
  }
  return raw;
}

ExperimentConfig config_from_raw(const RawConfig& raw) {
  const Reader r(raw);
  ExperimentConfig c;
  c.raw = raw;

  auto& d = c.data;
  d.source = r.choice("data.source", {"gaussian", "mixture", "uniform", "file"});
  d.n_points = r.integer("data.n_points", 1);
  d.dim = r.integer("data.dim", 1);
  d.outputs = r.integer("data.outputs", 1);
  d.labels = r.choice("data.labels", {"regression", "binary", "multiclass"});
  d.mixture_offset = r.real("data.mixture_offset");
  d.seed = r.seed("data.seed");
  d.x_path = r.text("data.x_path");
  d.y_path = r.text("data.y_path");
  if (d.source == "file" && d.x_path.empty()) Reader::bad("data.x_path", "set when source = file");
  if (d.labels == "multiclass" && d.outputs < 2) Reader::bad("data.outputs", ">= 2 for multiclass labels");

  auto& m = c.model;
  m.kind = r.choice("model.kind", {"krr", "svm", "kde"});
  m.kernel = r.choice("model.kernel", {"laplace", "rbf", "polynomial", "ntk"});
  m.gamma = r.real("model.gamma");
  m.c0 = r.real("model.c0");
  m.degree = static_cast<int>(r.integer("model.degree", 1));
  m.depth = static_cast<int>(r.integer("model.depth", 1));
  m.lambda = r.real("model.lambda");
  m.steps = static_cast<std::size_t>(r.integer("model.steps", 1));
  m.lr = r.real("model.lr");
  if (!(m.lambda >= 0.0)) Reader::bad("model.lambda", ">= 0");
  if (!(m.lr > 0.0)) Reader::bad("model.lr", "> 0");
  if (m.kind != "kde") validate(c.kernel());

  auto& a = c.attack;
  auto& b = a.base;
  b.n = r.integer("attack.n", 1);
  b.m = r.integer("attack.m", 1);
  b.steps = static_cast<std::size_t>(r.integer("attack.steps", 0));
  a.seed = r.seed("attack.seed");
  a.seeds = r.integer("attack.seeds", 1);
  b.queries.kind = parse_query_kind(r.text("attack.queries"));
  b.queries.sigma = r.real("attack.query_sigma");
  b.queries.low = r.real("attack.query_low");
  b.queries.high = r.real("attack.query_high");
  b.queries.mixture_offset = r.real("attack.query_offset");
  b.queries.path = r.text("attack.query_path");
  b.point_init_std = r.real("attack.point_init_std");
  b.coeff_init_variance = r.real("attack.coeff_init_variance");
  b.lr_points = r.real("attack.lr_points");
  b.lr_coeffs = r.real("attack.lr_coeffs");
  b.lr_bandwidth = r.real("attack.lr_bandwidth");
  b.pct_start = r.real("attack.pct_start");
  b.div_factor = r.real("attack.div_factor");
  b.final_div_factor = r.real("attack.final_div_factor");
  b.learn_bandwidth = r.boolean("attack.learn_bandwidth");
  b.batch_size = r.integer("attack.batch_size", 0);
  b.trace_stride = static_cast<std::size_t>(r.integer("attack.trace_stride", 1));
  for (Index s : parse_list<Index>(r, "attack.snapshot_steps", true, 0)) {
    b.snapshot_steps.push_back(static_cast<std::size_t>(s));
  }
  a.merge_tol = r.real_or_auto("attack.merge_tol");
  a.coeff_tol = r.real_or_auto("attack.coeff_tol");
  if (a.merge_tol && !(*a.merge_tol > 0.0)) Reader::bad("attack.merge_tol", "> 0 or auto");
  if (a.coeff_tol && !(*a.coeff_tol > 0.0)) Reader::bad("attack.coeff_tol", "> 0 or auto");
  a.pca_rank = r.integer("attack.pca_rank", 0);
  a.pca_reference = r.text("attack.pca_reference");
  if (a.pca_rank > 0 && a.pca_reference.empty()) {
    Reader::bad("attack.pca_reference", "set when pca_rank > 0");
  }
  a.m_list = parse_list<Index>(r, "attack.m_list", true);
  a.gamma_list = parse_list<double>(r, "attack.gamma_list", false);
  b.validate();

  auto& mt = c.metrics;
  mt.distance = r.choice("metrics.distance", {"l2", "dssim"}) == "dssim" ? DistanceKind::Dssim
                                                                         : DistanceKind::L2;
  const Index h = r.integer("metrics.image_height", 0);
  const Index w = r.integer("metrics.image_width", 0);
  const Index ch = r.integer("metrics.image_channels", 1);
  if ((h == 0) != (w == 0)) Reader::bad("metrics.image_width", "set together with image_height");
  if (h > 0) mt.shape = ImageShape{h, w, ch};
  if (mt.distance == DistanceKind::Dssim && !mt.shape) {
    Reader::bad("metrics.image_height", "set when distance = dssim");
  }
  mt.l2_tolerance = r.real("metrics.l2_tolerance");
  mt.relative = r.boolean("metrics.relative");
  mt.dssim_threshold = r.real("metrics.dssim_threshold");
  if (!(mt.l2_tolerance > 0.0)) Reader::bad("metrics.l2_tolerance", "> 0");

  auto& v = c.verify;
  v.loss_threshold = r.real("verify.loss_threshold");
  v.match_tol = r.real("verify.match_tol");
  v.min_converged = r.integer("verify.min_converged", 0);
  v.eigen_instances = r.integer("verify.eigen_instances", 0);
  v.eigen_max_points = r.integer("verify.eigen_max_points", 1);
  v.eigen_max_dim = r.integer("verify.eigen_max_dim", 1);
  v.eigen_gamma = r.real("verify.eigen_gamma");
  if (!(v.eigen_gamma > 0.0)) Reader::bad("verify.eigen_gamma", "> 0");

  c.demo.lattice = r.integer("demo.lattice", 2);
  c.output_dir = r.text("output.dir");
  if (c.output_dir.empty()) Reader::bad("output.dir", "nonempty");
  return c;
}

ExperimentConfig parse_config(const std::string& text) {
  return config_from_raw(parse_raw_config(text));
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string format_config(const RawConfig& raw) {
  std::ostringstream out;
  std::string section;
  for (const auto& k : kKeys) {
    if (section != k.section) {
      section = k.section;
      out << (out.tellp() > 0 ? "\n" : "") << '[' << section << "]\n";
    }
    const auto it = raw.find(section + "." + k.key);
    out << k.key << " = " << (it == raw.end() ? k.default_value : it->second) << '\n';
  }
  return out.str();
}

KernelSpec ExperimentConfig::kernel(std::optional<double> gamma) const {
  const double g = gamma.value_or(model.gamma);
  if (model.kernel == "laplace") return LaplaceKernel{g};
  if (model.kernel == "rbf") return RbfKernel{g};
  if (model.kernel == "polynomial") return PolynomialKernel{model.c0, g, model.degree};
  return NtkKernel{model.depth};
}

AttackConfig ExperimentConfig::attack_config(std::uint64_t seed) const {
  AttackConfig out = attack.base;
  out.seed = seed;
  return out;
}

}  // namespace kernrecon
