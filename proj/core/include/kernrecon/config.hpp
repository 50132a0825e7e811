#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kernrecon/attack.hpp"
#include "kernrecon/common.hpp"
#include "kernrecon/kernels.hpp"
#include "kernrecon/metrics.hpp"

namespace kernrecon {

/// One documented configuration key.
struct ConfigKey {
  const char* section;
  const char* key;
  const char* default_value;
  const char* help;
};

/// Every accepted key, in documentation order.
const std::vector<ConfigKey>& config_keys();

/// Flat "section.key" -> raw value table, defaults filled in for every key.
using RawConfig = std::map<std::string, std::string>;

/// Parses INI-style text: [section] headers, key = value lines, '#' or ';'
/// comments. Unknown sections or keys and duplicates raise InputError.
RawConfig parse_raw_config(const std::string& text);

struct DataSection {
  std::string source = "gaussian";  // gaussian | mixture | uniform | file
  Index n_points = 20;
  Index dim = 10;
  Index outputs = 1;
  std::string labels = "regression";  // regression | binary | multiclass
  double mixture_offset = 2.0;
  std::uint64_t seed = 0;
  std::string x_path;
  std::string y_path;
};

struct ModelSection {
  std::string kind = "krr";  // krr | svm | kde
  std::string kernel = "laplace";
  double gamma = 0.15;
  double c0 = 1.0;
  int degree = 2;
  int depth = 1;
  double lambda = 0.0;
  std::size_t steps = 100000;
  double lr = 1e-2;
};

struct AttackSection {
  AttackConfig base;  // everything except the seed
  std::uint64_t seed = 0;
  Index seeds = 1;
  std::optional<double> merge_tol;
  std::optional<double> coeff_tol;
  Index pca_rank = 0;
  std::string pca_reference;
  std::vector<Index> m_list;
  std::vector<double> gamma_list;
};

struct MetricsSection {
  DistanceKind distance = DistanceKind::L2;
  std::optional<ImageShape> shape;
  double l2_tolerance = 0.05;
  bool relative = true;
  double dssim_threshold = 0.3;
};

struct VerifySection {
  double loss_threshold = 1e-12;
  double match_tol = 1e-3;
  Index min_converged = 10;
  Index eigen_instances = 50;
  Index eigen_max_points = 10;
  Index eigen_max_dim = 5;
  double eigen_gamma = 1.0;
};

struct DemoSection {
  Index lattice = 121;
};

struct ExperimentConfig {
  DataSection data;
  ModelSection model;
  AttackSection attack;
  MetricsSection metrics;
  VerifySection verify;
  DemoSection demo;
  std::string output_dir = "out";

  /// The resolved key table the config was built from, for manifests.
  RawConfig raw;

  /// Kernel described by the [model] section, optionally with another gamma.
  KernelSpec kernel(std::optional<double> gamma = std::nullopt) const;
  /// Attack settings with the given seed.
  AttackConfig attack_config(std::uint64_t seed) const;
};

ExperimentConfig config_from_raw(const RawConfig& raw);
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Renders the resolved table back to INI text; parsing it reproduces `raw`.
std::string format_config(const RawConfig& raw);

}  // namespace kernrecon
