#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "kernrecon/common.hpp"
#include "kernrecon/kernels.hpp"
#include "kernrecon/models.hpp"

namespace kernrecon {

// MatrixFile: a "rows cols" header line, then one line per row holding
// space-separated decimals with 17 significant digits. Writing what was read
// reproduces the file byte for byte.

/// Shortest-form-independent decimal with 17 significant digits.
std::string format_double(double value);

void write_matrix(std::ostream& out, const Matrix& m);
Matrix read_matrix(std::istream& in);
void save_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix load_matrix(const std::filesystem::path& path);

/// "laplace gamma=0.15", "polynomial c0=1 gamma=0.001 degree=3", "ntk depth=3",
/// "bandwidth_gaussian h=0.5,0.7".
std::string format_kernel(const KernelSpec& spec);
KernelSpec parse_kernel(const std::string& text);

// ModelFile: version tag, model kind, kernel line, then the support and
// coefficient blocks as embedded MatrixFiles.
inline constexpr int kModelFormatVersion = 1;

struct ModelFile {
  std::string kind;  // "krr", "svm" or "kde"
  TrainedKernelModel model;
};

void save_model(const std::filesystem::path& path, const std::string& kind,
                const TrainedKernelModel& model);
ModelFile load_model(const std::filesystem::path& path);

/// Opens a model file behind a query-only oracle. The parsed model is owned
/// by the oracle and never handed back to the caller.
std::unique_ptr<ModelOracle> serve_model(const std::filesystem::path& path);

}  // namespace kernrecon
