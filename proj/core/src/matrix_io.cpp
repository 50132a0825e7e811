#include "kernrecon/matrix_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <vector>

namespace kernrecon {
namespace {

double parse_double(const std::string& token) {
  const char* begin = token.data();
  const char* end = begin + token.size();
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) throw InputError("matrix: bad number '" + token + "'");
  return value;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

std::string format_vector(const Vector& v) {
  std::string s;
  for (Index i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += format_double(v[i]);
  }
  return s;
}

Vector parse_vector(const std::string& text) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) values.push_back(parse_double(item));
  return Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
}

std::string expect_line(std::istream& in, const std::string& what) {
  std::string line;
  if (!std::getline(in, line)) throw InputError("model: missing " + what);
  return line;
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general, 17);
  if (ec != std::errc()) throw InputError("format_double: conversion failed");
  return std::string(buf, ptr);
}

void write_matrix(std::ostream& out, const Matrix& m) {
  out << m.rows() << ' ' << m.cols() << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) out << ' ';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

Matrix read_matrix(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw InputError("matrix: missing header");
  std::istringstream hs(header);
  long long rows = -1;
  long long cols = -1;
  std::string extra;
  if (!(hs >> rows >> cols) || (hs >> extra) || rows < 0 || cols < 0) {
    throw InputError("matrix: bad header '" + header + "'");
  }
  Matrix m(rows, cols);
  std::string line;
  for (long long i = 0; i < rows; ++i) {
    if (!std::getline(in, line)) {
      throw InputError("matrix: expected " + std::to_string(rows) + " rows, got " +
                       std::to_string(i));
    }
    std::istringstream ls(line);
    std::string token;
    long long j = 0;
    while (ls >> token) {
      if (j >= cols) throw InputError("matrix: row " + std::to_string(i) + " has too many values");
      m(i, j++) = parse_double(token);
    }
    if (j != cols) throw InputError("matrix: row " + std::to_string(i) + " has too few values");
  }
  return m;
}

void save_matrix(const std::filesystem::path& path, const Matrix& m) {
  auto out = open_out(path);
  write_matrix(out, m);
  if (!out) throw InputError("failed writing " + path.string());
}

Matrix load_matrix(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_matrix(in);
}

std::string format_kernel(const KernelSpec& spec) {
  std::ostringstream os;
  os << kernel_name(spec);
  if (const auto* k = std::get_if<LaplaceKernel>(&spec)) os << " gamma=" << format_double(k->gamma);
  if (const auto* k = std::get_if<RbfKernel>(&spec)) os << " gamma=" << format_double(k->gamma);
  if (const auto* k = std::get_if<PolynomialKernel>(&spec)) {
    os << " c0=" << format_double(k->c0) << " gamma=" << format_double(k->gamma)
       << " degree=" << k->degree;
  }
  if (const auto* k = std::get_if<NtkKernel>(&spec)) os << " depth=" << k->depth;
  if (const auto* k = std::get_if<BandwidthGaussianKernel>(&spec)) {
    os << " h=" << format_vector(k->h_diag);
  }
  return os.str();
}

KernelSpec parse_kernel(const std::string& text) {
  std::istringstream is(text);
  std::string name;
  if (!(is >> name)) throw InputError("kernel: empty description");
  std::string token;
  std::vector<std::pair<std::string, std::string>> fields;
  while (is >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw InputError("kernel: expected key=value, got '" + token + "'");
    fields.emplace_back(token.substr(0, eq), token.substr(eq + 1));
  }
  auto get = [&](const std::string& key) -> const std::string& {
    for (const auto& [k, v] : fields) {
      if (k == key) return v;
    }
    throw InputError("kernel: " + name + " needs '" + key + "'");
  };
  auto integer = [&](const std::string& key) {
    const double v = parse_double(get(key));
    if (v != std::floor(v)) throw InputError("kernel: " + key + " must be an integer");
    return static_cast<int>(v);
  };

  KernelSpec spec;
  std::size_t expected = 0;
  if (name == "laplace") {
    spec = LaplaceKernel{parse_double(get("gamma"))};
    expected = 1;
  } else if (name == "rbf") {
    spec = RbfKernel{parse_double(get("gamma"))};
    expected = 1;
  } else if (name == "polynomial") {
    spec = PolynomialKernel{parse_double(get("c0")), parse_double(get("gamma")), integer("degree")};
    expected = 3;
  } else if (name == "ntk") {
    spec = NtkKernel{integer("depth")};
    expected = 1;
  } else if (name == "bandwidth_gaussian") {
    spec = BandwidthGaussianKernel{parse_vector(get("h"))};
    expected = 1;
  } else {
    throw InputError("kernel: unknown family '" + name + "'");
  }
  if (fields.size() != expected) throw InputError("kernel: unexpected fields for " + name);
  validate(spec);
  return spec;
}

void save_model(const std::filesystem::path& path, const std::string& kind,
                const TrainedKernelModel& model) {
  auto out = open_out(path);
  out << "kernrecon-model " << kModelFormatVersion << '\n';
  out << "kind " << kind << '\n';
  out << "kernel " << format_kernel(model.kernel()) << '\n';
  out << "support\n";
  write_matrix(out, model.support());
  out << "coeffs\n";
  write_matrix(out, model.coeffs());
  if (!out) throw InputError("failed writing " + path.string());
}

ModelFile load_model(const std::filesystem::path& path) {
  auto in = open_in(path);
  const std::string tag = expect_line(in, "version tag");
  const std::string expected_tag = "kernrecon-model " + std::to_string(kModelFormatVersion);
  if (tag != expected_tag) {
    throw InputError("model: unsupported format '" + tag + "', expected '" + expected_tag + "'");
  }
  const std::string kind_line = expect_line(in, "kind");
  if (kind_line.rfind("kind ", 0) != 0) throw InputError("model: expected 'kind' line");
  std::string kind = kind_line.substr(5);
  if (kind != "krr" && kind != "svm" && kind != "kde") {
    throw InputError("model: unknown kind '" + kind + "'");
  }
  const std::string kernel_line = expect_line(in, "kernel");
  if (kernel_line.rfind("kernel ", 0) != 0) throw InputError("model: expected 'kernel' line");
  KernelSpec spec = parse_kernel(kernel_line.substr(7));
  if (expect_line(in, "support block") != "support") throw InputError("model: expected 'support'");
  Matrix support = read_matrix(in);
  if (expect_line(in, "coeffs block") != "coeffs") throw InputError("model: expected 'coeffs'");
  Matrix coeffs = read_matrix(in);
  return ModelFile{std::move(kind),
                   TrainedKernelModel(std::move(spec), std::move(support), std::move(coeffs))};
}

std::unique_ptr<ModelOracle> serve_model(const std::filesystem::path& path) {
  return make_oracle(load_model(path).model);
}

}  // namespace kernrecon
