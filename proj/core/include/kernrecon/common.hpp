#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace kernrecon {

// Point sets are stored one point per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Point = Eigen::RowVectorXd;
using ConstPointRef = Eigen::Ref<const Point>;
using Index = Eigen::Index;

/// Spatial layout of image-valued vectors, stored channel-major
/// (all of channel 0, then channel 1, ...), each channel row-major.
struct ImageShape {
  Index height = 0;
  Index width = 0;
  Index channels = 1;

  Index size() const { return height * width * channels; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Violated precondition: bad shape, out-of-range parameter, malformed file.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Model fitting failed (singular system, divergent loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared during an iterative computation.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, std::optional<std::size_t> step = std::nullopt)
      : Error(what), step_(step) {}

  std::optional<std::size_t> step() const { return step_; }

 private:
  std::optional<std::size_t> step_;
};

}  // namespace kernrecon
