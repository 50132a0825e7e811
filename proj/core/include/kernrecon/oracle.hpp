#pragma once

#include "kernrecon/common.hpp"
#include "kernrecon/kernels.hpp"

namespace kernrecon {

/// Query-only view of a trained kernel model.
///
/// This is the only handle the attack receives. It exposes evaluation, the
/// kernel family and the input/output dimensions, and nothing else: there is
/// deliberately no accessor for support points or coefficients.
class ModelOracle {
 public:
  virtual ~ModelOracle() = default;

  /// Row j of the result holds f(queries.row(j)), one column per output.
  virtual Matrix evaluate(const Matrix& queries) const = 0;

  virtual const KernelSpec& kernel() const = 0;
  virtual Index input_dim() const = 0;
  virtual Index output_dim() const = 0;
};

}  // namespace kernrecon
