#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kernrecon/common.hpp"

namespace kernrecon {

struct AdamHyperParams {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

/// Moment buffers for one parameter block.
class AdamState {
 public:
  explicit AdamState(std::size_t size, AdamHyperParams hyper = {});

  /// One bias-corrected Adam update of `params` in place.
  ///
  /// Throws NumericalError naming the first non-finite gradient entry; the
  /// state and parameters are left untouched in that case.
  void step(std::span<double> params, std::span<const double> grads, double lr);

  std::size_t size() const { return m_.size(); }
  std::size_t steps_taken() const { return t_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }
  const AdamHyperParams& hyper() const { return hyper_; }

 private:
  AdamHyperParams hyper_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

/// OneCycle learning-rate policy with cosine annealing inside each phase.
///
/// Three-phase mode: warm up from max_lr/div_factor to max_lr over the first
/// pct_start of the run, anneal back to max_lr/div_factor over the next
/// pct_start, then anneal to max_lr/(div_factor*final_div_factor).
/// Two-phase mode drops the middle phase.
struct OneCycleSchedule {
  double max_lr = 1e-2;
  double pct_start = 0.15;
  double div_factor = 10.0;
  double final_div_factor = 100.0;
  std::size_t total_steps = 1;
  bool three_phase = true;

  void validate() const;
  double initial_lr() const { return max_lr / div_factor; }
  double min_lr() const { return initial_lr() / final_div_factor; }
};

/// Learning rate at step t in [0, total_steps).
double onecycle_lr(const OneCycleSchedule& schedule, std::size_t t);

}  // namespace kernrecon
