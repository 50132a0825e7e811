#include "kernrecon/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace kernrecon {

AdamState::AdamState(std::size_t size, AdamHyperParams hyper)
    : hyper_(hyper), m_(size, 0.0), v_(size, 0.0) {}

void AdamState::step(std::span<double> params, std::span<const double> grads, double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw InputError("adam: parameter/gradient size " + std::to_string(params.size()) + "/" +
                     std::to_string(grads.size()) + " does not match state size " +
                     std::to_string(m_.size()));
  }
  if (!(lr > 0.0) || !std::isfinite(lr)) throw InputError("adam: learning rate must be > 0");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericalError("adam: non-finite gradient at index " + std::to_string(i));
    }
  }

  ++t_;
  const double b1 = hyper_.beta1;
  const double b2 = hyper_.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double step_size = lr / bias1;
  const double sqrt_bias2 = std::sqrt(bias2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
    const double denom = std::sqrt(v_[i]) / sqrt_bias2 + hyper_.eps;
    params[i] -= step_size * m_[i] / denom;
  }
}

void OneCycleSchedule::validate() const {
  if (!(max_lr > 0.0) || !std::isfinite(max_lr)) throw InputError("onecycle: max_lr must be > 0");
  if (!(pct_start > 0.0 && pct_start < 0.5)) {
    throw InputError("onecycle: pct_start must lie in (0, 0.5)");
  }
  if (!(div_factor > 1.0)) throw InputError("onecycle: div_factor must be > 1");
  if (!(final_div_factor > 1.0)) throw InputError("onecycle: final_div_factor must be > 1");
  if (total_steps < 1) throw InputError("onecycle: total_steps must be >= 1");
}

namespace {

double cosine_anneal(double start, double end, double pct) {
  return end + (start - end) / 2.0 * (std::cos(std::numbers::pi * pct) + 1.0);
}

struct Phase {
  double end_step;
  double start_lr;
  double end_lr;
};

}  // namespace

double onecycle_lr(const OneCycleSchedule& s, std::size_t t) {
  s.validate();
  if (t >= s.total_steps) {
    throw InputError("onecycle: step " + std::to_string(t) + " outside [0, " +
                     std::to_string(s.total_steps) + ")");
  }
  const double total = static_cast<double>(s.total_steps);
  const double last = total - 1.0;
  const double warm_end = s.pct_start * total - 1.0;

  Phase phases[3];
  int count = 0;
  if (s.three_phase) {
    phases[count++] = {warm_end, s.initial_lr(), s.max_lr};
    phases[count++] = {2.0 * s.pct_start * total - 2.0, s.max_lr, s.initial_lr()};
    phases[count++] = {last, s.initial_lr(), s.min_lr()};
  } else {
    phases[count++] = {warm_end, s.initial_lr(), s.max_lr};
    phases[count++] = {last, s.max_lr, s.min_lr()};
  }

  const double step = static_cast<double>(t);
  double start_step = 0.0;
  for (int i = 0; i < count; ++i) {
    const Phase& p = phases[i];
    if (step <= p.end_step || i == count - 1) {
      const double span = p.end_step - start_step;
      const double pct = span > 0.0 ? std::clamp((step - start_step) / span, 0.0, 1.0) : 1.0;
      return cosine_anneal(p.start_lr, p.end_lr, pct);
    }
    start_step = p.end_step;
  }
  return s.min_lr();
}

}  // namespace kernrecon
