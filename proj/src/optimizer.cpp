#include "viewsel/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "viewsel/errors.hpp"

namespace viewsel {

namespace {

// Lower bound on the surviving fraction, so a nearly fully masked tensor is
// scaled by at most 1000x.
constexpr double kMinMaskFraction = 1e-3;

}  // namespace

template <class Real>
void cadamw_step(std::span<ad::Parameter<Real>* const> params, OptimizerState<Real>& state,
                 const GroupRates& lr, const AdamHyper& hyper, bool cautious) {
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->value.size(), Real(0));
      state.v.emplace_back(p->value.size(), Real(0));
    }
  }
  if (state.m.size() != params.size()) {
    throw StateError("cadamw_step: optimizer state does not match the parameter list");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(hyper.beta1, t);
  const double bias2 = 1.0 - std::pow(hyper.beta2, t);

  std::vector<double> update;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = *params[pi];
    const std::size_t n = p.value.size();
    if (p.grad.size() != n || state.m[pi].size() != n) {
      throw StateError("cadamw_step: missing or mis-shaped gradient for " + p.name);
    }
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    update.assign(n, 0.0);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double g = p.grad[i];
      m[i] = static_cast<Real>(hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g);
      v[i] = static_cast<Real>(hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g);
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      update[i] = m_hat / (std::sqrt(v_hat) + hyper.eps);
      if (update[i] * g > 0.0) ++agree;
    }
    if (cautious) {
      const double fraction =
          std::max(static_cast<double>(agree) / static_cast<double>(n), kMinMaskFraction);
      for (std::size_t i = 0; i < n; ++i) {
        const double g = p.grad[i];
        update[i] = update[i] * g > 0.0 ? update[i] / fraction : 0.0;
      }
    }
    const double rate = lr.for_group(p.group);
    for (std::size_t i = 0; i < n; ++i) {
      const double theta = p.value[i];
      p.value[i] = static_cast<Real>(theta - rate * update[i] - rate * hyper.weight_decay * theta);
    }
  }
}

double cosine_lr(std::size_t step, std::size_t warmup_steps, std::size_t total_steps,
                 double base_lr) {
  if (step < warmup_steps) {
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }
  const std::size_t decay_steps = total_steps > warmup_steps ? total_steps - warmup_steps : 1;
  const double progress =
      std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(decay_steps));
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template void cadamw_step<float>(std::span<ad::Parameter<float>* const>, OptimizerState<float>&,
                                 const GroupRates&, const AdamHyper&, bool);
template void cadamw_step<double>(std::span<ad::Parameter<double>* const>,
                                  OptimizerState<double>&, const GroupRates&, const AdamHyper&,
                                  bool);

}  // namespace viewsel
