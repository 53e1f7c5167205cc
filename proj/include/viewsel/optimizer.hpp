#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "viewsel/autodiff.hpp"

namespace viewsel {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct GroupRates {
  double fusion = 0.0;
  double head = 0.0;

  double for_group(ad::ParamGroup g) const { return g == ad::ParamGroup::head ? head : fusion; }
};

/// First/second moments per parameter tensor and the global step counter.
template <class Real>
struct OptimizerState {
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;
  std::uint64_t step = 0;
};

/// Human-readable form of the update rule, echoed into training logs.
inline constexpr const char* kCautiousUpdateRule =
    "m=b1*m+(1-b1)*g; v=b2*v+(1-b2)*g^2; u=(m/(1-b1^t))/(sqrt(v/(1-b2^t))+eps); "
    "mask=1[u*g>0]; u=u*mask/max(mean(mask),1e-3); theta=theta-lr*u-lr*wd*theta";

/// One C-AdamW step: Adam moments with bias correction, then coordinates whose
/// update disagrees in sign with the current gradient are masked out and the
/// survivors divided by the surviving fraction (floored at 1e-3). Decoupled
/// weight decay is applied to every coordinate. With cautious == false this is plain AdamW.
template <class Real>
void cadamw_step(std::span<ad::Parameter<Real>* const> params, OptimizerState<Real>& state,
                 const GroupRates& lr, const AdamHyper& hyper, bool cautious = true);

/// Linear warm-up over the first warmup_steps (reaching base_lr on the last
/// warm-up step), then half-cosine decay over the remaining steps.
double cosine_lr(std::size_t step, std::size_t warmup_steps, std::size_t total_steps,
                 double base_lr);

extern template void cadamw_step<float>(std::span<ad::Parameter<float>* const>,
                                        OptimizerState<float>&, const GroupRates&,
                                        const AdamHyper&, bool);
extern template void cadamw_step<double>(std::span<ad::Parameter<double>* const>,
                                         OptimizerState<double>&, const GroupRates&,
                                         const AdamHyper&, bool);

}  // namespace viewsel
