#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "viewsel/fusion_model.hpp"
#include "viewsel/selection_search.hpp"

namespace viewsel {

/// Shape-derived cost of one batch-1 forward pass with T tokens.
struct ForwardCost {
  std::size_t tokens = 0;
  /// Every intermediate tensor at 4 bytes per element, attention logits included.
  std::uint64_t activation_bytes = 0;
  /// The n_layers * n_heads * T^2 attention logits, part of the above.
  std::uint64_t attention_logit_bytes = 0;
  std::uint64_t macs = 0;
};

ForwardCost account_forward(const FusionConfig& config, std::size_t tokens);

struct CostReport {
  std::string name;
  ForwardCost cost;
  /// Median wall time per forward in milliseconds, when measured.
  std::optional<double> median_ms;
};

struct TimingOptions {
  std::size_t warmups = 5;
  std::size_t repeats = 20;
};

/// Median of `repeats` timed eval-mode forwards after `warmups` untimed ones.
double time_forward(const FusionParams<float>& params, const SelectedTokenSet& tokens,
                    const TimingOptions& options = {});

/// Accounting (and timing unless options is empty) for each selection on a
/// random stack of the given shape, using freshly initialized weights.
std::vector<CostReport> run_bench(const FusionConfig& config,
                                  std::span<const NamedSelection> selections, std::size_t levels,
                                  std::size_t views, std::optional<TimingOptions> timing,
                                  std::uint64_t seed = 0);

std::string format_bench_table(std::span<const CostReport> reports);

}  // namespace viewsel
