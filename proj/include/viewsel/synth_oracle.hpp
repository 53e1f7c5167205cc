#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "viewsel/feature_store.hpp"
#include "viewsel/selection.hpp"

namespace viewsel {

struct LevelView {
  std::size_t level = 0;
  std::size_t view = 0;

  friend auto operator<=>(const LevelView&, const LevelView&) = default;
};

struct SynthConfig {
  std::size_t n_plants = 20;
  std::size_t n_days = 10;
  std::size_t levels = 5;
  std::size_t views = 24;
  std::size_t dim = 32;
  double signal_scale = 3.0;
  double noise_sigma = 0.1;
  /// Kernel weight at circular distance j is rho^j (normalized), so 0 means no
  /// mixing between neighbouring views.
  double redundancy_rho = 0.5;
  /// Each entry gets its own direction in feature space, drawn in list order.
  std::vector<LevelView> informative_views = default_informative(5);
  /// Standard deviation of the per-sample deviation of the latent from the
  /// standardized day. This is the part of the age label no feature explains.
  double latent_jitter = 0.25;
  double leaf_intercept = 6.0;
  double leaf_slope = 2.0;
  std::string crop = "synthetic";
  std::uint64_t seed = 0;

  void validate() const;

  /// Views 3, 10 and 17 on every level.
  static std::vector<LevelView> default_informative(std::size_t levels);
};

struct SynthDataset {
  Dataset data;
  /// Latent y per cache row.
  std::vector<double> latents;
};

/// Pure function of the config: the same config gives bit-identical stacks.
SynthDataset generate(const SynthConfig& config);

/// Writes dir/cache.vspf and dir/manifest.csv.
void write_synth(const SynthDataset& synth, const std::filesystem::path& dir);

/// Unit-direction weights, one row of `dim` values per informative entry.
std::vector<std::vector<double>> informative_weights(const SynthConfig& config);

/// Noise-free, pre-smoothing signal of one sample with latent y.
FeatureStack signal_field(const SynthConfig& config, double latent);

/// Circular smoothing weights indexed by offset 0..V-1; they sum to 1.
std::vector<double> smoothing_kernel(std::size_t views, double rho);

/// out[l, v] = sum_j kernel[j] * in[l, (v + j) mod V].
FeatureStack smooth_views(const FeatureStack& stack, std::span<const double> kernel);

// ---------------------------------------------------------------------------
// Least-squares oracle

inline constexpr double kOracleRidge = 1e-6;

struct OracleFit {
  double intercept = 0.0;
  std::vector<double> coef;
  bool ridge = false;
  double predict(std::span<const double> x) const;
};

/// Mean of the selected embeddings: per (sample, level) for vectors at shift 0,
/// per sample for matrices.
std::vector<double> selection_mean(const FeatureStack& stack, const Selection& sel,
                                   std::size_t level = 0);

/// OLS on the train split; the normal matrix gets the ridge term when it is
/// not numerically positive definite.
OracleFit fit_oracle(const Dataset& data, const Selection& sel, Task task = Task::age,
                     std::optional<std::size_t> level = {});

/// Validation MAE of fit_oracle.
double oracle_mae(const Dataset& data, const Selection& sel, Task task = Task::age,
                  std::optional<std::size_t> level = {});

/// Validation MAE of predicting the train-label mean, over the same instances.
double mean_baseline_mae(const Dataset& data, const Selection& sel, Task task = Task::age,
                         std::optional<std::size_t> level = {});

}  // namespace viewsel
