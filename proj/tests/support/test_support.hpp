#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "viewsel/feature_store.hpp"
#include "viewsel/fusion_model.hpp"
#include "viewsel/random.hpp"
#include "viewsel/selection.hpp"
#include "viewsel/synth_oracle.hpp"
#include "viewsel/training.hpp"

namespace viewsel::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("viewsel_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline FeatureStack random_stack(Rng& rng, std::size_t levels, std::size_t views,
                                 std::size_t dim) {
  FeatureStack s(levels, views, dim);
  std::normal_distribution<float> normal(0.0F, 1.0F);
  for (auto& x : s.values()) x = normal(rng);
  return s;
}

/// Initialized weights with extra N(0, sigma^2) added everywhere, so outputs
/// depend visibly on the inputs and on token positions.
template <class Real>
FusionParams<Real> perturbed_params(Rng& rng, const FusionConfig& cfg, double sigma) {
  auto p = init_params<Real>(rng, cfg);
  std::normal_distribution<double> normal(0.0, sigma);
  for (auto* param : p.parameters()) {
    for (auto& v : param->value.data()) v = static_cast<Real>(v + normal(rng));
  }
  return p;
}

inline FusionConfig small_config(std::size_t d_in, std::size_t pe_count) {
  FusionConfig c;
  c.d_in = d_in;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 4;
  c.d_ff = 32;
  c.head_hidden = 16;
  c.pe_count = pe_count;
  return c;
}

inline SelectionVector all_views(std::size_t views = 24) {
  return SelectionVector(std::vector<std::uint8_t>(views, 1));
}

/// 10 plants x 4 days, 2 levels of 8 views, 8-dim features; splits 7/2/1 plants.
inline SynthConfig tiny_synth_config(std::uint64_t seed = 0) {
  SynthConfig c;
  c.n_plants = 10;
  c.n_days = 4;
  c.levels = 2;
  c.views = 8;
  c.dim = 8;
  c.informative_views = {{0, 1}, {1, 5}};
  c.seed = seed;
  return c;
}

/// Fast settings for tests that need a few real optimizer steps.
inline TrainConfig quick_train(std::size_t epochs = 3, std::uint64_t seed = 0) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 8;
  t.lr_fusion = 1e-3;
  t.lr_head = 3e-3;
  t.seed = seed;
  return t;
}

}  // namespace viewsel::testing
