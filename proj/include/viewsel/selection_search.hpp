#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "viewsel/feature_store.hpp"
#include "viewsel/fusion_model.hpp"
#include "viewsel/selection.hpp"
#include "viewsel/training.hpp"

namespace viewsel {

struct NamedSelection {
  std::string name;
  Selection selection = SelectionVector(std::vector<std::uint8_t>(24, 1));
};

/// Vector: all, every 2nd, every 4th, first view.
/// Matrix: all, every 2nd/3rd/6th with row shift 1, every 12th with row shift 2.
std::vector<NamedSelection> structured_baselines(SelectionMode mode, std::size_t levels = 5,
                                                 std::size_t views = 24);

inline constexpr std::size_t kVectorEpochs = 15;
inline constexpr std::size_t kMatrixEpochs = 75;

struct SearchConfig {
  SelectionMode mode = SelectionMode::vector;
  std::size_t n_candidates = 32;
  /// Bernoulli density of random candidates; 0.25 vector, 0.10 matrix by default.
  std::optional<double> density;
  /// Defaults to 15 (vector) or 75 (matrix), which equalizes forward passes.
  std::optional<std::size_t> epochs;
  bool include_baselines = true;
  std::uint64_t seed = 0;
  /// Candidates trained concurrently.
  std::size_t workers = 1;

  double effective_density() const;
  std::size_t effective_epochs() const;
  void validate() const;
};

struct CandidateResult {
  std::size_t index = 0;
  std::string name;
  Selection selection = SelectionVector(std::vector<std::uint8_t>(24, 1));
  std::size_t views = 0;
  double val_mae = 0.0;
  double val_rmse = 0.0;
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
  bool baseline = false;
};

struct SearchResult {
  SelectionMode mode = SelectionMode::vector;
  /// val_mae ascending, then fewer views, then serialized selection.
  std::vector<CandidateResult> ranked;

  const CandidateResult& best() const { return ranked.front(); }
  const CandidateResult* find(const std::string& name) const;
};

using CandidateCallback = std::function<void(const CandidateResult&)>;

/// The candidate list run_search trains, in index order: baselines first,
/// then random draws, each from its own derived stream.
std::vector<NamedSelection> search_candidates(const SearchConfig& config, std::size_t levels,
                                              std::size_t views);

/// Trains a fresh model per candidate with seed derive_seed(config.seed, index)
/// and records permutation-averaged validation metrics. `train` supplies every
/// other training setting; its epochs and seed are overridden.
SearchResult run_search(const Dataset& data, const FusionConfig& fusion, const TrainConfig& train,
                        const SearchConfig& config, const CandidateCallback& on_candidate = {});

std::string format_search_table(const SearchResult& result);
void write_search_table(const SearchResult& result, const std::filesystem::path& path);

}  // namespace viewsel
