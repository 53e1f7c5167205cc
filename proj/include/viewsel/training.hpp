#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "viewsel/feature_store.hpp"
#include "viewsel/fusion_model.hpp"
#include "viewsel/inference_eval.hpp"
#include "viewsel/optimizer.hpp"
#include "viewsel/selection.hpp"

namespace viewsel {

enum class LossKind { l1, l2 };

std::string_view to_string(LossKind loss);
LossKind parse_loss(std::string_view token);

struct TrainConfig {
  std::size_t epochs = 15;
  std::size_t batch_size = 32;
  double lr_fusion = 4.2e-5;
  double lr_head = 7.5e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Capped at epochs - 1.
  std::size_t warmup_epochs = 1;
  LossKind loss = LossKind::l1;
  std::uint64_t seed = 0;
  /// Patience in epochs on validation MAE; disabled when empty.
  std::optional<std::size_t> early_stopping;
  /// When false, the per-instance shift is drawn from 1..V-1.
  bool include_identity_rotation = true;
  /// Matrix mode only: independent shift per row instead of one shared shift.
  bool per_row_rotation = false;
  bool cautious = true;
  bool standardize_targets = true;
  bool merge_train_val = false;
  /// Evaluate on val after every epoch; otherwise only after the last one.
  bool validate_each_epoch = true;
  Task task = Task::age;
  /// Vector mode: train on one level only.
  std::optional<std::size_t> level;
  std::size_t workers = 1;

  void validate() const;
  AdamHyper adam() const { return {beta1, beta2, eps, weight_decay}; }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_mae;
  std::optional<double> val_rmse;
  double lr_fusion = 0.0;
  double lr_head = 0.0;
};

struct TrainResult {
  Regressor model;
  std::vector<EpochRecord> log;
  /// 1-based epoch whose weights `model` holds.
  std::size_t best_epoch = 0;
  std::size_t steps = 0;
  bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains a fresh model. Every instance draws its own rotation from a stream
/// derived from (seed, epoch, position), so results do not depend on `workers`.
TrainResult train(const Dataset& data, const Selection& selection, const FusionConfig& fusion,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Number of optimizer steps per epoch for n instances.
std::size_t steps_per_epoch(std::size_t instances, std::size_t batch_size);

/// JSONL training log: a header record with the effective configuration and
/// the update rule, then one record per epoch.
void write_train_log(const TrainResult& result, const TrainConfig& config,
                     const FusionConfig& fusion, const Selection& selection,
                     const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Checkpoints: "VSPC1", u32 version, u32 header length, JSON header, then every
// parameter tensor as little-endian float32 in FusionParams::parameters() order.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Regressor& model, const std::filesystem::path& path);
Regressor load_checkpoint(const std::filesystem::path& path);

}  // namespace viewsel
