#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "viewsel/feature_store.hpp"
#include "viewsel/fusion_model.hpp"
#include "viewsel/selection.hpp"

namespace viewsel {

/// Affine map between label units and the units the model is trained in.
struct TargetScaler {
  double mean = 0.0;
  double scale = 1.0;

  double encode(double label) const { return (label - mean) / scale; }
  double decode(double output) const { return output * scale + mean; }

  /// Mean and population standard deviation; a constant sample keeps scale 1.
  static TargetScaler fit(std::span<const double> labels);
  friend bool operator==(const TargetScaler&, const TargetScaler&) = default;
};

/// A trained predictor together with everything needed to interpret it.
struct Regressor {
  FusionParams<float> params;
  TargetScaler scaler;
  Selection selection = SelectionVector(std::vector<std::uint8_t>(24, 1));
  Task task = Task::age;
  std::optional<std::size_t> level;
};

/// Model-unit output for a single rotation k (taken mod V); eval mode.
template <class Real>
Real predict_rotation(const FusionParams<Real>& params, const FeatureStack& stack,
                      const Selection& sel, std::size_t k, std::size_t level = 0);

/// Mean of predict_rotation over k = 0..V-1, accumulated in ascending k.
template <class Real>
double predict_averaged(const FusionParams<Real>& params, const FeatureStack& stack,
                        const Selection& sel, std::size_t level = 0);

/// Label-unit versions.
double predict_rotation(const Regressor& model, const FeatureStack& stack, const Selection& sel,
                        std::size_t k, std::size_t level = 0);
double predict_averaged(const Regressor& model, const FeatureStack& stack, const Selection& sel,
                        std::size_t level = 0);

struct Metrics {
  std::size_t count = 0;
  double mae = 0.0;
  double rmse = 0.0;
};

/// Throws ShapeError on length mismatch and ConfigError when empty.
Metrics compute_metrics(std::span<const double> predictions, std::span<const double> labels);

struct PredictionRecord {
  SampleKey key;
  std::optional<std::size_t> level;
  double prediction = 0.0;
  double label = 0.0;
};

struct EvalReport {
  std::string split;
  Task task = Task::age;
  std::size_t views = 0;
  double mae = 0.0;
  double rmse = 0.0;
  std::vector<PredictionRecord> per_instance;
  std::map<std::string, Metrics> per_crop;
};

struct EvalOptions {
  bool round_predictions = false;
  /// Vector mode: restrict to one level instead of all of them.
  std::optional<std::size_t> level;
  std::size_t workers = 1;
};

/// Permutation-averaged predictions over `entries` (manifest positions).
/// Vector selections are evaluated per (sample, level), matrices per sample.
EvalReport evaluate(const Regressor& model, const Dataset& data,
                    std::span<const std::size_t> entries, const Selection& sel,
                    const EvalOptions& options = {}, std::string split_name = "val");

/// One JSON object per instance, followed by a summary record per crop and overall.
void write_report_jsonl(const EvalReport& report, const std::filesystem::path& path);
std::string format_report_table(const EvalReport& report);

extern template float predict_rotation<float>(const FusionParams<float>&, const FeatureStack&,
                                              const Selection&, std::size_t, std::size_t);
extern template double predict_rotation<double>(const FusionParams<double>&, const FeatureStack&,
                                                const Selection&, std::size_t, std::size_t);
extern template double predict_averaged<float>(const FusionParams<float>&, const FeatureStack&,
                                               const Selection&, std::size_t);
extern template double predict_averaged<double>(const FusionParams<double>&, const FeatureStack&,
                                                const Selection&, std::size_t);

}  // namespace viewsel
