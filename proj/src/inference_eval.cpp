#include "viewsel/inference_eval.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "parallel.hpp"
#include "viewsel/errors.hpp"

namespace viewsel {

TargetScaler TargetScaler::fit(std::span<const double> labels) {
  if (labels.empty()) return {};
  double sum = 0.0;
  for (const double y : labels) sum += y;
  const double mean = sum / static_cast<double>(labels.size());
  double sq = 0.0;
  for (const double y : labels) sq += (y - mean) * (y - mean);
  const double sd = std::sqrt(sq / static_cast<double>(labels.size()));
  return {mean, sd > 1e-12 ? sd : 1.0};
}

template <class Real>
Real predict_rotation(const FusionParams<Real>& params, const FeatureStack& stack,
                      const Selection& sel, std::size_t k, std::size_t level) {
  return forward_eval(params, apply_selection(stack, sel, k, level));
}

template <class Real>
double predict_averaged(const FusionParams<Real>& params, const FeatureStack& stack,
                        const Selection& sel, std::size_t level) {
  const std::size_t views = views_per_ring(sel);
  double sum = 0.0;
  for (std::size_t k = 0; k < views; ++k) {
    sum += static_cast<double>(predict_rotation(params, stack, sel, k, level));
  }
  return sum / static_cast<double>(views);
}

double predict_rotation(const Regressor& model, const FeatureStack& stack, const Selection& sel,
                        std::size_t k, std::size_t level) {
  return model.scaler.decode(predict_rotation(model.params, stack, sel, k, level));
}

double predict_averaged(const Regressor& model, const FeatureStack& stack, const Selection& sel,
                        std::size_t level) {
  return model.scaler.decode(predict_averaged(model.params, stack, sel, level));
}

Metrics compute_metrics(std::span<const double> predictions, std::span<const double> labels) {
  if (predictions.size() != labels.size()) {
    throw ShapeError("metrics: " + std::to_string(predictions.size()) + " predictions vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (predictions.empty()) {
    throw ConfigError("metrics: nothing to evaluate");
  }
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double err = predictions[i] - labels[i];
    abs_sum += std::abs(err);
    sq_sum += err * err;
  }
  const auto n = static_cast<double>(predictions.size());
  return {predictions.size(), abs_sum / n, std::sqrt(sq_sum / n)};
}

EvalReport evaluate(const Regressor& model, const Dataset& data,
                    std::span<const std::size_t> entries, const Selection& sel,
                    const EvalOptions& options, std::string split_name) {
  if (entries.empty()) {
    throw ConfigError("evaluate: split '" + split_name + "' is empty");
  }
  const bool per_level = mode_of(sel) == SelectionMode::vector;
  const auto instances = make_instances(data, entries, per_level, options.level);

  std::vector<double> predictions(instances.size());
  detail::parallel_for(instances.size(), options.workers, [&](std::size_t i) {
    const auto& inst = instances[i];
    double p = predict_averaged(model, data.stack_of(inst.entry), sel, inst.level);
    if (options.round_predictions) p = std::round(p);
    predictions[i] = p;
  });

  EvalReport report;
  report.split = std::move(split_name);
  report.task = model.task;
  report.views = view_count(sel);
  std::vector<double> labels(instances.size());
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_crop;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    const auto& entry = data.entries[inst.entry];
    labels[i] = label_of(entry, model.task);
    report.per_instance.push_back({entry.key,
                                   per_level ? std::optional<std::size_t>(inst.level) : std::nullopt,
                                   predictions[i], labels[i]});
    auto& [p, y] = by_crop[entry.key.crop];
    p.push_back(predictions[i]);
    y.push_back(labels[i]);
  }
  const Metrics overall = compute_metrics(predictions, labels);
  report.mae = overall.mae;
  report.rmse = overall.rmse;
  for (const auto& [crop, py] : by_crop) {
    report.per_crop[crop] = compute_metrics(py.first, py.second);
  }
  return report;
}

void write_report_jsonl(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path.string());
  const std::string task(to_string(report.task));
  for (const auto& r : report.per_instance) {
    nlohmann::json j = {{"type", "instance"}, {"crop", r.key.crop}, {"plant_id", r.key.plant_id},
                        {"day", r.key.day},   {"task", task},      {"prediction", r.prediction},
                        {"label", r.label}};
    j["level"] = r.level ? nlohmann::json(*r.level) : nlohmann::json(nullptr);
    out << j.dump() << '\n';
  }
  for (const auto& [crop, m] : report.per_crop) {
    out << nlohmann::json{{"type", "crop"}, {"crop", crop}, {"task", task}, {"n", m.count},
                          {"mae", m.mae},   {"rmse", m.rmse}}
               .dump()
        << '\n';
  }
  out << nlohmann::json{{"type", "summary"},
                        {"split", report.split},
                        {"task", task},
                        {"views", report.views},
                        {"n", report.per_instance.size()},
                        {"mae", report.mae},
                        {"rmse", report.rmse}}
             .dump()
      << '\n';
  if (!out) throw IoError("failed writing report " + path.string());
}

std::string format_report_table(const EvalReport& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << "split=" << report.split << " task=" << to_string(report.task)
     << " views=" << report.views << '\n';
  os << std::left << std::setw(16) << "crop" << std::right << std::setw(8) << "n" << std::setw(10)
     << "MAE" << std::setw(10) << "RMSE" << '\n';
  for (const auto& [crop, m] : report.per_crop) {
    os << std::left << std::setw(16) << crop << std::right << std::setw(8) << m.count
       << std::setw(10) << m.mae << std::setw(10) << m.rmse << '\n';
  }
  os << std::left << std::setw(16) << "average" << std::right << std::setw(8)
     << report.per_instance.size() << std::setw(10) << report.mae << std::setw(10) << report.rmse
     << '\n';
  return os.str();
}

template float predict_rotation<float>(const FusionParams<float>&, const FeatureStack&,
                                       const Selection&, std::size_t, std::size_t);
template double predict_rotation<double>(const FusionParams<double>&, const FeatureStack&,
                                         const Selection&, std::size_t, std::size_t);
template double predict_averaged<float>(const FusionParams<float>&, const FeatureStack&,
                                        const Selection&, std::size_t);
template double predict_averaged<double>(const FusionParams<double>&, const FeatureStack&,
                                         const Selection&, std::size_t);

}  // namespace viewsel
