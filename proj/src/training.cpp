#include "viewsel/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "config_json.hpp"
#include "parallel.hpp"
#include "viewsel/errors.hpp"
#include "viewsel/random.hpp"

namespace viewsel {

using ad::Graph;
using ad::Tensor;
using ad::Var;

std::string_view to_string(LossKind loss) { return loss == LossKind::l1 ? "l1" : "l2"; }

LossKind parse_loss(std::string_view token) {
  if (token == "l1" || token == "L1") return LossKind::l1;
  if (token == "l2" || token == "L2") return LossKind::l2;
  throw ValidationError("unknown loss '" + std::string(token) + "' (expected l1 or l2)");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train config: epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("train config: batch_size must be >= 1");
  if (!(lr_fusion > 0.0) || !(lr_head > 0.0)) {
    throw ConfigError("train config: learning rates must be positive");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("train config: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train config: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("train config: eps must be positive");
  if (early_stopping && *early_stopping == 0) {
    throw ConfigError("train config: early-stopping patience must be >= 1");
  }
  if (workers == 0) throw ConfigError("train config: workers must be >= 1");
}

std::size_t steps_per_epoch(std::size_t instances, std::size_t batch_size) {
  return (instances + batch_size - 1) / batch_size;
}

namespace {

// Substream tags for derive_seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kInstanceStream = 3;

void check_compatible(const Dataset& data, const Selection& sel, const FusionConfig& fusion,
                      const TrainConfig& config) {
  const auto& h = data.header;
  if (fusion.d_in != h.dim) {
    throw ConfigError("fusion d_in " + std::to_string(fusion.d_in) + " != feature dim " +
                      std::to_string(h.dim));
  }
  if (views_per_ring(sel) != h.views) {
    throw ConfigError("selection has " + std::to_string(views_per_ring(sel)) +
                      " columns but the cache has " + std::to_string(h.views) + " views");
  }
  if (const auto* m = std::get_if<SelectionMatrix>(&sel); m && m->levels() != h.levels) {
    throw ConfigError("selection matrix has " + std::to_string(m->levels()) +
                      " rows but the cache has " + std::to_string(h.levels) + " levels");
  }
  if (fusion.pe_count != pe_count(sel)) {
    throw ConfigError("fusion pe_count " + std::to_string(fusion.pe_count) +
                      " does not match the selection (" + std::to_string(pe_count(sel)) + ")");
  }
  if (config.per_row_rotation && mode_of(sel) != SelectionMode::matrix) {
    throw ConfigError("per-row rotation needs a selection matrix");
  }
  if (config.level && mode_of(sel) != SelectionMode::vector) {
    throw ConfigError("--level applies to vector mode only");
  }
}

std::size_t flat_size(const FusionParams<float>& p) { return p.parameter_count(); }

void copy_values(const FusionParams<float>& from, FusionParams<float>& to) {
  const auto src = from.parameters();
  const auto dst = to.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    std::copy(src[i]->value.data().begin(), src[i]->value.data().end(),
              dst[i]->value.data().begin());
  }
}

void grads_to(const FusionParams<float>& p, std::vector<float>& flat) {
  std::size_t off = 0;
  for (const auto* param : p.parameters()) {
    std::copy(param->grad.data().begin(), param->grad.data().end(), flat.begin() + off);
    off += param->grad.size();
  }
}

// Forward + backward of one instance on `local`, gradients left in local.grad.
double instance_gradient(FusionParams<float>& local, const Dataset& data, const Instance& inst,
                         const Selection& sel, double target, double weight,
                         const TrainConfig& config, Rng& rng) {
  const std::size_t views = views_per_ring(sel);
  const std::size_t lo = (config.include_identity_rotation || views == 1) ? 0 : 1;
  std::uniform_int_distribution<std::size_t> shift(lo, views - 1);
  const FeatureStack& stack = data.stack_of(inst.entry);
  SelectedTokenSet tokens;
  if (config.per_row_rotation) {
    const auto& m = std::get<SelectionMatrix>(sel);
    std::vector<std::size_t> shifts(m.levels());
    for (auto& s : shifts) s = shift(rng);
    tokens = apply_selection(stack, m, shifts);
  } else {
    tokens = apply_selection(stack, sel, shift(rng), inst.level);
  }

  local.zero_grad();
  Graph<float> g;
  const Var out = forward_graph(g, local, tokens, true, rng);
  const Var y = g.constant(Tensor<float>::scalar(static_cast<float>(target)));
  const Var loss = config.loss == LossKind::l1 ? g.l1_loss(out, y) : g.l2_loss(out, y);
  g.backward(g.scale(loss, static_cast<float>(weight)));
  return static_cast<double>(g.value(loss)[0]);
}

}  // namespace

TrainResult train(const Dataset& data, const Selection& selection, const FusionConfig& fusion,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  fusion.validate();
  check_compatible(data, selection, fusion, config);

  const bool per_level = mode_of(selection) == SelectionMode::vector;
  const SplitIndices split = partition(data.entries, config.merge_train_val);
  if (split.train.empty()) throw ConfigError("training split is empty");
  const auto instances = make_instances(data, split.train, per_level, config.level);
  if (config.early_stopping && split.val.empty()) {
    throw ConfigError("early stopping needs a non-empty validation split");
  }

  std::vector<double> labels(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    labels[i] = data.label(instances[i].entry, config.task);
  }

  TrainResult result;
  Regressor& model = result.model;
  model.selection = selection;
  model.task = config.task;
  model.level = config.level;
  model.scaler = config.standardize_targets ? TargetScaler::fit(labels) : TargetScaler{};
  {
    Rng init_rng(derive_seed(config.seed, kInitStream));
    model.params = init_params<float>(init_rng, fusion);
  }
  FusionParams<float>& params = model.params;
  const auto param_list = params.parameters();

  const std::size_t workers = std::min(config.workers, config.batch_size);
  std::vector<FusionParams<float>> locals;
  if (workers > 1) locals.assign(workers, params);
  const std::size_t n_flat = flat_size(params);

  const std::size_t spe = steps_per_epoch(instances.size(), config.batch_size);
  const std::size_t total_steps = spe * config.epochs;
  // Leave at least one epoch of decay, so short runs still reach the base rate.
  const std::size_t warmup_steps = spe * std::min(config.warmup_epochs, config.epochs - 1);
  OptimizerState<float> state;
  const AdamHyper hyper = config.adam();

  std::vector<std::vector<float>> slots(config.batch_size, std::vector<float>(n_flat));
  std::vector<double> slot_loss(config.batch_size);
  std::vector<std::size_t> order(instances.size());

  std::optional<double> best_mae;
  FusionParams<float> best_params;
  std::size_t since_best = 0;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(config.seed, kShuffleStream, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    GroupRates lr;
    for (std::size_t s = 0; s < spe; ++s, ++step) {
      const std::size_t begin = s * config.batch_size;
      const std::size_t count = std::min(config.batch_size, instances.size() - begin);
      const double weight = 1.0 / static_cast<double>(count);

      if (workers > 1) {
        for (auto& local : locals) copy_values(params, local);
      }
      const std::size_t lanes = std::min(workers, count);
      detail::parallel_for(lanes, lanes, [&](std::size_t w) {
        FusionParams<float>& local = workers > 1 ? locals[w] : params;
        for (std::size_t b = w; b < count; b += lanes) {
          const std::size_t pos = begin + b;
          const std::size_t idx = order[pos];
          Rng rng(derive_seed(derive_seed(config.seed, kInstanceStream), epoch, pos));
          try {
            slot_loss[b] = instance_gradient(local, data, instances[idx], selection,
                                             model.scaler.encode(labels[idx]), weight, config, rng);
          } catch (const NumericError& e) {
            throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(step) + ": " + e.what());
          }
          grads_to(local, slots[b]);
        }
      });

      // Fixed-order reduction so the worker count cannot change the sum.
      std::size_t off = 0;
      for (auto* p : param_list) {
        auto grad = p->grad.data();
        for (std::size_t j = 0; j < grad.size(); ++j) {
          float acc = 0.0F;
          for (std::size_t b = 0; b < count; ++b) acc += slots[b][off + j];
          grad[j] = acc;
        }
        off += grad.size();
      }
      double batch_loss = 0.0;
      for (std::size_t b = 0; b < count; ++b) batch_loss += slot_loss[b];
      if (!std::isfinite(batch_loss)) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step) + ": non-finite loss");
      }
      loss_sum += batch_loss;

      lr.fusion = cosine_lr(step, warmup_steps, total_steps, config.lr_fusion);
      lr.head = cosine_lr(step, warmup_steps, total_steps, config.lr_head);
      cadamw_step<float>(param_list, state, lr, hyper, config.cautious);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(instances.size());
    rec.lr_fusion = lr.fusion;
    rec.lr_head = lr.head;
    const bool last = epoch == config.epochs;
    if (!split.val.empty() && (config.validate_each_epoch || config.early_stopping || last)) {
      EvalOptions opts;
      opts.level = config.level;
      opts.workers = config.workers;
      const EvalReport report = evaluate(model, data, split.val, selection, opts);
      rec.val_mae = report.mae;
      rec.val_rmse = report.rmse;
    }
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (config.early_stopping) {
      if (!best_mae || *rec.val_mae < *best_mae) {
        best_mae = rec.val_mae;
        best_params = params;
        result.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= *config.early_stopping) {
        result.stopped_early = !last;
        break;
      }
    } else {
      result.best_epoch = epoch;
    }
  }
  if (config.early_stopping) params = std::move(best_params);
  result.steps = step;
  return result;
}

void write_train_log(const TrainResult& result, const TrainConfig& config,
                     const FusionConfig& fusion, const Selection& selection,
                     const std::filesystem::path& path) {
  using nlohmann::json;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write training log " + path.string());
  const auto opt = [](const auto& v) { return v ? json(*v) : json(nullptr); };
  json header = {
      {"type", "header"},
      {"update_rule", kCautiousUpdateRule},
      {"cautious", config.cautious},
      {"selection", serialize(selection)},
      {"mode", to_string(mode_of(selection))},
      {"views", view_count(selection)},
      {"train",
       {{"epochs", config.epochs},
        {"batch_size", config.batch_size},
        {"lr_fusion", config.lr_fusion},
        {"lr_head", config.lr_head},
        {"weight_decay", config.weight_decay},
        {"beta1", config.beta1},
        {"beta2", config.beta2},
        {"eps", config.eps},
        {"warmup_epochs", config.warmup_epochs},
        {"loss", to_string(config.loss)},
        {"seed", config.seed},
        {"early_stopping", opt(config.early_stopping)},
        {"include_identity_rotation", config.include_identity_rotation},
        {"per_row_rotation", config.per_row_rotation},
        {"standardize_targets", config.standardize_targets},
        {"merge_train_val", config.merge_train_val},
        {"task", to_string(config.task)},
        {"level", opt(config.level)}}},
      {"fusion", detail::fusion_to_json(fusion)},
      {"target_scaler", {{"mean", result.model.scaler.mean}, {"scale", result.model.scaler.scale}}}};
  out << header.dump() << '\n';
  for (const auto& r : result.log) {
    out << json{{"type", "epoch"},
                {"epoch", r.epoch},
                {"train_loss", r.train_loss},
                {"val_mae", opt(r.val_mae)},
                {"val_rmse", opt(r.val_rmse)},
                {"lr_fusion", r.lr_fusion},
                {"lr_head", r.lr_head}}
               .dump()
        << '\n';
  }
  out << json{{"type", "result"},
              {"best_epoch", result.best_epoch},
              {"steps", result.steps},
              {"stopped_early", result.stopped_early}}
             .dump()
      << '\n';
  if (!out) throw IoError("failed writing training log " + path.string());
}

}  // namespace viewsel
