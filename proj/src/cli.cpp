#include "viewsel/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>
#include <string>

#include "config_json.hpp"
#include "viewsel/bench.hpp"
#include "viewsel/errors.hpp"
#include "viewsel/inference_eval.hpp"
#include "viewsel/selection_search.hpp"
#include "viewsel/synth_oracle.hpp"
#include "viewsel/training.hpp"

namespace viewsel::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void configure_logging() {
  auto logger = spdlog::get("viewsel");
  if (!logger) logger = spdlog::stderr_color_mt("viewsel");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%Y-%m-%d %H:%M:%S.%e] [%l] %v");
  const char* env = std::getenv("VSP_LOG_LEVEL");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "warn") {
    spdlog::set_level(spdlog::level::warn);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
    if (level != "info") spdlog::warn("unknown VSP_LOG_LEVEL '{}', using info", level);
  }
}

// ---------------------------------------------------------------------------
// Config file: {"fusion": {...}, "train": {...}, "search": {...}, "synth": {...},
// "gradcheck": {...}}. Every section is optional; unknown keys are errors.

json load_config(const std::optional<std::string>& path) {
  if (!path) return json::object();
  std::ifstream in(*path);
  if (!in) throw IoError("cannot open config " + *path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + *path + ": " + e.what());
  }
  detail::reject_unknown_keys(j, {"fusion", "train", "search", "synth", "gradcheck"}, "config");
  return j;
}

template <class T>
void take(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <class T>
void take(const json& j, const char* key, std::optional<T>& out, const std::string& where) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    out.reset();
    return;
  }
  T v{};
  take(j, key, v, where);
  out = v;
}

void apply_train_json(const json& j, TrainConfig& c) {
  detail::reject_unknown_keys(
      j,
      {"epochs", "batch_size", "lr_fusion", "lr_head", "weight_decay", "beta1", "beta2", "eps",
       "warmup_epochs", "loss", "seed", "early_stopping", "include_identity_rotation",
       "per_row_rotation", "cautious", "standardize_targets", "merge_train_val",
       "validate_each_epoch", "task", "level", "workers"},
      "train");
  const std::string w = "train";
  take(j, "epochs", c.epochs, w);
  take(j, "batch_size", c.batch_size, w);
  take(j, "lr_fusion", c.lr_fusion, w);
  take(j, "lr_head", c.lr_head, w);
  take(j, "weight_decay", c.weight_decay, w);
  take(j, "beta1", c.beta1, w);
  take(j, "beta2", c.beta2, w);
  take(j, "eps", c.eps, w);
  take(j, "warmup_epochs", c.warmup_epochs, w);
  if (j.contains("loss")) c.loss = parse_loss(j.at("loss").get<std::string>());
  take(j, "seed", c.seed, w);
  take(j, "early_stopping", c.early_stopping, w);
  take(j, "include_identity_rotation", c.include_identity_rotation, w);
  take(j, "per_row_rotation", c.per_row_rotation, w);
  take(j, "cautious", c.cautious, w);
  take(j, "standardize_targets", c.standardize_targets, w);
  take(j, "merge_train_val", c.merge_train_val, w);
  take(j, "validate_each_epoch", c.validate_each_epoch, w);
  if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
  take(j, "level", c.level, w);
  take(j, "workers", c.workers, w);
}

json train_to_json(const TrainConfig& c) {
  const auto opt = [](const auto& v) { return v ? json(*v) : json(nullptr); };
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr_fusion", c.lr_fusion},
          {"lr_head", c.lr_head},
          {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"warmup_epochs", c.warmup_epochs},
          {"loss", to_string(c.loss)},
          {"seed", c.seed},
          {"early_stopping", opt(c.early_stopping)},
          {"include_identity_rotation", c.include_identity_rotation},
          {"per_row_rotation", c.per_row_rotation},
          {"cautious", c.cautious},
          {"standardize_targets", c.standardize_targets},
          {"merge_train_val", c.merge_train_val},
          {"validate_each_epoch", c.validate_each_epoch},
          {"task", to_string(c.task)},
          {"level", opt(c.level)},
          {"workers", c.workers}};
}

void apply_search_json(const json& j, SearchConfig& c) {
  detail::reject_unknown_keys(
      j, {"mode", "n_candidates", "density", "epochs", "include_baselines", "seed", "workers"},
      "search");
  const std::string w = "search";
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
  take(j, "n_candidates", c.n_candidates, w);
  take(j, "density", c.density, w);
  take(j, "epochs", c.epochs, w);
  take(j, "include_baselines", c.include_baselines, w);
  take(j, "seed", c.seed, w);
  take(j, "workers", c.workers, w);
}

void apply_synth_json(const json& j, SynthConfig& c) {
  detail::reject_unknown_keys(j,
                              {"n_plants", "n_days", "levels", "views", "dim", "signal_scale",
                               "noise_sigma", "redundancy_rho", "informative_views",
                               "latent_jitter", "leaf_intercept", "leaf_slope", "crop", "seed"},
                              "synth");
  const std::string w = "synth";
  take(j, "n_plants", c.n_plants, w);
  take(j, "n_days", c.n_days, w);
  take(j, "levels", c.levels, w);
  take(j, "views", c.views, w);
  take(j, "dim", c.dim, w);
  take(j, "signal_scale", c.signal_scale, w);
  take(j, "noise_sigma", c.noise_sigma, w);
  take(j, "redundancy_rho", c.redundancy_rho, w);
  take(j, "latent_jitter", c.latent_jitter, w);
  take(j, "leaf_intercept", c.leaf_intercept, w);
  take(j, "leaf_slope", c.leaf_slope, w);
  take(j, "crop", c.crop, w);
  take(j, "seed", c.seed, w);
  if (j.contains("levels") && !j.contains("informative_views")) {
    c.informative_views = SynthConfig::default_informative(c.levels);
  }
  if (j.contains("informative_views")) {
    c.informative_views.clear();
    for (const auto& pair : j.at("informative_views")) {
      if (!pair.is_array() || pair.size() != 2) {
        throw ConfigError("synth.informative_views: expected [level, view] pairs");
      }
      c.informative_views.push_back({pair[0].get<std::size_t>(), pair[1].get<std::size_t>()});
    }
  }
}

json synth_to_json(const SynthConfig& c) {
  json views = json::array();
  for (const auto& iv : c.informative_views) views.push_back({iv.level, iv.view});
  return {{"n_plants", c.n_plants},         {"n_days", c.n_days},
          {"levels", c.levels},             {"views", c.views},
          {"dim", c.dim},                   {"signal_scale", c.signal_scale},
          {"noise_sigma", c.noise_sigma},   {"redundancy_rho", c.redundancy_rho},
          {"informative_views", views},     {"latent_jitter", c.latent_jitter},
          {"leaf_intercept", c.leaf_intercept}, {"leaf_slope", c.leaf_slope},
          {"crop", c.crop},                 {"seed", c.seed}};
}

// ---------------------------------------------------------------------------
// Shared flag groups

struct DataFlags {
  std::string features;
  std::string manifest;
  std::optional<std::string> selection;
  std::optional<std::string> mode;
  std::optional<std::size_t> level;

  void add(CLI::App& app, bool selection_flags = true) {
    app.add_option("--features", features, "VSPF1 feature cache")->required();
    app.add_option("--manifest", manifest, "manifest CSV")->required();
    if (selection_flags) {
      app.add_option("--selection", selection, "selection file (rows of 0/1)");
      app.add_option("--mode", mode, "vector or matrix (all-views selection when no file)")
          ->check(CLI::IsMember({"vector", "matrix"}));
      app.add_option("--level", level, "vector mode: use a single level");
    }
  }

  Dataset load() const { return Dataset::load(features, manifest); }

  Selection resolve_selection(const Dataset& data, const std::optional<Selection>& fallback) const {
    Selection sel = fallback.value_or(SelectionVector(std::vector<std::uint8_t>(data.header.views, 1)));
    if (selection) {
      sel = load_selection(*selection);
    } else if (mode && !fallback) {
      if (parse_mode(*mode) == SelectionMode::matrix) {
        sel = SelectionMatrix(data.header.levels, data.header.views,
                              std::vector<std::uint8_t>(data.header.levels * data.header.views, 1));
      }
    }
    if (mode && parse_mode(*mode) != mode_of(sel)) {
      throw ValidationError("--mode " + *mode + " does not match the selection shape (" +
                            std::string(to_string(mode_of(sel))) + ")");
    }
    return sel;
  }
};

struct ModelFlags {
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr_fusion;
  std::optional<double> lr_head;
  std::optional<double> dropout;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::string> task;
  std::optional<std::string> loss;
  std::optional<std::size_t> early_stopping;
  bool merge_train_val = false;

  void add(CLI::App& app) {
    app.add_option("--epochs", epochs, "training epochs");
    app.add_option("--batch-size", batch_size, "instances per optimizer step");
    app.add_option("--lr-fusion", lr_fusion, "learning rate of projection, encodings and encoder");
    app.add_option("--lr-head", lr_head, "learning rate of the regression head");
    app.add_option("--dropout", dropout, "dropout rate");
    app.add_option("--seed", seed, "master seed");
    app.add_option("--workers", workers, "parallel workers");
    app.add_option("--task", task, "age or leaf")->check(CLI::IsMember({"age", "leaf"}));
    app.add_option("--loss", loss, "l1 or l2")->check(CLI::IsMember({"l1", "l2"}));
    app.add_option("--early-stopping", early_stopping, "patience in epochs on val MAE");
    app.add_flag("--merge-train-val", merge_train_val, "train on train + val");
  }

  void apply(TrainConfig& t, FusionConfig& f) const {
    if (epochs) t.epochs = *epochs;
    if (batch_size) t.batch_size = *batch_size;
    if (lr_fusion) t.lr_fusion = *lr_fusion;
    if (lr_head) t.lr_head = *lr_head;
    if (dropout) f.dropout = *dropout;
    if (seed) t.seed = *seed;
    if (workers) t.workers = *workers;
    if (task) t.task = parse_task(*task);
    if (loss) t.loss = parse_loss(*loss);
    if (early_stopping) t.early_stopping = *early_stopping;
    if (merge_train_val) t.merge_train_val = true;
  }
};

void log_settings(const char* command, const json& settings) {
  spdlog::info("{} settings: {}", command, settings.dump());
}

// ---------------------------------------------------------------------------
// Subcommands

struct SynthCmd {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> plants, days, dim;
  std::optional<double> noise_sigma, signal_scale, rho, jitter;
  std::string out;

  void add(CLI::App& app) {
    app.add_option("--config", config, "JSON config (synth section)");
    app.add_option("--seed", seed, "generator seed");
    app.add_option("--plants", plants, "number of plants");
    app.add_option("--days", days, "days per plant");
    app.add_option("--dim", dim, "embedding dimension");
    app.add_option("--noise-sigma", noise_sigma, "per-coordinate noise");
    app.add_option("--signal-scale", signal_scale, "amplitude of planted views");
    app.add_option("--rho", rho, "view redundancy in [0, 1)");
    app.add_option("--latent-jitter", jitter, "latent deviation from the day");
    app.add_option("--out", out, "output directory")->required();
  }

  int run() const {
    SynthConfig c;
    const json cfg = load_config(config);
    if (cfg.contains("synth")) apply_synth_json(cfg.at("synth"), c);
    if (seed) c.seed = *seed;
    if (plants) c.n_plants = *plants;
    if (days) c.n_days = *days;
    if (dim) c.dim = *dim;
    if (noise_sigma) c.noise_sigma = *noise_sigma;
    if (signal_scale) c.signal_scale = *signal_scale;
    if (rho) c.redundancy_rho = *rho;
    if (jitter) c.latent_jitter = *jitter;
    log_settings("synth", synth_to_json(c));
    const SynthDataset synth = generate(c);
    write_synth(synth, out);
    const Selection all = SelectionVector(std::vector<std::uint8_t>(c.views, 1));
    spdlog::info("wrote {} samples to {}", synth.data.stacks.size(), out);
    spdlog::info("oracle val MAE (all views, age) {:.4f}; train-mean baseline {:.4f}",
                 oracle_mae(synth.data, all), mean_baseline_mae(synth.data, all));
    return 0;
  }
};

struct TrainCmd {
  std::optional<std::string> config;
  DataFlags data;
  ModelFlags model;
  std::string out;

  void add(CLI::App& app) {
    app.add_option("--config", config, "JSON config (fusion and train sections)");
    data.add(app);
    model.add(app);
    app.add_option("--out", out, "output directory for checkpoint.vspc and train_log.jsonl")
        ->required();
  }

  int run() const {
    const json cfg = load_config(config);
    FusionConfig fusion;
    TrainConfig tc;
    if (cfg.contains("fusion")) detail::fusion_from_json(cfg.at("fusion"), fusion);
    if (cfg.contains("train")) apply_train_json(cfg.at("train"), tc);
    model.apply(tc, fusion);
    if (data.level) tc.level = data.level;

    const Dataset ds = data.load();
    const Selection sel = data.resolve_selection(ds, std::nullopt);
    fusion.d_in = ds.header.dim;
    fusion.pe_count = pe_count(sel);
    log_settings("train", {{"fusion", detail::fusion_to_json(fusion)},
                           {"train", train_to_json(tc)},
                           {"selection", serialize(sel)},
                           {"update_rule", kCautiousUpdateRule}});

    const TrainResult result = train(ds, sel, fusion, tc, [](const EpochRecord& r) {
      spdlog::info("epoch {:3d} loss {:.5f} val_mae {} val_rmse {} lr_fusion {:.3e} lr_head {:.3e}",
                   r.epoch, r.train_loss, r.val_mae ? fmt::format("{:.4f}", *r.val_mae) : "-",
                   r.val_rmse ? fmt::format("{:.4f}", *r.val_rmse) : "-", r.lr_fusion, r.lr_head);
    });
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create " + out + ": " + ec.message());
    save_checkpoint(result.model, fs::path(out) / "checkpoint.vspc");
    write_train_log(result, tc, fusion, sel, fs::path(out) / "train_log.jsonl");
    spdlog::info("best epoch {}; checkpoint written to {}", result.best_epoch,
                 (fs::path(out) / "checkpoint.vspc").string());
    return 0;
  }
};

struct EvalCmd {
  std::string checkpoint;
  DataFlags data;
  std::string split = "val";
  bool round = false;
  std::size_t workers = 1;
  std::optional<std::string> out;

  void add(CLI::App& app) {
    app.add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    data.add(app);
    app.add_option("--split", split, "train, val or test")->capture_default_str();
    app.add_flag("--round-predictions", round, "round predictions to integers");
    app.add_option("--workers", workers, "parallel workers")->capture_default_str();
    app.add_option("--out", out, "report file (JSONL)");
  }

  int run() const {
    const Regressor model = load_checkpoint(checkpoint);
    const Dataset ds = data.load();
    const Selection sel = data.resolve_selection(ds, model.selection);
    if (pe_count(sel) != model.params.config.pe_count) {
      throw ValidationError("selection shape does not match the checkpoint");
    }
    const Split which = parse_split(split);
    const SplitIndices parts = partition(ds.entries);
    const auto& entries = which == Split::train ? parts.train
                          : which == Split::val ? parts.val
                                                : parts.test;
    EvalOptions opts;
    opts.round_predictions = round;
    opts.level = data.level ? data.level : model.level;
    opts.workers = workers;
    log_settings("eval", {{"checkpoint", checkpoint},
                          {"split", split},
                          {"selection", serialize(sel)},
                          {"round_predictions", round},
                          {"task", to_string(model.task)}});
    const EvalReport report = evaluate(model, ds, entries, sel, opts, split);
    std::cout << format_report_table(report);
    if (out) write_report_jsonl(report, *out);
    return 0;
  }
};

struct InferCmd {
  std::string checkpoint;
  std::string features;
  std::optional<std::string> selection;
  std::optional<std::size_t> rotation;
  std::optional<std::size_t> level;
  bool round = false;
  std::optional<std::string> out;

  void add(CLI::App& app) {
    app.add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    app.add_option("--features", features, "VSPF1 feature cache")->required();
    app.add_option("--selection", selection, "selection file (default: the trained one)");
    app.add_option("--rotation", rotation, "single rotation k instead of averaging");
    app.add_option("--level", level, "vector mode: predict one level only");
    app.add_flag("--round-predictions", round, "round predictions to integers");
    app.add_option("--out", out, "predictions file (JSONL); stdout otherwise");
  }

  int run() const {
    const Regressor model = load_checkpoint(checkpoint);
    const Selection sel = selection ? load_selection(*selection) : model.selection;
    if (pe_count(sel) != model.params.config.pe_count) {
      throw ValidationError("selection shape does not match the checkpoint");
    }
    const CacheReader reader(features);
    const bool per_level = mode_of(sel) == SelectionMode::vector;
    std::ofstream file;
    if (out) {
      file.open(*out);
      if (!file) throw IoError("cannot write " + *out);
    }
    std::ostream& os = out ? file : std::cout;
    for (std::size_t i = 0; i < reader.size(); ++i) {
      const FeatureStack stack = reader.stack(i);
      std::vector<std::size_t> levels;
      if (!per_level) {
        levels.push_back(0);
      } else if (const auto l = level ? level : model.level) {
        levels.push_back(*l);
      } else {
        for (std::size_t l = 0; l < stack.levels(); ++l) levels.push_back(l);
      }
      for (const auto l : levels) {
        double p = rotation ? predict_rotation(model, stack, sel, *rotation % views_per_ring(sel), l)
                            : predict_averaged(model, stack, sel, l);
        if (round) p = std::round(p);
        json rec = {{"cache_index", i}, {"prediction", p}, {"task", to_string(model.task)}};
        rec["level"] = per_level ? json(l) : json(nullptr);
        os << rec.dump() << '\n';
      }
    }
    return 0;
  }
};

struct SearchCmd {
  std::optional<std::string> config;
  DataFlags data;
  ModelFlags model;
  std::optional<std::string> mode;
  std::optional<std::size_t> candidates;
  std::optional<double> density;
  std::string out;

  void add(CLI::App& app) {
    app.add_option("--config", config, "JSON config (fusion, train and search sections)");
    data.add(app, false);
    model.add(app);
    app.add_option("--mode", mode, "vector or matrix")->check(CLI::IsMember({"vector", "matrix"}));
    app.add_option("--candidates", candidates, "random candidates (default 32)");
    app.add_option("--density", density, "bit probability of random candidates");
    app.add_option("--out", out, "output directory for search_table.txt and best_selection.txt")
        ->required();
  }

  int run() const {
    const json cfg = load_config(config);
    FusionConfig fusion;
    TrainConfig tc;
    SearchConfig sc;
    if (cfg.contains("fusion")) detail::fusion_from_json(cfg.at("fusion"), fusion);
    if (cfg.contains("train")) apply_train_json(cfg.at("train"), tc);
    if (cfg.contains("search")) apply_search_json(cfg.at("search"), sc);
    model.apply(tc, fusion);
    if (model.epochs) sc.epochs = *model.epochs;
    if (model.seed) sc.seed = *model.seed;
    if (model.workers) sc.workers = *model.workers;
    if (mode) sc.mode = parse_mode(*mode);
    if (candidates) sc.n_candidates = *candidates;
    if (density) sc.density = *density;

    const Dataset ds = data.load();
    fusion.d_in = ds.header.dim;
    log_settings("search", {{"fusion", detail::fusion_to_json(fusion)},
                            {"train", train_to_json(tc)},
                            {"search",
                             {{"mode", to_string(sc.mode)},
                              {"n_candidates", sc.n_candidates},
                              {"density", sc.effective_density()},
                              {"epochs", sc.effective_epochs()},
                              {"include_baselines", sc.include_baselines},
                              {"seed", sc.seed},
                              {"workers", sc.workers}}}});
    const SearchResult result = run_search(ds, fusion, tc, sc, [](const CandidateResult& c) {
      spdlog::info("candidate {:3d} {:<26} views {:3d} val_mae {:.4f} val_rmse {:.4f}", c.index,
                   c.name, c.views, c.val_mae, c.val_rmse);
    });
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create " + out + ": " + ec.message());
    write_search_table(result, fs::path(out) / "search_table.txt");
    save_selection(result.best().selection, fs::path(out) / "best_selection.txt");
    std::cout << format_search_table(result);
    return 0;
  }
};

struct BenchCmd {
  std::optional<std::string> config;
  std::string mode = "matrix";
  std::size_t dim = 32;
  std::size_t repeats = 20;
  std::size_t warmups = 5;
  bool no_timing = false;
  std::uint64_t seed = 0;
  std::optional<std::string> out;

  void add(CLI::App& app) {
    app.add_option("--config", config, "JSON config (fusion section)");
    app.add_option("--mode", mode, "vector or matrix")
        ->check(CLI::IsMember({"vector", "matrix"}))
        ->capture_default_str();
    app.add_option("--dim", dim, "embedding dimension")->capture_default_str();
    app.add_option("--repeats", repeats, "timed repeats")->capture_default_str();
    app.add_option("--warmups", warmups, "untimed warm-up runs")->capture_default_str();
    app.add_flag("--no-timing", no_timing, "accounting only");
    app.add_option("--seed", seed, "seed for weights, inputs and the sparse example");
    app.add_option("--out", out, "table file");
  }

  int run() const {
    const json cfg = load_config(config);
    FusionConfig fusion;
    if (cfg.contains("fusion")) detail::fusion_from_json(cfg.at("fusion"), fusion);
    fusion.d_in = dim;
    const SelectionMode m = parse_mode(mode);
    auto selections = structured_baselines(m);
    // A sparse random draw as the analog of a searched selection.
    Rng rng(seed);
    Selection sparse = m == SelectionMode::vector ? Selection(random_vector(rng, 24, 0.2))
                                                  : Selection(random_matrix(rng, 5, 24, 0.04));
    selections.push_back({"random (" + std::to_string(view_count(sparse)) + " views)", sparse});
    if (warmups < 5 || repeats < 20) {
      spdlog::warn("timing below 5 warm-ups / 20 repeats is noisy");
    }
    log_settings("bench", {{"fusion", detail::fusion_to_json(fusion)},
                           {"mode", mode},
                           {"warmups", warmups},
                           {"repeats", repeats},
                           {"timing", !no_timing}});
    const auto timing = no_timing ? std::nullopt : std::optional<TimingOptions>({warmups, repeats});
    const auto reports = run_bench(fusion, selections, 5, 24, timing, seed);
    const std::string table = format_bench_table(reports);
    std::cout << table;
    if (out) {
      std::ofstream f(*out);
      if (!(f << table)) throw IoError("cannot write " + *out);
    }
    return 0;
  }
};

struct GradcheckCmd {
  std::optional<std::string> config;
  std::uint64_t seed = 0;
  std::size_t tokens = 3;
  double tolerance = 1e-4;

  void add(CLI::App& app) {
    app.add_option("--config", config, "JSON config (fusion and gradcheck sections)");
    app.add_option("--seed", seed, "seed for weights and inputs")->capture_default_str();
    app.add_option("--tokens", tokens, "token count")->capture_default_str();
    app.add_option("--tolerance", tolerance, "maximum relative error")->capture_default_str();
  }

  int run() const {
    const json cfg = load_config(config);
    FusionConfig fusion;
    fusion.d_in = 16;
    fusion.d_model = 16;
    fusion.n_heads = 4;
    fusion.d_ff = 32;
    fusion.head_hidden = 16;
    std::size_t n_tokens = tokens;
    std::uint64_t s = seed;
    if (cfg.contains("fusion")) detail::fusion_from_json(cfg.at("fusion"), fusion);
    if (cfg.contains("gradcheck")) {
      const json& g = cfg.at("gradcheck");
      detail::reject_unknown_keys(g, {"tokens", "seed"}, "gradcheck");
      take(g, "tokens", n_tokens, "gradcheck");
      take(g, "seed", s, "gradcheck");
    }
    if (n_tokens == 0 || n_tokens > fusion.pe_count) {
      throw ConfigError("gradcheck: tokens must lie in [1, pe_count]");
    }
    log_settings("gradcheck", {{"fusion", detail::fusion_to_json(fusion)},
                               {"tokens", n_tokens},
                               {"seed", s},
                               {"tolerance", tolerance}});

    Rng rng(s);
    auto params = init_params<double>(rng, fusion);
    SelectedTokenSet set;
    set.dim = fusion.d_in;
    std::normal_distribution<float> normal(0.0F, 1.0F);
    for (std::size_t t = 0; t < n_tokens; ++t) {
      set.tokens.push_back({t, 0, t});
      for (std::size_t d = 0; d < fusion.d_in; ++d) set.features.push_back(normal(rng));
    }
    const double target = 0.5;
    const auto loss = [&](ad::Graph<double>& g) {
      Rng unused(0);
      const ad::Var out = forward_graph(g, params, set, false, unused);
      return g.l2_loss(out, g.constant(ad::Tensor<double>::scalar(target)));
    };
    const auto list = params.parameters();
    const ad::GradCheckResult r = ad::grad_check(loss, list);
    std::cout << "checked " << r.checked << " elements; max relative error " << r.max_relative_error
              << " at " << r.worst_parameter << "[" << r.worst_index << "]\n";
    if (!(r.max_relative_error <= tolerance)) {
      throw NumericError("gradient check failed: " + std::to_string(r.max_relative_error) +
                         " > " + std::to_string(tolerance));
    }
    return 0;
  }
};

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"viewsel: multi-view trait regression with view selection"};
  app.require_subcommand(1);
  SynthCmd synth;
  TrainCmd train_cmd;
  EvalCmd eval;
  InferCmd infer;
  SearchCmd search;
  BenchCmd bench;
  GradcheckCmd gradcheck;
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic dataset");
  auto* c_train = app.add_subcommand("train", "train a fusion model");
  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  auto* c_infer = app.add_subcommand("infer", "predict every sample of a cache");
  auto* c_search = app.add_subcommand("search", "rank random and structured selections");
  auto* c_bench = app.add_subcommand("bench", "forward-pass cost table");
  auto* c_grad = app.add_subcommand("gradcheck", "finite-difference gradient check");
  synth.add(*c_synth);
  train_cmd.add(*c_train);
  eval.add(*c_eval);
  infer.add(*c_infer);
  search.add(*c_search);
  bench.add(*c_bench);
  gradcheck.add(*c_grad);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  configure_logging();
  try {
    if (c_synth->parsed()) return synth.run();
    if (c_train->parsed()) return train_cmd.run();
    if (c_eval->parsed()) return eval.run();
    if (c_infer->parsed()) return infer.run();
    if (c_search->parsed()) return search.run();
    if (c_bench->parsed()) return bench.run();
    if (c_grad->parsed()) return gradcheck.run();
  } catch (const ValidationError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const RuntimeFailure& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("unexpected failure: {}", e.what());
    return 2;
  }
  return 1;
}

}  // namespace viewsel::cli
