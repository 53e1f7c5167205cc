#include "viewsel/synth_oracle.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "viewsel/errors.hpp"
#include "viewsel/random.hpp"

namespace viewsel {

namespace {

constexpr std::uint64_t kWeightStream = 11;
constexpr std::uint64_t kSampleStream = 12;
constexpr std::uint64_t kSplitStream = 13;

constexpr double kTrainFraction = 0.70;
constexpr double kValFraction = 0.15;

}  // namespace

void SynthConfig::validate() const {
  if (n_plants == 0 || n_days == 0 || levels == 0 || views == 0 || dim == 0) {
    throw ConfigError("synth config: n_plants, n_days, levels, views and dim must be >= 1");
  }
  if (!(redundancy_rho >= 0.0 && redundancy_rho < 1.0)) {
    throw ConfigError("synth config: redundancy_rho must lie in [0, 1)");
  }
  if (!(noise_sigma >= 0.0) || !(latent_jitter >= 0.0) || !std::isfinite(signal_scale)) {
    throw ConfigError("synth config: noise_sigma and latent_jitter must be >= 0");
  }
  if (informative_views.empty()) {
    throw ConfigError("synth config: informative_views must not be empty");
  }
  for (const auto& iv : informative_views) {
    if (iv.level >= levels || iv.view >= views) {
      throw ConfigError("synth config: informative view (" + std::to_string(iv.level) + ", " +
                        std::to_string(iv.view) + ") out of range");
    }
  }
}

std::vector<LevelView> SynthConfig::default_informative(std::size_t levels) {
  std::vector<LevelView> out;
  for (std::size_t l = 0; l < levels; ++l) {
    for (const std::size_t v : {3, 10, 17}) out.push_back({l, v});
  }
  return out;
}

std::vector<std::vector<double>> informative_weights(const SynthConfig& config) {
  Rng rng(derive_seed(config.seed, kWeightStream));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> weights;
  for (std::size_t i = 0; i < config.informative_views.size(); ++i) {
    std::vector<double> w(config.dim);
    double norm = 0.0;
    for (auto& x : w) {
      x = normal(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : w) x /= norm;
    weights.push_back(std::move(w));
  }
  return weights;
}

namespace {

void add_signal(FeatureStack& stack, const SynthConfig& config,
                const std::vector<std::vector<double>>& weights, double latent) {
  for (std::size_t i = 0; i < config.informative_views.size(); ++i) {
    const auto& iv = config.informative_views[i];
    auto e = stack.embedding(iv.level, iv.view);
    for (std::size_t d = 0; d < config.dim; ++d) {
      e[d] = static_cast<float>(e[d] + weights[i][d] * latent * config.signal_scale);
    }
  }
}

}  // namespace

FeatureStack signal_field(const SynthConfig& config, double latent) {
  config.validate();
  FeatureStack stack(config.levels, config.views, config.dim);
  add_signal(stack, config, informative_weights(config), latent);
  return stack;
}

std::vector<double> smoothing_kernel(std::size_t views, double rho) {
  std::vector<double> k(views);
  for (std::size_t j = 0; j < views; ++j) {
    const std::size_t dist = std::min(j, views - j);
    k[j] = dist == 0 ? 1.0 : std::pow(rho, static_cast<double>(dist));
  }
  const double total = std::accumulate(k.begin(), k.end(), 0.0);
  for (auto& x : k) x /= total;
  return k;
}

FeatureStack smooth_views(const FeatureStack& stack, std::span<const double> kernel) {
  const std::size_t L = stack.levels(), V = stack.views(), D = stack.dim();
  if (kernel.size() != V) {
    throw ShapeError("smoothing kernel has " + std::to_string(kernel.size()) + " taps for " +
                     std::to_string(V) + " views");
  }
  FeatureStack out(L, V, D);
  std::vector<double> acc(D);
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t v = 0; v < V; ++v) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t j = 0; j < V; ++j) {
        if (kernel[j] == 0.0) continue;
        const auto src = stack.embedding(l, (v + j) % V);
        for (std::size_t d = 0; d < D; ++d) acc[d] += kernel[j] * src[d];
      }
      auto dst = out.embedding(l, v);
      for (std::size_t d = 0; d < D; ++d) dst[d] = static_cast<float>(acc[d]);
    }
  }
  return out;
}

SynthDataset generate(const SynthConfig& config) {
  config.validate();
  const auto weights = informative_weights(config);
  const auto kernel = smoothing_kernel(config.views, config.redundancy_rho);

  // Rank plants by a seeded hash; the first 70% train, the next 15% val.
  std::vector<std::size_t> rank(config.n_plants);
  std::iota(rank.begin(), rank.end(), std::size_t{0});
  std::sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
    return derive_seed(config.seed, kSplitStream, a) < derive_seed(config.seed, kSplitStream, b);
  });
  const auto n = static_cast<double>(config.n_plants);
  const auto n_train = static_cast<std::size_t>(std::lround(n * kTrainFraction));
  const auto n_val = std::min(config.n_plants - n_train,
                              static_cast<std::size_t>(std::lround(n * kValFraction)));
  std::vector<Split> split_of(config.n_plants);
  for (std::size_t r = 0; r < config.n_plants; ++r) {
    split_of[rank[r]] = r < n_train ? Split::train : (r < n_train + n_val ? Split::val : Split::test);
  }

  const double day_mean = (static_cast<double>(config.n_days) - 1.0) / 2.0;
  double day_sd = 0.0;
  for (std::size_t d = 0; d < config.n_days; ++d) {
    day_sd += (static_cast<double>(d) - day_mean) * (static_cast<double>(d) - day_mean);
  }
  day_sd = std::sqrt(day_sd / static_cast<double>(config.n_days));
  if (day_sd == 0.0) day_sd = 1.0;

  SynthDataset out;
  auto& data = out.data;
  data.header.num_samples = static_cast<std::uint32_t>(config.n_plants * config.n_days);
  data.header.levels = static_cast<std::uint32_t>(config.levels);
  data.header.views = static_cast<std::uint32_t>(config.views);
  data.header.dim = static_cast<std::uint32_t>(config.dim);

  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t p = 0; p < config.n_plants; ++p) {
    char plant_id[16];
    std::snprintf(plant_id, sizeof plant_id, "p%03zu", p);
    for (std::size_t d = 0; d < config.n_days; ++d) {
      Rng rng(derive_seed(config.seed, kSampleStream, p * config.n_days + d));
      const double latent =
          (static_cast<double>(d) - day_mean) / day_sd + config.latent_jitter * normal(rng);
      FeatureStack raw(config.levels, config.views, config.dim);
      for (auto& x : raw.values()) x = static_cast<float>(config.noise_sigma * normal(rng));
      add_signal(raw, config, weights, latent);

      ManifestEntry e;
      e.key = {config.crop, plant_id, static_cast<std::int64_t>(d)};
      e.age_days = static_cast<double>(d);
      e.leaf_count = std::max(0.0, config.leaf_intercept + config.leaf_slope * latent);
      e.split = split_of[p];
      e.cache_index = data.stacks.size();
      data.entries.push_back(std::move(e));
      data.stacks.push_back(smooth_views(raw, kernel));
      out.latents.push_back(latent);
    }
  }
  return out;
}

void write_synth(const SynthDataset& synth, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const auto& h = synth.data.header;
  write_cache(synth.data.stacks, dir / "cache.vspf", h.levels, h.views, h.dim);
  write_manifest(synth.data.entries, dir / "manifest.csv");
}

// ---------------------------------------------------------------------------

double OracleFit::predict(std::span<const double> x) const {
  double y = intercept;
  for (std::size_t i = 0; i < coef.size(); ++i) y += coef[i] * x[i];
  return y;
}

std::vector<double> selection_mean(const FeatureStack& stack, const Selection& sel,
                                   std::size_t level) {
  const SelectedTokenSet tokens = apply_selection(stack, sel, 0, level);
  std::vector<double> mean(tokens.dim, 0.0);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto f = tokens.feature(t);
    for (std::size_t d = 0; d < tokens.dim; ++d) mean[d] += f[d];
  }
  for (auto& m : mean) m /= static_cast<double>(tokens.size());
  return mean;
}

namespace {

struct Design {
  std::vector<std::vector<double>> x;
  std::vector<double> y;
};

Design design_for(const Dataset& data, std::span<const std::size_t> entries, const Selection& sel,
                  Task task, std::optional<std::size_t> level) {
  const bool per_level = mode_of(sel) == SelectionMode::vector;
  Design out;
  for (const auto& inst : make_instances(data, entries, per_level, level)) {
    out.x.push_back(selection_mean(data.stack_of(inst.entry), sel, inst.level));
    out.y.push_back(data.label(inst.entry, task));
  }
  return out;
}

void require_splits(const SplitIndices& split) {
  if (split.train.empty() || split.val.empty()) {
    throw ConfigError("oracle needs non-empty train and val splits");
  }
}

double mae_of(const OracleFit& fit, const Design& d) {
  double sum = 0.0;
  for (std::size_t i = 0; i < d.y.size(); ++i) sum += std::abs(fit.predict(d.x[i]) - d.y[i]);
  return sum / static_cast<double>(d.y.size());
}

}  // namespace

OracleFit fit_oracle(const Dataset& data, const Selection& sel, Task task,
                     std::optional<std::size_t> level) {
  const SplitIndices split = partition(data.entries);
  require_splits(split);
  const Design train = design_for(data, split.train, sel, task, level);
  const std::size_t n = train.y.size();
  const std::size_t p = train.x.front().size() + 1;

  Eigen::MatrixXd X(n, p);
  Eigen::VectorXd y(n);
  for (std::size_t i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    for (std::size_t j = 1; j < p; ++j) X(i, j) = train.x[i][j - 1];
    y(i) = train.y[i];
  }
  Eigen::MatrixXd A = X.transpose() * X;
  const Eigen::VectorXd b = X.transpose() * y;

  OracleFit fit;
  Eigen::VectorXd beta;
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() == Eigen::Success && llt.rcond() > 1e-12) {
    beta = llt.solve(b);
  } else {
    fit.ridge = true;
    A.diagonal().array() += kOracleRidge;
    beta = A.ldlt().solve(b);
  }
  fit.intercept = beta(0);
  fit.coef.assign(beta.data() + 1, beta.data() + p);
  return fit;
}

double oracle_mae(const Dataset& data, const Selection& sel, Task task,
                  std::optional<std::size_t> level) {
  const OracleFit fit = fit_oracle(data, sel, task, level);
  const SplitIndices split = partition(data.entries);
  return mae_of(fit, design_for(data, split.val, sel, task, level));
}

double mean_baseline_mae(const Dataset& data, const Selection& sel, Task task,
                         std::optional<std::size_t> level) {
  const SplitIndices split = partition(data.entries);
  require_splits(split);
  const bool per_level = mode_of(sel) == SelectionMode::vector;
  double mean = 0.0;
  const auto train = make_instances(data, split.train, per_level, level);
  for (const auto& inst : train) mean += data.label(inst.entry, task);
  mean /= static_cast<double>(train.size());
  const auto val = make_instances(data, split.val, per_level, level);
  double sum = 0.0;
  for (const auto& inst : val) sum += std::abs(data.label(inst.entry, task) - mean);
  return sum / static_cast<double>(val.size());
}

}  // namespace viewsel
