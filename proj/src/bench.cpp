#include "viewsel/bench.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <random>
#include <sstream>

#include "viewsel/errors.hpp"
#include "viewsel/random.hpp"

namespace viewsel {

ForwardCost account_forward(const FusionConfig& c, std::size_t tokens) {
  c.validate();
  const std::uint64_t T = tokens;
  const std::uint64_t d = c.d_model;
  const std::uint64_t h = c.n_heads;
  const std::uint64_t ff = c.d_ff;

  std::uint64_t elems = T * c.d_in;             // selected embeddings
  if (c.use_projection) elems += T * d;         // projected tokens
  elems += 2 * T * d;                           // gathered encodings, sum
  std::uint64_t logits = 0;
  std::uint64_t macs = c.use_projection ? T * c.d_in * d : 0;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    elems += T * d;                             // ln1
    elems += 3 * T * d;                         // q, k, v
    logits += h * T * T;                        // logits
    elems += h * T * T;                         // softmax weights
    elems += 2 * T * d;                         // head outputs, output projection
    elems += T * d;                             // residual
    elems += T * d;                             // ln2
    elems += 2 * T * ff;                        // ff1, gelu
    elems += 2 * T * d;                         // ff2, residual
    macs += 4 * T * d * d;                      // q, k, v, output projections
    macs += 2 * T * T * d;                      // q.k^T and weights.v over all heads
    macs += 2 * T * d * ff;                     // feed-forward
  }
  elems += T * d + d;                           // final ln, pooled
  elems += 2 * c.head_hidden + 1;               // head hidden, prelu, output
  macs += d * c.head_hidden + c.head_hidden;

  ForwardCost out;
  out.tokens = tokens;
  out.attention_logit_bytes = logits * 4;
  out.activation_bytes = (elems + logits) * 4;
  out.macs = macs;
  return out;
}

double time_forward(const FusionParams<float>& params, const SelectedTokenSet& tokens,
                    const TimingOptions& options) {
  if (options.repeats == 0) throw ConfigError("bench: repeats must be >= 1");
  volatile float sink = 0.0F;
  for (std::size_t i = 0; i < options.warmups; ++i) sink = forward_eval(params, tokens);
  std::vector<double> ms(options.repeats);
  for (auto& m : ms) {
    const auto t0 = std::chrono::steady_clock::now();
    sink = forward_eval(params, tokens);
    m = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  (void)sink;
  const auto mid = ms.begin() + static_cast<std::ptrdiff_t>(ms.size() / 2);
  std::nth_element(ms.begin(), mid, ms.end());
  if (ms.size() % 2 == 1) return *mid;
  const double upper = *mid;
  return (*std::max_element(ms.begin(), mid) + upper) / 2.0;
}

std::vector<CostReport> run_bench(const FusionConfig& config,
                                  std::span<const NamedSelection> selections, std::size_t levels,
                                  std::size_t views, std::optional<TimingOptions> timing,
                                  std::uint64_t seed) {
  Rng rng(seed);
  FeatureStack stack(levels, views, config.d_in);
  std::normal_distribution<float> normal(0.0F, 1.0F);
  for (auto& x : stack.values()) x = normal(rng);

  std::vector<CostReport> out;
  for (const auto& s : selections) {
    CostReport r;
    r.name = s.name;
    FusionConfig fc = config;
    fc.pe_count = pe_count(s.selection);
    r.cost = account_forward(fc, view_count(s.selection));
    if (timing) {
      Rng init(derive_seed(seed, out.size()));
      const auto params = init_params<float>(init, fc);
      r.median_ms = time_forward(params, apply_selection(stack, s.selection, 0, 0), *timing);
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string format_bench_table(std::span<const CostReport> reports) {
  std::ostringstream os;
  os << "# batch size 1; activation bytes and MACs are analytic (tensor shapes at float32),"
        " not allocator measurements\n";
  os << std::left << std::setw(28) << "strategy" << std::right << std::setw(7) << "views"
     << std::setw(14) << "activ. (KB)" << std::setw(14) << "attn (KB)" << std::setw(14)
     << "MACs" << std::setw(12) << "time (ms)" << '\n';
  for (const auto& r : reports) {
    os << std::left << std::setw(28) << r.name << std::right << std::setw(7) << r.cost.tokens
       << std::fixed << std::setprecision(2) << std::setw(14)
       << static_cast<double>(r.cost.activation_bytes) / 1024.0 << std::setw(14)
       << static_cast<double>(r.cost.attention_logit_bytes) / 1024.0 << std::setw(14)
       << r.cost.macs << std::setw(12);
    if (r.median_ms) {
      os << std::setprecision(3) << *r.median_ms;
    } else {
      os << "-";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace viewsel
