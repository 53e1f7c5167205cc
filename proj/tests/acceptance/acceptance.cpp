// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "test_support.hpp"
#include "viewsel/bench.hpp"
#include "viewsel/errors.hpp"
#include "viewsel/inference_eval.hpp"
#include "viewsel/optimizer.hpp"
#include "viewsel/selection_search.hpp"
#include "viewsel/synth_oracle.hpp"
#include "viewsel/training.hpp"

using namespace viewsel;
using viewsel::testing::perturbed_params;
using viewsel::testing::random_stack;
using viewsel::testing::TempDir;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("violated: ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(const char* name, const std::function<Outcome()>& check) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  if (!o.pass) ++failures;
  std::printf("%s  %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(),
              seconds_since(t0));
  std::fflush(stdout);
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    FusionConfig cfg;
    cfg.d_in = 16;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.d_ff = 32;
    cfg.head_hidden = 16;
    Rng rng(seed);
    // Weights well away from the small init scale so every nonlinearity is exercised.
    auto params = perturbed_params<double>(rng, cfg, 0.3);
    SelectedTokenSet tokens;
    tokens.dim = 16;
    std::normal_distribution<float> normal(0.0F, 1.0F);
    for (std::size_t t = 0; t < 3; ++t) {
      tokens.tokens.push_back({t * 7, 0, t * 7});
      for (std::size_t d = 0; d < 16; ++d) tokens.features.push_back(normal(rng));
    }
    const auto list = params.parameters();
    const auto check = [&](double eps) {
      return ad::grad_check(
          [&](ad::Graph<double>& g) {
            Rng unused(0);
            const auto out = forward_graph(g, params, tokens, false, unused);
            return g.l2_loss(out, g.constant(ad::Tensor<double>::scalar(0.5)));
          },
          list, eps);
    };
    auto r = check(1e-5);
    if (r.max_relative_error > 1e-4) {
      // A central difference that straddles a PReLU kink is not a gradient.
      // The analytic value is confirmed if shrinking the step resolves it.
      const auto fine = check(1e-7);
      o.note("seed " + std::to_string(seed) + " " + r.worst_parameter + "[" +
             std::to_string(r.worst_index) + "] " + fmt("%.2e", r.max_relative_error) +
             " at eps 1e-5, " + fmt("%.2e", fine.max_relative_error) +
             " at eps 1e-7 (step straddles PReLU kink)");
      r = fine;
    }
    worst = std::max(worst, r.max_relative_error);
  }
  const double elapsed = seconds_since(t0);
  o.note("max relative error " + fmt("%.2e", worst) + " over 5 seeds");
  o.require(worst <= 1e-4, "error <= 1e-4");
  o.require(elapsed < 60.0, "runtime < 60 s");
  return o;
}

Outcome rotation_invariance() {
  Outcome o;
  Rng rng(2024);
  FusionConfig base;  // default encoder, 32-dim inputs
  std::vector<Selection> selections;
  for (int i = 0; i < 5; ++i) selections.emplace_back(random_vector(rng, 24, 0.25));
  for (int i = 0; i < 5; ++i) selections.emplace_back(random_matrix(rng, 5, 24, 0.10));
  std::vector<Regressor> models;
  for (const auto& sel : selections) {
    FusionConfig fc = base;
    fc.pe_count = pe_count(sel);
    Regressor r;
    r.params = perturbed_params<float>(rng, fc, 0.2);
    r.selection = sel;
    models.push_back(std::move(r));
  }

  double worst_avg = 0.0, worst_eq = 0.0, min_spread = 1e300;
  std::uniform_int_distribution<std::size_t> pick_k(0, 23), pick_level(0, 4);
  for (int s = 0; s < 50; ++s) {
    const auto stack = random_stack(rng, 5, 24, 32);
    for (std::size_t m = 0; m < models.size(); ++m) {
      const auto& params = models[m].params;
      const auto& sel = selections[m];
      const std::size_t level = pick_level(rng);
      std::vector<double> per_k;
      for (std::size_t k = 0; k < 24; ++k) per_k.push_back(predict_rotation(params, stack, sel, k, level));
      min_spread = std::min(min_spread, *std::max_element(per_k.begin(), per_k.end()) -
                                            *std::min_element(per_k.begin(), per_k.end()));
      const double avg = predict_averaged(params, stack, sel, level);
      for (std::size_t r = 0; r < 24; ++r) {
        const auto rotated = rotate_views(stack, r);
        const double a = predict_averaged(params, rotated, sel, level);
        worst_avg = std::max(worst_avg, std::abs(a - avg) / (1.0 + std::abs(avg)));
        const std::size_t k = pick_k(rng);
        const double lhs = predict_rotation(params, rotated, sel, k, level);
        const double rhs = per_k[(k + r) % 24];
        worst_eq = std::max(worst_eq, std::abs(lhs - rhs) / std::max(1.0, std::abs(rhs)));
      }
    }
  }
  o.note("averaged drift " + fmt("%.2e", worst_avg) + ", equivariance " + fmt("%.2e", worst_eq) +
         ", min spread over k " + fmt("%.2e", min_spread));
  o.require(worst_avg <= 1e-5, "averaged drift <= 1e-5");
  o.require(worst_eq <= 1e-6, "equivariance <= 1e-6");
  o.require(min_spread > 1e-6, "single-rotation outputs depend on k (non-vacuous)");
  return o;
}

std::vector<std::uint8_t> brute_rotate_rows(const std::vector<std::uint8_t>& bits,
                                            std::size_t views, std::size_t k) {
  std::vector<std::uint8_t> out(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) {
    const std::size_t row = i / views, col = i % views;
    out[row * views + (col + k) % views] = bits[i];
  }
  return out;
}

template <class Sel>
void check_algebra(Outcome& o, const Sel& sel, const std::string& name) {
  std::set<std::vector<std::uint8_t>> distinct;
  for (const auto& [k, rotated] : enumerate_rotations(sel)) {
    const auto expect = brute_rotate_rows(sel.bits(), sel.views(), k);
    o.require(rotated.bits() == expect, name + " rotation " + std::to_string(k));
    distinct.insert(expect);
  }
  o.require(distinct_rotation_count(sel) == distinct.size(), name + " distinct count");
}

Outcome selection_algebra() {
  Outcome o;
  std::vector<std::size_t> vcounts, mcounts;
  for (const auto& b : structured_baselines(SelectionMode::vector)) {
    const auto& v = std::get<SelectionVector>(b.selection);
    vcounts.push_back(view_count(b.selection));
    check_algebra(o, v, b.name);
  }
  for (const auto& b : structured_baselines(SelectionMode::matrix)) {
    const auto& m = std::get<SelectionMatrix>(b.selection);
    mcounts.push_back(view_count(b.selection));
    std::size_t ones = 0;
    for (auto bit : m.bits()) ones += bit;
    o.require(ones == view_count(b.selection), b.name + " popcount");
    check_algebra(o, m, b.name);
  }
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    check_algebra(o, random_vector(rng, 24, 0.25), "random vector");
    check_algebra(o, random_matrix(rng, 5, 24, 0.10), "random matrix");
  }
  o.require(vcounts == std::vector<std::size_t>{24, 12, 6, 1}, "vector counts {24,12,6,1}");
  o.require(mcounts == std::vector<std::size_t>{120, 60, 40, 20, 10},
            "matrix counts {120,60,40,20,10}");
  o.note("vector counts 24/12/6/1, matrix counts 120/60/40/20/10, 400 random patterns");
  return o;
}

Outcome optimizer_properties() {
  Outcome o;
  using P = ad::Parameter<double>;
  const auto make = [](std::vector<double> v) {
    const std::size_t n = v.size();
    return P("p", ad::ParamGroup::fusion, ad::Tensor<double>({1, n}, std::move(v)));
  };
  const AdamHyper hyper;

  // All-agreeing mask: the first step always agrees in sign.
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 1.0);
  bool exact = true;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> theta(32), g(32);
    for (auto& x : theta) x = normal(rng);
    for (auto& x : g) x = normal(rng);
    P a = make(theta), b = make(theta);
    for (std::size_t i = 0; i < 32; ++i) a.grad[i] = b.grad[i] = g[i];
    P* pa[] = {&a};
    P* pb[] = {&b};
    OptimizerState<double> sa, sb;
    cadamw_step<double>(pa, sa, {1e-3, 1e-3}, hyper, true);
    cadamw_step<double>(pb, sb, {1e-3, 1e-3}, hyper, false);
    // Independent AdamW first step: m_hat = g, v_hat = g^2.
    for (std::size_t i = 0; i < 32; ++i) {
      const double ref = theta[i] - 1e-3 * g[i] / (std::abs(g[i]) + hyper.eps) -
                         1e-3 * hyper.weight_decay * theta[i];
      exact = exact && a.value[i] == b.value[i] && std::abs(a.value[i] - ref) <= 1e-15;
    }
  }
  o.require(exact, "C-AdamW == AdamW under all-agreeing mask");

  // Sign disagreement after momentum builds up: decay only.
  P p = make({2.0, -1.5});
  P* pp[] = {&p};
  OptimizerState<double> st;
  p.grad[0] = 1.0;
  p.grad[1] = -1.0;
  cadamw_step<double>(pp, st, {0.01, 0.01}, hyper, true);
  const double before0 = p.value[0], before1 = p.value[1];
  p.grad[0] = -0.01;
  p.grad[1] = 0.01;
  cadamw_step<double>(pp, st, {0.01, 0.01}, hyper, true);
  o.require(p.value[0] == before0 - 0.01 * hyper.weight_decay * before0 &&
                p.value[1] == before1 - 0.01 * hyper.weight_decay * before1,
            "disagreeing coordinates receive only weight decay");

  P q = make({0.0});
  P* pq[] = {&q};
  OptimizerState<double> sq;
  AdamHyper no_decay = hyper;
  no_decay.weight_decay = 0.0;
  for (int s = 0; s < 200; ++s) {
    q.grad[0] = 2.0 * (q.value[0] - 3.0);
    cadamw_step<double>(pq, sq, {0.1, 0.1}, no_decay, true);
  }
  o.note("quadratic optimum 3, reached " + fmt("%.5f", q.value[0]) + " after 200 steps");
  o.require(std::abs(q.value[0] - 3.0) <= 1e-2, "quadratic within 1e-2");
  return o;
}

Outcome learning() {
  Outcome o;
  const auto t0 = Clock::now();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    SynthConfig sc;
    sc.seed = seed;
    const Dataset data = generate(sc).data;
    const Selection all = viewsel::testing::all_views();
    TrainConfig tc;
    tc.seed = seed;
    tc.validate_each_epoch = false;
    const auto result = train(data, all, FusionConfig{}, tc);
    const double val = *result.log.back().val_mae;
    const double oracle = oracle_mae(data, all);
    const double baseline = mean_baseline_mae(data, all);
    o.note("seed " + std::to_string(seed) + ": val " + fmt("%.3f", val) + " oracle " +
           fmt("%.3f", oracle) + " (x" + fmt("%.2f", val / oracle) + ") baseline " +
           fmt("%.3f", baseline));
    o.require(val <= 1.2 * oracle, "val <= 1.2 x oracle (seed " + std::to_string(seed) + ")");
    o.require(val < 0.5 * baseline, "val < 0.5 x baseline (seed " + std::to_string(seed) + ")");
  }
  o.require(seconds_since(t0) < 600.0, "runtime < 10 min");
  return o;
}

Outcome search_protocol() {
  Outcome o;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    SynthConfig sc;
    sc.seed = seed;
    const Dataset data = generate(sc).data;
    std::set<std::size_t> informative;
    for (const auto& iv : sc.informative_views) informative.insert(iv.view);

    SearchConfig search;
    search.n_candidates = 16;
    search.seed = seed;
    TrainConfig tc;
    const auto result = run_search(data, FusionConfig{}, tc, search);
    const auto* all = result.find("all views");
    std::size_t winners = 0;
    double best_winner = 1e300;
    for (const auto& c : result.ranked) {
      if (c.baseline || c.val_mae >= all->val_mae) continue;
      bool overlap = false;
      for (auto col : std::get<SelectionVector>(c.selection).columns()) {
        overlap = overlap || informative.contains(col);
      }
      if (overlap) {
        ++winners;
        best_winner = std::min(best_winner, c.val_mae);
      }
    }
    o.note("seed " + std::to_string(seed) + ": all views " + fmt("%.3f", all->val_mae) + ", " +
           std::to_string(winners) + " informative random candidates ahead" +
           (winners ? " (best " + fmt("%.3f", best_winner) + ")" : ""));
    o.require(winners >= 1, "informative candidate beats all views (seed " +
                                std::to_string(seed) + ")");
  }
  return o;
}

Outcome metrics() {
  Outcome o;
  const std::vector<double> p{1, 2, 3}, y{1, 2, 5};
  const auto m = compute_metrics(p, y);
  o.require(std::abs(m.mae - 2.0 / 3.0) <= 1e-15 && std::abs(m.rmse - std::sqrt(4.0 / 3.0)) <= 1e-15,
            "worked example");

  // Reports from a perturbed model on synthetic data, recomputed in long double.
  SynthConfig sc;
  sc.seed = 5;
  const Dataset data = generate(sc).data;
  const auto split = partition(data.entries);
  Rng rng(5);
  double worst = 0.0;
  std::size_t reports = 0;
  for (int i = 0; i < 4; ++i) {
    const Selection sel = i % 2 == 0 ? Selection(random_vector(rng, 24, 0.25))
                                     : Selection(random_matrix(rng, 5, 24, 0.1));
    FusionConfig fc;
    fc.pe_count = pe_count(sel);
    Regressor r;
    r.params = perturbed_params<float>(rng, fc, 0.2);
    r.selection = sel;
    r.scaler = {4.5, 2.9};
    for (const auto& entries : {split.val, split.test}) {
      const auto rep = evaluate(r, data, entries, sel);
      long double abs_sum = 0, sq_sum = 0;
      for (const auto& rec : rep.per_instance) {
        const long double d = static_cast<long double>(rec.prediction) - rec.label;
        abs_sum += std::fabs(d);
        sq_sum += d * d;
      }
      const auto n = static_cast<long double>(rep.per_instance.size());
      const double mae = static_cast<double>(abs_sum / n);
      const double rmse = static_cast<double>(std::sqrt(sq_sum / n));
      worst = std::max({worst, std::abs(mae - rep.mae), std::abs(rmse - rep.rmse)});
      o.require(rep.mae <= rep.rmse, "MAE <= RMSE");
      for (const auto& [crop, cm] : rep.per_crop) o.require(cm.mae <= cm.rmse, "per-crop MAE <= RMSE");
      ++reports;
    }
  }
  o.note("worked example MAE " + fmt("%.6f", m.mae) + " RMSE " + fmt("%.6f", m.rmse) +
         "; recomputation error " + fmt("%.1e", worst) + " over " + std::to_string(reports) +
         " reports");
  o.require(worst <= 1e-12, "recomputation within 1e-12");
  return o;
}

Outcome cost_accounting() {
  Outcome o;
  const FusionConfig cfg;
  bool increasing = true, quad = true;
  auto prev = account_forward(cfg, 1);
  for (std::size_t T = 2; T <= 240; ++T) {
    const auto c = account_forward(cfg, T);
    increasing = increasing && c.activation_bytes > prev.activation_bytes;
    prev = c;
  }
  for (std::size_t T = 1; T <= 120; ++T) {
    quad = quad && account_forward(cfg, 2 * T).attention_logit_bytes ==
                       4 * account_forward(cfg, T).attention_logit_bytes;
  }
  const auto big = account_forward(cfg, 120), small = account_forward(cfg, 5);
  o.require(increasing, "activation bytes strictly increase with T");
  o.require(quad, "attention-logit term scales 4x from T to 2T");
  o.require(big.activation_bytes > small.activation_bytes && big.macs > small.macs &&
                big.attention_logit_bytes > small.attention_logit_bytes,
            "T=120 costs more than T=5");
  o.note("T=120: " + fmt("%.1f", big.activation_bytes / 1024.0) + " KB, T=5: " +
         fmt("%.1f", small.activation_bytes / 1024.0) + " KB");
  return o;
}

std::vector<unsigned char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

template <class F>
bool throws_format_error(F&& f) {
  try {
    f();
  } catch (const FormatError&) {
    return true;
  } catch (...) {
    return false;
  }
  return false;
}

Outcome formats() {
  Outcome o;
  TempDir dir;
  SynthConfig sc;
  sc.seed = 9;
  const auto synth = generate(sc);
  write_synth(synth, dir.path());
  const auto cache = read_cache(dir / "cache.vspf").read_all();
  o.require(cache == synth.data.stacks, "cache values bit-exact");
  write_cache(cache, dir / "again.vspf");
  o.require(slurp(dir / "cache.vspf") == slurp(dir / "again.vspf"), "cache bytes stable");

  Rng rng(9);
  Regressor model;
  model.selection = random_matrix(rng, 5, 24, 0.1);
  FusionConfig fc;
  fc.pe_count = pe_count(model.selection);
  model.params = perturbed_params<float>(rng, fc, 0.2);
  model.scaler = {4.5, 2.87};
  save_checkpoint(model, dir / "m.vspc");
  const auto back = load_checkpoint(dir / "m.vspc");
  bool same = back.selection == model.selection && back.scaler == model.scaler;
  const auto a = model.params.parameters();
  const auto b = back.params.parameters();
  same = same && a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i) same = a[i]->value == b[i]->value;
  o.require(same, "checkpoint parameters bit-exact");
  save_checkpoint(back, dir / "m2.vspc");
  o.require(slurp(dir / "m.vspc") == slurp(dir / "m2.vspc"), "checkpoint bytes stable");

  auto bad = slurp(dir / "cache.vspf");
  bad[0] ^= 0x20;
  spit(dir / "bad.vspf", bad);
  auto badc = slurp(dir / "m.vspc");
  badc[4] = 'X';
  spit(dir / "bad.vspc", badc);
  o.require(throws_format_error([&] { read_cache(dir / "bad.vspf"); }), "corrupt cache magic");
  o.require(throws_format_error([&] { load_checkpoint(dir / "bad.vspc"); }),
            "corrupt checkpoint magic");
  o.note("cache " + std::to_string(slurp(dir / "cache.vspf").size()) + " B and checkpoint " +
         std::to_string(slurp(dir / "m.vspc").size()) + " B round-trip; corrupted magic rejected");
  return o;
}

}  // namespace

int main() {
  report("gradient correctness", gradient_correctness);
  report("rotation invariance of averaged inference", rotation_invariance);
  report("selection algebra vs brute force", selection_algebra);
  report("optimizer properties", optimizer_properties);
  report("metrics", metrics);
  report("cost accounting", cost_accounting);
  report("format round-trips", formats);
  report("learning at desk scale", learning);
  report("search protocol", search_protocol);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
