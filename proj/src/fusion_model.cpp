#include "viewsel/fusion_model.hpp"

#include <cmath>
#include <string>

#include "viewsel/errors.hpp"

namespace viewsel {

using ad::Graph;
using ad::ParamGroup;
using ad::Parameter;
using ad::Tensor;
using ad::Var;

void FusionConfig::validate() const {
  if (d_in == 0 || d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 ||
      head_hidden == 0 || pe_count == 0) {
    throw ConfigError("fusion config: all dimensions must be >= 1");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("fusion config: d_model " + std::to_string(d_model) +
                      " is not divisible by n_heads " + std::to_string(n_heads));
  }
  if (!use_projection && d_in != d_model) {
    throw ConfigError("fusion config: without projection d_in must equal d_model");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("fusion config: dropout must lie in [0, 1)");
  }
  if (!(layer_norm_eps > 0.0)) {
    throw ConfigError("fusion config: layer_norm_eps must be positive");
  }
}

template <class Real>
std::vector<Parameter<Real>*> FusionParams<Real>::parameters() {
  std::vector<Parameter<Real>*> out{&pe_table};
  if (config.use_projection) out.push_back(&projection);
  for (auto& l : layers) {
    for (auto* p : {&l.ln1_gain, &l.ln1_bias, &l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo,
                    &l.bo, &l.ln2_gain, &l.ln2_bias, &l.ff1_w, &l.ff1_b, &l.ff2_w, &l.ff2_b}) {
      out.push_back(p);
    }
  }
  for (auto* p : {&final_gain, &final_bias, &head_w1, &head_b1, &head_slope, &head_w2, &head_b2}) {
    out.push_back(p);
  }
  return out;
}

template <class Real>
std::vector<const Parameter<Real>*> FusionParams<Real>::parameters() const {
  auto mut = const_cast<FusionParams*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

template <class Real>
std::size_t FusionParams<Real>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

template <class Real>
void FusionParams<Real>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

namespace {

constexpr double kInitStd = 0.02;

template <class Real>
Tensor<Real> truncated_normal(Rng& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> normal(0.0, kInitStd);
  Tensor<Real> t(rows, cols);
  for (auto& v : t.data()) {
    double x = 0.0;
    do {
      x = normal(rng);
    } while (std::abs(x) > 2.0 * kInitStd);
    v = static_cast<Real>(x);
  }
  return t;
}

template <class Real>
Tensor<Real> plain_normal(Rng& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> normal(0.0, kInitStd);
  Tensor<Real> t(rows, cols);
  for (auto& v : t.data()) v = static_cast<Real>(normal(rng));
  return t;
}

}  // namespace

template <class Real>
FusionParams<Real> init_params(Rng& rng, const FusionConfig& config) {
  config.validate();
  const std::size_t d = config.d_model;
  const auto fusion = ParamGroup::fusion;
  const auto head = ParamGroup::head;
  const auto weight = [&rng](std::string name, ParamGroup g, std::size_t r, std::size_t c) {
    return Parameter<Real>(std::move(name), g, truncated_normal<Real>(rng, r, c));
  };
  const auto filled = [](std::string name, ParamGroup g, std::size_t c, Real v) {
    return Parameter<Real>(std::move(name), g, Tensor<Real>(1, c, v));
  };

  FusionParams<Real> p;
  p.config = config;
  p.pe_table = Parameter<Real>("pe_table", fusion, plain_normal<Real>(rng, config.pe_count, d));
  if (config.use_projection) {
    p.projection = weight("projection", fusion, config.d_in, d);
  }
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    const std::string pre = "layers." + std::to_string(i) + ".";
    EncoderLayerParams<Real> l;
    l.ln1_gain = filled(pre + "ln1.gain", fusion, d, Real(1));
    l.ln1_bias = filled(pre + "ln1.bias", fusion, d, Real(0));
    l.wq = weight(pre + "attn.wq", fusion, d, d);
    l.bq = filled(pre + "attn.bq", fusion, d, Real(0));
    l.wk = weight(pre + "attn.wk", fusion, d, d);
    l.bk = filled(pre + "attn.bk", fusion, d, Real(0));
    l.wv = weight(pre + "attn.wv", fusion, d, d);
    l.bv = filled(pre + "attn.bv", fusion, d, Real(0));
    l.wo = weight(pre + "attn.wo", fusion, d, d);
    l.bo = filled(pre + "attn.bo", fusion, d, Real(0));
    l.ln2_gain = filled(pre + "ln2.gain", fusion, d, Real(1));
    l.ln2_bias = filled(pre + "ln2.bias", fusion, d, Real(0));
    l.ff1_w = weight(pre + "ff.w1", fusion, d, config.d_ff);
    l.ff1_b = filled(pre + "ff.b1", fusion, config.d_ff, Real(0));
    l.ff2_w = weight(pre + "ff.w2", fusion, config.d_ff, d);
    l.ff2_b = filled(pre + "ff.b2", fusion, d, Real(0));
    p.layers.push_back(std::move(l));
  }
  p.final_gain = filled("final_ln.gain", fusion, d, Real(1));
  p.final_bias = filled("final_ln.bias", fusion, d, Real(0));
  p.head_w1 = weight("head.w1", head, d, config.head_hidden);
  p.head_b1 = filled("head.b1", head, config.head_hidden, Real(0));
  p.head_slope = filled("head.prelu", head, config.head_hidden, Real(0.25));
  p.head_w2 = weight("head.w2", head, config.head_hidden, 1);
  p.head_b2 = filled("head.b2", head, 1, Real(0));
  return p;
}

namespace {

// Shared body of the trainable and the read-only forward. `bind` turns a
// parameter into a graph leaf.
template <class Real, class Params, class Bind>
Var build_forward(Graph<Real>& g, Params& p, const SelectedTokenSet& tokens, bool train, Rng& rng,
                  Bind&& bind) {
  const FusionConfig& cfg = p.config;
  const std::size_t n_tokens = tokens.size();
  if (n_tokens == 0) {
    throw PreconditionError("fusion forward: empty token set");
  }
  if (tokens.dim != cfg.d_in) {
    throw ShapeError("fusion forward: token dim " + std::to_string(tokens.dim) +
                     " != d_in " + std::to_string(cfg.d_in));
  }
  std::vector<std::size_t> pe_rows(n_tokens);
  for (std::size_t i = 0; i < n_tokens; ++i) {
    pe_rows[i] = tokens.tokens[i].pe_index;
    if (pe_rows[i] >= cfg.pe_count) {
      throw RangeError("fusion forward: pe_index " + std::to_string(pe_rows[i]) +
                       " >= pe_count " + std::to_string(cfg.pe_count));
    }
  }
  const Real rate = static_cast<Real>(cfg.dropout);
  const Real eps = static_cast<Real>(cfg.layer_norm_eps);

  const auto norm = [&](Var x, auto& gain, auto& bias) {
    return g.add(g.mul(g.layer_norm(x, eps), bind(gain)), bind(bias));
  };
  const auto linear = [&](Var x, auto& w, auto& b) { return g.add(g.matmul(x, bind(w)), bind(b)); };

  Tensor<Real> x_in(n_tokens, cfg.d_in);
  for (std::size_t i = 0; i < tokens.features.size(); ++i) {
    x_in[i] = static_cast<Real>(tokens.features[i]);
  }
  Var x = g.constant(std::move(x_in));
  if (cfg.use_projection) {
    x = g.matmul(x, bind(p.projection));
  }
  x = g.add(x, g.gather_rows(bind(p.pe_table), pe_rows));

  const std::size_t head_dim = cfg.d_model / cfg.n_heads;
  const Real attn_scale = Real(1) / std::sqrt(static_cast<Real>(head_dim));
  std::vector<Var> heads(cfg.n_heads);
  for (auto& layer : p.layers) {
    const Var h = norm(x, layer.ln1_gain, layer.ln1_bias);
    const Var q = linear(h, layer.wq, layer.bq);
    const Var k = linear(h, layer.wk, layer.bk);
    const Var v = linear(h, layer.wv, layer.bv);
    for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
      const std::size_t lo = hd * head_dim, hi = lo + head_dim;
      const Var logits = g.scale(g.matmul_nt(g.slice_cols(q, lo, hi), g.slice_cols(k, lo, hi)),
                                 attn_scale);
      const Var weights = g.dropout(g.softmax(logits, 1), rate, train, rng);
      heads[hd] = g.matmul(weights, g.slice_cols(v, lo, hi));
    }
    const Var attn = linear(g.concat_cols(heads), layer.wo, layer.bo);
    x = g.add(x, attn);

    const Var h2 = norm(x, layer.ln2_gain, layer.ln2_bias);
    const Var ff = linear(g.gelu(linear(h2, layer.ff1_w, layer.ff1_b)), layer.ff2_w, layer.ff2_b);
    x = g.add(x, g.dropout(ff, rate, train, rng));
  }

  const Var pooled = g.mean(norm(x, p.final_gain, p.final_bias), 0);
  Var hidden = g.prelu(linear(pooled, p.head_w1, p.head_b1), bind(p.head_slope));
  hidden = g.dropout(hidden, rate, train, rng);
  return linear(hidden, p.head_w2, p.head_b2);
}

}  // namespace

template <class Real>
Var forward_graph(Graph<Real>& graph, FusionParams<Real>& params, const SelectedTokenSet& tokens,
                  bool train, Rng& rng) {
  return build_forward(graph, params, tokens, train, rng,
                       [&graph](Parameter<Real>& p) { return graph.param(p); });
}

template <class Real>
Real forward(const FusionParams<Real>& params, const SelectedTokenSet& tokens, bool train,
             Rng& rng) {
  Graph<Real> graph;
  const Var out = build_forward(graph, params, tokens, train, rng,
                                [&graph](const Parameter<Real>& p) { return graph.constant(p.value); });
  return graph.value(out)[0];
}

template <class Real>
Real forward_eval(const FusionParams<Real>& params, const SelectedTokenSet& tokens) {
  Rng unused(0);
  return forward(params, tokens, false, unused);
}

template struct FusionParams<float>;
template struct FusionParams<double>;

template FusionParams<float> init_params<float>(Rng&, const FusionConfig&);
template FusionParams<double> init_params<double>(Rng&, const FusionConfig&);
template Var forward_graph<float>(Graph<float>&, FusionParams<float>&, const SelectedTokenSet&,
                                  bool, Rng&);
template Var forward_graph<double>(Graph<double>&, FusionParams<double>&,
                                   const SelectedTokenSet&, bool, Rng&);
template float forward<float>(const FusionParams<float>&, const SelectedTokenSet&, bool, Rng&);
template double forward<double>(const FusionParams<double>&, const SelectedTokenSet&, bool, Rng&);
template float forward_eval<float>(const FusionParams<float>&, const SelectedTokenSet&);
template double forward_eval<double>(const FusionParams<double>&, const SelectedTokenSet&);

}  // namespace viewsel
