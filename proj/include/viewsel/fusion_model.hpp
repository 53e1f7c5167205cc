#pragma once

#include <cstddef>
#include <vector>

#include "viewsel/autodiff.hpp"
#include "viewsel/random.hpp"
#include "viewsel/selection.hpp"

namespace viewsel {

/// Shape and regularization of the fusion predictor.
struct FusionConfig {
  std::size_t d_in = 32;
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 8;
  std::size_t d_ff = 128;
  double dropout = 0.0;
  /// V for vector mode, L * V for matrix mode.
  std::size_t pe_count = 24;
  bool use_projection = true;
  std::size_t head_hidden = 64;
  double layer_norm_eps = 1e-5;

  void validate() const;
  friend bool operator==(const FusionConfig&, const FusionConfig&) = default;
};

template <class Real>
struct EncoderLayerParams {
  ad::Parameter<Real> ln1_gain, ln1_bias;
  ad::Parameter<Real> wq, bq, wk, bk, wv, bv, wo, bo;
  ad::Parameter<Real> ln2_gain, ln2_bias;
  ad::Parameter<Real> ff1_w, ff1_b, ff2_w, ff2_b;
};

/// Trainable state. `projection` is left empty when the config disables it.
template <class Real>
struct FusionParams {
  FusionConfig config;
  ad::Parameter<Real> pe_table;
  ad::Parameter<Real> projection;
  std::vector<EncoderLayerParams<Real>> layers;
  ad::Parameter<Real> final_gain, final_bias;
  ad::Parameter<Real> head_w1, head_b1, head_slope, head_w2, head_b2;

  /// Every parameter in a fixed order (checkpoint and optimizer order).
  std::vector<ad::Parameter<Real>*> parameters();
  std::vector<const ad::Parameter<Real>*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  template <class Other>
  FusionParams<Other> cast() const;
};

/// Truncated N(0, 0.02^2) weights, zero biases, N(0, 0.02^2) positional table,
/// unit layer-norm gains and PReLU slopes of 0.25.
template <class Real>
FusionParams<Real> init_params(Rng& rng, const FusionConfig& config);

/// Records one forward pass on `graph`, binding parameters as trainable leaves.
template <class Real>
ad::Var forward_graph(ad::Graph<Real>& graph, FusionParams<Real>& params,
                      const SelectedTokenSet& tokens, bool train, Rng& rng);

/// Forward pass without gradient bookkeeping on the parameters.
template <class Real>
Real forward(const FusionParams<Real>& params, const SelectedTokenSet& tokens, bool train,
             Rng& rng);

/// Evaluation-mode forward (dropout off, no randomness).
template <class Real>
Real forward_eval(const FusionParams<Real>& params, const SelectedTokenSet& tokens);

// ---------------------------------------------------------------------------

template <class Real>
template <class Other>
FusionParams<Other> FusionParams<Real>::cast() const {
  FusionParams<Other> out;
  out.config = config;
  out.layers.resize(layers.size());
  auto src = parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    std::vector<Other> data(src[i]->value.data().begin(), src[i]->value.data().end());
    *dst[i] = ad::Parameter<Other>(src[i]->name, src[i]->group,
                                   ad::Tensor<Other>(src[i]->value.shape(), std::move(data)));
  }
  return out;
}

extern template struct FusionParams<float>;
extern template struct FusionParams<double>;

}  // namespace viewsel
