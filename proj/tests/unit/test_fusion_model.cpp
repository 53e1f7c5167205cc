#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"
#include "viewsel/errors.hpp"
#include "viewsel/fusion_model.hpp"

using namespace viewsel;
using viewsel::testing::perturbed_params;
using viewsel::testing::random_stack;
using viewsel::testing::small_config;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const ad::Tensor<double>& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t(r, c);
  return m;
}

Mat matmul(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

Mat affine(const Mat& x, const ad::Parameter<double>& w, const ad::Parameter<double>& b) {
  Mat out = matmul(x, to_mat(w.value));
  for (auto& row : out)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b.value[j];
  return out;
}

Mat norm(const Mat& x, const ad::Parameter<double>& gain, const ad::Parameter<double>& bias,
         double eps) {
  Mat out = x;
  for (auto& row : out) {
    double mu = 0.0, var = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(row.size());
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) {
      row[j] = (row[j] - mu) / std::sqrt(var + eps) * gain.value[j] + bias.value[j];
    }
  }
  return out;
}

// Straight-line reimplementation of the pre-norm encoder and regression head.
double reference_forward(const FusionParams<double>& p, const SelectedTokenSet& tokens) {
  const auto& cfg = p.config;
  const std::size_t T = tokens.size(), d = cfg.d_model, hd = d / cfg.n_heads;
  Mat x(T, std::vector<double>(cfg.d_in));
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < cfg.d_in; ++j) x[i][j] = tokens.feature(i)[j];
  if (cfg.use_projection) x = matmul(x, to_mat(p.projection.value));
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < d; ++j) x[i][j] += p.pe_table.value(tokens.tokens[i].pe_index, j);

  for (const auto& l : p.layers) {
    const Mat h = norm(x, l.ln1_gain, l.ln1_bias, cfg.layer_norm_eps);
    const Mat q = affine(h, l.wq, l.bq), k = affine(h, l.wk, l.bk), v = affine(h, l.wv, l.bv);
    Mat concat(T, std::vector<double>(d, 0.0));
    for (std::size_t head = 0; head < cfg.n_heads; ++head) {
      for (std::size_t i = 0; i < T; ++i) {
        std::vector<double> s(T);
        double mx = -1e300;
        for (std::size_t j = 0; j < T; ++j) {
          double dot = 0.0;
          for (std::size_t c = head * hd; c < (head + 1) * hd; ++c) dot += q[i][c] * k[j][c];
          s[j] = dot / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (auto& e : s) z += (e = std::exp(e - mx));
        for (std::size_t j = 0; j < T; ++j)
          for (std::size_t c = head * hd; c < (head + 1) * hd; ++c)
            concat[i][c] += s[j] / z * v[j][c];
      }
    }
    const Mat attn = affine(concat, l.wo, l.bo);
    for (std::size_t i = 0; i < T; ++i)
      for (std::size_t j = 0; j < d; ++j) x[i][j] += attn[i][j];
    Mat ff = affine(norm(x, l.ln2_gain, l.ln2_bias, cfg.layer_norm_eps), l.ff1_w, l.ff1_b);
    for (auto& row : ff)
      for (auto& e : row) e = 0.5 * e * (1.0 + std::erf(e / std::sqrt(2.0)));
    ff = affine(ff, l.ff2_w, l.ff2_b);
    for (std::size_t i = 0; i < T; ++i)
      for (std::size_t j = 0; j < d; ++j) x[i][j] += ff[i][j];
  }
  const Mat fin = norm(x, p.final_gain, p.final_bias, cfg.layer_norm_eps);
  Mat pooled(1, std::vector<double>(d, 0.0));
  for (const auto& row : fin)
    for (std::size_t j = 0; j < d; ++j) pooled[0][j] += row[j] / static_cast<double>(T);
  Mat hidden = affine(pooled, p.head_w1, p.head_b1);
  for (std::size_t j = 0; j < hidden[0].size(); ++j) {
    if (hidden[0][j] <= 0) hidden[0][j] *= p.head_slope.value[j];
  }
  return affine(hidden, p.head_w2, p.head_b2)[0][0];
}

SelectedTokenSet tokens_for(Rng& rng, std::size_t dim, const SelectionVector& sel, std::size_t k) {
  const auto stack = random_stack(rng, 1, sel.views(), dim);
  return apply_selection(stack, sel, k, 0);
}

}  // namespace

TEST(FusionModel, MatchesReferenceForward) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto cfg = small_config(8, 24);
    cfg.use_projection = seed % 2 == 0;
    if (!cfg.use_projection) cfg.d_in = cfg.d_model;
    const auto params = perturbed_params<double>(rng, cfg, 0.3);
    const auto sel = random_vector(rng, 24, 0.3);
    const auto tokens = tokens_for(rng, cfg.d_in, sel, seed * 5 % 24);
    const double got = forward_eval(params, tokens);
    EXPECT_NEAR(got, reference_forward(params, tokens), 1e-10 * std::max(1.0, std::abs(got)));
  }
}

TEST(FusionModel, GraphAndReadOnlyForwardAgree) {
  Rng rng(9);
  const auto cfg = small_config(6, 24);
  auto params = perturbed_params<double>(rng, cfg, 0.2);
  const auto tokens = tokens_for(rng, 6, viewsel::testing::all_views(), 0);
  ad::Graph<double> g;
  Rng unused(0);
  const auto out = forward_graph(g, params, tokens, false, unused);
  EXPECT_EQ(g.value(out)[0], forward_eval(params, tokens));
}

TEST(FusionModel, ParameterGradientsMatchFiniteDifferences) {
  Rng rng(4);
  auto cfg = small_config(4, 24);
  cfg.n_layers = 1;
  auto params = perturbed_params<double>(rng, cfg, 0.3);
  const auto tokens = tokens_for(rng, 4, random_vector(rng, 24, 0.2), 3);
  auto ptrs = params.parameters();
  const auto result = ad::grad_check(
      [&](ad::Graph<double>& g) {
        Rng unused(0);
        const auto pred = forward_graph(g, params, tokens, false, unused);
        return g.l2_loss(pred, g.constant(ad::Tensor<double>::scalar(0.5)));
      },
      ptrs);
  EXPECT_LT(result.max_relative_error, 1e-6) << result.worst_parameter;
  EXPECT_EQ(result.checked, params.parameter_count());
}

TEST(FusionModel, TokenOrderIsIrrelevantWithinCanonicalIndices) {
  // Attention plus mean pooling is permutation invariant once PE indices travel with tokens.
  Rng rng(5);
  const auto cfg = small_config(4, 24);
  const auto params = perturbed_params<double>(rng, cfg, 0.3);
  auto tokens = tokens_for(rng, 4, random_vector(rng, 24, 0.4), 0);
  ASSERT_GE(tokens.size(), 2u);
  auto swapped = tokens;
  std::swap(swapped.tokens[0], swapped.tokens[1]);
  for (std::size_t j = 0; j < 4; ++j) std::swap(swapped.features[j], swapped.features[4 + j]);
  EXPECT_NEAR(forward_eval(params, tokens), forward_eval(params, swapped), 1e-12);
}

TEST(FusionModel, PositionalTableMatters) {
  Rng rng(6);
  const auto cfg = small_config(4, 24);
  const auto params = perturbed_params<double>(rng, cfg, 0.3);
  auto tokens = tokens_for(rng, 4, random_vector(rng, 24, 0.4), 0);
  auto moved = tokens;
  for (auto& t : moved.tokens) t.pe_index = (t.pe_index + 1) % 24;
  EXPECT_GT(std::abs(forward_eval(params, tokens) - forward_eval(params, moved)), 1e-6);
}

TEST(FusionModel, InitShapesAndGroups) {
  Rng rng(1);
  const auto cfg = small_config(8, 120);
  const auto p = init_params<float>(rng, cfg);
  EXPECT_EQ(p.pe_table.value.shape(), (std::vector<std::size_t>{120, 16}));
  EXPECT_EQ(p.projection.value.shape(), (std::vector<std::size_t>{8, 16}));
  EXPECT_EQ(p.layers.size(), 2u);
  EXPECT_EQ(p.head_slope.value[0], 0.25F);
  EXPECT_EQ(p.head_w1.group, ad::ParamGroup::head);
  EXPECT_EQ(p.layers[0].wq.group, ad::ParamGroup::fusion);
  for (float w : p.layers[1].ff1_w.value.data()) EXPECT_LE(std::abs(w), 0.04F);
  const std::size_t per_layer = 4 * (16 * 16 + 16) + 4 * 16 + (16 * 32 + 32) + (32 * 16 + 16);
  EXPECT_EQ(p.parameter_count(),
            120 * 16 + 8 * 16 + 2 * per_layer + 2 * 16 + (16 * 16 + 16) + 16 + 16 + 1);
}

TEST(FusionModel, CastPreservesValues) {
  Rng rng(2);
  const auto p = init_params<float>(rng, small_config(4, 24));
  const auto d = p.cast<double>();
  const auto back = d.cast<float>();
  const auto a = p.parameters();
  const auto b = back.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]->name, b[i]->name);
    EXPECT_EQ(a[i]->value, b[i]->value);
  }
}

TEST(FusionModel, DropoutOnlyInTraining) {
  Rng rng(3);
  auto cfg = small_config(4, 24);
  cfg.dropout = 0.5;
  const auto p = perturbed_params<double>(rng, cfg, 0.3);
  const auto tokens = tokens_for(rng, 4, viewsel::testing::all_views(), 0);
  Rng a(1), b(2);
  EXPECT_EQ(forward(p, tokens, false, a), forward(p, tokens, false, b));
  EXPECT_NE(forward(p, tokens, true, a), forward(p, tokens, true, b));
}

TEST(FusionModel, ForwardErrors) {
  Rng rng(3);
  const auto p = init_params<float>(rng, small_config(4, 24));
  SelectedTokenSet empty;
  empty.dim = 4;
  EXPECT_THROW(forward_eval(p, empty), PreconditionError);
  EXPECT_THROW(forward_eval(p, tokens_for(rng, 5, viewsel::testing::all_views(), 0)), ShapeError);
  auto bad = tokens_for(rng, 4, viewsel::testing::all_views(), 0);
  bad.tokens[0].pe_index = 24;
  EXPECT_THROW(forward_eval(p, bad), RangeError);
}

TEST(FusionModel, ConfigValidation) {
  auto cfg = small_config(4, 24);
  cfg.n_heads = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config(4, 24);
  cfg.use_projection = false;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config(4, 24);
  cfg.dropout = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
