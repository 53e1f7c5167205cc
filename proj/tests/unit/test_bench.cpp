#include <gtest/gtest.h>

#include "test_support.hpp"
#include "viewsel/bench.hpp"
#include "viewsel/errors.hpp"

using namespace viewsel;
using viewsel::testing::small_config;

TEST(CostAccounting, LogitBytesFollowClosedForm) {
  auto cfg = small_config(8, 24);
  for (std::size_t T : {1u, 2u, 7u, 24u, 120u}) {
    EXPECT_EQ(account_forward(cfg, T).attention_logit_bytes,
              cfg.n_layers * cfg.n_heads * T * T * 4);
  }
  cfg.n_layers = 1;
  EXPECT_EQ(account_forward(cfg, 1).attention_logit_bytes, cfg.n_heads * 4);
}

TEST(CostAccounting, DoublingTokensQuadruplesLogits) {
  const auto cfg = small_config(8, 24);
  for (std::size_t T : {3u, 6u, 12u}) {
    EXPECT_EQ(account_forward(cfg, 2 * T).attention_logit_bytes,
              4 * account_forward(cfg, T).attention_logit_bytes);
  }
}

TEST(CostAccounting, MonotoneInTokensAndWidth) {
  const auto cfg = small_config(8, 24);
  ForwardCost prev = account_forward(cfg, 1);
  for (std::size_t T = 2; T <= 120; ++T) {
    const auto c = account_forward(cfg, T);
    EXPECT_GT(c.activation_bytes, prev.activation_bytes);
    EXPECT_GT(c.macs, prev.macs);
    EXPECT_GT(c.activation_bytes, c.attention_logit_bytes);
    prev = c;
  }
  auto wide = cfg;
  wide.d_model *= 2;
  EXPECT_GT(account_forward(wide, 10).macs, account_forward(cfg, 10).macs);
  EXPECT_GT(account_forward(wide, 10).activation_bytes, account_forward(cfg, 10).activation_bytes);
}

TEST(CostAccounting, RejectsInvalidConfig) {
  auto cfg = small_config(8, 24);
  cfg.n_heads = 5;
  EXPECT_THROW(account_forward(cfg, 4), ConfigError);
}

TEST(Bench, ReportsFollowSelections) {
  const auto baselines = structured_baselines(SelectionMode::vector);
  TimingOptions timing;
  timing.warmups = 1;
  timing.repeats = 3;
  const auto reports = run_bench(small_config(8, 24), baselines, 5, 24, timing);
  ASSERT_EQ(reports.size(), baselines.size());
  for (std::size_t i = 0; i < reports.size(); ++i) {
    EXPECT_EQ(reports[i].name, baselines[i].name);
    EXPECT_EQ(reports[i].cost.tokens, view_count(baselines[i].selection));
    ASSERT_TRUE(reports[i].median_ms.has_value());
    EXPECT_GT(*reports[i].median_ms, 0.0);
    if (i > 0) {
      EXPECT_LT(reports[i].cost.activation_bytes, reports[i - 1].cost.activation_bytes);
    }
  }
  const auto untimed = run_bench(small_config(8, 24), baselines, 5, 24, std::nullopt);
  EXPECT_FALSE(untimed[0].median_ms.has_value());
  const auto table = format_bench_table(untimed);
  EXPECT_EQ(table.rfind("# batch size 1", 0), 0u);
  EXPECT_NE(table.find("first view"), std::string::npos);
}

TEST(Bench, TimingNeedsRepeats) {
  Rng rng(0);
  const auto params = init_params<float>(rng, small_config(8, 24));
  const auto stack = viewsel::testing::random_stack(rng, 1, 24, 8);
  const auto tokens = apply_selection(stack, viewsel::testing::all_views(), 0, 0);
  TimingOptions none;
  none.repeats = 0;
  EXPECT_THROW(time_forward(params, tokens, none), ConfigError);
}
