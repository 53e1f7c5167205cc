#include <gtest/gtest.h>

#include <set>

#include "test_support.hpp"
#include "viewsel/errors.hpp"
#include "viewsel/selection.hpp"

using namespace viewsel;
using viewsel::testing::random_stack;
using viewsel::testing::TempDir;

namespace {

// Independent oracle: out[(c + k) mod V] = in[c].
std::vector<std::uint8_t> brute_rotate(const std::vector<std::uint8_t>& bits, std::size_t k) {
  std::vector<std::uint8_t> out(bits.size());
  for (std::size_t c = 0; c < bits.size(); ++c) out[(c + k) % bits.size()] = bits[c];
  return out;
}

std::size_t brute_distinct(const std::vector<std::uint8_t>& bits, std::size_t levels) {
  const std::size_t views = bits.size() / levels;
  std::set<std::vector<std::uint8_t>> seen;
  for (std::size_t k = 0; k < views; ++k) {
    std::vector<std::uint8_t> all;
    for (std::size_t l = 0; l < levels; ++l) {
      const std::vector<std::uint8_t> row(bits.begin() + l * views, bits.begin() + (l + 1) * views);
      const auto r = brute_rotate(row, k);
      all.insert(all.end(), r.begin(), r.end());
    }
    seen.insert(all);
  }
  return seen.size();
}

// physical_view refers to the stack it was read from, so only compare what the model sees.
bool same_model_input(const SelectedTokenSet& a, const SelectedTokenSet& b) {
  if (a.features != b.features || a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.tokens[i].pe_index != b.tokens[i].pe_index || a.tokens[i].level != b.tokens[i].level) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST(Selection, RotationMatchesBruteForce) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto sel = random_vector(rng, 24, 0.3);
    for (const auto& [k, rotated] : enumerate_rotations(sel)) {
      EXPECT_EQ(rotated.bits(), brute_rotate(sel.bits(), k));
    }
    EXPECT_EQ(distinct_rotation_count(sel), brute_distinct(sel.bits(), 1));
  }
}

TEST(Selection, MatrixRotationSharesShift) {
  Rng rng(6);
  const auto m = random_matrix(rng, 5, 24, 0.2);
  const auto r = rotate(m, 7);
  for (std::size_t l = 0; l < 5; ++l) EXPECT_EQ(r.row(l), brute_rotate(m.row(l), 7));
  const std::vector<std::size_t> shifts{0, 1, 2, 3, 4};
  const auto rr = rotate_rows(m, shifts);
  for (std::size_t l = 0; l < 5; ++l) EXPECT_EQ(rr.row(l), brute_rotate(m.row(l), l));
  EXPECT_EQ(distinct_rotation_count(m), brute_distinct(m.bits(), 5));
}

TEST(Selection, RotationOutOfRange) {
  EXPECT_THROW(rotate(structured_pattern(PatternKind::all, 24), 24), RangeError);
}

TEST(Selection, StructuredVectorCounts) {
  EXPECT_EQ(structured_pattern(PatternKind::all, 24).popcount(), 24u);
  EXPECT_EQ(structured_pattern(PatternKind::stride, 24, 2).popcount(), 12u);
  EXPECT_EQ(structured_pattern(PatternKind::stride, 24, 4).popcount(), 6u);
  EXPECT_EQ(structured_pattern(PatternKind::first_only, 24).popcount(), 1u);
  EXPECT_EQ(distinct_rotation_count(structured_pattern(PatternKind::stride, 24, 4)), 4u);
  EXPECT_EQ(distinct_rotation_count(structured_pattern(PatternKind::all, 24)), 1u);
  EXPECT_EQ(distinct_rotation_count(structured_pattern(PatternKind::first_only, 24)), 24u);
}

TEST(Selection, StructuredMatrixRowShift) {
  const auto m = structured_matrix(6, 1, 5, 24);
  EXPECT_EQ(m.popcount(), 20u);
  for (std::size_t l = 0; l < 5; ++l) {
    EXPECT_TRUE(m.test(l, l));
    EXPECT_TRUE(m.test(l, (l + 6) % 24));
  }
  EXPECT_EQ(structured_matrix(12, 2, 5, 24).popcount(), 10u);
  EXPECT_TRUE(structured_matrix(12, 2, 5, 24).test(3, 6));
}

TEST(Selection, RandomDensityMonteCarlo) {
  Rng rng(11);
  double total = 0.0;
  const int draws = 2000;
  for (int i = 0; i < draws; ++i) total += static_cast<double>(random_vector(rng, 24, 0.25).popcount());
  const double mean = total / draws;
  EXPECT_GE(mean, 5.0);
  EXPECT_LE(mean, 7.0);
  EXPECT_THROW(random_vector(rng, 24, 0.0), RangeError);
  EXPECT_THROW(random_vector(rng, 24, 1.0), RangeError);
}

TEST(Selection, RejectsEmpty) {
  EXPECT_THROW(SelectionVector(std::vector<std::uint8_t>(24, 0)), ValidationError);
  EXPECT_THROW(SelectionMatrix(5, 24, std::vector<std::uint8_t>(120, 0)), ValidationError);
  std::vector<std::uint8_t> one_row(120, 0);
  one_row[30] = 1;
  EXPECT_NO_THROW(SelectionMatrix(5, 24, one_row));
}

TEST(Selection, TextRoundTripAndErrors) {
  TempDir dir;
  Rng rng(2);
  const Selection v = random_vector(rng, 24, 0.3);
  const Selection m = random_matrix(rng, 5, 24, 0.1);
  EXPECT_EQ(parse_selection(serialize(v)), v);
  EXPECT_EQ(parse_selection(serialize(m)), m);
  save_selection(m, dir / "m.txt");
  EXPECT_EQ(load_selection(dir / "m.txt"), m);
  EXPECT_THROW(parse_vector("10101"), ParseError);
  EXPECT_THROW(parse_vector(std::string(23, '1') + "2"), ParseError);
  EXPECT_THROW(parse_matrix(std::string(24, '1')), ParseError);
}

TEST(Selection, CanonicalFrameTokens) {
  Rng rng(3);
  const auto stack = random_stack(rng, 5, 24, 4);
  const auto sel = SelectionVector::from_columns(24, std::vector<std::size_t>{0, 5, 20});
  const auto tokens = apply_selection(stack, sel, 6, 2);
  ASSERT_EQ(tokens.size(), 3u);
  const std::size_t expected_views[] = {6, 11, 2};
  const std::size_t expected_pe[] = {0, 5, 20};
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(tokens.tokens[i].pe_index, expected_pe[i]);
    EXPECT_EQ(tokens.tokens[i].physical_view, expected_views[i]);
    const auto f = tokens.feature(i);
    const auto e = stack.embedding(2, expected_views[i]);
    EXPECT_TRUE(std::equal(f.begin(), f.end(), e.begin()));
  }

  std::vector<std::uint8_t> bits(120, 0);
  bits[1 * 24 + 3] = 1;
  const SelectionMatrix m(5, 24, bits);
  const auto mt = apply_selection(stack, m, 23);
  ASSERT_EQ(mt.size(), 1u);
  EXPECT_EQ(mt.tokens[0].pe_index, 24u + 3u);
  EXPECT_EQ(mt.tokens[0].physical_view, 2u);
  EXPECT_EQ(mt.tokens[0].level, 1u);
}

TEST(Selection, ApplyIsEquivariantUnderStackRotation) {
  Rng rng(4);
  const auto stack = random_stack(rng, 5, 24, 3);
  const Selection v = random_vector(rng, 24, 0.3);
  const Selection m = random_matrix(rng, 5, 24, 0.1);
  for (std::size_t r = 0; r < 24; ++r) {
    const auto rotated = rotate_views(stack, r);
    for (std::size_t k = 0; k < 24; ++k) {
      EXPECT_TRUE(same_model_input(apply_selection(rotated, v, k, 1),
                                   apply_selection(stack, v, (k + r) % 24, 1)));
      EXPECT_TRUE(same_model_input(apply_selection(rotated, m, k, 0),
                                   apply_selection(stack, m, (k + r) % 24, 0)));
    }
  }
}

TEST(Selection, ModeHelpers) {
  const Selection v = structured_pattern(PatternKind::stride, 24, 2);
  const Selection m = structured_matrix(3, 1, 5, 24);
  EXPECT_EQ(mode_of(v), SelectionMode::vector);
  EXPECT_EQ(pe_count(v), 24u);
  EXPECT_EQ(pe_count(m), 120u);
  EXPECT_EQ(view_count(m), 40u);
  EXPECT_EQ(parse_mode("matrix"), SelectionMode::matrix);
  EXPECT_THROW(parse_mode("grid"), ValidationError);
}
