#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "viewsel/feature_store.hpp"
#include "viewsel/random.hpp"

namespace viewsel {

/// Binary mask over the views of one height level. At least one bit is set.
class SelectionVector {
 public:
  explicit SelectionVector(std::vector<std::uint8_t> bits);
  static SelectionVector from_columns(std::size_t views, std::span<const std::size_t> columns);

  std::size_t views() const { return bits_.size(); }
  bool test(std::size_t column) const { return bits_.at(column) != 0; }
  std::size_t popcount() const;
  std::vector<std::size_t> columns() const;
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  friend bool operator==(const SelectionVector&, const SelectionVector&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

/// Level x view mask. Rows may be empty but the whole matrix may not.
class SelectionMatrix {
 public:
  SelectionMatrix(std::size_t levels, std::size_t views, std::vector<std::uint8_t> bits);

  std::size_t levels() const { return levels_; }
  std::size_t views() const { return views_; }
  bool test(std::size_t level, std::size_t column) const {
    return bits_.at(level * views_ + column) != 0;
  }
  std::size_t popcount() const;
  std::vector<std::uint8_t> row(std::size_t level) const;
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  friend bool operator==(const SelectionMatrix&, const SelectionMatrix&) = default;

 private:
  std::size_t levels_;
  std::size_t views_;
  std::vector<std::uint8_t> bits_;
};

using Selection = std::variant<SelectionVector, SelectionMatrix>;

enum class SelectionMode { vector, matrix };

std::string_view to_string(SelectionMode mode);
SelectionMode parse_mode(std::string_view token);

SelectionMode mode_of(const Selection& sel);
std::size_t view_count(const Selection& sel);
std::size_t views_per_ring(const Selection& sel);
/// Size of the positional-encoding table a model needs for this selection.
std::size_t pe_count(const Selection& sel);

// ---------------------------------------------------------------------------
// Rotation group

/// Bit at column c moves to (c + k) mod V. Requires 0 <= k < V.
SelectionVector rotate(const SelectionVector& sel, std::size_t k);
/// Shared column shift for every row.
SelectionMatrix rotate(const SelectionMatrix& sel, std::size_t k);
Selection rotate(const Selection& sel, std::size_t k);
/// Independent shift per row (experimental; the default training path uses a shared shift).
SelectionMatrix rotate_rows(const SelectionMatrix& sel, std::span<const std::size_t> shifts);

template <class Sel>
std::vector<std::pair<std::size_t, Sel>> enumerate_rotations(const Sel& sel) {
  std::vector<std::pair<std::size_t, Sel>> out;
  out.reserve(sel.views());
  for (std::size_t k = 0; k < sel.views(); ++k) {
    out.emplace_back(k, rotate(sel, k));
  }
  return out;
}

/// Period of the pattern under rotation; always divides V.
std::size_t distinct_rotation_count(const SelectionVector& sel);
std::size_t distinct_rotation_count(const SelectionMatrix& sel);
std::size_t distinct_rotation_count(const Selection& sel);

// ---------------------------------------------------------------------------
// Pattern construction

enum class PatternKind { all, stride, first_only };

/// stride selects columns {0, n, 2n, ...}; n is ignored for the other kinds.
SelectionVector structured_pattern(PatternKind kind, std::size_t views, std::size_t n = 1);
/// Row l is the stride-n pattern rotated right by l * row_shift.
SelectionMatrix structured_matrix(std::size_t stride, std::size_t row_shift, std::size_t levels,
                                  std::size_t views);

/// Each bit set independently with probability p; all-zero draws are redrawn.
SelectionVector random_vector(Rng& rng, std::size_t views, double p);
SelectionMatrix random_matrix(Rng& rng, std::size_t levels, std::size_t views, double p);

// ---------------------------------------------------------------------------
// Application to features

struct Token {
  std::size_t pe_index = 0;
  std::size_t level = 0;
  std::size_t physical_view = 0;

  friend bool operator==(const Token&, const Token&) = default;
};

/// Tokens in canonical order. features is row-major (token, dim).
struct SelectedTokenSet {
  std::size_t dim = 0;
  std::vector<float> features;
  std::vector<Token> tokens;

  std::size_t size() const { return tokens.size(); }
  std::span<const float> feature(std::size_t i) const {
    return std::span<const float>(features).subspan(i * dim, dim);
  }
  friend bool operator==(const SelectedTokenSet&, const SelectedTokenSet&) = default;
};

/// Vector mode: one level slice; pe_index is the canonical column.
SelectedTokenSet apply_selection(const FeatureStack& stack, const SelectionVector& sel,
                                 std::size_t k, std::size_t level);
/// Matrix mode: pe_index = level * V + canonical column.
SelectedTokenSet apply_selection(const FeatureStack& stack, const SelectionMatrix& sel,
                                 std::size_t k);
/// Per-row shifts for the experimental matrix rotation.
SelectedTokenSet apply_selection(const FeatureStack& stack, const SelectionMatrix& sel,
                                 std::span<const std::size_t> row_shifts);
/// level is ignored in matrix mode.
SelectedTokenSet apply_selection(const FeatureStack& stack, const Selection& sel, std::size_t k,
                                 std::size_t level);

// ---------------------------------------------------------------------------
// Text format: one line of '0'/'1' per row.

std::string serialize(const SelectionVector& sel);
std::string serialize(const SelectionMatrix& sel);
std::string serialize(const Selection& sel);
SelectionVector parse_vector(std::string_view text, std::size_t views = 24);
SelectionMatrix parse_matrix(std::string_view text, std::size_t levels = 5, std::size_t views = 24);
/// One row parses as a vector, several rows as a matrix.
Selection parse_selection(std::string_view text);

Selection load_selection(const std::filesystem::path& path);
void save_selection(const Selection& sel, const std::filesystem::path& path);

}  // namespace viewsel
