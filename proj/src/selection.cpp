#include "viewsel/selection.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "viewsel/errors.hpp"

namespace viewsel {

namespace {

std::size_t count_bits(const std::vector<std::uint8_t>& bits) {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

void check_bits(const std::vector<std::uint8_t>& bits) {
  for (const auto b : bits) {
    if (b > 1) {
      throw ValidationError("selection bits must be 0 or 1");
    }
  }
}

void check_shift(std::size_t k, std::size_t views) {
  if (k >= views) {
    throw RangeError("rotation " + std::to_string(k) + " out of range [0, " +
                     std::to_string(views) + ")");
  }
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    auto line = text.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
    pos = eol + 1;
  }
  return lines;
}

std::vector<std::uint8_t> parse_row(std::string_view line, std::size_t views) {
  if (line.size() != views) {
    throw ParseError("selection row has " + std::to_string(line.size()) + " characters, expected " +
                     std::to_string(views));
  }
  std::vector<std::uint8_t> bits(views);
  for (std::size_t c = 0; c < views; ++c) {
    if (line[c] == '1') {
      bits[c] = 1;
    } else if (line[c] != '0') {
      throw ParseError(std::string("selection row contains foreign character '") + line[c] + "'");
    }
  }
  return bits;
}

}  // namespace

// ---------------------------------------------------------------------------

SelectionVector::SelectionVector(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  check_bits(bits_);
  if (count_bits(bits_) == 0) {
    throw ValidationError("selection vector must select at least one view");
  }
}

SelectionVector SelectionVector::from_columns(std::size_t views,
                                              std::span<const std::size_t> columns) {
  std::vector<std::uint8_t> bits(views, 0);
  for (const auto c : columns) {
    if (c >= views) {
      throw RangeError("column " + std::to_string(c) + " out of range");
    }
    bits[c] = 1;
  }
  return SelectionVector(std::move(bits));
}

std::size_t SelectionVector::popcount() const { return count_bits(bits_); }

std::vector<std::size_t> SelectionVector::columns() const {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < bits_.size(); ++c) {
    if (bits_[c]) out.push_back(c);
  }
  return out;
}

SelectionMatrix::SelectionMatrix(std::size_t levels, std::size_t views,
                                 std::vector<std::uint8_t> bits)
    : levels_(levels), views_(views), bits_(std::move(bits)) {
  if (levels_ == 0 || views_ == 0 || bits_.size() != levels_ * views_) {
    throw ShapeError("selection matrix bits do not match levels x views");
  }
  check_bits(bits_);
  if (count_bits(bits_) == 0) {
    throw ValidationError("selection matrix must select at least one view");
  }
}

std::size_t SelectionMatrix::popcount() const { return count_bits(bits_); }

std::vector<std::uint8_t> SelectionMatrix::row(std::size_t level) const {
  const auto first = bits_.begin() + static_cast<std::ptrdiff_t>(level * views_);
  return {first, first + static_cast<std::ptrdiff_t>(views_)};
}

// ---------------------------------------------------------------------------

std::string_view to_string(SelectionMode mode) {
  return mode == SelectionMode::vector ? "vector" : "matrix";
}

SelectionMode parse_mode(std::string_view token) {
  if (token == "vector") return SelectionMode::vector;
  if (token == "matrix") return SelectionMode::matrix;
  throw ConfigError("unknown mode '" + std::string(token) + "'; expected vector or matrix");
}

SelectionMode mode_of(const Selection& sel) {
  return std::holds_alternative<SelectionVector>(sel) ? SelectionMode::vector
                                                      : SelectionMode::matrix;
}

std::size_t view_count(const Selection& sel) {
  return std::visit([](const auto& s) { return s.popcount(); }, sel);
}

std::size_t views_per_ring(const Selection& sel) {
  return std::visit([](const auto& s) { return s.views(); }, sel);
}

std::size_t pe_count(const Selection& sel) {
  if (const auto* m = std::get_if<SelectionMatrix>(&sel)) {
    return m->levels() * m->views();
  }
  return std::get<SelectionVector>(sel).views();
}

// ---------------------------------------------------------------------------

SelectionVector rotate(const SelectionVector& sel, std::size_t k) {
  const std::size_t views = sel.views();
  check_shift(k, views);
  std::vector<std::uint8_t> bits(views);
  for (std::size_t c = 0; c < views; ++c) {
    bits[(c + k) % views] = sel.bits()[c];
  }
  return SelectionVector(std::move(bits));
}

SelectionMatrix rotate(const SelectionMatrix& sel, std::size_t k) {
  const std::vector<std::size_t> shifts(sel.levels(), k);
  return rotate_rows(sel, shifts);
}

Selection rotate(const Selection& sel, std::size_t k) {
  return std::visit([k](const auto& s) -> Selection { return rotate(s, k); }, sel);
}

SelectionMatrix rotate_rows(const SelectionMatrix& sel, std::span<const std::size_t> shifts) {
  if (shifts.size() != sel.levels()) {
    throw ShapeError("rotate_rows: need one shift per row");
  }
  const std::size_t views = sel.views();
  std::vector<std::uint8_t> bits(sel.bits().size());
  for (std::size_t l = 0; l < sel.levels(); ++l) {
    check_shift(shifts[l], views);
    for (std::size_t c = 0; c < views; ++c) {
      bits[l * views + (c + shifts[l]) % views] = sel.bits()[l * views + c];
    }
  }
  return SelectionMatrix(sel.levels(), views, std::move(bits));
}

namespace {

template <class Sel>
std::size_t period_of(const Sel& sel) {
  // The smallest k > 0 with rotate(sel, k) == sel generates the stabilizer,
  // so it divides V and equals the number of distinct rotations.
  for (std::size_t k = 1; k < sel.views(); ++k) {
    if (sel.views() % k == 0 && rotate(sel, k) == sel) {
      return k;
    }
  }
  return sel.views();
}

}  // namespace

std::size_t distinct_rotation_count(const SelectionVector& sel) { return period_of(sel); }
std::size_t distinct_rotation_count(const SelectionMatrix& sel) { return period_of(sel); }
std::size_t distinct_rotation_count(const Selection& sel) {
  return std::visit([](const auto& s) { return distinct_rotation_count(s); }, sel);
}

// ---------------------------------------------------------------------------

SelectionVector structured_pattern(PatternKind kind, std::size_t views, std::size_t n) {
  if (views == 0) {
    throw RangeError("structured_pattern: views must be >= 1");
  }
  std::vector<std::uint8_t> bits(views, 0);
  switch (kind) {
    case PatternKind::all:
      std::fill(bits.begin(), bits.end(), std::uint8_t{1});
      break;
    case PatternKind::first_only:
      bits[0] = 1;
      break;
    case PatternKind::stride:
      if (n < 1 || n > views) {
        throw RangeError("structured_pattern: stride " + std::to_string(n) + " outside [1, " +
                         std::to_string(views) + "]");
      }
      for (std::size_t c = 0; c < views; c += n) bits[c] = 1;
      break;
  }
  return SelectionVector(std::move(bits));
}

SelectionMatrix structured_matrix(std::size_t stride, std::size_t row_shift, std::size_t levels,
                                  std::size_t views) {
  if (levels == 0) {
    throw RangeError("structured_matrix: levels must be >= 1");
  }
  if (row_shift >= views) {
    throw RangeError("structured_matrix: row shift " + std::to_string(row_shift) +
                     " outside [0, " + std::to_string(views) + ")");
  }
  const auto base = structured_pattern(PatternKind::stride, views, stride);
  std::vector<std::uint8_t> bits;
  bits.reserve(levels * views);
  for (std::size_t l = 0; l < levels; ++l) {
    const auto row = rotate(base, (l * row_shift) % views);
    bits.insert(bits.end(), row.bits().begin(), row.bits().end());
  }
  return SelectionMatrix(levels, views, std::move(bits));
}

namespace {

void check_density(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw RangeError("selection density must lie in (0, 1)");
  }
}

std::vector<std::uint8_t> draw_bits(Rng& rng, std::size_t n, double p) {
  std::bernoulli_distribution coin(p);
  std::vector<std::uint8_t> bits(n);
  do {
    for (auto& b : bits) b = coin(rng) ? 1 : 0;
  } while (count_bits(bits) == 0);
  return bits;
}

}  // namespace

SelectionVector random_vector(Rng& rng, std::size_t views, double p) {
  check_density(p);
  if (views == 0) throw RangeError("random_vector: views must be >= 1");
  return SelectionVector(draw_bits(rng, views, p));
}

SelectionMatrix random_matrix(Rng& rng, std::size_t levels, std::size_t views, double p) {
  check_density(p);
  if (levels == 0 || views == 0) throw RangeError("random_matrix: empty shape");
  return SelectionMatrix(levels, views, draw_bits(rng, levels * views, p));
}

// ---------------------------------------------------------------------------

namespace {

void push_token(SelectedTokenSet& out, const FeatureStack& stack, std::size_t level,
                std::size_t physical_view, std::size_t pe_index) {
  const auto f = stack.embedding(level, physical_view);
  out.features.insert(out.features.end(), f.begin(), f.end());
  out.tokens.push_back({pe_index, level, physical_view});
}

}  // namespace

SelectedTokenSet apply_selection(const FeatureStack& stack, const SelectionVector& sel,
                                 std::size_t k, std::size_t level) {
  if (stack.views() != sel.views()) {
    throw ShapeError("apply_selection: stack has " + std::to_string(stack.views()) +
                     " views, selection has " + std::to_string(sel.views()));
  }
  if (level >= stack.levels()) {
    throw ShapeError("apply_selection: level " + std::to_string(level) + " not in stack");
  }
  const std::size_t views = sel.views();
  SelectedTokenSet out;
  out.dim = stack.dim();
  for (std::size_t c = 0; c < views; ++c) {
    if (sel.bits()[c]) push_token(out, stack, level, (c + k) % views, c);
  }
  return out;
}

SelectedTokenSet apply_selection(const FeatureStack& stack, const SelectionMatrix& sel,
                                 std::size_t k) {
  const std::vector<std::size_t> shifts(sel.levels(), k % sel.views());
  return apply_selection(stack, sel, shifts);
}

SelectedTokenSet apply_selection(const FeatureStack& stack, const SelectionMatrix& sel,
                                 std::span<const std::size_t> row_shifts) {
  if (stack.views() != sel.views() || stack.levels() != sel.levels()) {
    throw ShapeError("apply_selection: stack shape does not match selection matrix");
  }
  if (row_shifts.size() != sel.levels()) {
    throw ShapeError("apply_selection: need one shift per row");
  }
  const std::size_t views = sel.views();
  SelectedTokenSet out;
  out.dim = stack.dim();
  for (std::size_t l = 0; l < sel.levels(); ++l) {
    for (std::size_t c = 0; c < views; ++c) {
      if (sel.test(l, c)) push_token(out, stack, l, (c + row_shifts[l]) % views, l * views + c);
    }
  }
  return out;
}

SelectedTokenSet apply_selection(const FeatureStack& stack, const Selection& sel, std::size_t k,
                                 std::size_t level) {
  if (const auto* v = std::get_if<SelectionVector>(&sel)) {
    return apply_selection(stack, *v, k % v->views(), level);
  }
  return apply_selection(stack, std::get<SelectionMatrix>(sel), k);
}

// ---------------------------------------------------------------------------

std::string serialize(const SelectionVector& sel) {
  std::string out;
  for (const auto b : sel.bits()) out.push_back(b ? '1' : '0');
  return out;
}

std::string serialize(const SelectionMatrix& sel) {
  std::string out;
  for (std::size_t l = 0; l < sel.levels(); ++l) {
    if (l > 0) out.push_back('\n');
    for (std::size_t c = 0; c < sel.views(); ++c) out.push_back(sel.test(l, c) ? '1' : '0');
  }
  return out;
}

std::string serialize(const Selection& sel) {
  return std::visit([](const auto& s) { return serialize(s); }, sel);
}

SelectionVector parse_vector(std::string_view text, std::size_t views) {
  const auto lines = split_lines(text);
  if (lines.size() != 1) {
    throw ParseError("selection vector must be exactly one line");
  }
  return SelectionVector(parse_row(lines[0], views));
}

SelectionMatrix parse_matrix(std::string_view text, std::size_t levels, std::size_t views) {
  const auto lines = split_lines(text);
  if (lines.size() != levels) {
    throw ParseError("selection matrix has " + std::to_string(lines.size()) + " rows, expected " +
                     std::to_string(levels));
  }
  std::vector<std::uint8_t> bits;
  for (const auto line : lines) {
    const auto row = parse_row(line, views);
    bits.insert(bits.end(), row.begin(), row.end());
  }
  return SelectionMatrix(levels, views, std::move(bits));
}

Selection parse_selection(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty()) {
    throw ParseError("empty selection text");
  }
  const std::size_t views = lines[0].size();
  if (lines.size() == 1) {
    return parse_vector(text, views);
  }
  return parse_matrix(text, lines.size(), views);
}

Selection load_selection(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open selection file " + path.string());
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_selection(buffer.str());
}

void save_selection(const Selection& sel, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("cannot write selection file " + path.string());
  }
  out << serialize(sel) << '\n';
}

}  // namespace viewsel
