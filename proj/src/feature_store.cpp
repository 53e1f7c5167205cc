#include "viewsel/feature_store.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "byte_io.hpp"
#include "viewsel/errors.hpp"

namespace viewsel {

FeatureStack::FeatureStack(std::size_t levels, std::size_t views, std::size_t dim, float fill)
    : levels_(levels), views_(views), dim_(dim), values_(levels * views * dim, fill) {}

FeatureStack::FeatureStack(std::size_t levels, std::size_t views, std::size_t dim,
                           std::vector<float> values)
    : levels_(levels), views_(views), dim_(dim), values_(std::move(values)) {
  if (values_.size() != levels * views * dim) {
    throw ShapeError("FeatureStack: expected " + std::to_string(levels * views * dim) +
                     " values, got " + std::to_string(values_.size()));
  }
}

std::span<const float> FeatureStack::embedding(std::size_t level, std::size_t view) const {
  if (level >= levels_ || view >= views_) {
    throw RangeError("FeatureStack: (level, view) out of range");
  }
  return std::span<const float>(values_).subspan((level * views_ + view) * dim_, dim_);
}

std::span<float> FeatureStack::embedding(std::size_t level, std::size_t view) {
  if (level >= levels_ || view >= views_) {
    throw RangeError("FeatureStack: (level, view) out of range");
  }
  return std::span<float>(values_).subspan((level * views_ + view) * dim_, dim_);
}

bool FeatureStack::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](float v) { return std::isfinite(v); });
}

FeatureStack rotate_views(const FeatureStack& stack, std::size_t r) {
  FeatureStack out(stack.levels(), stack.views(), stack.dim());
  const std::size_t views = stack.views();
  for (std::size_t l = 0; l < stack.levels(); ++l) {
    for (std::size_t v = 0; v < views; ++v) {
      const auto src = stack.embedding(l, (v + r) % views);
      std::copy(src.begin(), src.end(), out.embedding(l, v).begin());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cache

namespace {

void write_header(std::ostream& out, const FeatureCacheHeader& h) {
  out.write(kCacheMagic.data(), kCacheMagic.size());
  detail::put_u32(out, h.version);
  detail::put_u32(out, h.num_samples);
  detail::put_u32(out, h.levels);
  detail::put_u32(out, h.views);
  detail::put_u32(out, h.dim);
}

}  // namespace

FeatureCacheHeader write_cache(std::span<const FeatureStack> stacks,
                               const std::filesystem::path& path) {
  if (stacks.empty()) {
    throw ShapeError("write_cache: shape of an empty cache must be given explicitly");
  }
  return write_cache(stacks, path, stacks[0].levels(), stacks[0].views(), stacks[0].dim());
}

FeatureCacheHeader write_cache(std::span<const FeatureStack> stacks,
                               const std::filesystem::path& path, std::size_t levels,
                               std::size_t views, std::size_t dim) {
  if (levels == 0 || views == 0 || dim == 0) {
    throw ShapeError("write_cache: levels, views and dim must be >= 1");
  }
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    const auto& s = stacks[i];
    if (s.levels() != levels || s.views() != views || s.dim() != dim) {
      throw ShapeError("write_cache: stack " + std::to_string(i) + " has shape (" +
                       std::to_string(s.levels()) + "," + std::to_string(s.views()) + "," +
                       std::to_string(s.dim()) + "), expected (" + std::to_string(levels) +
                       "," + std::to_string(views) + "," + std::to_string(dim) + ")");
    }
  }

  FeatureCacheHeader header;
  header.num_samples = static_cast<std::uint32_t>(stacks.size());
  header.levels = static_cast<std::uint32_t>(levels);
  header.views = static_cast<std::uint32_t>(views);
  header.dim = static_cast<std::uint32_t>(dim);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("write_cache: cannot open " + path.string());
  }
  write_header(out, header);
  for (const auto& s : stacks) {
    detail::put_f32s(out, s.values());
  }
  out.flush();
  if (!out) {
    throw IoError("write_cache: write failed for " + path.string());
  }
  return header;
}

CacheReader::CacheReader(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(path_, std::ios::binary);
  if (!in) {
    throw IoError("read_cache: cannot open " + path_.string());
  }
  std::array<char, 5> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCacheMagic) {
    throw FormatError("read_cache: bad magic in " + path_.string());
  }
  if (!detail::get_u32(in, header_.version) || !detail::get_u32(in, header_.num_samples) ||
      !detail::get_u32(in, header_.levels) || !detail::get_u32(in, header_.views) ||
      !detail::get_u32(in, header_.dim)) {
    throw FormatError("read_cache: truncated header in " + path_.string());
  }
  if (header_.version != kCacheVersion) {
    throw FormatError("read_cache: unsupported version " + std::to_string(header_.version));
  }
  if (header_.levels == 0 || header_.views == 0 || header_.dim == 0) {
    throw FormatError("read_cache: levels, views and dim must be >= 1");
  }
  const auto actual = std::filesystem::file_size(path_);
  if (actual != header_.file_bytes()) {
    throw FormatError("read_cache: file is " + std::to_string(actual) + " bytes, header implies " +
                      std::to_string(header_.file_bytes()));
  }
}

FeatureStack CacheReader::stack(std::size_t index) const {
  if (index >= header_.num_samples) {
    throw RangeError("read_cache: sample " + std::to_string(index) + " out of range [0, " +
                     std::to_string(header_.num_samples) + ")");
  }
  std::ifstream in(path_, std::ios::binary);
  if (!in) {
    throw IoError("read_cache: cannot reopen " + path_.string());
  }
  const std::size_t n = header_.stack_floats();
  in.seekg(static_cast<std::streamoff>(kCacheHeaderBytes + index * n * 4));
  std::vector<float> values(n);
  if (!detail::get_f32s(in, values)) {
    throw IoError("read_cache: short read at sample " + std::to_string(index));
  }
  FeatureStack stack(header_.levels, header_.views, header_.dim, std::move(values));
  if (!stack.all_finite()) {
    throw ValidationError("read_cache: sample " + std::to_string(index) +
                          " contains non-finite values");
  }
  return stack;
}

std::vector<FeatureStack> CacheReader::read_all() const {
  std::vector<FeatureStack> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) {
    out.push_back(stack(i));
  }
  return out;
}

CacheReader read_cache(const std::filesystem::path& path) { return CacheReader(path); }

// ---------------------------------------------------------------------------
// Manifest

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

Split parse_split(std::string_view token) {
  if (token == "train") return Split::train;
  if (token == "val") return Split::val;
  if (token == "test") return Split::test;
  throw ValidationError("unknown split '" + std::string(token) +
                        "'; allowed tokens are train, val, test");
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

template <class T>
T parse_number(std::string_view field, std::string_view what, std::size_t line_no) {
  T value{};
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ValidationError("manifest line " + std::to_string(line_no) + ": bad " +
                          std::string(what) + " '" + std::string(field) + "'");
  }
  return value;
}

}  // namespace

std::vector<ManifestEntry> parse_manifest(std::string_view text) {
  std::vector<ManifestEntry> entries;
  std::set<SampleKey> seen;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kManifestHeader) {
        throw ValidationError("manifest: expected header '" + std::string(kManifestHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    const auto f = split_fields(line);
    if (f.size() != 7) {
      throw ValidationError("manifest line " + std::to_string(line_no) + ": expected 7 fields, got " +
                            std::to_string(f.size()));
    }
    ManifestEntry e;
    e.key.crop = std::string(f[0]);
    e.key.plant_id = std::string(f[1]);
    if (e.key.crop.empty() || e.key.plant_id.empty()) {
      throw ValidationError("manifest line " + std::to_string(line_no) + ": empty identifier");
    }
    e.key.day = parse_number<std::int64_t>(f[2], "day", line_no);
    e.age_days = parse_number<double>(f[3], "age_days", line_no);
    e.leaf_count = parse_number<double>(f[4], "leaf_count", line_no);
    e.split = parse_split(f[5]);
    e.cache_index = parse_number<std::size_t>(f[6], "cache_index", line_no);
    if (e.key.day < 0 || !(e.age_days >= 0.0) || !(e.leaf_count >= 0.0)) {
      throw ValidationError("manifest line " + std::to_string(line_no) +
                            ": day, age_days and leaf_count must be >= 0");
    }
    if (!seen.insert(e.key).second) {
      throw ValidationError("manifest line " + std::to_string(line_no) + ": duplicate key (" +
                            e.key.crop + "," + e.key.plant_id + "," + std::to_string(e.key.day) +
                            ")");
    }
    entries.push_back(std::move(e));
  }
  if (!header_seen) {
    throw ValidationError("manifest: missing header line");
  }
  return entries;
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("load_manifest: cannot open " + path.string());
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_manifest(buffer.str());
}

void write_manifest(std::span<const ManifestEntry> entries, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("write_manifest: cannot open " + path.string());
  }
  out << kManifestHeader << '\n';
  char buf[64];
  const auto num = [&buf](double v) {
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
  };
  for (const auto& e : entries) {
    out << e.key.crop << ',' << e.key.plant_id << ',' << e.key.day << ',' << num(e.age_days) << ','
        << num(e.leaf_count) << ',' << to_string(e.split) << ',' << e.cache_index << '\n';
  }
  if (!out) {
    throw IoError("write_manifest: write failed for " + path.string());
  }
}

void check_manifest_against_cache(std::span<const ManifestEntry> entries,
                                  const FeatureCacheHeader& header) {
  for (const auto& e : entries) {
    if (e.cache_index >= header.num_samples) {
      throw ValidationError("manifest: cache_index " + std::to_string(e.cache_index) +
                            " >= num_samples " + std::to_string(header.num_samples));
    }
  }
}

SplitIndices partition(std::span<const ManifestEntry> entries, bool merge_train_val) {
  SplitIndices out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    switch (entries[i].split) {
      case Split::train:
        out.train.push_back(i);
        break;
      case Split::val:
        (merge_train_val ? out.train : out.val).push_back(i);
        break;
      case Split::test:
        out.test.push_back(i);
        break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Task task) { return task == Task::age ? "age" : "leaf"; }

Task parse_task(std::string_view token) {
  if (token == "age") return Task::age;
  if (token == "leaf") return Task::leaf;
  throw ConfigError("unknown task '" + std::string(token) + "'; expected age or leaf");
}

double label_of(const ManifestEntry& entry, Task task) {
  return task == Task::age ? entry.age_days : entry.leaf_count;
}

Dataset Dataset::load(const std::filesystem::path& cache, const std::filesystem::path& manifest) {
  const auto reader = read_cache(cache);
  Dataset data;
  data.header = reader.header();
  data.entries = load_manifest(manifest);
  check_manifest_against_cache(data.entries, data.header);
  data.stacks = reader.read_all();
  return data;
}

std::vector<Instance> make_instances(const Dataset& data, std::span<const std::size_t> entries,
                                     bool per_level, std::optional<std::size_t> only_level) {
  std::vector<Instance> out;
  if (!per_level) {
    for (const auto e : entries) out.push_back({e, 0});
    return out;
  }
  const std::size_t levels = data.header.levels;
  if (only_level && *only_level >= levels) {
    throw RangeError("level " + std::to_string(*only_level) + " out of range [0, " +
                     std::to_string(levels) + ")");
  }
  for (const auto e : entries) {
    if (only_level) {
      out.push_back({e, *only_level});
    } else {
      for (std::size_t l = 0; l < levels; ++l) out.push_back({e, l});
    }
  }
  return out;
}

}  // namespace viewsel
