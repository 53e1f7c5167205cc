#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace viewsel {

inline constexpr std::array<char, 5> kCacheMagic = {'V', 'S', 'P', 'F', '1'};
inline constexpr std::uint32_t kCacheVersion = 1;
// magic + five u32 fields
inline constexpr std::size_t kCacheHeaderBytes = 5 + 5 * 4;

/// Dense (level, view, dim) embedding array for one plant-day.
class FeatureStack {
 public:
  FeatureStack() = default;
  FeatureStack(std::size_t levels, std::size_t views, std::size_t dim, float fill = 0.0F);
  FeatureStack(std::size_t levels, std::size_t views, std::size_t dim, std::vector<float> values);

  std::size_t levels() const { return levels_; }
  std::size_t views() const { return views_; }
  std::size_t dim() const { return dim_; }

  std::span<const float> values() const { return values_; }
  std::span<float> values() { return values_; }

  std::span<const float> embedding(std::size_t level, std::size_t view) const;
  std::span<float> embedding(std::size_t level, std::size_t view);

  bool same_shape(const FeatureStack& other) const {
    return levels_ == other.levels_ && views_ == other.views_ && dim_ == other.dim_;
  }
  bool all_finite() const;

  friend bool operator==(const FeatureStack&, const FeatureStack&) = default;

 private:
  std::size_t levels_ = 0;
  std::size_t views_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> values_;
};

/// Circular rotation along the view axis: result[l, v] = stack[l, (v + r) mod V].
FeatureStack rotate_views(const FeatureStack& stack, std::size_t r);

struct FeatureCacheHeader {
  std::uint32_t version = kCacheVersion;
  std::uint32_t num_samples = 0;
  std::uint32_t levels = 5;
  std::uint32_t views = 24;
  std::uint32_t dim = 0;

  std::size_t stack_floats() const {
    return static_cast<std::size_t>(levels) * views * dim;
  }
  std::uintmax_t file_bytes() const {
    return kCacheHeaderBytes + static_cast<std::uintmax_t>(num_samples) * stack_floats() * 4;
  }
  friend bool operator==(const FeatureCacheHeader&, const FeatureCacheHeader&) = default;
};

/// Writes stacks as a VSPF1 cache. An empty sequence needs an explicit shape.
FeatureCacheHeader write_cache(std::span<const FeatureStack> stacks,
                               const std::filesystem::path& path);
FeatureCacheHeader write_cache(std::span<const FeatureStack> stacks,
                               const std::filesystem::path& path, std::size_t levels,
                               std::size_t views, std::size_t dim);

/// Random-access reader. Immutable after open; each read opens its own stream,
/// so concurrent readers are safe.
class CacheReader {
 public:
  explicit CacheReader(std::filesystem::path path);

  const FeatureCacheHeader& header() const { return header_; }
  std::size_t size() const { return header_.num_samples; }

  FeatureStack stack(std::size_t index) const;
  std::vector<FeatureStack> read_all() const;

 private:
  std::filesystem::path path_;
  FeatureCacheHeader header_;
};

CacheReader read_cache(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifest

enum class Split { train, val, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view token);

struct SampleKey {
  std::string crop;
  std::string plant_id;
  std::int64_t day = 0;

  friend auto operator<=>(const SampleKey&, const SampleKey&) = default;
};

struct ManifestEntry {
  SampleKey key;
  double age_days = 0.0;
  double leaf_count = 0.0;
  Split split = Split::train;
  std::size_t cache_index = 0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

inline constexpr std::string_view kManifestHeader =
    "crop,plant_id,day,age_days,leaf_count,split,cache_index";

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);
std::vector<ManifestEntry> parse_manifest(std::string_view text);
void write_manifest(std::span<const ManifestEntry> entries, const std::filesystem::path& path);

/// Checks every cache_index against a cache's sample count.
void check_manifest_against_cache(std::span<const ManifestEntry> entries,
                                  const FeatureCacheHeader& header);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Buckets manifest positions by split. With merge_train_val the val rows join
/// train and the val bucket stays empty.
SplitIndices partition(std::span<const ManifestEntry> entries, bool merge_train_val = false);

// ---------------------------------------------------------------------------
// In-memory dataset and instance addressing

enum class Task { age, leaf };

std::string_view to_string(Task task);
Task parse_task(std::string_view token);
double label_of(const ManifestEntry& entry, Task task);

/// Stacks are indexed by cache row; entries by manifest position.
struct Dataset {
  FeatureCacheHeader header;
  std::vector<FeatureStack> stacks;
  std::vector<ManifestEntry> entries;

  static Dataset load(const std::filesystem::path& cache, const std::filesystem::path& manifest);

  const FeatureStack& stack_of(std::size_t entry) const {
    return stacks.at(entries.at(entry).cache_index);
  }
  double label(std::size_t entry, Task task) const { return label_of(entries.at(entry), task); }
};

/// One training/evaluation unit. In per-level addressing each (sample, level)
/// pair is an instance; in whole-sample addressing `level` is unused.
struct Instance {
  std::size_t entry = 0;
  std::size_t level = 0;

  friend bool operator==(const Instance&, const Instance&) = default;
};

/// per_level expands every entry into one instance per level (or only
/// `only_level` when given); otherwise one instance per entry.
std::vector<Instance> make_instances(const Dataset& data, std::span<const std::size_t> entries,
                                     bool per_level, std::optional<std::size_t> only_level = {});

}  // namespace viewsel
