#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "meps/distortion.hpp"
#include "meps/image.hpp"

namespace meps {

/// Variants rendered per clean image in the train split.
inline constexpr std::size_t kTrainVariants = 12;
inline constexpr int kManifestVersion = 1;

struct RegionDistortion {
  Region region;
  DistortionSpec spec;

  bool operator==(const RegionDistortion&) const = default;
};

/// Everything needed to re-render one distorted image from its clean source.
struct ManifestEntry {
  std::string source;  // file stem of the clean image
  std::string split;
  std::size_t variant = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  std::string file;   // distorted PNG, relative to the dataset root
  std::string clean;  // clean PNG, relative to the dataset root
  std::vector<RegionDistortion> regions;

  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  int version = kManifestVersion;
  std::uint64_t master_seed = 0;
  Level level = Level::kModerate;
  std::vector<ManifestEntry> entries;
};

std::string manifest_to_json(const Manifest& manifest);
Manifest manifest_from_json(std::string_view text);
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Seed of the stream that lays out and distorts one (source, variant) pair.
std::uint64_t variant_seed(std::uint64_t master_seed, std::string_view source, std::size_t variant);

/// Samples the region layout and per-region distortions without touching pixels.
ManifestEntry sample_entry(std::string_view source, std::size_t width, std::size_t height, Level level,
                           std::size_t variant, std::uint64_t master_seed);

/// Applies an entry's distortions to a clean image, region by region.
Image render_entry(const Image& clean, const ManifestEntry& entry);

struct SynthResult {
  Image distorted;
  ManifestEntry entry;
};

SynthResult synthesize_image(const Image& clean, std::string_view source, Level level, std::size_t variant,
                             std::uint64_t master_seed);

struct GenerateConfig {
  std::filesystem::path clean_dir;
  std::filesystem::path out_dir;
  Level level = Level::kModerate;
  std::uint64_t seed = 0;
  /// train, val, test, or holdout (sorted sources: first half val, rest test).
  std::string split = "train";
  /// Defaults to 12 for train and 1 otherwise.
  std::optional<std::size_t> variants;
  std::size_t threads = 1;
};

struct GenerateReport {
  std::size_t sources = 0;
  std::size_t images_written = 0;
  std::vector<std::string> warnings;
};

/// Writes <out>/<split>/<source>_<variant>.png, <out>/<split>/clean/<source>.png
/// and merges the entries into <out>/manifest.json.
GenerateReport generate_dataset(const GenerateConfig& config);

/// A distorted image with its clean counterpart.
struct ImagePair {
  std::string file;
  Image distorted;
  Image clean;
};

struct LoadedSplit {
  std::vector<ImagePair> pairs;
  /// Entries whose distorted or clean file could not be read.
  std::vector<std::string> skipped;
};

/// Loads every manifest entry of `split` under a dataset root.
LoadedSplit load_split(const std::filesystem::path& root, const std::string& split);

}  // namespace meps
