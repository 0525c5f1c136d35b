#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "meps/image.hpp"
#include "meps/rng.hpp"

namespace meps {

/// Axis-aligned rectangle in pixel coordinates.
struct Region {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t w = 0;
  std::size_t h = 0;

  std::size_t area() const { return w * h; }
  bool operator==(const Region&) const = default;
};

enum class DistortionKind { kGaussianNoise, kGaussianBlur, kPinkNoise, kContrast, kIdentity };

inline constexpr std::array<DistortionKind, 5> kAllDistortions = {
    DistortionKind::kGaussianNoise, DistortionKind::kGaussianBlur, DistortionKind::kPinkNoise,
    DistortionKind::kContrast, DistortionKind::kIdentity};

/// Manifest spelling: gaussian-noise, gaussian-blur, f-noise, contrast-change, identity.
std::string_view kind_name(DistortionKind kind);
DistortionKind kind_from_name(std::string_view name);

struct StrengthRange {
  double lo;
  double hi;
};

/// Sampling range of a kind's strength. Identity has none.
///   gaussian-noise: variance [0.005, 0.02]
///   gaussian-blur:  variance [1.0, 2.5]
///   f-noise:        scale    [6.0, 10.0]
///   contrast-change: level   [25.0, 40.0]
std::optional<StrengthRange> strength_range(DistortionKind kind);

struct DistortionSpec {
  DistortionKind kind = DistortionKind::kIdentity;
  double strength = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const DistortionSpec&) const = default;
};

enum class Level { kEasy, kModerate, kDifficult };

std::string_view level_name(Level level);
Level level_from_name(std::string_view name);
/// Number of sequential cuts: easy 2, moderate 3, difficult 4.
int level_chops(Level level);

/// Smallest extent a split may leave along the cut axis.
inline constexpr std::size_t kMinRegionExtent = 8;
/// Smallest image side accepted by split_regions.
inline constexpr std::size_t kMinImageSide = 64;

/// Divide phase: `chops` sequential cuts of the largest-area region, each with
/// uniform orientation and a uniform cut keeping at least 25% of the parent's
/// extent on both sides. Returns chops + 1 regions tiling the image.
std::vector<Region> split_regions(std::size_t width, std::size_t height, int chops, Rng& rng);

/// Unit-variance 1/f amplitude field of size w x h (row-major, y * w + x).
std::vector<double> pink_noise_field(std::size_t w, std::size_t h, Rng& rng);

/// Log-log slope of the radially averaged power spectrum over integer radial
/// frequencies [f_lo, f_hi] (cycles per image).
double radial_spectrum_slope(const std::vector<double>& field, std::size_t w, std::size_t h,
                             std::size_t f_lo, std::size_t f_hi);

// Unclipped per-kind operators on a whole image.
void add_gaussian_noise(Image& img, double variance, Rng& rng);
void gaussian_blur(Image& img, double variance);
void add_pink_noise(Image& img, double scale, Rng& rng);
void change_contrast(Image& img, double level);

/// Separable blur kernel with sigma = sqrt(variance), radius ceil(3 sigma), unit sum.
std::vector<double> gaussian_kernel(double variance);

/// Applies one distortion to a whole image and clips to [0, 1].
/// Throws std::invalid_argument when the strength is outside the kind's range.
void distort_region(Image& img, const DistortionSpec& spec);

Image crop(const Image& img, const Region& r);
void paste(Image& dst, const Image& src, const Region& r);

}  // namespace meps
