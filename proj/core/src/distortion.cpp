#include "meps/distortion.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <stdexcept>

namespace meps {

std::string_view kind_name(DistortionKind kind) {
  switch (kind) {
    case DistortionKind::kGaussianNoise: return "gaussian-noise";
    case DistortionKind::kGaussianBlur: return "gaussian-blur";
    case DistortionKind::kPinkNoise: return "f-noise";
    case DistortionKind::kContrast: return "contrast-change";
    case DistortionKind::kIdentity: return "identity";
  }
  throw std::logic_error("unknown distortion kind");
}

DistortionKind kind_from_name(std::string_view name) {
  for (DistortionKind k : kAllDistortions) {
    if (kind_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown distortion kind '" + std::string(name) + "'");
}

std::optional<StrengthRange> strength_range(DistortionKind kind) {
  switch (kind) {
    case DistortionKind::kGaussianNoise: return StrengthRange{0.005, 0.02};
    case DistortionKind::kGaussianBlur: return StrengthRange{1.0, 2.5};
    case DistortionKind::kPinkNoise: return StrengthRange{6.0, 10.0};
    case DistortionKind::kContrast: return StrengthRange{25.0, 40.0};
    case DistortionKind::kIdentity: return std::nullopt;
  }
  return std::nullopt;
}

std::string_view level_name(Level level) {
  switch (level) {
    case Level::kEasy: return "easy";
    case Level::kModerate: return "moderate";
    case Level::kDifficult: return "difficult";
  }
  throw std::logic_error("unknown level");
}

Level level_from_name(std::string_view name) {
  for (Level l : {Level::kEasy, Level::kModerate, Level::kDifficult}) {
    if (level_name(l) == name) return l;
  }
  throw std::invalid_argument("unknown level '" + std::string(name) + "' (easy|moderate|difficult)");
}

int level_chops(Level level) {
  switch (level) {
    case Level::kEasy: return 2;
    case Level::kModerate: return 3;
    case Level::kDifficult: return 4;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// divide

namespace {

std::size_t cut_margin(std::size_t extent) {
  return std::max((extent + 3) / 4, kMinRegionExtent);
}

bool can_cut(std::size_t extent) { return 2 * cut_margin(extent) <= extent; }

}  // namespace

std::vector<Region> split_regions(std::size_t width, std::size_t height, int chops, Rng& rng) {
  if (width < kMinImageSide || height < kMinImageSide) {
    throw std::invalid_argument("split_regions: image " + std::to_string(width) + "x" +
                                std::to_string(height) + " is below the " +
                                std::to_string(kMinImageSide) + " px minimum side");
  }
  if (chops < 1) throw std::invalid_argument("split_regions: chops must be >= 1");
  std::vector<Region> regions{{0, 0, width, height}};
  for (int cut = 0; cut < chops; ++cut) {
    // largest area, first on ties
    std::size_t idx = 0;
    for (std::size_t i = 1; i < regions.size(); ++i) {
      if (regions[i].area() > regions[idx].area()) idx = i;
    }
    const Region parent = regions[idx];
    bool split_width = rng.below(2) == 0;
    if (!can_cut(split_width ? parent.w : parent.h)) split_width = !split_width;
    const std::size_t extent = split_width ? parent.w : parent.h;
    if (!can_cut(extent)) {
      throw std::runtime_error("split_regions: region " + std::to_string(parent.w) + "x" +
                               std::to_string(parent.h) + " too small for cut " +
                               std::to_string(cut + 1) + " of " + std::to_string(chops));
    }
    const std::size_t margin = cut_margin(extent);
    const std::size_t pos = margin + rng.below(extent - 2 * margin + 1);
    Region a = parent, b = parent;
    if (split_width) {
      a.w = pos;
      b.x = parent.x + pos;
      b.w = parent.w - pos;
    } else {
      a.h = pos;
      b.y = parent.y + pos;
      b.h = parent.h - pos;
    }
    regions[idx] = a;
    regions.push_back(b);
  }
  return regions;
}

// ---------------------------------------------------------------------------
// pink noise

namespace {

// Planner calls are not thread-safe; execution is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class Fft2d {
 public:
  Fft2d(std::size_t w, std::size_t h) : n_(w * h) {
    buf_ = fftw_alloc_complex(n_);
    std::lock_guard lock(fftw_planner_mutex());
    fwd_ = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), buf_, buf_, FFTW_FORWARD, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), buf_, buf_, FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  ~Fft2d() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    fftw_free(buf_);
  }
  Fft2d(const Fft2d&) = delete;
  Fft2d& operator=(const Fft2d&) = delete;

  std::complex<double>* data() { return reinterpret_cast<std::complex<double>*>(buf_); }
  void forward() { fftw_execute(fwd_); }
  void inverse() { fftw_execute(inv_); }

 private:
  std::size_t n_;
  fftw_complex* buf_ = nullptr;
  fftw_plan fwd_ = nullptr;
  fftw_plan inv_ = nullptr;
};

double signed_freq(std::size_t k, std::size_t n) {
  return k <= n / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
}

}  // namespace

std::vector<double> pink_noise_field(std::size_t w, std::size_t h, Rng& rng) {
  if (w < 8 || h < 8) throw std::invalid_argument("pink_noise_field: field must be at least 8x8");
  Fft2d fft(w, h);
  std::complex<double>* z = fft.data();
  for (std::size_t i = 0; i < w * h; ++i) z[i] = {rng.normal(), 0.0};
  fft.forward();
  for (std::size_t ky = 0; ky < h; ++ky) {
    const double fy = signed_freq(ky, h);
    for (std::size_t kx = 0; kx < w; ++kx) {
      const double fx = signed_freq(kx, w);
      const double f = std::sqrt(fx * fx + fy * fy);
      z[ky * w + kx] *= f == 0.0 ? 0.0 : 1.0 / f;
    }
  }
  fft.inverse();
  std::vector<double> field(w * h);
  double mean = 0.0;
  for (std::size_t i = 0; i < field.size(); ++i) {
    field[i] = z[i].real();
    mean += field[i];
  }
  mean /= static_cast<double>(field.size());
  double var = 0.0;
  for (double& v : field) {
    v -= mean;
    var += v * v;
  }
  const double sd = std::sqrt(var / static_cast<double>(field.size()));
  for (double& v : field) v /= sd;
  return field;
}

double radial_spectrum_slope(const std::vector<double>& field, std::size_t w, std::size_t h,
                             std::size_t f_lo, std::size_t f_hi) {
  if (field.size() != w * h) throw std::invalid_argument("radial_spectrum_slope: size mismatch");
  if (f_lo == 0 || f_hi <= f_lo) throw std::invalid_argument("radial_spectrum_slope: bad band");
  Fft2d fft(w, h);
  std::complex<double>* z = fft.data();
  for (std::size_t i = 0; i < w * h; ++i) z[i] = {field[i], 0.0};
  fft.forward();
  std::map<std::size_t, std::pair<double, std::size_t>> bins;
  for (std::size_t ky = 0; ky < h; ++ky) {
    const double fy = signed_freq(ky, h);
    for (std::size_t kx = 0; kx < w; ++kx) {
      const double fx = signed_freq(kx, w);
      const auto r = static_cast<std::size_t>(std::lround(std::sqrt(fx * fx + fy * fy)));
      if (r < f_lo || r > f_hi) continue;
      auto& [sum, count] = bins[r];
      sum += std::norm(z[ky * w + kx]);
      ++count;
    }
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  double n = 0;
  for (const auto& [r, acc] : bins) {
    const double lx = std::log(static_cast<double>(r));
    const double ly = std::log(acc.first / static_cast<double>(acc.second));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    n += 1;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// ---------------------------------------------------------------------------
// distort

void add_gaussian_noise(Image& img, double variance, Rng& rng) {
  const double sd = std::sqrt(variance);
  for (float& v : img.pixels()) v = static_cast<float>(v + sd * rng.normal());
}

std::vector<double> gaussian_kernel(double variance) {
  const double sigma = std::sqrt(variance);
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-static_cast<double>(i * i) / (2.0 * variance));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

namespace {

// Half-sample symmetric reflection: -1 -> 0, n -> n - 1.
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  const auto period = static_cast<std::ptrdiff_t>(2 * n);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<std::ptrdiff_t>(n)) m = period - 1 - m;
  return static_cast<std::size_t>(m);
}

}  // namespace

void gaussian_blur(Image& img, double variance) {
  const std::vector<double> k = gaussian_kernel(variance);
  const auto radius = static_cast<std::ptrdiff_t>(k.size() / 2);
  const std::size_t w = img.width(), h = img.height();
  std::vector<double> tmp(w * h);
  for (std::size_t c = 0; c < Image::kChannels; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
          acc += k[static_cast<std::size_t>(i + radius)] *
                 img.at(c, y, reflect_index(static_cast<std::ptrdiff_t>(x) + i, w));
        }
        tmp[y * w + x] = acc;
      }
    }
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
          acc += k[static_cast<std::size_t>(i + radius)] *
                 tmp[reflect_index(static_cast<std::ptrdiff_t>(y) + i, h) * w + x];
        }
        img.at(c, y, x) = static_cast<float>(acc);
      }
    }
  }
}

void add_pink_noise(Image& img, double scale, Rng& rng) {
  const std::vector<double> field = pink_noise_field(img.width(), img.height(), rng);
  const double amp = scale / 255.0;
  for (std::size_t c = 0; c < Image::kChannels; ++c) {
    for (std::size_t i = 0; i < field.size(); ++i) {
      float& v = img.pixels()[c * field.size() + i];
      v = static_cast<float>(v + amp * field[i]);
    }
  }
}

void change_contrast(Image& img, double level) {
  const double factor = level / 100.0;
  for (float& v : img.pixels()) v = static_cast<float>((v - 0.5) * factor + 0.5);
}

void distort_region(Image& img, const DistortionSpec& spec) {
  if (const auto range = strength_range(spec.kind)) {
    if (!(spec.strength >= range->lo && spec.strength <= range->hi)) {
      throw std::invalid_argument(std::string(kind_name(spec.kind)) + " strength " +
                                  std::to_string(spec.strength) + " outside [" +
                                  std::to_string(range->lo) + ", " + std::to_string(range->hi) + "]");
    }
  }
  Rng rng(spec.seed);
  switch (spec.kind) {
    case DistortionKind::kGaussianNoise: add_gaussian_noise(img, spec.strength, rng); break;
    case DistortionKind::kGaussianBlur: gaussian_blur(img, spec.strength); break;
    case DistortionKind::kPinkNoise: add_pink_noise(img, spec.strength, rng); break;
    case DistortionKind::kContrast: change_contrast(img, spec.strength); break;
    case DistortionKind::kIdentity: return;
  }
  img.clip();
}

Image crop(const Image& img, const Region& r) {
  if (r.x + r.w > img.width() || r.y + r.h > img.height()) {
    throw std::out_of_range("crop: region outside image");
  }
  Image out(r.w, r.h);
  for (std::size_t c = 0; c < Image::kChannels; ++c) {
    for (std::size_t y = 0; y < r.h; ++y) {
      for (std::size_t x = 0; x < r.w; ++x) out.at(c, y, x) = img.at(c, r.y + y, r.x + x);
    }
  }
  return out;
}

void paste(Image& dst, const Image& src, const Region& r) {
  if (src.width() != r.w || src.height() != r.h || r.x + r.w > dst.width() || r.y + r.h > dst.height()) {
    throw std::out_of_range("paste: region does not fit");
  }
  for (std::size_t c = 0; c < Image::kChannels; ++c) {
    for (std::size_t y = 0; y < r.h; ++y) {
      for (std::size_t x = 0; x < r.w; ++x) dst.at(c, r.y + y, r.x + x) = src.at(c, y, x);
    }
  }
}

}  // namespace meps
