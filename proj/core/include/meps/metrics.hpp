#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "meps/image.hpp"
#include "meps/model.hpp"
#include "meps/shdd.hpp"

namespace meps {

/// Reported for identical images, keeping reports finite.
inline constexpr double kPsnrCap = 100.0;

double mean_squared_error(const Image& a, const Image& b);
/// 10 log10(1 / mse) for unit data range; kPsnrCap when mse == 0.
double psnr_from_mse(double mse);
double psnr(const Image& a, const Image& b);

/// Mean SSIM over channels and all fully contained 11x11 windows (Gaussian
/// weights, sigma 1.5), K1 = 0.01, K2 = 0.03, data range 1.
double ssim(const Image& a, const Image& b);

inline constexpr std::size_t kSsimWindow = 11;

struct ImageScore {
  std::string file;
  double psnr = 0.0;
  double ssim = 0.0;
  double baseline_psnr = 0.0;  // distorted input vs clean
  double baseline_ssim = 0.0;
};

struct EvalReport {
  std::string split;
  std::string level;
  std::vector<ImageScore> per_image;
  std::vector<std::string> skipped;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double baseline_psnr = 0.0;
  double baseline_ssim = 0.0;
};

using Restorer = std::function<Image(const Image&)>;

/// Full-frame restoration adapter around a float model.
Restorer model_restorer(const MepsNet<float>& model);

/// Returns the distorted input unchanged.
Restorer identity_restorer();

/// Scores fully materialized pairs; means are plain averages of per-image values.
EvalReport score_pairs(const Restorer& restore, const std::vector<ImagePair>& pairs);

/// Restores every distorted image of a split and scores it against its clean
/// counterpart; entries whose files are missing are skipped and listed.
EvalReport evaluate_dataset(const Restorer& restore, const std::filesystem::path& root, const std::string& split);

/// {split, level, n, mean_psnr, mean_ssim, baseline_psnr, baseline_ssim, skipped, per_image: [...]}
std::string report_to_json(const EvalReport& report);

}  // namespace meps
