#include "meps/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <stdexcept>

namespace meps {

using nlohmann::json;

namespace {

void require_same_size(const Image& a, const Image& b, const char* what) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw std::invalid_argument(std::string(what) + ": image sizes differ (" + std::to_string(a.width()) + "x" +
                                std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                                std::to_string(b.height()) + ")");
  }
}

std::vector<double> ssim_weights() {
  constexpr double sigma = 1.5;
  constexpr int r = static_cast<int>(kSsimWindow / 2);
  std::vector<double> w(kSsimWindow);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    w[static_cast<std::size_t>(i + r)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += w[static_cast<std::size_t>(i + r)];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Valid-mode separable filtering of a plane: output is (h - 10) x (w - 10).
std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t w, std::size_t h,
                                 const std::vector<double>& k) {
  const std::size_t n = k.size();
  const std::size_t ow = w - n + 1, oh = h - n + 1;
  std::vector<double> rows(h * ow);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += k[i] * plane[y * w + x + i];
      rows[y * ow + x] = acc;
    }
  }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += k[i] * rows[(y + i) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace

double mean_squared_error(const Image& a, const Image& b) {
  require_same_size(a, b, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.pixels().size(); ++i) {
    const double d = static_cast<double>(a.pixels()[i]) - static_cast<double>(b.pixels()[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.pixels().size());
}

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double psnr(const Image& a, const Image& b) { return psnr_from_mse(mean_squared_error(a, b)); }

double ssim(const Image& a, const Image& b) {
  require_same_size(a, b, "ssim");
  const std::size_t w = a.width(), h = a.height();
  if (w < kSsimWindow || h < kSsimWindow) {
    throw std::invalid_argument("ssim: image " + std::to_string(w) + "x" + std::to_string(h) +
                                " is smaller than the 11x11 window");
  }
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const std::vector<double> k = ssim_weights();
  const std::size_t plane = w * h;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < Image::kChannels; ++c) {
    std::vector<double> pa(plane), pb(plane), aa(plane), bb(plane), ab(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      pa[i] = a.pixels()[c * plane + i];
      pb[i] = b.pixels()[c * plane + i];
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter_valid(pa, w, h, k);
    const auto mu_b = filter_valid(pb, w, h, k);
    const auto e_aa = filter_valid(aa, w, h, k);
    const auto e_bb = filter_valid(bb, w, h, k);
    const auto e_ab = filter_valid(ab, w, h, k);
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double var_a = e_aa[i] - mu_a[i] * mu_a[i];
      const double var_b = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
      const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2);
      total += num / den;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

Restorer model_restorer(const MepsNet<float>& model) {
  return [&model](const Image& input) { return tensor_to_image(model.infer(image_to_tensor<float>(input))); };
}

Restorer identity_restorer() {
  return [](const Image& input) { return input; };
}

EvalReport score_pairs(const Restorer& restore, const std::vector<ImagePair>& pairs) {
  EvalReport report;
  for (const ImagePair& pair : pairs) {
    const Image restored = restore(pair.distorted);
    ImageScore s;
    s.file = pair.file;
    s.psnr = psnr(restored, pair.clean);
    s.ssim = ssim(restored, pair.clean);
    s.baseline_psnr = psnr(pair.distorted, pair.clean);
    s.baseline_ssim = ssim(pair.distorted, pair.clean);
    report.per_image.push_back(s);
  }
  if (!report.per_image.empty()) {
    const double n = static_cast<double>(report.per_image.size());
    for (const ImageScore& s : report.per_image) {
      report.mean_psnr += s.psnr;
      report.mean_ssim += s.ssim;
      report.baseline_psnr += s.baseline_psnr;
      report.baseline_ssim += s.baseline_ssim;
    }
    report.mean_psnr /= n;
    report.mean_ssim /= n;
    report.baseline_psnr /= n;
    report.baseline_ssim /= n;
  }
  return report;
}

EvalReport evaluate_dataset(const Restorer& restore, const std::filesystem::path& root, const std::string& split) {
  LoadedSplit loaded = load_split(root, split);
  if (loaded.pairs.empty()) {
    throw std::runtime_error("split '" + split + "' in " + root.string() + " has no readable images");
  }
  EvalReport report = score_pairs(restore, loaded.pairs);
  report.split = split;
  report.level = std::string(level_name(read_manifest(root / "manifest.json").level));
  report.skipped = std::move(loaded.skipped);
  return report;
}

std::string report_to_json(const EvalReport& r) {
  json per_image = json::array();
  for (const ImageScore& s : r.per_image) {
    per_image.push_back({{"file", s.file},
                         {"psnr", s.psnr},
                         {"ssim", s.ssim},
                         {"baseline_psnr", s.baseline_psnr},
                         {"baseline_ssim", s.baseline_ssim}});
  }
  const json doc = {{"split", r.split},
                    {"level", r.level},
                    {"n", r.per_image.size()},
                    {"mean_psnr", r.mean_psnr},
                    {"mean_ssim", r.mean_ssim},
                    {"baseline_psnr", r.baseline_psnr},
                    {"baseline_ssim", r.baseline_ssim},
                    {"skipped", r.skipped},
                    {"per_image", std::move(per_image)}};
  return doc.dump(2) + "\n";
}

}  // namespace meps
