#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <json.hpp>

#include "meps/metrics.hpp"
#include "support/oracles.hpp"

using namespace meps;
namespace fs = std::filesystem;

namespace {

Image noisy(const Image& img, double variance, std::uint64_t seed) {
  Image out = img;
  Rng rng(seed);
  for (float& v : out.pixels()) v = float(std::clamp(v + std::sqrt(variance) * rng.normal(), 0.0, 1.0));
  return out;
}

double direct_psnr(const Image& a, const Image& b) {
  long double sum = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < a.height(); ++y) {
      for (std::size_t x = 0; x < a.width(); ++x) {
        const long double d = (long double)a.at(c, y, x) - (long double)b.at(c, y, x);
        sum += d * d;
      }
    }
  }
  return double(10.0L * std::log10(1.0L / (sum / (3.0L * a.width() * a.height()))));
}

}  // namespace

TEST(Psnr, HandValues) {
  EXPECT_EQ(psnr_from_mse(0.01), 20.0);
  EXPECT_EQ(psnr_from_mse(0.0), kPsnrCap);
  const Image a = oracle::synthetic_image(32, 32, 1);
  EXPECT_EQ(psnr(a, a), 100.0);
}

TEST(Psnr, MatchesDirectFormula) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Image a = oracle::synthetic_image(40, 33, s);
    const Image b = noisy(a, 0.001 * double(s + 1), s + 10);
    EXPECT_NEAR(psnr(a, b), direct_psnr(a, b), 1e-9);
  }
}

TEST(Psnr, DecreasesWithNoiseVariance) {
  const Image a = oracle::synthetic_image(64, 64, 2);
  const double p1 = psnr(a, noisy(a, 0.001, 1));
  const double p2 = psnr(a, noisy(a, 0.005, 1));
  const double p3 = psnr(a, noisy(a, 0.02, 1));
  EXPECT_GT(p1, p2);
  EXPECT_GT(p2, p3);
}

TEST(Psnr, ShapeMismatchThrows) {
  EXPECT_THROW(psnr(Image(8, 8), Image(8, 9)), std::invalid_argument);
}

TEST(Ssim, IdentityIsExactlyOne) {
  const Image a = oracle::synthetic_image(48, 40, 3);
  EXPECT_EQ(ssim(a, a), 1.0);
}

TEST(Ssim, InvertedImageScoresLow) {
  const Image a = oracle::synthetic_image(64, 64, 4);
  Image inv = a;
  for (float& v : inv.pixels()) v = 1.0f - v;
  EXPECT_LT(ssim(a, inv), 0.5);
}

TEST(Ssim, SymmetricAndBounded) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Image a = oracle::synthetic_image(30, 27, s);
    const Image b = noisy(oracle::synthetic_image(30, 27, s + 50), 0.01, s);
    const double ab = ssim(a, b);
    EXPECT_NEAR(ab, ssim(b, a), 1e-12);
    EXPECT_GE(ab, -1.0);
    EXPECT_LE(ab, 1.0);
    EXPECT_LT(ab, 1.0);
  }
}

TEST(Ssim, MatchesDirectWindowReference) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Image a = oracle::synthetic_image(24 + s, 20 + 2 * s, s);
    const Image b = noisy(a, 0.002 * double(s + 1), 100 + s);
    EXPECT_NEAR(ssim(a, b), oracle::direct_ssim(a, b), 1e-6) << "pair " << s;
  }
}

TEST(Ssim, RejectsSmallOrMismatchedImages) {
  EXPECT_THROW(ssim(Image(10, 20), Image(10, 20)), std::invalid_argument);
  EXPECT_THROW(ssim(Image(20, 20), Image(20, 21)), std::invalid_argument);
  EXPECT_NO_THROW(ssim(Image(11, 11), Image(11, 11)));
}

class EvalTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = oracle::scratch_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
    oracle::write_synthetic_set(root_ / "clean", 4, 72, 64, 3);
    GenerateConfig c;
    c.clean_dir = root_ / "clean";
    c.out_dir = root_ / "shdd";
    c.split = "test";
    c.seed = 3;
    generate_dataset(c);
  }
  fs::path root_;
};

TEST_F(EvalTest, PerfectRestorationScoresCap) {
  const auto pairs = load_split(root_ / "shdd", "test").pairs;
  Restorer oracle_restore = [&](const Image& in) {
    for (const auto& p : pairs) {
      if (p.distorted == in) return p.clean;
    }
    throw std::runtime_error("unknown input");
  };
  const auto r = evaluate_dataset(oracle_restore, root_ / "shdd", "test");
  EXPECT_EQ(r.per_image.size(), 4u);
  EXPECT_EQ(r.mean_psnr, 100.0);
  EXPECT_EQ(r.mean_ssim, 1.0);
  EXPECT_LT(r.baseline_psnr, 100.0);
}

TEST_F(EvalTest, IdentityRestorerMatchesBaseline) {
  const auto r = evaluate_dataset(identity_restorer(), root_ / "shdd", "test");
  EXPECT_EQ(r.mean_psnr, r.baseline_psnr);
  EXPECT_EQ(r.mean_ssim, r.baseline_ssim);
  EXPECT_EQ(r.level, "moderate");
}

TEST_F(EvalTest, ZeroModelProducesReport) {
  MepsNet<float> m(MepsNetConfig::desk_tiny());
  const auto r = evaluate_dataset(model_restorer(m), root_ / "shdd", "test");
  EXPECT_EQ(r.per_image.size(), 4u);
  for (const auto& s : r.per_image) EXPECT_TRUE(std::isfinite(s.psnr));
}

TEST_F(EvalTest, MeansAreHandAverages) {
  MepsNet<float> m(MepsNetConfig::desk_tiny());
  init_parameters(m, 1);
  const auto r = evaluate_dataset(model_restorer(m), root_ / "shdd", "test");
  double p = 0, s = 0, bp = 0, bs = 0;
  for (const auto& i : r.per_image) {
    p += i.psnr;
    s += i.ssim;
    bp += i.baseline_psnr;
    bs += i.baseline_ssim;
  }
  const double n = double(r.per_image.size());
  EXPECT_EQ(r.mean_psnr, p / n);
  EXPECT_EQ(r.mean_ssim, s / n);
  EXPECT_EQ(r.baseline_psnr, bp / n);
  EXPECT_EQ(r.baseline_ssim, bs / n);
}

TEST_F(EvalTest, MissingCleanIsSkippedAndCounted) {
  fs::remove(root_ / "shdd" / "test" / "clean" / "img_002.png");
  const auto r = evaluate_dataset(identity_restorer(), root_ / "shdd", "test");
  EXPECT_EQ(r.per_image.size(), 3u);
  ASSERT_EQ(r.skipped.size(), 1u);
  const auto j = nlohmann::json::parse(report_to_json(r));
  EXPECT_EQ(j.at("n").get<int>(), 3);
  EXPECT_EQ(j.at("skipped").size(), 1u);
  EXPECT_EQ(j.at("split"), "test");
  for (const char* key : {"mean_psnr", "mean_ssim", "baseline_psnr", "baseline_ssim", "per_image"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
}
