#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "meps/distortion.hpp"
#include "meps/shdd.hpp"
#include "support/oracles.hpp"

using namespace meps;
namespace fs = std::filesystem;

namespace {

void expect_tiling(const std::vector<Region>& regions, std::size_t w, std::size_t h) {
  std::vector<int> cover(w * h, 0);
  std::size_t area = 0;
  for (const Region& r : regions) {
    ASSERT_LE(r.x + r.w, w);
    ASSERT_LE(r.y + r.h, h);
    area += r.area();
    for (std::size_t y = r.y; y < r.y + r.h; ++y) {
      for (std::size_t x = r.x; x < r.x + r.w; ++x) ++cover[y * w + x];
    }
  }
  EXPECT_EQ(area, w * h);
  for (int c : cover) ASSERT_EQ(c, 1);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Every file under root, keyed by relative path.
std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& de : fs::recursive_directory_iterator(root)) {
    if (de.is_regular_file()) out[fs::relative(de.path(), root).string()] = slurp(de.path());
  }
  return out;
}

double mean_of(const Image& img) {
  double s = 0;
  for (float v : img.pixels()) s += v;
  return s / double(img.pixels().size());
}

}  // namespace

TEST(SplitRegions, RegionCountIsChopsPlusOne) {
  for (int chops : {1, 2, 3, 4}) {
    Rng rng(5);
    const auto regions = split_regions(256, 192, chops, rng);
    EXPECT_EQ(regions.size(), std::size_t(chops + 1));
    expect_tiling(regions, 256, 192);
  }
}

TEST(SplitRegions, GoldenSeed42) {
  Rng rng(42);
  const std::vector<Region> golden = {{0, 0, 128, 33}, {0, 33, 61, 95}, {61, 33, 67, 95}};
  EXPECT_EQ(split_regions(128, 128, 2, rng), golden);
}

TEST(SplitRegions, TilesAndKeepsMarginsOverManySeeds) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    Rng rng(seed);
    const std::size_t w = 64 + seed % 97, h = 64 + (seed * 7) % 131;
    const auto regions = split_regions(w, h, 4, rng);
    ASSERT_EQ(regions.size(), 5u);
    expect_tiling(regions, w, h);
    for (const Region& r : regions) {
      ASSERT_GE(r.w, kMinRegionExtent);
      ASSERT_GE(r.h, kMinRegionExtent);
    }
  }
}

TEST(SplitRegions, RejectsImagesTooSmall) {
  Rng rng(1);
  EXPECT_THROW(split_regions(63, 128, 2, rng), std::invalid_argument);
  EXPECT_THROW(split_regions(128, 20, 2, rng), std::invalid_argument);
}

TEST(Levels, ChopsAndNames) {
  EXPECT_EQ(level_chops(Level::kEasy), 2);
  EXPECT_EQ(level_chops(Level::kModerate), 3);
  EXPECT_EQ(level_chops(Level::kDifficult), 4);
  for (Level l : {Level::kEasy, Level::kModerate, Level::kDifficult}) EXPECT_EQ(level_from_name(level_name(l)), l);
  EXPECT_THROW(level_from_name("extreme"), std::invalid_argument);
  for (DistortionKind k : kAllDistortions) EXPECT_EQ(kind_from_name(kind_name(k)), k);
}

TEST(PinkNoise, NormalizedAndDeterministic) {
  Rng a(9), b(9);
  const auto f = pink_noise_field(96, 64, a);
  EXPECT_EQ(f, pink_noise_field(96, 64, b));
  double s = 0, s2 = 0;
  for (double v : f) s += v;
  const double mean = s / double(f.size());
  for (double v : f) s2 += (v - mean) * (v - mean);
  EXPECT_LE(std::abs(mean), 1e-6);
  EXPECT_NEAR(std::sqrt(s2 / double(f.size())), 1.0, 1e-6);
}

TEST(PinkNoise, SpectrumSlopeMatchesDirectDftOracle) {
  Rng rng(2024);
  const std::size_t side = 256;
  const auto field = pink_noise_field(side, side, rng);
  const double oracle_slope = oracle::naive_spectrum_slope(field, side, side, 4, 64);
  const double slope = radial_spectrum_slope(field, side, side, 4, 64);
  EXPECT_NEAR(oracle_slope, -2.0, 0.4);
  EXPECT_NEAR(slope, oracle_slope, 1e-6);
}

TEST(Distort, IdentityIsBitExact) {
  const Image img = oracle::synthetic_image(80, 70, 3);
  Image out = img;
  distort_region(out, {DistortionKind::kIdentity, 0.0, 123});
  EXPECT_EQ(out, img);
}

TEST(Distort, ContrastLevel40OnWhite) {
  Image img(4, 4, 1.0f);
  distort_region(img, {DistortionKind::kContrast, 40.0, 0});
  for (float v : img.pixels()) EXPECT_NEAR(v, 0.70f, 1e-6f);
}

TEST(Distort, GaussianNoiseVariance) {
  Image img(256, 256, 0.5f);
  const Image clean = img;
  Rng rng(77);
  add_gaussian_noise(img, 0.02, rng);
  double s = 0, s2 = 0;
  const double n = double(img.pixels().size());
  for (std::size_t i = 0; i < img.pixels().size(); ++i) {
    const double d = double(img.pixels()[i]) - double(clean.pixels()[i]);
    s += d;
    s2 += d * d;
  }
  const double var = s2 / n - (s / n) * (s / n);
  EXPECT_NEAR(var, 0.02, 0.002);
}

TEST(Distort, BlurLeavesConstantUnchanged) {
  Image img(70, 65, 0.3f);
  gaussian_blur(img, 2.5);
  for (float v : img.pixels()) EXPECT_NEAR(v, 0.3f, 1e-6f);
}

TEST(Distort, BlurKernelShape) {
  const auto k = gaussian_kernel(2.25);  // sigma 1.5, radius 5
  ASSERT_EQ(k.size(), 11u);
  double sum = 0;
  for (double v : k) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-15);
  EXPECT_NEAR(k[5] / k[6], std::exp(1.0 / (2 * 2.25)), 1e-12);
}

TEST(Distort, BlurPreservesRegionMean) {
  const Image src = oracle::synthetic_image(128, 96, 11);
  for (double var : {1.0, 1.7, 2.5}) {
    const Image region = crop(src, {17, 9, 60, 50});
    Image blurred = region;
    distort_region(blurred, {DistortionKind::kGaussianBlur, var, 0});
    EXPECT_NEAR(mean_of(blurred), mean_of(region), 0.01 * mean_of(region));
  }
}

TEST(Distort, PinkNoiseSharedAcrossChannels) {
  Image img(64, 64, 0.5f);
  Rng rng(4);
  add_pink_noise(img, 8.0, rng);
  for (std::size_t y = 0; y < 64; ++y) {
    for (std::size_t x = 0; x < 64; ++x) {
      EXPECT_EQ(img.at(0, y, x), img.at(1, y, x));
      EXPECT_EQ(img.at(0, y, x), img.at(2, y, x));
    }
  }
}

TEST(Distort, OutputsClipped) {
  for (DistortionKind k : kAllDistortions) {
    Image img = oracle::synthetic_image(64, 64, 8);
    const auto range = strength_range(k);
    distort_region(img, {k, range ? range->hi : 0.0, 5});
    for (float v : img.pixels()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

TEST(Distort, StrengthOutsideRangeRejected) {
  Image img(32, 32, 0.5f);
  EXPECT_THROW(distort_region(img, {DistortionKind::kGaussianNoise, 0.03, 0}), std::invalid_argument);
  EXPECT_THROW(distort_region(img, {DistortionKind::kGaussianBlur, 0.5, 0}), std::invalid_argument);
  EXPECT_THROW(distort_region(img, {DistortionKind::kPinkNoise, 11.0, 0}), std::invalid_argument);
  EXPECT_THROW(distort_region(img, {DistortionKind::kContrast, 24.0, 0}), std::invalid_argument);
}

TEST(Synthesis, SampledStrengthsStayInRange) {
  std::map<DistortionKind, std::size_t> counts;
  std::size_t samples = 0;
  for (std::size_t v = 0; samples < 10000; ++v) {
    const auto e = sample_entry("range_probe", 128, 128, Level::kDifficult, v, 31);
    for (const auto& rd : e.regions) {
      ++counts[rd.spec.kind];
      ++samples;
      if (const auto r = strength_range(rd.spec.kind)) {
        ASSERT_GE(rd.spec.strength, r->lo);
        ASSERT_LE(rd.spec.strength, r->hi);
      }
    }
  }
  for (DistortionKind k : kAllDistortions) EXPECT_NEAR(double(counts[k]) / double(samples), 0.2, 0.02);
}

TEST(Synthesis, ModerateHasFourRegionsAndIsReproducible) {
  const Image clean = oracle::synthetic_image(128, 96, 1);
  const auto a = synthesize_image(clean, "img", Level::kModerate, 3, 99);
  const auto b = synthesize_image(clean, "img", Level::kModerate, 3, 99);
  EXPECT_EQ(a.entry.regions.size(), 4u);
  EXPECT_EQ(a.distorted, b.distorted);
  EXPECT_EQ(a.entry, b.entry);
  EXPECT_EQ(render_entry(clean, a.entry), a.distorted);
  const auto other = synthesize_image(clean, "img", Level::kModerate, 4, 99);
  EXPECT_NE(other.entry, a.entry);
}

TEST(Manifest, JsonRoundTrip) {
  Manifest m;
  m.master_seed = 12345678901234ULL;
  m.level = Level::kDifficult;
  for (std::size_t v = 0; v < 3; ++v) {
    auto e = sample_entry("abc", 100, 80, m.level, v, m.master_seed);
    e.split = "train";
    e.file = "train/abc_" + std::to_string(v) + ".png";
    e.clean = "train/clean/abc.png";
    m.entries.push_back(e);
  }
  const Manifest back = manifest_from_json(manifest_to_json(m));
  EXPECT_EQ(back.master_seed, m.master_seed);
  EXPECT_EQ(back.level, m.level);
  EXPECT_EQ(back.entries, m.entries);
}

class GenerateTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = oracle::scratch_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
    clean_ = root_ / "clean";
    oracle::write_synthetic_set(clean_, 8, 96, 80, 7);
  }
  GenerateConfig config(const std::string& out, std::size_t threads) const {
    GenerateConfig c;
    c.clean_dir = clean_;
    c.out_dir = root_ / out;
    c.level = Level::kModerate;
    c.seed = 7;
    c.threads = threads;
    return c;
  }
  fs::path root_, clean_;
};

TEST_F(GenerateTest, EightImagesGiveNinetySixVariants) {
  const auto report = generate_dataset(config("shdd", 1));
  EXPECT_EQ(report.sources, 8u);
  EXPECT_EQ(report.images_written, 96u);
  EXPECT_TRUE(report.warnings.empty());
  const Manifest m = read_manifest(root_ / "shdd" / "manifest.json");
  EXPECT_EQ(m.entries.size(), 96u);
  std::size_t pngs = 0;
  for (const auto& de : fs::directory_iterator(root_ / "shdd" / "train")) pngs += de.path().extension() == ".png";
  EXPECT_EQ(pngs, 96u);
}

TEST_F(GenerateTest, ByteDeterministicAcrossRunsAndThreads) {
  generate_dataset(config("a", 1));
  generate_dataset(config("b", 1));
  generate_dataset(config("c", 4));
  const auto a = tree_bytes(root_ / "a");
  EXPECT_EQ(a, tree_bytes(root_ / "b"));
  EXPECT_EQ(a, tree_bytes(root_ / "c"));
}

TEST_F(GenerateTest, EntriesTileAndIdentityRegionsMatchClean) {
  generate_dataset(config("shdd", 2));
  const fs::path out = root_ / "shdd";
  const Manifest m = read_manifest(out / "manifest.json");
  std::size_t identity_regions = 0;
  for (const auto& e : m.entries) {
    std::vector<Region> regions;
    for (const auto& rd : e.regions) regions.push_back(rd.region);
    ASSERT_EQ(regions.size(), 4u);
    expect_tiling(regions, e.width, e.height);
    const Image distorted = read_png(out / e.file);
    const Image clean = read_png(out / e.clean);
    EXPECT_EQ(clean, read_png(clean_ / (e.source + ".png")));
    for (const auto& rd : e.regions) {
      if (rd.spec.kind != DistortionKind::kIdentity) continue;
      ++identity_regions;
      EXPECT_EQ(crop(distorted, rd.region), crop(clean, rd.region));
    }
  }
  EXPECT_GT(identity_regions, 0u);
}

TEST_F(GenerateTest, RenderingFromManifestReproducesFiles) {
  generate_dataset(config("shdd", 1));
  const fs::path out = root_ / "shdd";
  const Manifest m = read_manifest(out / "manifest.json");
  for (std::size_t i = 0; i < m.entries.size(); i += 11) {
    const auto& e = m.entries[i];
    write_png(root_ / "again.png", render_entry(read_png(out / e.clean), e));
    EXPECT_EQ(slurp(root_ / "again.png"), slurp(out / e.file));
  }
}

TEST_F(GenerateTest, HoldoutSplitsHalfAndHalf) {
  auto c = config("shdd", 1);
  c.split = "holdout";
  const auto report = generate_dataset(c);
  EXPECT_EQ(report.images_written, 8u);
  EXPECT_EQ(load_split(c.out_dir, "val").pairs.size(), 4u);
  EXPECT_EQ(load_split(c.out_dir, "test").pairs.size(), 4u);
  // a later train run merges into the same manifest
  c.split = "train";
  c.variants = 2;
  generate_dataset(c);
  EXPECT_EQ(read_manifest(c.out_dir / "manifest.json").entries.size(), 24u);
  c.seed = 8;
  EXPECT_THROW(generate_dataset(c), std::runtime_error);
}

TEST_F(GenerateTest, EmptyInputDirLeavesNoOutput) {
  auto c = config("empty_out", 1);
  c.clean_dir = root_ / "nothing";
  fs::create_directories(c.clean_dir);
  EXPECT_THROW(generate_dataset(c), std::runtime_error);
  EXPECT_FALSE(fs::exists(c.out_dir));
}

TEST_F(GenerateTest, UndecodableImagesAreSkippedWithWarning) {
  std::ofstream(clean_ / "broken.png") << "not a png";
  write_png(clean_ / "tiny.png", Image(20, 20, 0.5f));
  const auto report = generate_dataset(config("shdd", 1));
  EXPECT_EQ(report.sources, 8u);
  EXPECT_EQ(report.warnings.size(), 2u);
}

TEST_F(GenerateTest, LoadSplitCountsMissingFiles) {
  auto c = config("shdd", 1);
  c.variants = 1;
  generate_dataset(c);
  fs::remove(c.out_dir / "train" / "img_000_0.png");
  const auto loaded = load_split(c.out_dir, "train");
  EXPECT_EQ(loaded.pairs.size(), 7u);
  ASSERT_EQ(loaded.skipped.size(), 1u);
  EXPECT_EQ(loaded.skipped[0], "train/img_000_0.png");
}
