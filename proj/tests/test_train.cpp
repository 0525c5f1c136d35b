#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "meps/checkpoint.hpp"
#include "meps/train.hpp"
#include "support/oracles.hpp"

using namespace meps;
namespace fs = std::filesystem;

namespace {

std::vector<ImagePair> tiny_dataset(std::size_t n, std::size_t w, std::size_t h, std::uint64_t seed) {
  std::vector<ImagePair> data;
  for (std::size_t i = 0; i < n; ++i) {
    const Image clean = oracle::synthetic_image(w, h, Rng::child_seed(seed, i));
    auto s = synthesize_image(clean, "s" + std::to_string(i), Level::kModerate, 0, seed);
    data.push_back({"s" + std::to_string(i), std::move(s.distorted), clean});
  }
  return data;
}

ParameterSet<double> scalar_param(double value) {
  ParameterSet<double> ps;
  ps.add("p", ParamKind::kWeight, {1});
  ps[0].value[0] = value;
  return ps;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(TrainConfig, PresetsJsonAndValidation) {
  const auto paper = TrainConfig::paper_default();
  EXPECT_EQ(paper.batch, 16u);
  EXPECT_EQ(paper.patch, 80u);
  EXPECT_EQ(paper.iters, 1'200'000u);
  EXPECT_EQ(paper.base_lr, 1e-4);
  EXPECT_EQ(paper.beta2, 0.99);
  EXPECT_EQ(paper.weight_decay, 1e-4);
  EXPECT_EQ(train_config_from_json(train_config_to_json(paper)), paper);
  EXPECT_EQ(TrainConfig{}, TrainConfig::desk_default());
  EXPECT_THROW(train_config_from_json(R"({"lr": 1})"), std::invalid_argument);
  TrainConfig bad;
  bad.lr_drops = {300, 200};
  EXPECT_THROW(bad.validate(3), std::invalid_argument);
  bad = TrainConfig{};
  bad.patch = 2;
  EXPECT_THROW(bad.validate(3), std::invalid_argument);
}

TEST(LrSchedule, PaperValues) {
  const auto c = TrainConfig::paper_default();
  EXPECT_EQ(lr_at(0, c), 1e-4);
  EXPECT_EQ(lr_at(119'999, c), 1e-4);
  EXPECT_EQ(lr_at(120'000, c), 5e-5);
  EXPECT_EQ(lr_at(300'000, c), 2.5e-5);
  EXPECT_EQ(lr_at(1'199'999, c), 2.5e-5);
}

TEST(LrSchedule, NoDropsIsConstant) {
  TrainConfig c;
  c.lr_drops.clear();
  for (std::size_t i : {0, 10, 1000000}) EXPECT_EQ(lr_at(i, c), c.base_lr);
}

TEST(LrSchedule, NonIncreasingWithOneJumpPerDrop) {
  TrainConfig c;
  c.lr_drops = {5, 17, 40};
  std::size_t jumps = 0;
  for (std::size_t i = 1; i < 60; ++i) {
    EXPECT_LE(lr_at(i, c), lr_at(i - 1, c));
    jumps += lr_at(i, c) != lr_at(i - 1, c);
  }
  EXPECT_EQ(jumps, 3u);
}

TEST(Adam, FirstStepHandValue) {
  auto ps = scalar_param(0.0);
  ps[0].grad[0] = 1.0;
  TrainConfig c;
  c.weight_decay = 0;
  AdamState<double> st;
  adam_step(ps, st, 0.1, c);
  EXPECT_DOUBLE_EQ(ps[0].value[0], -0.1 / (1.0 + 1e-8));
}

TEST(Adam, ZeroGradIsExactNoOp) {
  MepsNet<double> m(MepsNetConfig::desk_tiny());
  init_parameters(m, 1);
  const auto before = m.params();
  TrainConfig c;
  c.weight_decay = 0;
  AdamState<double> st;
  for (int i = 0; i < 3; ++i) adam_step(m.params(), st, 1e-2, c);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(m.params()[i].value, before[i].value);
}

TEST(Adam, TwoStepsOnSquareMatchHandTrace) {
  // f(p) = p^2 from p = 1, lr 0.1, wd 0, beta = (0.9, 0.99), eps 1e-8.
  // step 1: g = 2, m = 0.2, v = 0.04, m_hat = 2, v_hat = 4
  const double p1 = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
  // step 2: g = 2 p1, m = 0.18 + 0.1 g, v = 0.0396 + 0.01 g^2
  const double g2 = 2.0 * p1;
  const double m2 = 0.18 + 0.1 * g2, v2 = 0.0396 + 0.01 * g2 * g2;
  const double p2 = p1 - 0.1 * (m2 / 0.19) / (std::sqrt(v2 / 0.0199) + 1e-8);

  auto ps = scalar_param(1.0);
  TrainConfig c;
  c.weight_decay = 0;
  AdamState<double> st;
  ps[0].grad[0] = 2.0;
  adam_step(ps, st, 0.1, c);
  EXPECT_NEAR(ps[0].value[0], p1, 1e-12);
  ps[0].grad[0] = 2.0 * ps[0].value[0];
  adam_step(ps, st, 0.1, c);
  EXPECT_NEAR(ps[0].value[0], p2, 1e-12);
}

TEST(Adam, WeightDecaySkipsBiases) {
  ParameterSet<double> ps;
  ps.add("w", ParamKind::kWeight, {1});
  ps.add("b", ParamKind::kBias, {1});
  ps[0].value[0] = 2.0;
  ps[1].value[0] = 2.0;
  TrainConfig c;
  c.weight_decay = 0.5;
  AdamState<double> st;
  adam_step(ps, st, 0.1, c);
  EXPECT_LT(ps[0].value[0], 2.0);
  EXPECT_EQ(ps[1].value[0], 2.0);
}

TEST(Adam, NonFiniteGradientAbortsBeforeUpdate) {
  ParameterSet<double> ps;
  ps.add("a", ParamKind::kWeight, {2});
  ps.add("b", ParamKind::kWeight, {1});
  ps[0].grad[0] = 1.0;
  ps[1].grad[0] = std::numeric_limits<double>::quiet_NaN();
  AdamState<double> st;
  EXPECT_THROW(adam_step(ps, st, 0.1, TrainConfig{}), std::runtime_error);
  EXPECT_EQ(ps[0].value[0], 0.0);
  EXPECT_EQ(st.step, 0u);
}

TEST(PatchBatch, ShapesCropsAndDeterminism) {
  const auto data = tiny_dataset(3, 80, 72, 5);
  Rng a(1), b(1);
  const auto x = sample_patch_batch(data, 24, 5, a);
  const auto y = sample_patch_batch(data, 24, 5, b);
  EXPECT_EQ(x.distorted.shape(), (Shape{5, 3, 24, 24}));
  EXPECT_EQ(x.clean.shape(), (Shape{5, 3, 24, 24}));
  EXPECT_EQ(x.distorted, y.distorted);
  EXPECT_EQ(x.clean, y.clean);
}

TEST(PatchBatch, IdentityRegionCropsMatchClean) {
  // A single-region identity entry: distorted == clean, so every crop agrees.
  const Image clean = oracle::synthetic_image(64, 64, 3);
  std::vector<ImagePair> data{{"id", clean, clean}};
  Rng rng(2);
  const auto batch = sample_patch_batch(data, 16, 8, rng);
  EXPECT_EQ(batch.distorted, batch.clean);
}

TEST(PatchBatch, UndersizedImagesAreNeverChosen) {
  auto data = tiny_dataset(1, 64, 64, 2);
  data.push_back({"small", Image(10, 10, 0.0f), Image(10, 10, 0.0f)});
  Rng rng(3);
  const auto batch = sample_patch_batch(data, 32, 16, rng);
  for (float v : batch.clean.data()) ASSERT_NE(v, 0.0f);  // synthetic images have no pure-black pixels
  std::vector<ImagePair> only_small{data.back()};
  EXPECT_THROW(sample_patch_batch(only_small, 32, 1, rng), std::invalid_argument);
}

TEST(Training, ZeroItersWritesInitialization) {
  MepsNet<float> m(MepsNetConfig::desk_tiny());
  init_parameters(m, 4);
  const auto init = m.params();
  TrainConfig c;
  c.iters = 0;
  const auto dir = oracle::scratch_dir("train_zero");
  const auto result = train(m, tiny_dataset(2, 64, 64, 1), c, dir);
  EXPECT_TRUE(result.losses.empty());
  const auto loaded = load_model<float>(dir / "model.meps");
  for (std::size_t i = 0; i < init.size(); ++i) EXPECT_EQ(loaded.params()[i].value, init[i].value);
  EXPECT_TRUE(fs::exists(dir / "optim.meps"));
}

TEST(Training, LogFormatAndCheckpointCadence) {
  MepsNet<float> m(MepsNetConfig::desk_tiny());
  init_parameters(m, 4);
  TrainConfig c;
  c.iters = 6;
  c.batch = 2;
  c.patch = 16;
  c.checkpoint_every = 4;
  c.lr_drops = {3};
  const auto dir = oracle::scratch_dir("train_log");
  train(m, tiny_dataset(2, 64, 64, 1), c, dir);
  std::ifstream log(dir / "train.log");
  std::string line;
  std::size_t n = 0;
  while (std::getline(log, line)) {
    std::size_t iter = 0;
    double loss = 0, lr = 0;
    ASSERT_EQ(std::sscanf(line.c_str(), "iter=%zu loss=%lf lr=%lf", &iter, &loss, &lr), 3) << line;
    EXPECT_EQ(iter, n);
    EXPECT_DOUBLE_EQ(lr, n < 3 ? 1e-3 : 5e-4);
    ++n;
  }
  EXPECT_EQ(n, 6u);
  EXPECT_TRUE(fs::exists(dir / "checkpoints" / "model_4.meps"));
  EXPECT_FALSE(fs::exists(dir / "checkpoints" / "model_6.meps"));
  EXPECT_TRUE(fs::exists(dir / "model.meps"));
}

TEST(Training, ResumeReplaysUnbrokenTrajectory) {
  const auto data = tiny_dataset(3, 64, 64, 8);
  TrainConfig c;
  c.iters = 8;
  c.batch = 2;
  c.patch = 16;
  c.checkpoint_every = 100;
  c.lr_drops = {5};

  MepsNet<float> full(MepsNetConfig::desk_tiny());
  init_parameters(full, 6);
  const auto full_dir = oracle::scratch_dir("train_full");
  const auto unbroken = train(full, data, c, full_dir);

  MepsNet<float> part(MepsNetConfig::desk_tiny());
  init_parameters(part, 6);
  const auto part_dir = oracle::scratch_dir("train_part");
  auto first = c;
  first.iters = 3;
  const auto a = train(part, data, first, part_dir);
  MepsNet<float> fresh(MepsNetConfig::desk_tiny());
  const auto b = train(fresh, data, c, part_dir, true);
  EXPECT_EQ(b.first_iter, 3u);

  std::vector<double> stitched = a.losses;
  stitched.insert(stitched.end(), b.losses.begin(), b.losses.end());
  EXPECT_EQ(stitched, unbroken.losses);
  EXPECT_EQ(slurp(part_dir / "model.meps"), slurp(full_dir / "model.meps"));
  EXPECT_EQ(slurp(part_dir / "train.log"), slurp(full_dir / "train.log"));
}

TEST(Training, SmallStepDecreasesFrozenBatchLoss) {
  const auto data = tiny_dataset(2, 64, 64, 3);
  TrainConfig c;
  c.weight_decay = 0;
  for (std::uint64_t rep = 0; rep < 10; ++rep) {
    MepsNet<float> m(MepsNetConfig::desk_tiny());
    init_parameters(m, 100 + rep);
    Rng rng(rep);
    const auto batch = sample_patch_batch(data, 16, 2, rng);
    auto loss_now = [&] {
      Graph<float> g;
      Binding<float> bind(g, m.params(), false);
      return double(mse_loss(m.forward(bind, g.leaf(batch.distorted)), g.leaf(batch.clean)).value()[0]);
    };
    const double before = loss_now();
    Graph<float> g;
    Binding<float> bind(g, m.params(), true);
    g.backward(mse_loss(m.forward(bind, g.leaf(batch.distorted)), g.leaf(batch.clean)));
    bind.collect_grads(m.params());
    AdamState<float> st;
    adam_step(m.params(), st, 1e-6, c);
    EXPECT_LT(loss_now(), before) << "repeat " << rep;
  }
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  MepsNet<float> m(MepsNetConfig::desk_default());
  init_parameters(m, 31);
  Rng rng(4);
  for (auto& p : m.params()) {
    if (p.kind == ParamKind::kBias) p.value = randn<float>(p.value.shape(), rng, 0.1);
  }
  const auto x = rand_uniform<float>({1, 3, 20, 17}, rng, 0, 1);
  const auto dir = oracle::scratch_dir("ckpt");
  save_model(dir / "m.meps", m);
  const auto back = load_model<float>(dir / "m.meps");
  EXPECT_EQ(back.config(), m.config());
  EXPECT_EQ(back.infer(x), m.infer(x));

  const auto ckpt = load_checkpoint(dir / "m.meps");
  EXPECT_EQ(ckpt.element_count(), count_parameters(m).total);
  // payload size follows from the documented layout
  std::size_t bytes = 4 + 4 + 8 + ckpt.metadata.size() + 8;
  for (const auto& t : ckpt.tensors) bytes += 4 + t.name.size() + 4 + 8 * t.value.rank() + 4 * t.value.size();
  EXPECT_EQ(fs::file_size(dir / "m.meps"), bytes);
}

TEST(Checkpoint, RejectsCorruptOrMismatchedFiles) {
  const auto dir = oracle::scratch_dir("ckpt_bad");
  std::ofstream(dir / "junk.meps") << "JUNKJUNKJUNK";
  EXPECT_THROW(load_checkpoint(dir / "junk.meps"), std::runtime_error);
  EXPECT_THROW(load_checkpoint(dir / "missing.meps"), std::runtime_error);

  MepsNet<float> m(MepsNetConfig::desk_tiny());
  auto ckpt = model_to_checkpoint(m);
  ckpt.tensors.pop_back();
  EXPECT_THROW(model_from_checkpoint<float>(ckpt), std::runtime_error);
  ckpt = model_to_checkpoint(m);
  ckpt.tensors[0].value = Tensor<float>({1});
  EXPECT_THROW(model_from_checkpoint<float>(ckpt), std::runtime_error);

  save_model(dir / "t.meps", m);
  fs::resize_file(dir / "t.meps", fs::file_size(dir / "t.meps") - 3);
  EXPECT_THROW(load_checkpoint(dir / "t.meps"), std::runtime_error);
}
