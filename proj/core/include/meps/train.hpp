#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "meps/model.hpp"
#include "meps/rng.hpp"
#include "meps/shdd.hpp"

namespace meps {

struct TrainConfig {
  std::size_t batch = 8;
  std::size_t patch = 32;
  std::size_t iters = 500;
  double base_lr = 1e-3;
  std::vector<std::size_t> lr_drops = {200, 350};
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 100;

  /// 16 x 80x80 patches, 1.2M iterations, lr 1e-4 halved at 120K and 300K.
  static TrainConfig paper_default();
  /// 8 x 32x32 patches, 500 iterations, halved at 200 and 350.
  static TrainConfig desk_default();

  void validate(std::size_t kernel_size) const;
  bool operator==(const TrainConfig&) const = default;
};

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(std::string_view text);

/// base_lr * 0.5^(number of drops <= iter).
double lr_at(std::size_t iter, const TrainConfig& config);

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;
};

/// Adam with coupled L2 decay on every non-bias parameter:
/// g = grad + wd * p; m, v moment updates; bias-corrected step of size lr.
/// Throws before touching any parameter when a gradient is non-finite.
template <typename T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state, double lr, const TrainConfig& config);

struct PatchBatch {
  Tensor<float> distorted;  // [batch, 3, patch, patch]
  Tensor<float> clean;
};

/// Uniform image choice and uniform crop, identical for both images of a pair.
/// Pairs smaller than the patch are never chosen.
PatchBatch sample_patch_batch(const std::vector<ImagePair>& data, std::size_t patch, std::size_t batch, Rng& rng);

struct TrainResult {
  std::size_t first_iter = 0;
  std::vector<double> losses;  // one per executed iteration
};

/// Runs forward / L2 loss / backward / Adam from the current model state.
///
/// Writes <out>/train.log lines `iter=<n> loss=<f> lr=<f>`, periodic
/// <out>/checkpoints/model_<iter>.meps snapshots, and always leaves the final
/// <out>/model.meps plus <out>/optim.meps. With resume, continues from those
/// two files. Batch i draws from child stream (seed, i), so a resumed run
/// replays the same trajectory as an unbroken one. A non-finite loss aborts
/// without overwriting the last good checkpoint.
TrainResult train(MepsNet<float>& model, const std::vector<ImagePair>& data, const TrainConfig& config,
                  const std::filesystem::path& out_dir, bool resume = false);

}  // namespace meps
