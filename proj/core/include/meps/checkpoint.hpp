#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "meps/model.hpp"
#include "meps/tensor.hpp"

namespace meps {

/// On-disk layout (all integers little-endian):
///   "MEPS"            4 bytes magic
///   u32               format version
///   u64 + bytes       UTF-8 JSON metadata block
///   u64               tensor count
///   per tensor:       u32 name length, name bytes, u32 rank, u64 dims[rank],
///                     float32 values
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

struct Checkpoint {
  std::string metadata = "{}";  // JSON text
  std::vector<NamedTensor> tensors;

  std::size_t element_count() const;
  const NamedTensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Metadata {"kind": "model", "config": {...}} plus every parameter by name.
template <typename T>
Checkpoint model_to_checkpoint(const MepsNet<T>& model);

/// Rebuilds the model from the stored config; every parameter must be present
/// with its exact shape.
template <typename T>
MepsNet<T> model_from_checkpoint(const Checkpoint& ckpt);

template <typename T>
void save_model(const std::filesystem::path& path, const MepsNet<T>& model) {
  save_checkpoint(path, model_to_checkpoint(model));
}

template <typename T>
MepsNet<T> load_model(const std::filesystem::path& path) {
  return model_from_checkpoint<T>(load_checkpoint(path));
}

}  // namespace meps
