#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "meps/distortion.hpp"
#include "meps/model.hpp"
#include "meps/train.hpp"

namespace meps::cli {

struct GenerateSettings {
  Level level = Level::kModerate;
  std::uint64_t seed = 0;
  std::string split = "train";
  std::optional<std::size_t> variants;
};

/// Everything a run reads from the config file. The file is JSON with
/// optional "model", "train" and "generate" sections; absent sections keep the
/// desk defaults.
struct RunConfig {
  MepsNetConfig model = MepsNetConfig::desk_default();
  TrainConfig train = TrainConfig::desk_default();
  GenerateSettings generate;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Built-in starting points: desk (default), desk-tiny, paper.
RunConfig preset(const std::string& name);

/// Starts from `base`, loads `path` (if non-empty) and applies
/// `section.key=value` overrides in order. Values are parsed as JSON when
/// possible and as strings otherwise.
RunConfig load_run_config(const RunConfig& base, const std::string& path, const std::vector<std::string>& overrides);

/// Canonical JSON text of the effective config; loading it back yields the same config.
std::string run_config_to_json(const RunConfig& config);

}  // namespace meps::cli
