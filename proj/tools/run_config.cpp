#include "run_config.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

namespace meps::cli {

using nlohmann::json;

namespace {

GenerateSettings generate_from_json(const json& j) {
  GenerateSettings g;
  for (const auto& [key, value] : j.items()) {
    if (key == "level") g.level = level_from_name(value.get<std::string>());
    else if (key == "seed") g.seed = value.get<std::uint64_t>();
    else if (key == "split") g.split = value.get<std::string>();
    else if (key == "variants") {
      if (value.is_null()) g.variants.reset();
      else g.variants = value.get<std::size_t>();
    } else {
      throw std::invalid_argument("generate config: unknown key '" + key + "'");
    }
  }
  return g;
}

json generate_to_json(const GenerateSettings& g) {
  json j = {{"level", std::string(level_name(g.level))}, {"seed", g.seed}, {"split", g.split}};
  j["variants"] = g.variants ? json(*g.variants) : json(nullptr);
  return j;
}

}  // namespace

RunConfig preset(const std::string& name) {
  RunConfig cfg;
  if (name == "desk") return cfg;
  if (name == "desk-tiny") {
    cfg.model = MepsNetConfig::desk_tiny();
    return cfg;
  }
  if (name == "paper") {
    cfg.model = MepsNetConfig::paper_default();
    cfg.train = TrainConfig::paper_default();
    return cfg;
  }
  throw ConfigError("unknown preset '" + name + "' (desk|desk-tiny|paper)");
}

RunConfig load_run_config(const RunConfig& base, const std::string& path, const std::vector<std::string>& overrides) {
  json doc = json::parse(run_config_to_json(base));
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    json file;
    try {
      file = json::parse(ss.str());
    } catch (const json::exception& e) {
      throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    if (!file.is_object()) throw ConfigError("config file " + path + " must hold a JSON object");
    for (const auto& [section, body] : file.items()) {
      if (!body.is_object()) throw ConfigError("config section '" + section + "' must be an object");
      for (const auto& [key, value] : body.items()) doc[section][key] = value;
    }
  }

  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    const auto dot = o.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw ConfigError("override '" + o + "' must look like section.key=value");
    }
    const std::string section = o.substr(0, dot);
    const std::string key = o.substr(dot + 1, eq - dot - 1);
    const std::string text = o.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::exception&) {
      value = text;
    }
    doc[section][key] = value;
  }

  RunConfig cfg;
  try {
    for (const auto& [section, body] : doc.items()) {
      if (section == "model") cfg.model = config_from_json(body.dump());
      else if (section == "train") cfg.train = train_config_from_json(body.dump());
      else if (section == "generate") cfg.generate = generate_from_json(body);
      else throw std::invalid_argument("unknown config section '" + section + "'");
    }
    cfg.model.validate();
    cfg.train.validate(cfg.model.kernel_size);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config value has the wrong type: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

std::string run_config_to_json(const RunConfig& config) {
  const json doc = {{"model", json::parse(config_to_json(config.model))},
                    {"train", json::parse(train_config_to_json(config.train))},
                    {"generate", generate_to_json(config.generate)}};
  return doc.dump(2) + "\n";
}

}  // namespace meps::cli
