#include "meps/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

#include "meps/checkpoint.hpp"

namespace meps {

using nlohmann::json;
namespace fs = std::filesystem;

TrainConfig TrainConfig::paper_default() {
  TrainConfig c;
  c.batch = 16;
  c.patch = 80;
  c.iters = 1'200'000;
  c.base_lr = 1e-4;
  c.lr_drops = {120'000, 300'000};
  c.checkpoint_every = 10'000;
  return c;
}

TrainConfig TrainConfig::desk_default() { return TrainConfig{}; }

void TrainConfig::validate(std::size_t kernel_size) const {
  if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
  if (patch < kernel_size) throw std::invalid_argument("train config: patch must be >= kernel size");
  if (!std::is_sorted(lr_drops.begin(), lr_drops.end())) {
    throw std::invalid_argument("train config: lr_drops must be sorted ascending");
  }
  if (!(base_lr > 0.0)) throw std::invalid_argument("train config: base_lr must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("train config: weight_decay must be >= 0");
  if (checkpoint_every < 1) throw std::invalid_argument("train config: checkpoint_every must be >= 1");
}

std::string train_config_to_json(const TrainConfig& c) {
  const json j = {{"batch", c.batch},       {"patch", c.patch},
                  {"iters", c.iters},       {"base_lr", c.base_lr},
                  {"lr_drops", c.lr_drops}, {"weight_decay", c.weight_decay},
                  {"beta1", c.beta1},       {"beta2", c.beta2},
                  {"eps", c.eps},           {"seed", c.seed},
                  {"checkpoint_every", c.checkpoint_every}};
  return j.dump();
}

TrainConfig train_config_from_json(std::string_view text) {
  const json j = json::parse(text);
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "batch") c.batch = value.get<std::size_t>();
    else if (key == "patch") c.patch = value.get<std::size_t>();
    else if (key == "iters") c.iters = value.get<std::size_t>();
    else if (key == "base_lr") c.base_lr = value.get<double>();
    else if (key == "lr_drops") c.lr_drops = value.get<std::vector<std::size_t>>();
    else if (key == "weight_decay") c.weight_decay = value.get<double>();
    else if (key == "beta1") c.beta1 = value.get<double>();
    else if (key == "beta2") c.beta2 = value.get<double>();
    else if (key == "eps") c.eps = value.get<double>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "checkpoint_every") c.checkpoint_every = value.get<std::size_t>();
    else throw std::invalid_argument("train config: unknown key '" + key + "'");
  }
  return c;
}

double lr_at(std::size_t iter, const TrainConfig& config) {
  const auto drops = std::count_if(config.lr_drops.begin(), config.lr_drops.end(),
                                   [iter](std::size_t d) { return d <= iter; });
  return config.base_lr * std::pow(0.5, static_cast<double>(drops));
}

template <typename T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state, double lr, const TrainConfig& config) {
  for (const auto& p : params) {
    if (p.grad.shape() != p.value.shape()) throw ShapeError("adam_step: gradient shape mismatch for " + p.name);
    if (!p.grad.all_finite()) throw std::runtime_error("adam_step: non-finite gradient in " + p.name);
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.shape());
      state.v.emplace_back(p.value.shape());
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state does not match parameters");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = params[i];
    const double wd = p.kind == ParamKind::kBias ? 0.0 : config.weight_decay;
    auto val = p.value.data();
    const auto grad = p.grad.data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < val.size(); ++j) {
      const double g = static_cast<double>(grad[j]) + wd * static_cast<double>(val[j]);
      const double mj = config.beta1 * static_cast<double>(m[j]) + (1.0 - config.beta1) * g;
      const double vj = config.beta2 * static_cast<double>(v[j]) + (1.0 - config.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / c1;
      const double vhat = vj / c2;
      val[j] = static_cast<T>(static_cast<double>(val[j]) - lr * mhat / (std::sqrt(vhat) + config.eps));
    }
  }
}

PatchBatch sample_patch_batch(const std::vector<ImagePair>& data, std::size_t patch, std::size_t batch, Rng& rng) {
  const bool any_fits = std::any_of(data.begin(), data.end(), [patch](const ImagePair& p) {
    return p.distorted.width() >= patch && p.distorted.height() >= patch;
  });
  if (!any_fits) throw std::invalid_argument("no training image is at least " + std::to_string(patch) + " px");
  PatchBatch out{Tensor<float>({batch, 3, patch, patch}), Tensor<float>({batch, 3, patch, patch})};
  for (std::size_t b = 0; b < batch; ++b) {
    const ImagePair* pair = nullptr;
    while (!pair) {
      const ImagePair& cand = data[rng.below(data.size())];
      if (cand.distorted.width() >= patch && cand.distorted.height() >= patch) pair = &cand;
    }
    const std::size_t x0 = rng.below(pair->distorted.width() - patch + 1);
    const std::size_t y0 = rng.below(pair->distorted.height() - patch + 1);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < patch; ++y) {
        for (std::size_t x = 0; x < patch; ++x) {
          out.distorted.at(b, c, y, x) = pair->distorted.at(c, y0 + y, x0 + x);
          out.clean.at(b, c, y, x) = pair->clean.at(c, y0 + y, x0 + x);
        }
      }
    }
  }
  return out;
}

namespace {

// Stream index offset separating batch sampling from other uses of the seed.
constexpr std::uint64_t kBatchStream = 0xBA7C4000;

Checkpoint optimizer_checkpoint(const MepsNet<float>& model, const AdamState<float>& state, std::size_t next_iter) {
  Checkpoint ckpt;
  ckpt.metadata = json{{"kind", "adam"}, {"step", state.step}, {"next_iter", next_iter}}.dump();
  for (std::size_t i = 0; i < state.m.size(); ++i) {
    ckpt.tensors.push_back({"m." + model.params()[i].name, state.m[i]});
    ckpt.tensors.push_back({"v." + model.params()[i].name, state.v[i]});
  }
  return ckpt;
}

std::size_t restore_optimizer(const Checkpoint& ckpt, const MepsNet<float>& model, AdamState<float>& state) {
  const json meta = json::parse(ckpt.metadata);
  if (meta.value("kind", "") != "adam") throw std::runtime_error("optimizer checkpoint has wrong kind");
  state.step = meta.at("step").get<std::uint64_t>();
  state.m.clear();
  state.v.clear();
  if (state.step > 0) {
    for (const auto& p : model.params()) {
      const NamedTensor* m = ckpt.find("m." + p.name);
      const NamedTensor* v = ckpt.find("v." + p.name);
      if (!m || !v) throw std::runtime_error("optimizer checkpoint is missing moments for " + p.name);
      state.m.push_back(m->value);
      state.v.push_back(v->value);
    }
  }
  return meta.at("next_iter").get<std::size_t>();
}

std::string format_log_line(std::size_t iter, double loss, double lr) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "iter=%zu loss=%.9g lr=%.6g", iter, loss, lr);
  return buf;
}

}  // namespace

TrainResult train(MepsNet<float>& model, const std::vector<ImagePair>& data, const TrainConfig& config,
                  const fs::path& out_dir, bool resume) {
  config.validate(model.config().kernel_size);
  if (data.empty()) throw std::invalid_argument("train: dataset is empty");
  fs::create_directories(out_dir / "checkpoints");
  const fs::path model_path = out_dir / "model.meps";
  const fs::path optim_path = out_dir / "optim.meps";

  AdamState<float> state;
  TrainResult result;
  if (resume) {
    model = load_model<float>(model_path);
    result.first_iter = restore_optimizer(load_checkpoint(optim_path), model, state);
  }
  std::ofstream log(out_dir / "train.log", resume ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot open training log in " + out_dir.string());

  auto save = [&](std::size_t next_iter) {
    save_model(model_path, model);
    save_checkpoint(optim_path, optimizer_checkpoint(model, state, next_iter));
  };

  for (std::size_t iter = result.first_iter; iter < config.iters; ++iter) {
    const double lr = lr_at(iter, config);
    Rng rng = Rng::child(config.seed ^ kBatchStream, iter);
    const PatchBatch batch = sample_patch_batch(data, config.patch, config.batch, rng);

    Graph<float> g;
    Binding<float> bind(g, model.params(), true);
    Var<float> loss = mse_loss(model.forward(bind, g.leaf(batch.distorted)), g.leaf(batch.clean));
    const double loss_value = loss.value()[0];
    if (!std::isfinite(loss_value)) {
      throw std::runtime_error("non-finite loss at iteration " + std::to_string(iter) +
                               "; last good checkpoint kept in " + out_dir.string());
    }
    g.backward(loss);
    bind.collect_grads(model.params());
    adam_step(model.params(), state, lr, config);

    result.losses.push_back(loss_value);
    log << format_log_line(iter, loss_value, lr) << '\n';
    if ((iter + 1) % config.checkpoint_every == 0) {
      log.flush();
      save(iter + 1);
      save_model(out_dir / "checkpoints" / ("model_" + std::to_string(iter + 1) + ".meps"), model);
    }
  }
  save(std::max(config.iters, result.first_iter));
  return result;
}

template void adam_step<float>(ParameterSet<float>&, AdamState<float>&, double, const TrainConfig&);
template void adam_step<double>(ParameterSet<double>&, AdamState<double>&, double, const TrainConfig&);

}  // namespace meps
