#include "meps/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <json.hpp>
#include <stdexcept>

#include "meps/gradcheck.hpp"

namespace meps {

using nlohmann::json;

MepsNetConfig MepsNetConfig::paper_default() {
  MepsNetConfig c;
  c.experts = 3;
  c.srir_per_expert = 3;
  c.sresidual_per_srir = 12;
  c.templates = 16;
  c.width = 256;
  c.fusion_reduction = 16;
  c.kernel_size = 3;
  return c;
}

MepsNetConfig MepsNetConfig::desk_default() { return MepsNetConfig{}; }

MepsNetConfig MepsNetConfig::desk_tiny() {
  MepsNetConfig c;
  c.experts = 2;
  c.srir_per_expert = 1;
  c.sresidual_per_srir = 1;
  c.templates = 2;
  c.width = 4;
  c.fusion_reduction = 4;
  c.kernel_size = 3;
  return c;
}

void MepsNetConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v < 1) throw std::invalid_argument(std::string("model config: ") + name + " must be >= 1");
  };
  positive(experts, "experts");
  positive(srir_per_expert, "srir_per_expert");
  positive(sresidual_per_srir, "sresidual_per_srir");
  positive(templates, "templates");
  positive(width, "width");
  positive(fusion_reduction, "fusion_reduction");
  positive(kernel_size, "kernel_size");
  if (kernel_size % 2 == 0) throw std::invalid_argument("model config: kernel_size must be odd");
  if (fused_channels() % fusion_reduction != 0) {
    throw std::invalid_argument("model config: experts * width (" + std::to_string(fused_channels()) +
                                ") must be divisible by fusion_reduction (" +
                                std::to_string(fusion_reduction) + ")");
  }
}

std::string config_to_json(const MepsNetConfig& c) {
  const json j = {{"experts", c.experts},
                  {"srir_per_expert", c.srir_per_expert},
                  {"sresidual_per_srir", c.sresidual_per_srir},
                  {"templates", c.templates},
                  {"width", c.width},
                  {"fusion_reduction", c.fusion_reduction},
                  {"kernel_size", c.kernel_size},
                  {"share_parameters", c.share_parameters}};
  return j.dump();
}

MepsNetConfig config_from_json(std::string_view text) {
  const json j = json::parse(text);
  MepsNetConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "experts") c.experts = value.get<std::size_t>();
    else if (key == "srir_per_expert") c.srir_per_expert = value.get<std::size_t>();
    else if (key == "sresidual_per_srir") c.sresidual_per_srir = value.get<std::size_t>();
    else if (key == "templates") c.templates = value.get<std::size_t>();
    else if (key == "width") c.width = value.get<std::size_t>();
    else if (key == "fusion_reduction") c.fusion_reduction = value.get<std::size_t>();
    else if (key == "kernel_size") c.kernel_size = value.get<std::size_t>();
    else if (key == "share_parameters") c.share_parameters = value.get<bool>();
    else throw std::invalid_argument("model config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

namespace {

struct Layout {
  std::optional<std::size_t> bank;
  std::vector<ConvParams> extraction;
  std::vector<ExpertParams> experts;
  ConvParams fusion_reduce{}, fusion_expand{}, recon_fuse{}, recon_out{};
};

// Registers every parameter in a fixed order through `add(name, kind, shape)`.
template <typename AddFn>
Layout build_layout(const MepsNetConfig& cfg, AddFn&& add) {
  cfg.validate();
  Layout l;
  const std::size_t c = cfg.width, s = cfg.kernel_size, k = cfg.templates;
  auto conv = [&](const std::string& name, std::size_t cin, std::size_t cout, std::size_t ks) {
    ConvParams p;
    p.weight = add(name + ".weight", ParamKind::kWeight, Shape{cout, cin, ks, ks});
    p.bias = add(name + ".bias", ParamKind::kBias, Shape{cout});
    return p;
  };

  const std::size_t widths[] = {3, (c + 3) / 4, (c + 1) / 2, c};
  for (std::size_t i = 0; i < 3; ++i) {
    l.extraction.push_back(conv("extract." + std::to_string(i), widths[i], widths[i + 1], s));
  }
  if (cfg.share_parameters) l.bank = add("bank.templates", ParamKind::kTemplate, Shape{k, c, c, s, s});

  auto sconv = [&](const std::string& name) {
    SConvParams p;
    if (cfg.share_parameters) {
      p.weight = add(name + ".coeffs", ParamKind::kCoefficient, Shape{k});
    } else {
      p.weight = add(name + ".weight", ParamKind::kWeight, Shape{c, c, s, s});
    }
    p.bias = add(name + ".bias", ParamKind::kBias, Shape{c});
    return p;
  };
  for (std::size_t e = 0; e < cfg.experts; ++e) {
    const std::string prefix = "expert" + std::to_string(e);
    ExpertParams ex;
    ex.entry = sconv(prefix + ".entry");
    for (std::size_t u = 0; u < cfg.srir_per_expert; ++u) {
      std::vector<SResidualParams> unit;
      for (std::size_t r = 0; r < cfg.sresidual_per_srir; ++r) {
        const std::string block = prefix + ".srir" + std::to_string(u) + ".res" + std::to_string(r);
        unit.push_back({sconv(block + ".conv1"), sconv(block + ".conv2")});
      }
      ex.srirs.push_back(std::move(unit));
    }
    ex.exit = sconv(prefix + ".exit");
    l.experts.push_back(std::move(ex));
  }

  const std::size_t fused = cfg.fused_channels();
  const std::size_t squeezed = fused / cfg.fusion_reduction;
  l.fusion_reduce = conv("fusion.reduce", fused, squeezed, 1);
  l.fusion_expand = conv("fusion.expand", squeezed, fused, 1);
  l.recon_fuse = conv("recon.fuse", fused, c, 1);
  l.recon_out = conv("recon.out", c, 3, s);
  return l;
}

}  // namespace

template <typename T>
MepsNet<T>::MepsNet(MepsNetConfig config) : config_(config) {
  Layout l = build_layout(config_, [this](std::string name, ParamKind kind, Shape shape) {
    return params_.add(std::move(name), kind, std::move(shape));
  });
  bank_ = l.bank;
  extraction_ = std::move(l.extraction);
  experts_ = std::move(l.experts);
  fusion_reduce_ = l.fusion_reduce;
  fusion_expand_ = l.fusion_expand;
  recon_fuse_ = l.recon_fuse;
  recon_out_ = l.recon_out;
}

template <typename T>
std::size_t MepsNet<T>::sconv_count() const {
  return config_.experts * (2 + 2 * config_.srir_per_expert * config_.sresidual_per_srir);
}

template <typename T>
Var<T> MepsNet<T>::conv(Binding<T>& bind, const Var<T>& x, const ConvParams& layer) const {
  return conv2d(x, bind(layer.weight), bind(layer.bias));
}

template <typename T>
Var<T> MepsNet<T>::sconv(Binding<T>& bind, const Var<T>& x, const SConvParams& layer) const {
  Var<T> w = bank_ ? weighted_sum(bind(layer.weight), bind(*bank_)) : bind(layer.weight);
  return conv2d(x, w, bind(layer.bias));
}

template <typename T>
Var<T> MepsNet<T>::forward(Binding<T>& bind, const Var<T>& input, ForwardTrace<T>* trace) const {
  const Shape& in = input.shape();
  if (in.size() != 4 || in[1] != 3) throw ShapeError("MepsNet expects [B,3,H,W] input, got " + shape_str(in));
  if (in[2] < config_.kernel_size || in[3] < config_.kernel_size) {
    throw ShapeError("MepsNet input " + shape_str(in) + " is smaller than the kernel size");
  }

  Var<T> f0 = input;
  for (std::size_t i = 0; i < extraction_.size(); ++i) {
    f0 = conv(bind, f0, extraction_[i]);
    if (i + 1 < extraction_.size()) f0 = relu(f0);
  }

  std::vector<Var<T>> outputs;
  for (const ExpertParams& ex : experts_) {
    Var<T> u = sconv(bind, f0, ex.entry);
    for (const auto& unit : ex.srirs) {
      Var<T> v = u;
      for (const SResidualParams& block : unit) {
        v = add(v, sconv(bind, relu(sconv(bind, v, block.first)), block.second));
      }
      u = add(u, v);
    }
    outputs.push_back(add(f0, sconv(bind, u, ex.exit)));
  }
  Var<T> fd = concat_channels<T>(outputs);

  const std::size_t batch = in[0], fused = config_.fused_channels();
  Var<T> descriptor = reshape(global_avg_pool(fd), {batch, fused, 1, 1});
  Var<T> hidden = relu(conv(bind, descriptor, fusion_reduce_));
  Var<T> scale = reshape(sigmoid(conv(bind, hidden, fusion_expand_)), {batch, fused});
  Var<T> ff = scale_channels(fd, scale);

  Var<T> y = conv(bind, relu(conv(bind, ff, recon_fuse_)), recon_out_);
  if (trace) {
    trace->extracted = f0;
    trace->expert_outputs = outputs;
    trace->concatenated = fd;
    trace->attention = scale;
    trace->fused = ff;
  }
  return y;
}

template <typename T>
Tensor<T> MepsNet<T>::infer(const Tensor<T>& input) const {
  Graph<T> g;
  Binding<T> bind(g, params_, false);
  return forward(bind, g.leaf(input)).value();
}

template <typename T>
Tensor<T> MepsNet<T>::materialize(const SConvParams& layer) const {
  if (!bank_) return params_[layer.weight].value;
  return materialize_weight<T>(params_[layer.weight].value.data(), params_[*bank_].value);
}

template <typename T>
Tensor<T> materialize_weight(std::span<const T> coeffs, const Tensor<T>& bank) {
  if (bank.rank() < 2) throw ShapeError("template bank must have rank >= 2, got " + shape_str(bank.shape()));
  if (coeffs.size() != bank.dim(0)) {
    throw ShapeError("coefficient count " + std::to_string(coeffs.size()) + " does not match bank size K=" +
                     std::to_string(bank.dim(0)));
  }
  const Shape item(bank.shape().begin() + 1, bank.shape().end());
  Tensor<T> out(item);
  const std::size_t n = out.size();
  for (std::size_t j = 0; j < coeffs.size(); ++j) {
    for (std::size_t i = 0; i < n; ++i) out[i] += coeffs[j] * bank[j * n + i];
  }
  return out;
}

namespace {

void tally(ParameterCensus& c, ParamKind kind, std::size_t n) {
  switch (kind) {
    case ParamKind::kTemplate: c.shared_templates += n; break;
    case ParamKind::kCoefficient: c.coefficients += n; break;
    case ParamKind::kWeight:
    case ParamKind::kBias: c.unshared += n; break;
  }
  c.total += n;
}

}  // namespace

template <typename T>
ParameterCensus count_parameters(const MepsNet<T>& model) {
  ParameterCensus c;
  for (const auto& p : model.params()) tally(c, p.kind, p.value.size());
  return c;
}

ParameterCensus count_parameters(const MepsNetConfig& config) {
  ParameterCensus c;
  std::size_t next = 0;
  build_layout(config, [&](const std::string&, ParamKind kind, const Shape& shape) {
    tally(c, kind, shape_numel(shape));
    return next++;
  });
  return c;
}

template <typename T>
void init_parameters(MepsNet<T>& model, std::uint64_t seed) {
  auto& params = model.params();
  const double k = static_cast<double>(model.config().templates);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = params[i];
    Rng rng = Rng::child(seed, i);
    const Shape& s = p.value.shape();
    double stddev = 0.0;
    switch (p.kind) {
      case ParamKind::kWeight: stddev = std::sqrt(2.0 / static_cast<double>(s[1] * s[2] * s[3])); break;
      case ParamKind::kTemplate: stddev = std::sqrt(2.0 / static_cast<double>(s[2] * s[3] * s[4])); break;
      case ParamKind::kCoefficient: stddev = std::sqrt(1.0 / k); break;
      case ParamKind::kBias: break;
    }
    if (p.kind == ParamKind::kBias) {
      p.value.fill(T{0});
    } else {
      p.value = randn<T>(s, rng, stddev);
    }
    p.grad = Tensor<T>(s);
  }
}

std::vector<std::filesystem::path> dump_expert_features(const MepsNet<float>& model, const Image& input,
                                                        const std::filesystem::path& dir) {
  Graph<float> g;
  Binding<float> bind(g, model.params(), false);
  ForwardTrace<float> trace;
  model.forward(bind, g.leaf(image_to_tensor<float>(input)), &trace);
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  const std::size_t h = input.height(), w = input.width(), c = model.config().width;
  for (std::size_t k = 0; k < trace.expert_outputs.size(); ++k) {
    const Tensor<float>& fk = trace.expert_outputs[k].value();
    std::vector<double> mean(h * w, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < h * w; ++i) mean[i] += fk[ch * h * w + i];
    }
    for (double& v : mean) v /= static_cast<double>(c);
    const auto [lo, hi] = std::minmax_element(mean.begin(), mean.end());
    const double range = *hi - *lo;
    std::vector<std::uint8_t> gray(h * w, 0);
    if (range > 0.0) {
      for (std::size_t i = 0; i < h * w; ++i) {
        gray[i] = static_cast<std::uint8_t>(std::lround(255.0 * (mean[i] - *lo) / range));
      }
    }
    const auto path = dir / ("expert_" + std::to_string(k) + ".png");
    write_png_gray(path, w, h, gray);
    written.push_back(path);
  }
  return written;
}

GradAuditReport audit_gradients(const MepsNetConfig& config, std::uint64_t seed, std::size_t side, double eps) {
  const auto start = std::chrono::steady_clock::now();
  MepsNet<double> model(config);
  init_parameters(model, seed);
  // Nonzero biases so every bias path carries signal.
  Rng bias_rng = Rng::child(seed, 1'000'003);
  for (auto& p : model.params()) {
    if (p.kind == ParamKind::kBias) p.value = randn<double>(p.value.shape(), bias_rng, 0.1);
  }
  Rng data_rng = Rng::child(seed, 1'000'033);
  const Tensor<double> input = rand_uniform<double>({1, 3, side, side}, data_rng, 0.0, 1.0);
  const Tensor<double> target = rand_uniform<double>({1, 3, side, side}, data_rng, 0.0, 1.0);

  auto& params = model.params();
  std::vector<double> flat;
  for (const auto& p : params) flat.insert(flat.end(), p.value.data().begin(), p.value.data().end());

  auto load = [&](std::span<const double> values) {
    std::size_t off = 0;
    for (auto& p : params) {
      std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), p.value.size(), p.value.data().begin());
      off += p.value.size();
    }
  };
  auto loss_at = [&](std::span<const double> values) {
    load(values);
    Graph<double> g;
    Binding<double> bind(g, params, false);
    Var<double> y = model.forward(bind, g.leaf(input));
    return mse_loss(y, g.leaf(target)).value()[0];
  };

  load(flat);
  Graph<double> g;
  Binding<double> bind(g, params, true);
  Var<double> loss = mse_loss(model.forward(bind, g.leaf(input)), g.leaf(target));
  g.backward(loss);
  bind.collect_grads(params);
  std::vector<double> analytic;
  for (const auto& p : params) analytic.insert(analytic.end(), p.grad.data().begin(), p.grad.data().end());

  const std::vector<double> numeric = finite_diff_grad(loss_at, flat, eps);
  load(flat);

  GradAuditReport report;
  std::size_t off = 0;
  for (const auto& p : params) {
    const std::span<const double> a(analytic.data() + off, p.value.size());
    const std::span<const double> n(numeric.data() + off, p.value.size());
    GradAuditEntry e;
    e.name = p.name;
    e.size = p.value.size();
    e.relative_error = relative_error(a, n);
    double norm = 0.0;
    for (double v : a) norm += v * v;
    e.grad_norm = std::sqrt(norm);
    report.max_relative_error = std::max(report.max_relative_error, e.relative_error);
    report.entries.push_back(e);
    off += p.value.size();
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

template class MepsNet<float>;
template class MepsNet<double>;
template Tensor<float> materialize_weight<float>(std::span<const float>, const Tensor<float>&);
template Tensor<double> materialize_weight<double>(std::span<const double>, const Tensor<double>&);
template ParameterCensus count_parameters<float>(const MepsNet<float>&);
template ParameterCensus count_parameters<double>(const MepsNet<double>&);
template void init_parameters<float>(MepsNet<float>&, std::uint64_t);
template void init_parameters<double>(MepsNet<double>&, std::uint64_t);

}  // namespace meps
