#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "meps/autograd.hpp"
#include "meps/image.hpp"
#include "meps/rng.hpp"
#include "meps/tensor.hpp"

namespace meps {

/// Architecture hyperparameters.
struct MepsNetConfig {
  std::size_t experts = 3;
  std::size_t srir_per_expert = 1;
  std::size_t sresidual_per_srir = 2;
  std::size_t templates = 4;
  std::size_t width = 16;
  std::size_t fusion_reduction = 4;
  std::size_t kernel_size = 3;
  /// false builds the ablation where every shared conv stores its own weight.
  bool share_parameters = true;

  /// N=3, 3 SRIR x 12 SResidual, K=16, C=256, r=16, S=3.
  static MepsNetConfig paper_default();
  /// N=3, 1 SRIR x 2 SResidual, K=4, C=16, r=4, S=3.
  static MepsNetConfig desk_default();
  /// N=2, 1 SRIR x 1 SResidual, K=2, C=4, r=4, S=3; used by the gradient audit.
  static MepsNetConfig desk_tiny();

  void validate() const;
  std::size_t fused_channels() const { return experts * width; }

  bool operator==(const MepsNetConfig&) const = default;
};

std::string config_to_json(const MepsNetConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
MepsNetConfig config_from_json(std::string_view text);

enum class ParamKind { kWeight, kBias, kTemplate, kCoefficient };

template <typename T>
struct Parameter {
  std::string name;
  ParamKind kind = ParamKind::kWeight;
  Tensor<T> value;
  Tensor<T> grad;
};

template <typename T>
class ParameterSet {
 public:
  std::size_t add(std::string name, ParamKind kind, Shape shape) {
    Parameter<T> p;
    p.name = std::move(name);
    p.kind = kind;
    p.value = Tensor<T>(shape);
    p.grad = Tensor<T>(std::move(shape));
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].name == name) return i;
    }
    return std::nullopt;
  }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::vector<Parameter<T>> params_;
};

/// Graph leaves for the parameters used in one forward pass.
template <typename T>
class Binding {
 public:
  Binding(Graph<T>& graph, const ParameterSet<T>& params, bool requires_grad = true)
      : graph_(&graph), params_(&params), requires_grad_(requires_grad), leaves_(params.size()) {}

  Graph<T>& graph() const { return *graph_; }

  Var<T> operator()(std::size_t index) {
    auto& leaf = leaves_.at(index);
    if (!leaf) leaf = graph_->borrow((*params_)[index].value, requires_grad_);
    return *leaf;
  }

  /// Overwrites every parameter's grad from the graph; parameters that were
  /// never bound get zeros. Call after Graph::backward.
  void collect_grads(ParameterSet<T>& params) const {
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter<T>& p = params[i];
      if (leaves_[i] && graph_->has_grad(leaves_[i]->id())) {
        p.grad = graph_->grad(leaves_[i]->id());
      } else {
        p.grad = Tensor<T>(p.value.shape());
      }
    }
  }

 private:
  Graph<T>* graph_;
  const ParameterSet<T>* params_;
  bool requires_grad_;
  std::vector<std::optional<Var<T>>> leaves_;
};

struct ConvParams {
  std::size_t weight;
  std::size_t bias;
};

/// Shared conv: `weight` indexes a [K] coefficient vector when sharing is on,
/// or a full [C, C, S, S] weight in the no-sharing ablation.
struct SConvParams {
  std::size_t weight;
  std::size_t bias;
};

struct SResidualParams {
  SConvParams first;
  SConvParams second;
};

struct ExpertParams {
  SConvParams entry;
  std::vector<std::vector<SResidualParams>> srirs;
  SConvParams exit;
};

/// Intermediate features of one forward pass.
template <typename T>
struct ForwardTrace {
  Var<T> extracted;                  // F0
  std::vector<Var<T>> expert_outputs;  // F_k
  Var<T> concatenated;               // F_D
  Var<T> attention;                  // S, [B, N*C]
  Var<T> fused;                      // F_F
};

struct ParameterCensus {
  std::size_t shared_templates = 0;
  std::size_t coefficients = 0;
  std::size_t unshared = 0;
  std::size_t total = 0;
};

/// Mixture of parameter-shared experts restoration network.
///
/// Extraction: three convs 3 -> ceil(C/4) -> ceil(C/2) -> C with ReLU between.
/// Each expert: entry SConv, SRIR units (B SResiduals plus a unit shortcut),
/// exit SConv, and a long skip from F0. Every SConv draws its weight from one
/// global template bank. Fusion: channel attention over the concatenated expert
/// outputs. Reconstruction: 1x1 conv N*C -> C, ReLU, SxS conv C -> 3.
template <typename T>
class MepsNet {
 public:
  explicit MepsNet(MepsNetConfig config);

  const MepsNetConfig& config() const { return config_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  /// Index of the [K, C, C, S, S] template stack; empty in the no-sharing ablation.
  std::optional<std::size_t> bank() const { return bank_; }
  const std::vector<ConvParams>& extraction() const { return extraction_; }
  const std::vector<ExpertParams>& experts() const { return experts_; }
  const ConvParams& fusion_reduce() const { return fusion_reduce_; }
  const ConvParams& fusion_expand() const { return fusion_expand_; }
  const ConvParams& recon_fuse() const { return recon_fuse_; }
  const ConvParams& recon_out() const { return recon_out_; }
  std::size_t sconv_count() const;

  Var<T> forward(Binding<T>& bind, const Var<T>& input, ForwardTrace<T>* trace = nullptr) const;

  /// Forward without gradient tracking.
  Tensor<T> infer(const Tensor<T>& input) const;

  /// Weight an SConv uses in the forward pass.
  Tensor<T> materialize(const SConvParams& layer) const;

  template <typename U>
  MepsNet<U> cast() const {
    MepsNet<U> out(config_);
    for (std::size_t i = 0; i < params_.size(); ++i) out.params()[i].value = params_[i].value.template cast<U>();
    return out;
  }

 private:
  Var<T> sconv(Binding<T>& bind, const Var<T>& x, const SConvParams& layer) const;
  Var<T> conv(Binding<T>& bind, const Var<T>& x, const ConvParams& layer) const;

  MepsNetConfig config_;
  ParameterSet<T> params_;
  std::optional<std::size_t> bank_;
  std::vector<ConvParams> extraction_;
  std::vector<ExpertParams> experts_;
  ConvParams fusion_reduce_{};
  ConvParams fusion_expand_{};
  ConvParams recon_fuse_{};
  ConvParams recon_out_{};
};

/// sum_j coeffs[j] * bank[j] for a [K, ...] bank.
template <typename T>
Tensor<T> materialize_weight(std::span<const T> coeffs, const Tensor<T>& bank);

template <typename T>
ParameterCensus count_parameters(const MepsNet<T>& model);
ParameterCensus count_parameters(const MepsNetConfig& config);

/// He-normal conv weights and templates (std sqrt(2 / (Cin S^2))), coefficients
/// N(0, 1/K), zero biases. Parameter i draws from child stream (seed, i).
template <typename T>
void init_parameters(MepsNet<T>& model, std::uint64_t seed);

/// Channel-mean of each expert's output, min-max scaled to 8-bit grayscale,
/// written as <dir>/expert_<k>.png. Constant maps are written as all zeros.
std::vector<std::filesystem::path> dump_expert_features(const MepsNet<float>& model, const Image& input,
                                                        const std::filesystem::path& dir);

struct GradAuditEntry {
  std::string name;
  std::size_t size = 0;
  double relative_error = 0.0;
  double grad_norm = 0.0;
};

struct GradAuditReport {
  std::vector<GradAuditEntry> entries;
  double max_relative_error = 0.0;
  double seconds = 0.0;
};

/// Whole-model check of backward() against central differences in 64-bit, on
/// an L2 loss of a random side x side input against a random target.
GradAuditReport audit_gradients(const MepsNetConfig& config, std::uint64_t seed, std::size_t side, double eps);

}  // namespace meps
