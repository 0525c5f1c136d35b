#include <Eigen/Core>
#include <cmath>
#include <string>

#include "meps/autograd.hpp"

namespace meps {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

[[noreturn]] void shape_fail(const std::string& op, const std::string& what) {
  throw ShapeError(op + ": " + what);
}

void require_rank(const std::string& op, const std::string& name, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    shape_fail(op, name + " must have rank " + std::to_string(rank) + ", got " + shape_str(s));
  }
}

void require_dim(const std::string& op, const std::string& what, std::size_t got, std::size_t want) {
  if (got != want) {
    shape_fail(op, what + " mismatch: " + std::to_string(got) + " vs " + std::to_string(want));
  }
}

template <typename T>
void check_same_graph(const Var<T>& a, const Var<T>& b) {
  if (&a.graph() != &b.graph()) throw std::invalid_argument("operands belong to different graphs");
}

// Unfold one image [C,H,W] into columns [C*S*S, H*W].
template <typename T>
void im2col(const T* img, std::size_t c_in, std::size_t h, std::size_t w, std::size_t s, T* cols) {
  const auto pad = static_cast<std::ptrdiff_t>(s / 2);
  const auto hh = static_cast<std::ptrdiff_t>(h);
  const auto ww = static_cast<std::ptrdiff_t>(w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < c_in; ++c) {
    const T* plane = img + c * h * w;
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j = 0; j < s; ++j, ++row) {
        T* dst = cols + row * h * w;
        const std::ptrdiff_t di = static_cast<std::ptrdiff_t>(i) - pad;
        const std::ptrdiff_t dj = static_cast<std::ptrdiff_t>(j) - pad;
        for (std::ptrdiff_t y = 0; y < hh; ++y) {
          const std::ptrdiff_t sy = y + di;
          T* out = dst + y * ww;
          if (sy < 0 || sy >= hh) {
            std::fill(out, out + ww, T{0});
            continue;
          }
          const T* src = plane + sy * ww;
          for (std::ptrdiff_t x = 0; x < ww; ++x) {
            const std::ptrdiff_t sx = x + dj;
            out[x] = (sx < 0 || sx >= ww) ? T{0} : src[sx];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into an image gradient.
template <typename T>
void col2im_add(const T* cols, std::size_t c_in, std::size_t h, std::size_t w, std::size_t s, T* img) {
  const auto pad = static_cast<std::ptrdiff_t>(s / 2);
  const auto hh = static_cast<std::ptrdiff_t>(h);
  const auto ww = static_cast<std::ptrdiff_t>(w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < c_in; ++c) {
    T* plane = img + c * h * w;
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j = 0; j < s; ++j, ++row) {
        const T* src = cols + row * h * w;
        const std::ptrdiff_t di = static_cast<std::ptrdiff_t>(i) - pad;
        const std::ptrdiff_t dj = static_cast<std::ptrdiff_t>(j) - pad;
        for (std::ptrdiff_t y = 0; y < hh; ++y) {
          const std::ptrdiff_t sy = y + di;
          if (sy < 0 || sy >= hh) continue;
          T* dst = plane + sy * ww;
          const T* in = src + y * ww;
          for (std::ptrdiff_t x = 0; x < ww; ++x) {
            const std::ptrdiff_t sx = x + dj;
            if (sx >= 0 && sx < ww) dst[sx] += in[x];
          }
        }
      }
    }
  }
}

struct ConvDims {
  std::size_t batch, c_in, c_out, h, w, s;
};

ConvDims check_conv(const Shape& in, const Shape& wt, const Shape& bias) {
  const std::string op = "conv2d";
  require_rank(op, "input", in, 4);
  require_rank(op, "weight", wt, 4);
  require_rank(op, "bias", bias, 1);
  require_dim(op, "weight in-channels (dim 1) vs input channels (dim 1)", wt[1], in[1]);
  require_dim(op, "weight kernel width (dim 3) vs kernel height (dim 2)", wt[3], wt[2]);
  require_dim(op, "bias length vs weight out-channels (dim 0)", bias[0], wt[0]);
  if (wt[2] % 2 == 0) shape_fail(op, "kernel size must be odd, got " + std::to_string(wt[2]));
  return {in[0], in[1], wt[0], in[2], in[3], wt[2]};
}

template <typename T>
void conv_forward_into(const ConvDims& d, const T* in, const T* wt, const T* bias, T* out) {
  const std::size_t hw = d.h * d.w;
  const std::size_t k = d.c_in * d.s * d.s;
  ConstMatMap<T> wmat(wt, static_cast<Eigen::Index>(d.c_out), static_cast<Eigen::Index>(k));
  std::vector<T> cols;
  if (d.s != 1) cols.resize(k * hw);
  for (std::size_t b = 0; b < d.batch; ++b) {
    const T* img = in + b * d.c_in * hw;
    const T* colp = img;
    if (d.s != 1) {
      im2col(img, d.c_in, d.h, d.w, d.s, cols.data());
      colp = cols.data();
    }
    ConstMatMap<T> cmat(colp, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(hw));
    MatMap<T> omat(out + b * d.c_out * hw, static_cast<Eigen::Index>(d.c_out),
                   static_cast<Eigen::Index>(hw));
    omat.noalias() = wmat * cmat;
    for (std::size_t o = 0; o < d.c_out; ++o) omat.row(static_cast<Eigen::Index>(o)).array() += bias[o];
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  const ConvDims d = check_conv(input.shape(), weight.shape(), bias.shape());
  Tensor<T> out({d.batch, d.c_out, d.h, d.w});
  conv_forward_into(d, input.raw(), weight.raw(), bias.raw(), out.raw());
  return out;
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias) {
  check_same_graph(input, weight);
  check_same_graph(input, bias);
  Graph<T>& g = input.graph();
  const ConvDims d = check_conv(input.shape(), weight.shape(), bias.shape());
  Tensor<T> out = conv2d_forward(input.value(), weight.value(), bias.value());
  const std::size_t xi = input.id(), wi = weight.id(), bi = bias.id();
  return g.record(std::move(out), {xi, wi, bi}, [d, xi, wi, bi](Graph<T>& gr, std::size_t self) {
    const std::size_t hw = d.h * d.w;
    const std::size_t k = d.c_in * d.s * d.s;
    const auto ek = static_cast<Eigen::Index>(k);
    const auto ehw = static_cast<Eigen::Index>(hw);
    const auto eco = static_cast<Eigen::Index>(d.c_out);
    const T* gout = gr.grad(self).raw();
    const T* x = gr.value(xi).raw();
    ConstMatMap<T> wmat(gr.value(wi).raw(), eco, ek);
    const bool need_x = gr.requires_grad(xi);
    const bool need_w = gr.requires_grad(wi);
    const bool need_b = gr.requires_grad(bi);
    T* gx = need_x ? gr.grad(xi).raw() : nullptr;
    T* gw = need_w ? gr.grad(wi).raw() : nullptr;
    T* gb = need_b ? gr.grad(bi).raw() : nullptr;
    std::vector<T> cols;
    std::vector<T> gcols;
    if (d.s != 1) {
      if (need_w) cols.resize(k * hw);
      if (need_x) gcols.resize(k * hw);
    }
    for (std::size_t b = 0; b < d.batch; ++b) {
      ConstMatMap<T> gmat(gout + b * d.c_out * hw, eco, ehw);
      if (need_b) {
        for (std::size_t o = 0; o < d.c_out; ++o) gb[o] += gmat.row(static_cast<Eigen::Index>(o)).sum();
      }
      const T* img = x + b * d.c_in * hw;
      if (need_w) {
        const T* colp = img;
        if (d.s != 1) {
          im2col(img, d.c_in, d.h, d.w, d.s, cols.data());
          colp = cols.data();
        }
        ConstMatMap<T> cmat(colp, ek, ehw);
        MatMap<T> gwmat(gw, eco, ek);
        gwmat.noalias() += gmat * cmat.transpose();
      }
      if (need_x) {
        T* gimg = gx + b * d.c_in * hw;
        if (d.s == 1) {
          MatMap<T> gxmat(gimg, ek, ehw);
          gxmat.noalias() += wmat.transpose() * gmat;
        } else {
          MatMap<T> gcmat(gcols.data(), ek, ehw);
          gcmat.noalias() = wmat.transpose() * gmat;
          col2im_add(gcols.data(), d.c_in, d.h, d.w, d.s, gimg);
        }
      }
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  const std::size_t xi = x.id();
  return x.graph().record(std::move(out), {xi}, [xi](Graph<T>& g, std::size_t self) {
    const auto gout = g.grad(self).data();
    const auto in = g.value(xi).data();
    auto gx = g.grad(xi).data();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (in[i] > T{0}) gx[i] += gout[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = T{1} / (T{1} + std::exp(-v));
  const std::size_t xi = x.id();
  return x.graph().record(std::move(out), {xi}, [xi](Graph<T>& g, std::size_t self) {
    const auto gout = g.grad(self).data();
    const auto y = g.value(self).data();
    auto gx = g.grad(xi).data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i] * y[i] * (T{1} - y[i]);
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_graph(a, b);
  if (a.shape() != b.shape()) {
    shape_fail("add", "operand shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor<T> out = a.value();
  const auto bv = b.value().data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.graph().record(std::move(out), {ai, bi}, [ai, bi](Graph<T>& g, std::size_t self) {
    for (std::size_t target : {ai, bi}) {
      if (!g.requires_grad(target)) continue;
      const auto gout = g.grad(self).data();
      auto gt = g.grad(target).data();
      for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += gout[i];
    }
  });
}

template <typename T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& s) {
  check_same_graph(x, s);
  const std::string op = "scale_channels";
  require_rank(op, "x", x.shape(), 4);
  require_rank(op, "scale", s.shape(), 2);
  require_dim(op, "batch (dim 0)", s.shape()[0], x.shape()[0]);
  require_dim(op, "channels (dim 1)", s.shape()[1], x.shape()[1]);
  const std::size_t batch = x.shape()[0], ch = x.shape()[1];
  const std::size_t hw = x.shape()[2] * x.shape()[3];
  Tensor<T> out = x.value();
  const auto sv = s.value().data();
  for (std::size_t bc = 0; bc < batch * ch; ++bc) {
    T* p = out.raw() + bc * hw;
    for (std::size_t i = 0; i < hw; ++i) p[i] *= sv[bc];
  }
  const std::size_t xi = x.id(), si = s.id();
  return x.graph().record(std::move(out), {xi, si}, [xi, si, batch, ch, hw](Graph<T>& g, std::size_t self) {
    const T* gout = g.grad(self).raw();
    if (g.requires_grad(xi)) {
      const T* sv = g.value(si).raw();
      T* gx = g.grad(xi).raw();
      for (std::size_t bc = 0; bc < batch * ch; ++bc) {
        for (std::size_t i = 0; i < hw; ++i) gx[bc * hw + i] += gout[bc * hw + i] * sv[bc];
      }
    }
    if (g.requires_grad(si)) {
      const T* xv = g.value(xi).raw();
      T* gs = g.grad(si).raw();
      for (std::size_t bc = 0; bc < batch * ch; ++bc) {
        T acc{0};
        for (std::size_t i = 0; i < hw; ++i) acc += gout[bc * hw + i] * xv[bc * hw + i];
        gs[bc] += acc;
      }
    }
  });
}

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> parts) {
  const std::string op = "concat_channels";
  if (parts.empty()) shape_fail(op, "needs at least one operand");
  const Shape& first = parts[0].shape();
  require_rank(op, "operand 0", first, 4);
  std::size_t total_c = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    check_same_graph(parts[0], parts[p]);
    const Shape& s = parts[p].shape();
    const std::string name = "operand " + std::to_string(p);
    require_rank(op, name, s, 4);
    require_dim(op, name + " batch (dim 0)", s[0], first[0]);
    require_dim(op, name + " height (dim 2)", s[2], first[2]);
    require_dim(op, name + " width (dim 3)", s[3], first[3]);
    total_c += s[1];
    ids.push_back(parts[p].id());
    widths.push_back(s[1]);
  }
  const std::size_t batch = first[0], hw = first[2] * first[3];
  Tensor<T> out({batch, total_c, first[2], first[3]});
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const T* src = parts[p].value().raw() + b * widths[p] * hw;
      std::copy(src, src + widths[p] * hw, out.raw() + (b * total_c + offset) * hw);
      offset += widths[p];
    }
  }
  return parts[0].graph().record(
      std::move(out), ids, [ids, widths, batch, total_c, hw](Graph<T>& g, std::size_t self) {
        const T* gout = g.grad(self).raw();
        std::size_t offset = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
          if (g.requires_grad(ids[p])) {
            T* gp = g.grad(ids[p]).raw();
            for (std::size_t b = 0; b < batch; ++b) {
              const T* src = gout + (b * total_c + offset) * hw;
              T* dst = gp + b * widths[p] * hw;
              for (std::size_t i = 0; i < widths[p] * hw; ++i) dst[i] += src[i];
            }
          }
          offset += widths[p];
        }
      });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, std::size_t begin, std::size_t count) {
  const std::string op = "slice_channels";
  require_rank(op, "x", x.shape(), 4);
  const std::size_t batch = x.shape()[0], ch = x.shape()[1];
  const std::size_t hw = x.shape()[2] * x.shape()[3];
  if (count == 0 || begin + count > ch) {
    shape_fail(op, "channel range [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                       ") outside channels (dim 1) of size " + std::to_string(ch));
  }
  Tensor<T> out({batch, count, x.shape()[2], x.shape()[3]});
  for (std::size_t b = 0; b < batch; ++b) {
    const T* src = x.value().raw() + (b * ch + begin) * hw;
    std::copy(src, src + count * hw, out.raw() + b * count * hw);
  }
  const std::size_t xi = x.id();
  return x.graph().record(std::move(out), {xi}, [=](Graph<T>& g, std::size_t self) {
    const T* gout = g.grad(self).raw();
    T* gx = g.grad(xi).raw();
    for (std::size_t b = 0; b < batch; ++b) {
      T* dst = gx + (b * ch + begin) * hw;
      const T* src = gout + b * count * hw;
      for (std::size_t i = 0; i < count * hw; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  require_rank("global_avg_pool", "x", x.shape(), 4);
  const std::size_t batch = x.shape()[0], ch = x.shape()[1];
  const std::size_t hw = x.shape()[2] * x.shape()[3];
  Tensor<T> out({batch, ch});
  for (std::size_t bc = 0; bc < batch * ch; ++bc) {
    const T* p = x.value().raw() + bc * hw;
    T acc{0};
    for (std::size_t i = 0; i < hw; ++i) acc += p[i];
    out[bc] = acc / static_cast<T>(hw);
  }
  const std::size_t xi = x.id();
  return x.graph().record(std::move(out), {xi}, [=](Graph<T>& g, std::size_t self) {
    const T* gout = g.grad(self).raw();
    T* gx = g.grad(xi).raw();
    const T inv = T{1} / static_cast<T>(hw);
    for (std::size_t bc = 0; bc < batch * ch; ++bc) {
      const T v = gout[bc] * inv;
      for (std::size_t i = 0; i < hw; ++i) gx[bc * hw + i] += v;
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const std::size_t xi = x.id();
  return x.graph().record(std::move(out), {xi}, [xi](Graph<T>& g, std::size_t self) {
    const auto gout = g.grad(self).data();
    auto gx = g.grad(xi).data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i];
  });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& coeffs, const Var<T>& stack) {
  check_same_graph(coeffs, stack);
  const std::string op = "weighted_sum";
  require_rank(op, "coefficients", coeffs.shape(), 1);
  if (stack.shape().size() < 2) shape_fail(op, "stack must have rank >= 2, got " + shape_str(stack.shape()));
  const std::size_t k = coeffs.shape()[0];
  require_dim(op, "coefficient count vs stack templates (dim 0)", k, stack.shape()[0]);
  const Shape item(stack.shape().begin() + 1, stack.shape().end());
  const std::size_t n = shape_numel(item);
  Tensor<T> out(item);
  const T* a = coeffs.value().raw();
  const T* st = stack.value().raw();
  for (std::size_t j = 0; j < k; ++j) {
    const T aj = a[j];
    const T* tj = st + j * n;
    T* o = out.raw();
    for (std::size_t i = 0; i < n; ++i) o[i] += aj * tj[i];
  }
  const std::size_t ci = coeffs.id(), si = stack.id();
  return coeffs.graph().record(std::move(out), {ci, si}, [ci, si, k, n](Graph<T>& g, std::size_t self) {
    const T* gout = g.grad(self).raw();
    if (g.requires_grad(ci)) {
      const T* st = g.value(si).raw();
      T* ga = g.grad(ci).raw();
      for (std::size_t j = 0; j < k; ++j) {
        T acc{0};
        for (std::size_t i = 0; i < n; ++i) acc += gout[i] * st[j * n + i];
        ga[j] += acc;
      }
    }
    if (g.requires_grad(si)) {
      const T* a = g.value(ci).raw();
      T* gs = g.grad(si).raw();
      for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t i = 0; i < n; ++i) gs[j * n + i] += a[j] * gout[i];
      }
    }
  });
}

template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Var<T>& target) {
  check_same_graph(pred, target);
  if (pred.shape() != target.shape()) {
    shape_fail("mse_loss", "prediction " + shape_str(pred.shape()) + " vs target " +
                               shape_str(target.shape()));
  }
  const auto p = pred.value().data();
  const auto t = target.value().data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
    acc += d * d;
  }
  Tensor<T> out({1}, static_cast<T>(acc / static_cast<double>(p.size())));
  const std::size_t pi = pred.id(), ti = target.id();
  return pred.graph().record(std::move(out), {pi, ti}, [pi, ti](Graph<T>& g, std::size_t self) {
    const auto p = g.value(pi).data();
    const auto t = g.value(ti).data();
    const T scale = T{2} * g.grad(self)[0] / static_cast<T>(p.size());
    if (g.requires_grad(pi)) {
      auto gp = g.grad(pi).data();
      for (std::size_t i = 0; i < p.size(); ++i) gp[i] += scale * (p[i] - t[i]);
    }
    if (g.requires_grad(ti)) {
      auto gt = g.grad(ti).data();
      for (std::size_t i = 0; i < p.size(); ++i) gt[i] -= scale * (p[i] - t[i]);
    }
  });
}

#define MEPS_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);    \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&);                        \
  template Var<T> relu<T>(const Var<T>&);                                                        \
  template Var<T> sigmoid<T>(const Var<T>&);                                                     \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                          \
  template Var<T> scale_channels<T>(const Var<T>&, const Var<T>&);                               \
  template Var<T> concat_channels<T>(std::span<const Var<T>>);                                   \
  template Var<T> slice_channels<T>(const Var<T>&, std::size_t, std::size_t);                    \
  template Var<T> global_avg_pool<T>(const Var<T>&);                                             \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                              \
  template Var<T> weighted_sum<T>(const Var<T>&, const Var<T>&);                                 \
  template Var<T> mse_loss<T>(const Var<T>&, const Var<T>&);

MEPS_INSTANTIATE_OPS(float)
MEPS_INSTANTIATE_OPS(double)

#undef MEPS_INSTANTIATE_OPS

}  // namespace meps
