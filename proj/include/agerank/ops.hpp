#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "agerank/tape.hpp"
#include "agerank/tensor.hpp"

// Differentiable primitives recorded on a Tape. Every op validates shapes,
// throws ShapeError naming itself, and registers an exact backward.
namespace agerank::ops {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline void require(bool ok, std::string_view op, const std::string& what) {
  if (!ok) throw ShapeError::in(op, what);
}

inline std::size_t spatial_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t i = 2; i < s.size(); ++i) n *= s[i];
  return n;
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace detail

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > T{0} ? xv[i] : T{0};
  return tape.record("relu", std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    const auto& xv = t.value(x);
    auto& gx = t.grad_buffer(x);
    // Subgradient at exactly 0 is 0.
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xv[i] > T{0} ? g[i] : T{0};
  });
}

template <typename T>
Var abs(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = std::abs(xv[i]);
  return tape.record("abs", std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    const auto& xv = t.value(x);
    auto& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = xv[i] > T{0} ? T{1} : (xv[i] < T{0} ? T{-1} : T{0});
      gx[i] += s * g[i];
    }
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  detail::require(av.shape() == bv.shape(), "add",
                  "operand shapes " + to_string(av.shape()) + " and " + to_string(bv.shape()) + " differ");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return tape.record("add", std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    if (t.wants_grad(a)) detail::add_into(t.grad_buffer(a), g);
    if (t.wants_grad(b)) detail::add_into(t.grad_buffer(b), g);
  });
}

template <typename T>
Var sub(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  detail::require(av.shape() == bv.shape(), "sub",
                  "operand shapes " + to_string(av.shape()) + " and " + to_string(bv.shape()) + " differ");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  return tape.record("sub", std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    if (t.wants_grad(a)) detail::add_into(t.grad_buffer(a), g);
    if (t.wants_grad(b)) {
      auto& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  detail::require(av.shape() == bv.shape(), "mul",
                  "operand shapes " + to_string(av.shape()) + " and " + to_string(bv.shape()) + " differ");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return tape.record("mul", std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    if (t.wants_grad(a)) {
      auto& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.wants_grad(b)) {
      auto& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var x, T c) {
  const auto& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = c * xv[i];
  return tape.record("scale", std::move(out), {x}, [x, c](Tape<T>& t, const Tensor<T>& g) {
    auto& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
  });
}

template <typename T>
Var reshape(Tape<T>& tape, Var x, Shape shape) {
  auto out = tape.value(x).reshaped(std::move(shape));
  return tape.record("reshape", std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    auto& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

/// Sum of all elements, accumulated in double.
template <typename T>
Var sum(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  double acc = 0.0;
  for (auto v : xv.data()) acc += static_cast<double>(v);
  return tape.record("sum", Tensor<T>::scalar(static_cast<T>(acc)), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    auto& gx = t.grad_buffer(x);
    const T s = g[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += s;
  });
}

template <typename T>
Var mean(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  double acc = 0.0;
  for (auto v : xv.data()) acc += static_cast<double>(v);
  const double n = static_cast<double>(xv.size());
  return tape.record("mean", Tensor<T>::scalar(static_cast<T>(acc / n)), {x},
                     [x, n](Tape<T>& t, const Tensor<T>& g) {
                       auto& gx = t.grad_buffer(x);
                       const T s = static_cast<T>(static_cast<double>(g[0]) / n);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += s;
                     });
}

/// sum_i w_i x_i for a constant weight tensor of the same shape.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, Tensor<T> weights) {
  const auto& xv = tape.value(x);
  detail::require(xv.shape() == weights.shape(), "weighted_sum",
                  "weights " + to_string(weights.shape()) + " vs input " + to_string(xv.shape()));
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += static_cast<double>(weights[i]) * static_cast<double>(xv[i]);
  auto w = std::make_shared<const Tensor<T>>(std::move(weights));
  return tape.record("weighted_sum", Tensor<T>::scalar(static_cast<T>(acc)), {x},
                     [x, w](Tape<T>& t, const Tensor<T>& g) {
                       auto& gx = t.grad_buffer(x);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * (*w)[i];
                     });
}

template <typename T>
Var transpose(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  detail::require(xv.rank() == 2, "transpose", "expected rank 2, got " + to_string(xv.shape()));
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  Tensor<T> out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
  return tape.record("transpose", std::move(out), {x}, [x, m, n](Tape<T>& t, const Tensor<T>& g) {
    auto& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
  });
}

/// [m,k] x [k,n] -> [m,n]
template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  detail::require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0), "matmul",
                  "cannot multiply " + to_string(av.shape()) + " by " + to_string(bv.shape()));
  const auto m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out({m, n});
  detail::MatMap<T>(out.raw(), m, n).noalias() =
      detail::ConstMatMap<T>(av.raw(), m, k) * detail::ConstMatMap<T>(bv.raw(), k, n);
  return tape.record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& t, const Tensor<T>& g) {
    detail::ConstMatMap<T> G(g.raw(), m, n);
    if (t.wants_grad(a)) {
      detail::MatMap<T>(t.grad_buffer(a).raw(), m, k).noalias() +=
          G * detail::ConstMatMap<T>(t.value(b).raw(), k, n).transpose();
    }
    if (t.wants_grad(b)) {
      detail::MatMap<T>(t.grad_buffer(b).raw(), k, n).noalias() +=
          detail::ConstMatMap<T>(t.value(a).raw(), m, k).transpose() * G;
    }
  });
}

/// Fully connected layer: x [N,in], weight [out,in], bias [out] -> [N,out].
template <typename T>
Var dense(Tape<T>& tape, Var x, Var weight, Var bias) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(weight);
  const auto& bv = tape.value(bias);
  detail::require(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(1), "dense",
                  "input " + to_string(xv.shape()) + " incompatible with weight " + to_string(wv.shape()));
  detail::require(bv.rank() == 1 && bv.dim(0) == wv.dim(0), "dense",
                  "bias " + to_string(bv.shape()) + " incompatible with weight " + to_string(wv.shape()));
  const auto n = xv.dim(0), in = xv.dim(1), outn = wv.dim(0);
  Tensor<T> out({n, outn});
  detail::MatMap<T> O(out.raw(), n, outn);
  O.noalias() = detail::ConstMatMap<T>(xv.raw(), n, in) * detail::ConstMatMap<T>(wv.raw(), outn, in).transpose();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < outn; ++c) O(r, c) += bv[c];
  return tape.record("dense", std::move(out), {x, weight, bias},
                     [x, weight, bias, n, in, outn](Tape<T>& t, const Tensor<T>& g) {
                       detail::ConstMatMap<T> G(g.raw(), n, outn);
                       if (t.wants_grad(x)) {
                         detail::MatMap<T>(t.grad_buffer(x).raw(), n, in).noalias() +=
                             G * detail::ConstMatMap<T>(t.value(weight).raw(), outn, in);
                       }
                       if (t.wants_grad(weight)) {
                         detail::MatMap<T>(t.grad_buffer(weight).raw(), outn, in).noalias() +=
                             G.transpose() * detail::ConstMatMap<T>(t.value(x).raw(), n, in);
                       }
                       if (t.wants_grad(bias)) {
                         auto& gb = t.grad_buffer(bias);
                         for (std::size_t r = 0; r < n; ++r)
                           for (std::size_t c = 0; c < outn; ++c) gb[c] += G(r, c);
                       }
                     });
}

struct Conv3dOptions {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

namespace detail {

struct ConvGeometry {
  std::size_t channels, depth, height, width;
  std::size_t kernel, stride, pad;
  std::size_t out_d, out_h, out_w;

  std::size_t patch() const { return channels * kernel * kernel * kernel; }
  std::size_t positions() const { return out_d * out_h * out_w; }
};

/// Output positions o in [lo, hi) whose tap o*stride + k - pad lands inside [0, extent).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t extent, std::size_t k,
                                                       std::size_t stride, std::size_t pad) {
  // o*stride + k >= pad  and  o*stride + k - pad <= extent - 1
  std::size_t lo = 0;
  if (k < pad) lo = (pad - k + stride - 1) / stride;
  std::size_t hi = 0;
  if (extent + pad > k) hi = std::min(out, (extent - 1 + pad - k) / stride + 1);
  if (hi < lo) hi = lo;
  return {lo, hi};
}

template <typename T>
void im2col(const T* src, const ConvGeometry& g, T* cols) {
  const std::size_t P = g.positions();
  const std::size_t k = g.kernel, s = g.stride;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = src + c * g.depth * g.height * g.width;
    for (std::size_t kz = 0; kz < k; ++kz) {
      const auto [zlo, zhi] = valid_range(g.out_d, g.depth, kz, s, g.pad);
      for (std::size_t ky = 0; ky < k; ++ky) {
        const auto [ylo, yhi] = valid_range(g.out_h, g.height, ky, s, g.pad);
        for (std::size_t kx = 0; kx < k; ++kx, ++row) {
          const auto [xlo, xhi] = valid_range(g.out_w, g.width, kx, s, g.pad);
          T* dst = cols + row * P;
          std::fill(dst, dst + P, T{0});
          for (std::size_t oz = zlo; oz < zhi; ++oz) {
            const std::size_t z = oz * s + kz - g.pad;
            for (std::size_t oy = ylo; oy < yhi; ++oy) {
              const std::size_t y = oy * s + ky - g.pad;
              const T* line = plane + (z * g.height + y) * g.width;
              T* out = dst + (oz * g.out_h + oy) * g.out_w;
              if (xlo >= xhi) continue;
              if (s == 1) {
                std::copy(line + (xlo + kx - g.pad), line + (xhi + kx - g.pad), out + xlo);
              } else {
                for (std::size_t ox = xlo; ox < xhi; ++ox) out[ox] = line[ox * s + kx - g.pad];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dst_img) {
  const std::size_t P = g.positions();
  const std::size_t k = g.kernel, s = g.stride;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = dst_img + c * g.depth * g.height * g.width;
    for (std::size_t kz = 0; kz < k; ++kz) {
      const auto [zlo, zhi] = valid_range(g.out_d, g.depth, kz, s, g.pad);
      for (std::size_t ky = 0; ky < k; ++ky) {
        const auto [ylo, yhi] = valid_range(g.out_h, g.height, ky, s, g.pad);
        for (std::size_t kx = 0; kx < k; ++kx, ++row) {
          const auto [xlo, xhi] = valid_range(g.out_w, g.width, kx, s, g.pad);
          const T* src = cols + row * P;
          for (std::size_t oz = zlo; oz < zhi; ++oz) {
            const std::size_t z = oz * s + kz - g.pad;
            for (std::size_t oy = ylo; oy < yhi; ++oy) {
              const std::size_t y = oy * s + ky - g.pad;
              T* line = plane + (z * g.height + y) * g.width;
              const T* in = src + (oz * g.out_h + oy) * g.out_w;
              for (std::size_t ox = xlo; ox < xhi; ++ox) line[ox * s + kx - g.pad] += in[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 3-D convolution with cubic kernels. x [N,C,D,H,W], weight [O,C,k,k,k],
/// optional bias [O] (pass an invalid Var to omit) -> [N,O,D',H',W'].
template <typename T>
Var conv3d(Tape<T>& tape, Var x, Var weight, Var bias, Conv3dOptions opt = {}) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(weight);
  detail::require(xv.rank() == 5, "conv3d", "input must be [N,C,D,H,W], got " + to_string(xv.shape()));
  detail::require(wv.rank() == 5 && wv.dim(2) == wv.dim(3) && wv.dim(3) == wv.dim(4), "conv3d",
                  "weight must be [O,C,k,k,k], got " + to_string(wv.shape()));
  detail::require(wv.dim(1) == xv.dim(1), "conv3d",
                  "input channels " + std::to_string(xv.dim(1)) + " vs weight " + to_string(wv.shape()));
  detail::require(opt.stride >= 1, "conv3d", "stride must be >= 1");
  const bool has_bias = bias.valid();
  if (has_bias) {
    const auto& bv = tape.value(bias);
    detail::require(bv.rank() == 1 && bv.dim(0) == wv.dim(0), "conv3d",
                    "bias " + to_string(bv.shape()) + " vs weight " + to_string(wv.shape()));
  }
  const std::size_t k = wv.dim(2);
  auto out_extent = [&](std::size_t in) -> std::size_t {
    const std::size_t padded = in + 2 * opt.pad;
    detail::require(padded >= k, "conv3d",
                    "kernel " + std::to_string(k) + " larger than padded input " + to_string(xv.shape()));
    return (padded - k) / opt.stride + 1;
  };
  detail::ConvGeometry geo{xv.dim(1), xv.dim(2), xv.dim(3), xv.dim(4), k, opt.stride, opt.pad,
                           out_extent(xv.dim(2)), out_extent(xv.dim(3)), out_extent(xv.dim(4))};
  const std::size_t N = xv.dim(0), O = wv.dim(0), K = geo.patch(), P = geo.positions();
  const std::size_t in_stride = geo.channels * geo.depth * geo.height * geo.width;

  auto cols = std::make_shared<std::vector<T>>(N * K * P);
  Tensor<T> out({N, O, geo.out_d, geo.out_h, geo.out_w});
  detail::ConstMatMap<T> W(wv.raw(), O, K);
  for (std::size_t n = 0; n < N; ++n) {
    T* c = cols->data() + n * K * P;
    detail::im2col(xv.raw() + n * in_stride, geo, c);
    detail::MatMap<T> Y(out.raw() + n * O * P, O, P);
    Y.noalias() = W * detail::ConstMatMap<T>(c, K, P);
    if (has_bias) {
      const auto& bv = tape.value(bias);
      for (std::size_t o = 0; o < O; ++o) Y.row(o).array() += bv[o];
    }
  }
  std::vector<Var> inputs = has_bias ? std::vector<Var>{x, weight, bias} : std::vector<Var>{x, weight};
  return tape.record("conv3d", std::move(out), inputs,
                     [x, weight, bias, has_bias, geo, cols, N, O, K, P, in_stride](Tape<T>& t, const Tensor<T>& g) {
                       const bool gx = t.wants_grad(x), gw = t.wants_grad(weight);
                       const bool gb = has_bias && t.wants_grad(bias);
                       detail::ConstMatMap<T> W(t.value(weight).raw(), O, K);
                       std::vector<T> dcols(gx ? K * P : 0);
                       for (std::size_t n = 0; n < N; ++n) {
                         detail::ConstMatMap<T> G(g.raw() + n * O * P, O, P);
                         const T* c = cols->data() + n * K * P;
                         if (gw) {
                           detail::MatMap<T>(t.grad_buffer(weight).raw(), O, K).noalias() +=
                               G * detail::ConstMatMap<T>(c, K, P).transpose();
                         }
                         if (gb) {
                           auto& b = t.grad_buffer(bias);
                           for (std::size_t o = 0; o < O; ++o) b[o] += G.row(o).sum();
                         }
                         if (gx) {
                           detail::MatMap<T>(dcols.data(), K, P).noalias() = W.transpose() * G;
                           detail::col2im_add(dcols.data(), geo, t.grad_buffer(x).raw() + n * in_stride);
                         }
                       }
                     });
}

/// Running statistics owned by a batch-norm layer; updated only in training mode.
template <typename T>
struct BatchNormStats {
  Tensor<T> mean;
  Tensor<T> var;

  explicit BatchNormStats(std::size_t channels = 1) : mean({channels}, T{0}), var({channels}, T{1}) {}
};

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  double eps = 1e-5;
};

/// Per-channel batch normalisation of x [N,C,...]. Training mode normalises
/// with batch statistics (N == 1 rejected) and updates `stats`; eval mode
/// uses `stats`.
template <typename T>
Var batch_norm(Tape<T>& tape, Var x, Var gamma, Var beta, BatchNormStats<T>& stats, BatchNormOptions opt = {}) {
  const auto& xv = tape.value(x);
  detail::require(xv.rank() >= 2, "batch_norm", "input must be [N,C,...], got " + to_string(xv.shape()));
  const std::size_t N = xv.dim(0), C = xv.dim(1), S = detail::spatial_size(xv.shape());
  detail::require(tape.value(gamma).shape() == Shape{C} && tape.value(beta).shape() == Shape{C}, "batch_norm",
                  "affine parameters must be [" + std::to_string(C) + "]");
  detail::require(stats.mean.shape() == Shape{C} && stats.var.shape() == Shape{C}, "batch_norm",
                  "running statistics must be [" + std::to_string(C) + "]");
  if (opt.training && N < 2) {
    throw ShapeError::in("batch_norm", "training-mode batch of size 1 is not allowed");
  }
  const auto& gv = tape.value(gamma);
  const auto& bv = tape.value(beta);
  auto xhat = std::make_shared<Tensor<T>>(xv.shape());
  auto inv_std = std::make_shared<std::vector<double>>(C);
  Tensor<T> out(xv.shape());
  const double m = static_cast<double>(N * S);
  for (std::size_t c = 0; c < C; ++c) {
    double mu, var;
    if (opt.training) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = xv.raw() + (n * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) s += p[i];
      }
      mu = s / m;
      double ss = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = xv.raw() + (n * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) {
          const double d = p[i] - mu;
          ss += d * d;
        }
      }
      var = ss / m;
      stats.mean[c] = static_cast<T>(opt.momentum * stats.mean[c] + (1.0 - opt.momentum) * mu);
      stats.var[c] = static_cast<T>(opt.momentum * stats.var[c] + (1.0 - opt.momentum) * ss / (m - 1.0));
    } else {
      mu = stats.mean[c];
      var = stats.var[c];
    }
    const double is = 1.0 / std::sqrt(var + opt.eps);
    (*inv_std)[c] = is;
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t off = (n * C + c) * S;
      for (std::size_t i = 0; i < S; ++i) {
        const double h = (xv[off + i] - mu) * is;
        (*xhat)[off + i] = static_cast<T>(h);
        out[off + i] = static_cast<T>(gv[c] * h + bv[c]);
      }
    }
  }
  const bool training = opt.training;
  return tape.record("batch_norm", std::move(out), {x, gamma, beta},
                     [x, gamma, beta, xhat, inv_std, N, C, S, m, training](Tape<T>& t, const Tensor<T>& g) {
                       const auto& gv = t.value(gamma);
                       for (std::size_t c = 0; c < C; ++c) {
                         double sg = 0.0, sgh = 0.0;
                         for (std::size_t n = 0; n < N; ++n) {
                           const std::size_t off = (n * C + c) * S;
                           for (std::size_t i = 0; i < S; ++i) {
                             sg += g[off + i];
                             sgh += static_cast<double>(g[off + i]) * (*xhat)[off + i];
                           }
                         }
                         if (t.wants_grad(gamma)) t.grad_buffer(gamma)[c] += static_cast<T>(sgh);
                         if (t.wants_grad(beta)) t.grad_buffer(beta)[c] += static_cast<T>(sg);
                         if (!t.wants_grad(x)) continue;
                         auto& gx = t.grad_buffer(x);
                         const double k = gv[c] * (*inv_std)[c];
                         for (std::size_t n = 0; n < N; ++n) {
                           const std::size_t off = (n * C + c) * S;
                           for (std::size_t i = 0; i < S; ++i) {
                             if (training) {
                               gx[off + i] += static_cast<T>(k * (g[off + i] - sg / m - (*xhat)[off + i] * sgh / m));
                             } else {
                               gx[off + i] += static_cast<T>(k * g[off + i]);
                             }
                           }
                         }
                       }
                     });
}

/// x [N,C,...] -> [N,C], mean over all trailing axes.
template <typename T>
Var global_avg_pool(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  detail::require(xv.rank() >= 3, "global_avg_pool", "input must be [N,C,...], got " + to_string(xv.shape()));
  const std::size_t N = xv.dim(0), C = xv.dim(1), S = detail::spatial_size(xv.shape());
  Tensor<T> out({N, C});
  for (std::size_t i = 0; i < N * C; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < S; ++j) s += xv[i * S + j];
    out[i] = static_cast<T>(s / static_cast<double>(S));
  }
  return tape.record("global_avg_pool", std::move(out), {x}, [x, N, C, S](Tape<T>& t, const Tensor<T>& g) {
    auto& gx = t.grad_buffer(x);
    const T inv = T{1} / static_cast<T>(S);
    for (std::size_t i = 0; i < N * C; ++i)
      for (std::size_t j = 0; j < S; ++j) gx[i * S + j] += g[i] * inv;
  });
}

/// Cubic max pooling with implicit -inf padding. Ties resolve to the first
/// maximum in scan order.
template <typename T>
Var max_pool3d(Tape<T>& tape, Var x, std::size_t kernel, std::size_t stride, std::size_t pad = 0) {
  const auto& xv = tape.value(x);
  detail::require(xv.rank() == 5, "max_pool3d", "input must be [N,C,D,H,W], got " + to_string(xv.shape()));
  detail::require(kernel >= 1 && stride >= 1 && pad < kernel, "max_pool3d", "invalid kernel/stride/pad");
  auto extent = [&](std::size_t in) {
    detail::require(in + 2 * pad >= kernel, "max_pool3d", "kernel larger than input " + to_string(xv.shape()));
    return (in + 2 * pad - kernel) / stride + 1;
  };
  const std::size_t N = xv.dim(0), C = xv.dim(1), D = xv.dim(2), H = xv.dim(3), W = xv.dim(4);
  const std::size_t od = extent(D), oh = extent(H), ow = extent(W);
  Tensor<T> out({N, C, od, oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const std::size_t base = nc * D * H * W;
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t at = base;
          for (std::size_t kz = 0; kz < kernel; ++kz)
            for (std::size_t ky = 0; ky < kernel; ++ky)
              for (std::size_t kx = 0; kx < kernel; ++kx) {
                const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(z * stride + kz) - static_cast<std::ptrdiff_t>(pad);
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xx * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                if (iz < 0 || iy < 0 || ix < 0 || iz >= static_cast<std::ptrdiff_t>(D) ||
                    iy >= static_cast<std::ptrdiff_t>(H) || ix >= static_cast<std::ptrdiff_t>(W))
                  continue;
                const std::size_t idx = base + (static_cast<std::size_t>(iz) * H + static_cast<std::size_t>(iy)) * W +
                                        static_cast<std::size_t>(ix);
                if (xv[idx] > best) {
                  best = xv[idx];
                  at = idx;
                }
              }
          out[o] = best;
          (*argmax)[o] = at;
        }
  }
  return tape.record("max_pool3d", std::move(out), {x}, [x, argmax](Tape<T>& t, const Tensor<T>& g) {
    auto& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
  });
}

namespace detail {

/// Linear interpolation taps along one axis, half-pixel (align-corners=false)
/// convention with edge clamping.
struct LerpTap {
  std::size_t lo, hi;
  double w;  // weight of hi
};

inline std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    const double maxpos = static_cast<double>(in - 1);
    if (src > maxpos) src = maxpos;
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[o] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

template <typename T>
void trilinear_forward(const T* src, std::array<std::size_t, 3> in, T* dst, std::array<std::size_t, 3> out,
                       const std::vector<LerpTap>& tz, const std::vector<LerpTap>& ty,
                       const std::vector<LerpTap>& tx) {
  const std::size_t H = in[1], W = in[2];
  std::size_t o = 0;
  for (std::size_t z = 0; z < out[0]; ++z)
    for (std::size_t y = 0; y < out[1]; ++y)
      for (std::size_t x = 0; x < out[2]; ++x, ++o) {
        const auto& a = tz[z];
        const auto& b = ty[y];
        const auto& c = tx[x];
        auto at = [&](std::size_t zz, std::size_t yy, std::size_t xx) {
          return static_cast<double>(src[(zz * H + yy) * W + xx]);
        };
        const double v00 = at(a.lo, b.lo, c.lo) * (1 - c.w) + at(a.lo, b.lo, c.hi) * c.w;
        const double v01 = at(a.lo, b.hi, c.lo) * (1 - c.w) + at(a.lo, b.hi, c.hi) * c.w;
        const double v10 = at(a.hi, b.lo, c.lo) * (1 - c.w) + at(a.hi, b.lo, c.hi) * c.w;
        const double v11 = at(a.hi, b.hi, c.lo) * (1 - c.w) + at(a.hi, b.hi, c.hi) * c.w;
        const double v0 = v00 * (1 - b.w) + v01 * b.w;
        const double v1 = v10 * (1 - b.w) + v11 * b.w;
        dst[o] = static_cast<T>(v0 * (1 - a.w) + v1 * a.w);
      }
}

}  // namespace detail

/// Trilinear resampling of x [N,C,D,H,W] to the given spatial extents.
template <typename T>
Var trilinear_resample(Tape<T>& tape, Var x, std::array<std::size_t, 3> out_dims) {
  const auto& xv = tape.value(x);
  detail::require(xv.rank() == 5, "trilinear_resample", "input must be [N,C,D,H,W], got " + to_string(xv.shape()));
  detail::require(out_dims[0] > 0 && out_dims[1] > 0 && out_dims[2] > 0, "trilinear_resample", "zero output extent");
  const std::array<std::size_t, 3> in{xv.dim(2), xv.dim(3), xv.dim(4)};
  const std::size_t NC = xv.dim(0) * xv.dim(1);
  auto tz = detail::lerp_taps(in[0], out_dims[0]);
  auto ty = detail::lerp_taps(in[1], out_dims[1]);
  auto tx = detail::lerp_taps(in[2], out_dims[2]);
  const std::size_t in_n = in[0] * in[1] * in[2], out_n = out_dims[0] * out_dims[1] * out_dims[2];
  Tensor<T> out({xv.dim(0), xv.dim(1), out_dims[0], out_dims[1], out_dims[2]});
  for (std::size_t i = 0; i < NC; ++i)
    detail::trilinear_forward(xv.raw() + i * in_n, in, out.raw() + i * out_n, out_dims, tz, ty, tx);
  return tape.record("trilinear_resample", std::move(out), {x},
                     [x, in, out_dims, NC, in_n, out_n, tz, ty, tx](Tape<T>& t, const Tensor<T>& g) {
                       auto& gx = t.grad_buffer(x);
                       const std::size_t H = in[1], W = in[2];
                       for (std::size_t i = 0; i < NC; ++i) {
                         T* dst = gx.raw() + i * in_n;
                         const T* src = g.raw() + i * out_n;
                         std::size_t o = 0;
                         for (std::size_t z = 0; z < out_dims[0]; ++z)
                           for (std::size_t y = 0; y < out_dims[1]; ++y)
                             for (std::size_t xx = 0; xx < out_dims[2]; ++xx, ++o) {
                               const auto& a = tz[z];
                               const auto& b = ty[y];
                               const auto& c = tx[xx];
                               const double v = src[o];
                               auto put = [&](std::size_t zz, std::size_t yy, std::size_t xi, double w) {
                                 dst[(zz * H + yy) * W + xi] += static_cast<T>(v * w);
                               };
                               put(a.lo, b.lo, c.lo, (1 - a.w) * (1 - b.w) * (1 - c.w));
                               put(a.lo, b.lo, c.hi, (1 - a.w) * (1 - b.w) * c.w);
                               put(a.lo, b.hi, c.lo, (1 - a.w) * b.w * (1 - c.w));
                               put(a.lo, b.hi, c.hi, (1 - a.w) * b.w * c.w);
                               put(a.hi, b.lo, c.lo, a.w * (1 - b.w) * (1 - c.w));
                               put(a.hi, b.lo, c.hi, a.w * (1 - b.w) * c.w);
                               put(a.hi, b.hi, c.lo, a.w * b.w * (1 - c.w));
                               put(a.hi, b.hi, c.hi, a.w * b.w * c.w);
                             }
                       }
                     });
}

/// Row-wise L2 normalisation of x [N,d]. Norms below 1e-12 are clamped.
template <typename T>
Var l2_normalize(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  detail::require(xv.rank() == 2, "l2_normalize", "input must be [N,d], got " + to_string(xv.shape()));
  const std::size_t N = xv.dim(0), d = xv.dim(1);
  constexpr double floor = 1e-12;
  auto norms = std::make_shared<std::vector<double>>(N);
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < N; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += static_cast<double>(xv[r * d + c]) * xv[r * d + c];
    const double n = std::max(std::sqrt(s), floor);
    (*norms)[r] = n;
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = static_cast<T>(xv[r * d + c] / n);
  }
  Var y_id{tape.size()};
  return tape.record("l2_normalize", std::move(out), {x}, [x, y_id, norms, N, d](Tape<T>& t, const Tensor<T>& g) {
    const auto& y = t.value(y_id);
    auto& gx = t.grad_buffer(x);
    for (std::size_t r = 0; r < N; ++r) {
      const double n = (*norms)[r];
      if (n <= floor) {
        for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += static_cast<T>(g[r * d + c] / n);
        continue;
      }
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += static_cast<double>(y[r * d + c]) * g[r * d + c];
      for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += static_cast<T>((g[r * d + c] - y[r * d + c] * dot) / n);
    }
  });
}

/// Euclidean distance matrix of the rows of x [M,d] -> [M,M]. The
/// subgradient of a zero distance is taken as 0.
template <typename T>
Var pairwise_distance(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  detail::require(xv.rank() == 2, "pairwise_distance", "input must be [M,d], got " + to_string(xv.shape()));
  const std::size_t M = xv.dim(0), d = xv.dim(1);
  Tensor<T> out({M, M});
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = i + 1; j < M; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = static_cast<double>(xv[i * d + c]) - xv[j * d + c];
        s += diff * diff;
      }
      out[i * M + j] = out[j * M + i] = static_cast<T>(std::sqrt(s));
    }
  Var y_id{tape.size()};
  return tape.record("pairwise_distance", std::move(out), {x}, [x, y_id, M, d](Tape<T>& t, const Tensor<T>& g) {
    const auto& xv = t.value(x);
    const auto& D = t.value(y_id);
    auto& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < M; ++j) {
        if (i == j || D[i * M + j] == T{0}) continue;
        const double coef = (static_cast<double>(g[i * M + j]) + g[j * M + i]) / D[i * M + j];
        for (std::size_t c = 0; c < d; ++c)
          gx[i * d + c] += static_cast<T>(coef * (static_cast<double>(xv[i * d + c]) - xv[j * d + c]));
      }
  });
}

/// Index sets for subset_logsumexp: sets[i*M + j] lists the columns k of
/// row i to reduce for output (i, j). An empty set yields 0 with no gradient.
using SubsetTable = std::vector<std::vector<std::size_t>>;

/// out[i,j] = log sum_{k in sets[i,j]} exp(z[i,k]), max-shifted for stability.
template <typename T>
Var subset_logsumexp(Tape<T>& tape, Var z, SubsetTable sets) {
  const auto& zv = tape.value(z);
  detail::require(zv.rank() == 2 && zv.dim(0) == zv.dim(1), "subset_logsumexp",
                  "input must be square [M,M], got " + to_string(zv.shape()));
  const std::size_t M = zv.dim(0);
  detail::require(sets.size() == M * M, "subset_logsumexp",
                  "subset table has " + std::to_string(sets.size()) + " entries, expected " + std::to_string(M * M));
  Tensor<T> out({M, M});
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < M; ++j) {
      const auto& s = sets[i * M + j];
      if (s.empty()) continue;
      double mx = -std::numeric_limits<double>::infinity();
      for (auto k : s) {
        detail::require(k < M, "subset_logsumexp", "column index " + std::to_string(k) + " out of range");
        mx = std::max(mx, static_cast<double>(zv[i * M + k]));
      }
      double acc = 0.0;
      for (auto k : s) acc += std::exp(static_cast<double>(zv[i * M + k]) - mx);
      out[i * M + j] = static_cast<T>(mx + std::log(acc));
    }
  auto table = std::make_shared<const SubsetTable>(std::move(sets));
  Var y_id{tape.size()};
  return tape.record("subset_logsumexp", std::move(out), {z}, [z, y_id, table, M](Tape<T>& t, const Tensor<T>& g) {
    const auto& zv = t.value(z);
    const auto& lse = t.value(y_id);
    auto& gz = t.grad_buffer(z);
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < M; ++j) {
        const auto& s = (*table)[i * M + j];
        const double gij = g[i * M + j];
        if (s.empty() || gij == 0.0) continue;
        const double l = lse[i * M + j];
        for (auto k : s) gz[i * M + k] += static_cast<T>(gij * std::exp(static_cast<double>(zv[i * M + k]) - l));
      }
  });
}

}  // namespace agerank::ops
