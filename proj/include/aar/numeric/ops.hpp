#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "aar/numeric/graph.hpp"

// Forward ops over BasicVar<T>. Every op records its reverse rule on the graph
// when some input requires a gradient.

namespace aar::numeric {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

[[noreturn]] inline void fail(const char* op, const std::string& msg) {
  throw ContractError(std::string(op) + ": " + msg);
}

inline void require_same(const char* op, const Shape& a, const Shape& b) {
  if (a != b) fail(op, "shape mismatch " + to_string(a) + " vs " + to_string(b));
}

inline bool is_suffix(const Shape& full, const Shape& suffix) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

inline void require_axis(const char* op, std::size_t axis, std::size_t rank) {
  if (axis >= rank)
    fail(op, "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
}

/// (outer, extent, inner) decomposition of a shape around one axis.
inline std::array<std::size_t, 3> split_axis(const Shape& s, std::size_t axis) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, s[axis], inner};
}

template <class T>
void accumulate(BasicGraph<T>& g, BasicVar<T> v, std::span<const T> add) {
  auto buf = g.grad_buffer(v);
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += add[i];
}

}  // namespace detail

/// a + b. `b` may also match a trailing suffix of a's shape (bias broadcast).
template <class T>
BasicVar<T> add(BasicVar<T> a, BasicVar<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  const bool same = av.shape() == bv.shape();
  if (!same && !detail::is_suffix(av.shape(), bv.shape()))
    detail::fail("add", "shape mismatch " + to_string(av.shape()) + " vs " + to_string(bv.shape()));
  BasicTensor<T> out = av;
  const std::size_t n = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % n];
  return a.graph().emit("add", std::move(out), {a, b}, [a, b, n](BasicGraph<T>& g, const BasicTensor<T>&, const BasicTensor<T>& dy) {
    if (a.requires_grad()) detail::accumulate(g, a, dy.data());
    if (b.requires_grad()) {
      auto gb = g.grad_buffer(b);
      for (std::size_t i = 0; i < dy.size(); ++i) gb[i % n] += dy[i];
    }
  });
}

template <class T>
BasicVar<T> sub(BasicVar<T> a, BasicVar<T> b) {
  detail::require_same("sub", a.shape(), b.shape());
  BasicTensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.graph().emit("sub", std::move(out), {a, b}, [a, b](BasicGraph<T>& g, const BasicTensor<T>&, const BasicTensor<T>& dy) {
    if (a.requires_grad()) detail::accumulate(g, a, dy.data());
    if (b.requires_grad()) {
      auto gb = g.grad_buffer(b);
      for (std::size_t i = 0; i < dy.size(); ++i) gb[i] -= dy[i];
    }
  });
}

/// Elementwise product of equal shapes.
template <class T>
BasicVar<T> mul(BasicVar<T> a, BasicVar<T> b) {
  detail::require_same("mul", a.shape(), b.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  BasicTensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.graph().emit("mul", std::move(out), {a, b}, [a, b](BasicGraph<T>& g, const BasicTensor<T>&, const BasicTensor<T>& dy) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (a.requires_grad()) {
      auto ga = g.grad_buffer(a);
      for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto gb = g.grad_buffer(b);
      for (std::size_t i = 0; i < dy.size(); ++i) gb[i] += dy[i] * av[i];
    }
  });
}

template <class T>
BasicVar<T> scale(BasicVar<T> a, T factor) {
  BasicTensor<T> out = a.value();
  for (auto& v : out.data()) v *= factor;
  return a.graph().emit("scale", std::move(out), {a}, [a, factor](BasicGraph<T>& g, const BasicTensor<T>&, const BasicTensor<T>& dy) {
    auto ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += factor * dy[i];
  });
}

/// [m,k] x [k,n] -> [m,n]
template <class T>
BasicVar<T> matmul(BasicVar<T> a, BasicVar<T> b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0])
    detail::fail("matmul", "incompatible shapes " + to_string(as) + " and " + to_string(bs));
  const auto m = as[0], k = as[1], n = bs[1];
  BasicTensor<T> out(Shape{m, n});
  detail::MatMap<T>(out.ptr(), m, n).noalias() =
      detail::ConstMatMap<T>(a.value().ptr(), m, k) * detail::ConstMatMap<T>(b.value().ptr(), k, n);
  return a.graph().emit("matmul", std::move(out), {a, b},
                        [a, b, m, k, n](BasicGraph<T>& g, const BasicTensor<T>&, const BasicTensor<T>& dy) {
                          detail::ConstMatMap<T> dY(dy.ptr(), m, n);
                          if (a.requires_grad())
                            detail::MatMap<T>(g.grad_buffer(a).data(), m, k).noalias() +=
                                dY * detail::ConstMatMap<T>(b.value().ptr(), k, n).transpose();
                          if (b.requires_grad())
                            detail::MatMap<T>(g.grad_buffer(b).data(), k, n).noalias() +=
                                detail::ConstMatMap<T>(a.value().ptr(), m, k).transpose() * dY;
                        });
}

/// Rank-2 transpose.
template <class T>
BasicVar<T> transpose(BasicVar<T> a) {
  const auto& s = a.shape();
  if (s.size() != 2) detail::fail("transpose", "expected rank 2, got " + to_string(s));
  const auto r = s[0], c = s[1];
  BasicTensor<T> out(Shape{c, r});
  detail::MatMap<T>(out.ptr(), c, r) = detail::ConstMatMap<T>(a.value().ptr(), r, c).transpose();
  return a.graph().emit("transpose", std::move(out), {a}, [a, r, c](BasicGraph<T>& g, const BasicTensor<T>&, const BasicTensor<T>& dy) {
    detail::MatMap<T>(g.grad_buffer(a).data(), r, c) += detail::ConstMatMap<T>(dy.ptr(), c, r).transpose();
  });
}

/// General axis permutation: out.shape[i] = in.shape[perm[i]].
template <class T>
BasicVar<T> permute(BasicVar<T> a, std::vector<std::size_t> perm) {
  const auto& s = a.shape();
  if (perm.size() != s.size()) detail::fail("permute", "permutation rank mismatch for " + to_string(s));
  std::vector<bool> seen(s.size(), false);
  for (auto p : perm) {
    if (p >= s.size() || seen[p]) detail::fail("permute", "invalid permutation");
    seen[p] = true;
  }
  const std::size_t rank = s.size();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * s[i + 1];
  Shape os(rank);
  for (std::size_t i = 0; i < rank; ++i) os[i] = s[perm[i]];
  // gather index of every output element
  std::vector<std::size_t> src(numel(s));
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t o = 0; o < src.size(); ++o) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < rank; ++i) off += idx[i] * in_strides[perm[i]];
    src[o] = off;
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < os[i]) break;
      idx[i] = 0;
    }
  }
  const auto& av = a.value();
  BasicTensor<T> out(os);
  for (std::size_t o = 0; o < src.size(); ++o) out[o] = av[src[o]];
  return a.graph().emit("permute", std::move(out), {a},
                        [a, src = std::move(src)](BasicGraph<T>& g, const BasicTensor<T>&, const BasicTensor<T>& dy) {
                          auto ga = g.grad_buffer(a);
                          for (std::size_t o = 0; o < src.size(); ++o) ga[src[o]] += dy[o];
                        });
}

template <class T>
BasicVar<T> reshape(BasicVar<T> a, Shape shape) {
  if (numel(shape) != a.size())
    detail::fail("reshape", "cannot reshape " + to_string(a.shape()) + " to " + to_string(shape));
  BasicTensor<T> out(std::move(shape), std::vector<T>(a.value().data().begin(), a.value().data().end()));
  return a.graph().emit("reshape", std::move(out), {a}, [a](BasicGraph<T>& g, const BasicTensor<T>&, const BasicTensor<T>& dy) {
    detail::accumulate(g, a, dy.data());
  });
}

/// 2-D convolution on channels-last maps. x: [H, W, Cin]; w: [K*K*Cin, Cout]
/// with row index (ky*K + kx)*Cin + ci. Zero padding of `pad` on every side.
template <class T>
BasicVar<T> conv2d(BasicVar<T> x, BasicVar<T> w, std::size_t kernel, std::size_t stride, std::size_t pad) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 3) detail::fail("conv2d", "input must be [H,W,C], got " + to_string(xs));
  const std::size_t H = xs[0], W = xs[1], C = xs[2];
  if (ws.size() != 2 || ws[0] != kernel * kernel * C)
    detail::fail("conv2d", "weight " + to_string(ws) + " incompatible with input " + to_string(xs) +
                               " and kernel " + std::to_string(kernel));
  if (stride == 0 || H + 2 * pad < kernel || W + 2 * pad < kernel)
    detail::fail("conv2d", "kernel larger than padded input " + to_string(xs));
  const std::size_t Ho = (H + 2 * pad - kernel) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - kernel) / stride + 1;
  const std::size_t Cout = ws[1];
  const std::size_t K = kernel * kernel * C;

  // im2col; recomputed in the reverse rule rather than stored
  auto im2col = [=](const BasicTensor<T>& xv) {
    detail::RowMat<T> cols = detail::RowMat<T>::Zero(static_cast<Eigen::Index>(Ho * Wo), static_cast<Eigen::Index>(K));
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        T* row = cols.data() + (oy * Wo + ox) * K;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
            const T* src = xv.ptr() + (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * C;
            std::copy(src, src + C, row + (ky * kernel + kx) * C);
          }
        }
      }
    return cols;
  };

  BasicTensor<T> out(Shape{Ho, Wo, Cout});
  {
    auto cols = im2col(x.value());
    detail::MatMap<T>(out.ptr(), Ho * Wo, Cout).noalias() = cols * detail::ConstMatMap<T>(w.value().ptr(), K, Cout);
  }
  return x.graph().emit(
      "conv2d", std::move(out), {x, w}, [=](BasicGraph<T>& g, const BasicTensor<T>&, const BasicTensor<T>& dy) {
        detail::ConstMatMap<T> dY(dy.ptr(), Ho * Wo, Cout);
        if (w.requires_grad()) {
          auto cols = im2col(x.value());
          detail::MatMap<T>(g.grad_buffer(w).data(), K, Cout).noalias() += cols.transpose() * dY;
        }
        if (x.requires_grad()) {
          detail::RowMat<T> dcols = dY * detail::ConstMatMap<T>(w.value().ptr(), K, Cout).transpose();
          auto gx = g.grad_buffer(x);
          for (std::size_t oy = 0; oy < Ho; ++oy)
            for (std::size_t ox = 0; ox < Wo; ++ox) {
              const T* row = dcols.data() + (oy * Wo + ox) * K;
              for (std::size_t ky = 0; ky < kernel; ++ky) {
                const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t kx = 0; kx < kernel; ++kx) {
                  const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                  T* dst = gx.data() + (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * C;
                  const T* src = row + (ky * kernel + kx) * C;
                  for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
                }
              }
            }
        }
      });
}

template <class T>
BasicVar<T> relu(BasicVar<T> a) {
  BasicTensor<T> out = a.value();
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  return a.graph().emit("relu", std::move(out), {a}, [a](BasicGraph<T>& g, const BasicTensor<T>&, const BasicTensor<T>& dy) {
    const auto& av = a.value();
    auto ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (av[i] > T(0)) ga[i] += dy[i];
  });
}

/// Exact GELU: x * Phi(x).
template <class T>
BasicVar<T> gelu(BasicVar<T> a) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  BasicTensor<T> out = a.value();
  for (auto& v : out.data()) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  return a.graph().emit("gelu", std::move(out), {a}, [a](BasicGraph<T>& g, const BasicTensor<T>&, const BasicTensor<T>& dy) {
    constexpr T inv_sqrt2pi = T(0.39894228040143267794);
    const auto& av = a.value();
    auto ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const T x = av[i];
      const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
      ga[i] += dy[i] * (cdf + x * pdf);
    }
  });
}

/// Softmax over the last axis.
template <class T>
BasicVar<T> softmax(BasicVar<T> a) {
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.size() / n;
  BasicTensor<T> out = a.value();
  for (std::size_t r = 0; r < rows; ++r) {
    T* p = out.ptr() + r * n;
    const T mx = *std::max_element(p, p + n);
    T z = 0;
    for (std::size_t i = 0; i < n; ++i) z += (p[i] = std::exp(p[i] - mx));
    for (std::size_t i = 0; i < n; ++i) p[i] /= z;
  }
  return a.graph().emit("softmax", std::move(out), {a},
                        [a, n, rows](BasicGraph<T>& g, const BasicTensor<T>& y, const BasicTensor<T>& dy) {
                          auto ga = g.grad_buffer(a);
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* yp = y.ptr() + r * n;
                            const T* dp = dy.ptr() + r * n;
                            T dot = 0;
                            for (std::size_t i = 0; i < n; ++i) dot += yp[i] * dp[i];
                            for (std::size_t i = 0; i < n; ++i) ga[r * n + i] += yp[i] * (dp[i] - dot);
                          }
                        });
}

/// Layer normalization over the last axis with learnable gain and bias.
template <class T>
BasicVar<T> layer_norm(BasicVar<T> x, BasicVar<T> gain, BasicVar<T> bias, T eps = T(1e-5)) {
  const std::size_t n = x.shape().back();
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n})
    detail::fail("layer_norm", "gain/bias " + to_string(gain.shape()) + "/" + to_string(bias.shape()) +
                                   " do not match last axis of " + to_string(x.shape()));
  const std::size_t rows = x.size() / n;
  const auto& xv = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  BasicTensor<T> out(xv.shape());
  std::vector<T> xhat(xv.size());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = xv.ptr() + r * n;
    T mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += p[i];
    mean /= T(n);
    T var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= T(n);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t i = 0; i < n; ++i) {
      const T h = (p[i] - mean) * is;
      xhat[r * n + i] = h;
      out[r * n + i] = h * gv[i] + bv[i];
    }
  }
  return x.graph().emit(
      "layer_norm", std::move(out), {x, gain, bias},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](BasicGraph<T>& g, const BasicTensor<T>&,
                                                                const BasicTensor<T>& dy) {
        const auto& gv = gain.value();
        if (gain.requires_grad()) {
          auto gg = g.grad_buffer(gain);
          for (std::size_t i = 0; i < dy.size(); ++i) gg[i % n] += dy[i] * xhat[i];
        }
        if (bias.requires_grad()) {
          auto gb = g.grad_buffer(bias);
          for (std::size_t i = 0; i < dy.size(); ++i) gb[i % n] += dy[i];
        }
        if (x.requires_grad()) {
          auto gx = g.grad_buffer(x);
          for (std::size_t r = 0; r < rows; ++r) {
            T m1 = 0, m2 = 0;
            for (std::size_t i = 0; i < n; ++i) {
              const T d = dy[r * n + i] * gv[i];
              m1 += d;
              m2 += d * xhat[r * n + i];
            }
            m1 /= T(n);
            m2 /= T(n);
            for (std::size_t i = 0; i < n; ++i) {
              const T d = dy[r * n + i] * gv[i];
              gx[r * n + i] += inv_std[r] * (d - m1 - xhat[r * n + i] * m2);
            }
          }
        }
      });
}

/// Mean over the given axes; reduced axes are dropped (a full reduction gives shape [1]).
template <class T>
BasicVar<T> mean(BasicVar<T> a, std::vector<std::size_t> axes) {
  const auto& s = a.shape();
  std::vector<bool> reduce(s.size(), false);
  for (auto ax : axes) {
    detail::require_axis("mean", ax, s.size());
    reduce[ax] = true;
  }
  Shape os;
  std::size_t count = 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (reduce[i])
      count *= s[i];
    else
      os.push_back(s[i]);
  }
  if (os.empty()) os.push_back(1);
  // output offset of each input element
  std::vector<std::size_t> dst(a.size());
  {
    std::vector<std::size_t> idx(s.size(), 0);
    for (std::size_t e = 0; e < dst.size(); ++e) {
      std::size_t off = 0;
      for (std::size_t i = 0; i < s.size(); ++i)
        if (!reduce[i]) off = off * s[i] + idx[i];
      dst[e] = off;
      for (std::size_t i = s.size(); i-- > 0;) {
        if (++idx[i] < s[i]) break;
        idx[i] = 0;
      }
    }
  }
  const auto& av = a.value();
  BasicTensor<T> out(os);
  for (std::size_t e = 0; e < dst.size(); ++e) out[dst[e]] += av[e];
  const T inv = T(1) / T(count);
  for (auto& v : out.data()) v *= inv;
  return a.graph().emit("mean", std::move(out), {a},
                        [a, inv, dst = std::move(dst)](BasicGraph<T>& g, const BasicTensor<T>&, const BasicTensor<T>& dy) {
                          auto ga = g.grad_buffer(a);
                          for (std::size_t e = 0; e < dst.size(); ++e) ga[e] += dy[dst[e]] * inv;
                        });
}

/// Sum of all elements, shape [1].
template <class T>
BasicVar<T> sum(BasicVar<T> a) {
  T total = 0;
  for (auto v : a.value().data()) total += v;
  return a.graph().emit("sum", BasicTensor<T>::scalar(total), {a},
                        [a](BasicGraph<T>& g, const BasicTensor<T>&, const BasicTensor<T>& dy) {
                          auto ga = g.grad_buffer(a);
                          for (auto& v : ga) v += dy[0];
                        });
}

/// Concatenation along `axis`; all other extents must agree.
template <class T>
BasicVar<T> concat(const std::vector<BasicVar<T>>& parts, std::size_t axis) {
  if (parts.empty()) detail::fail("concat", "no inputs");
  const Shape& s0 = parts[0].shape();
  detail::require_axis("concat", axis, s0.size());
  Shape os = s0;
  os[axis] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
    if (!ok) detail::fail("concat", "shape mismatch " + to_string(s0) + " vs " + to_string(s));
    os[axis] += s[axis];
  }
  const auto [outer, total, inner] = detail::split_axis(os, axis);
  BasicTensor<T> out(os);
  std::vector<std::size_t> offsets;
  std::size_t at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    const std::size_t len = p.shape()[axis];
    const auto& pv = p.value();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.ptr() + o * len * inner, len * inner, out.ptr() + (o * total + at) * inner);
    at += len;
  }
  return parts[0].graph().emit(
      "concat", std::move(out), parts,
      [parts, offsets, axis, outer = outer, total = total, inner = inner](BasicGraph<T>& g, const BasicTensor<T>&,
                                                                          const BasicTensor<T>& dy) {
        for (std::size_t k = 0; k < parts.size(); ++k) {
          if (!parts[k].requires_grad()) continue;
          const std::size_t len = parts[k].shape()[axis];
          auto gp = g.grad_buffer(parts[k]);
          for (std::size_t o = 0; o < outer; ++o) {
            const T* src = dy.ptr() + (o * total + offsets[k]) * inner;
            T* dst = gp.data() + o * len * inner;
            for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
          }
        }
      });
}

/// Elements [start, start+len) along `axis`.
template <class T>
BasicVar<T> slice(BasicVar<T> a, std::size_t axis, std::size_t start, std::size_t len) {
  const auto& s = a.shape();
  detail::require_axis("slice", axis, s.size());
  if (len == 0 || start + len > s[axis])
    detail::fail("slice", "range [" + std::to_string(start) + "," + std::to_string(start + len) +
                              ") out of bounds for " + to_string(s));
  const auto [outer, extent, inner] = detail::split_axis(s, axis);
  Shape os = s;
  os[axis] = len;
  BasicTensor<T> out(os);
  const auto& av = a.value();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(av.ptr() + (o * extent + start) * inner, len * inner, out.ptr() + o * len * inner);
  return a.graph().emit("slice", std::move(out), {a},
                        [a, start, len, outer = outer, extent = extent, inner = inner](
                            BasicGraph<T>& g, const BasicTensor<T>&, const BasicTensor<T>& dy) {
                          auto ga = g.grad_buffer(a);
                          for (std::size_t o = 0; o < outer; ++o) {
                            T* dst = ga.data() + (o * extent + start) * inner;
                            const T* src = dy.ptr() + o * len * inner;
                            for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                          }
                        });
}

inline constexpr double kNormFloor = 1e-12;

/// x / max(||x||, 1e-12) over the last axis.
template <class T>
BasicVar<T> l2_normalize(BasicVar<T> a) {
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.size() / n;
  BasicTensor<T> out = a.value();
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T* p = out.ptr() + r * n;
    T ss = 0;
    for (std::size_t i = 0; i < n; ++i) ss += p[i] * p[i];
    const T nr = std::max(std::sqrt(ss), T(kNormFloor));
    norms[r] = nr;
    for (std::size_t i = 0; i < n; ++i) p[i] /= nr;
  }
  return a.graph().emit("l2_normalize", std::move(out), {a},
                        [a, n, rows, norms = std::move(norms)](BasicGraph<T>& g, const BasicTensor<T>& y,
                                                               const BasicTensor<T>& dy) {
                          auto ga = g.grad_buffer(a);
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* yp = y.ptr() + r * n;
                            const T* dp = dy.ptr() + r * n;
                            // below the floor the map is linear: x / floor
                            const bool floored = norms[r] <= T(kNormFloor);
                            T dot = 0;
                            if (!floored)
                              for (std::size_t i = 0; i < n; ++i) dot += yp[i] * dp[i];
                            for (std::size_t i = 0; i < n; ++i) ga[r * n + i] += (dp[i] - yp[i] * dot) / norms[r];
                          }
                        });
}

/// Cosine similarity of two equally sized tensors viewed as flat vectors, shape [1].
template <class T>
BasicVar<T> cosine_similarity(BasicVar<T> a, BasicVar<T> b) {
  if (a.size() != b.size())
    detail::fail("cosine_similarity", "size mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const auto& av = a.value();
  const auto& bv = b.value();
  T dot = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    dot += av[i] * bv[i];
    aa += av[i] * av[i];
    bb += bv[i] * bv[i];
  }
  const T na = std::max(std::sqrt(aa), T(kNormFloor));
  const T nb = std::max(std::sqrt(bb), T(kNormFloor));
  const T c = dot / (na * nb);
  const bool fa = na <= T(kNormFloor), fb = nb <= T(kNormFloor);
  return a.graph().emit(
      "cosine_similarity", BasicTensor<T>::scalar(c), {a, b},
      [a, b, na, nb, c, fa, fb](BasicGraph<T>& g, const BasicTensor<T>&, const BasicTensor<T>& dy) {
        const auto& av = a.value();
        const auto& bv = b.value();
        const T d = dy[0];
        if (a.requires_grad()) {
          auto ga = g.grad_buffer(a);
          for (std::size_t i = 0; i < av.size(); ++i)
            ga[i] += d * (bv[i] / (na * nb) - (fa ? T(0) : c * av[i] / (na * na)));
        }
        if (b.requires_grad()) {
          auto gb = g.grad_buffer(b);
          for (std::size_t i = 0; i < bv.size(); ++i)
            gb[i] += d * (av[i] / (na * nb) - (fb ? T(0) : c * bv[i] / (nb * nb)));
        }
      });
}

/// Softmax cross-entropy of a logit vector against one class index, shape [1].
template <class T>
BasicVar<T> cross_entropy(BasicVar<T> logits, std::size_t label) {
  const std::size_t n = logits.size();
  if (label >= n)
    detail::fail("cross_entropy", "label " + std::to_string(label) + " out of range for " + std::to_string(n) + " classes");
  const auto& lv = logits.value();
  const T mx = *std::max_element(lv.data().begin(), lv.data().end());
  T z = 0;
  for (auto v : lv.data()) z += std::exp(v - mx);
  const T lse = mx + std::log(z);
  return logits.graph().emit("cross_entropy", BasicTensor<T>::scalar(lse - lv[label]), {logits},
                             [logits, label, lse](BasicGraph<T>& g, const BasicTensor<T>&, const BasicTensor<T>& dy) {
                               const auto& lv = logits.value();
                               auto gl = g.grad_buffer(logits);
                               for (std::size_t i = 0; i < lv.size(); ++i)
                                 gl[i] += dy[0] * (std::exp(lv[i] - lse) - (i == label ? T(1) : T(0)));
                             });
}

}  // namespace aar::numeric
