#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <tuple>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lldn/errors.hpp"
#include "lldn/tensor.hpp"

namespace lldn {

// Reverse-mode tape. Each op computes its output eagerly and appends an
// adjoint closure; backward() replays closures in reverse. One tape per
// training step; reset() drops the recorded graph but leaves leaf tensors
// (parameters) untouched.
//
// Repeated backward() calls without reset() re-seed the loss and accumulate
// into leaf gradients; gradients of op outputs are recomputed from scratch
// each call.
template <typename T>
class Tape {
 public:
  using Tn = Tensor<T>;

  std::size_t num_records() const { return records_.size(); }

  void reset() {
    records_.clear();
    touched_.clear();
    touched_ids_.clear();
    produced_ids_.clear();
  }

  // ---- elementwise -------------------------------------------------------

  Tn relu(const Tn& x) {
    Tn y(x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i) y.at(i) = x.at(i) > T(0) ? x.at(i) : T(0);
    record("relu", {x}, y, [x = x, y]() mutable {
      for (std::int64_t i = 0; i < x.size(); ++i)
        if (x.at(i) > T(0)) x.grad()[static_cast<std::size_t>(i)] += y.grad()[static_cast<std::size_t>(i)];
    });
    return y;
  }

  // tanh-approximate GELU: 0.5 x (1 + tanh(c0 (x + c1 x^3)))
  Tn gelu(const Tn& x) {
    constexpr double c0 = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double c1 = 0.044715;
    Tn y(x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i) {
      double v = static_cast<double>(x.at(i));
      y.at(i) = static_cast<T>(0.5 * v * (1.0 + std::tanh(c0 * (v + c1 * v * v * v))));
    }
    record("gelu", {x}, y, [x = x, y]() mutable {
      for (std::int64_t i = 0; i < x.size(); ++i) {
        double v = static_cast<double>(x.at(i));
        double u = c0 * (v + c1 * v * v * v);
        double th = std::tanh(u);
        double sech2 = 1.0 - th * th;
        double dudx = c0 * (1.0 + 3.0 * c1 * v * v);
        double d = 0.5 * (1.0 + th) + 0.5 * v * sech2 * dudx;
        x.grad()[static_cast<std::size_t>(i)] += static_cast<T>(d) * y.grad()[static_cast<std::size_t>(i)];
      }
    });
    return y;
  }

  Tn sigmoid(const Tn& x) {
    Tn y(x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i) {
      double v = static_cast<double>(x.at(i));
      y.at(i) = static_cast<T>(1.0 / (1.0 + std::exp(-v)));
    }
    record("sigmoid", {x}, y, [x = x, y]() mutable {
      for (std::int64_t i = 0; i < x.size(); ++i) {
        T s = y.at(i);
        x.grad()[static_cast<std::size_t>(i)] += s * (T(1) - s) * y.grad()[static_cast<std::size_t>(i)];
      }
    });
    return y;
  }

  // a + b; b may either match a's shape or be a suffix of it (bias broadcast
  // over leading axes).
  Tn add(const Tn& a, const Tn& b) {
    const bool same = a.shape() == b.shape();
    if (!same) {
      if (b.rank() > a.rank() || !std::equal(b.shape().begin(), b.shape().end(),
                                             a.shape().end() - b.rank()))
        throw OpError("add: shape " + shape_str(b.shape()) + " is not a suffix of " + shape_str(a.shape()));
    }
    const std::int64_t bn = b.size();
    Tn y(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) y.at(i) = a.at(i) + b.at(i % bn);
    record("add", {a, b}, y, [a = a, b = b, y, bn]() mutable {
      for (std::int64_t i = 0; i < a.size(); ++i) {
        T g = y.grad()[static_cast<std::size_t>(i)];
        a.grad()[static_cast<std::size_t>(i)] += g;
        b.grad()[static_cast<std::size_t>(i % bn)] += g;
      }
    });
    return y;
  }

  Tn mul(const Tn& a, const Tn& b) {
    if (a.shape() != b.shape())
      throw OpError("mul: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tn y(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) y.at(i) = a.at(i) * b.at(i);
    record("mul", {a, b}, y, [a = a, b = b, y]() mutable {
      for (std::int64_t i = 0; i < a.size(); ++i) {
        T g = y.grad()[static_cast<std::size_t>(i)];
        a.grad()[static_cast<std::size_t>(i)] += g * b.at(i);
        b.grad()[static_cast<std::size_t>(i)] += g * a.at(i);
      }
    });
    return y;
  }

  Tn scale(const Tn& x, T c) {
    Tn y(x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i) y.at(i) = x.at(i) * c;
    record("scale", {x}, y, [x = x, y, c]() mutable {
      for (std::int64_t i = 0; i < x.size(); ++i)
        x.grad()[static_cast<std::size_t>(i)] += c * y.grad()[static_cast<std::size_t>(i)];
    });
    return y;
  }

  // ---- shape ops ---------------------------------------------------------

  Tn reshape(const Tn& x, Shape shape) {
    if (shape_numel(shape) != x.size())
      throw OpError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    Tn y(shape, x.data());
    record("reshape", {x}, y, [x = x, y]() mutable {
      for (std::int64_t i = 0; i < x.size(); ++i)
        x.grad()[static_cast<std::size_t>(i)] += y.grad()[static_cast<std::size_t>(i)];
    });
    return y;
  }

  Tn transpose(const Tn& x, const std::vector<int>& perm) {
    const int r = x.rank();
    if (static_cast<int>(perm.size()) != r) throw OpError("transpose: perm rank mismatch");
    std::vector<bool> seen(static_cast<std::size_t>(r), false);
    for (int p : perm) {
      if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)]) throw OpError("transpose: invalid permutation");
      seen[static_cast<std::size_t>(p)] = true;
    }
    Shape out_shape(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) out_shape[static_cast<std::size_t>(i)] = x.dim(perm[static_cast<std::size_t>(i)]);
    Tn y(out_shape);
    auto mapping = transpose_map(x.shape(), perm);
    for (std::int64_t i = 0; i < x.size(); ++i) y.at(mapping[static_cast<std::size_t>(i)]) = x.at(i);
    record("transpose", {x}, y, [x = x, y, mapping]() mutable {
      for (std::int64_t i = 0; i < x.size(); ++i)
        x.grad()[static_cast<std::size_t>(i)] += y.grad()[static_cast<std::size_t>(mapping[static_cast<std::size_t>(i)])];
    });
    return y;
  }

  Tn concat(const std::vector<Tn>& parts, int axis) {
    if (parts.empty()) throw OpError("concat: no inputs");
    const int r = parts[0].rank();
    if (axis < 0 || axis >= r) throw OpError("concat: axis out of range");
    Shape out_shape = parts[0].shape();
    out_shape[static_cast<std::size_t>(axis)] = 0;
    for (const auto& p : parts) {
      if (p.rank() != r) throw OpError("concat: rank mismatch");
      for (int i = 0; i < r; ++i)
        if (i != axis && p.dim(i) != parts[0].dim(i))
          throw OpError("concat: shape mismatch off-axis at dim " + std::to_string(i));
      out_shape[static_cast<std::size_t>(axis)] += p.dim(axis);
    }
    Tn y(out_shape);
    const std::int64_t inner = strides_inner(out_shape, axis);
    const std::int64_t outer = strides_outer(out_shape, axis);
    std::int64_t off = 0;
    for (const auto& p : parts) {
      const std::int64_t pn = p.dim(axis) * inner;
      const std::int64_t yn = out_shape[static_cast<std::size_t>(axis)] * inner;
      for (std::int64_t o = 0; o < outer; ++o)
        std::copy_n(p.data().begin() + o * pn, pn, y.data().begin() + o * yn + off);
      off += pn;
    }
    std::vector<Tn> captured = parts;
    record("concat", parts, y, [captured, y, inner, outer, out_shape, axis]() mutable {
      const std::int64_t yn = out_shape[static_cast<std::size_t>(axis)] * inner;
      std::int64_t off = 0;
      for (auto& p : captured) {
        const std::int64_t pn = p.dim(axis) * inner;
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t i = 0; i < pn; ++i)
            p.grad()[static_cast<std::size_t>(o * pn + i)] += y.grad()[static_cast<std::size_t>(o * yn + off + i)];
        off += pn;
      }
    });
    return y;
  }

  // ---- reductions --------------------------------------------------------

  Tn max_reduce(const Tn& x, int axis) {
    auto [outer, n, inner] = axis_split(x.shape(), axis, "max_reduce");
    Tn y(reduced_shape(x.shape(), axis));
    std::vector<std::int64_t> argmax(static_cast<std::size_t>(outer * inner));
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t in = 0; in < inner; ++in) {
        std::int64_t best = (o * n) * inner + in;
        T bv = x.at(best);
        for (std::int64_t i = 1; i < n; ++i) {
          std::int64_t idx = (o * n + i) * inner + in;
          if (x.at(idx) > bv) { bv = x.at(idx); best = idx; }
        }
        y.at(o * inner + in) = bv;
        argmax[static_cast<std::size_t>(o * inner + in)] = best;
      }
    record("max_reduce", {x}, y, [x = x, y, argmax]() mutable {
      for (std::int64_t i = 0; i < y.size(); ++i)
        x.grad()[static_cast<std::size_t>(argmax[static_cast<std::size_t>(i)])] += y.grad()[static_cast<std::size_t>(i)];
    });
    return y;
  }

  Tn mean_reduce(const Tn& x, int axis) {
    auto [outer, n, inner] = axis_split(x.shape(), axis, "mean_reduce");
    Tn y(reduced_shape(x.shape(), axis));
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t in = 0; in < inner; ++in) {
        T acc = T(0);
        for (std::int64_t i = 0; i < n; ++i) acc += x.at((o * n + i) * inner + in);
        y.at(o * inner + in) = acc / static_cast<T>(n);
      }
    record("mean_reduce", {x}, y, [x = x, y, outer = outer, n = n, inner = inner]() mutable {
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
          T g = y.grad()[static_cast<std::size_t>(o * inner + in)] / static_cast<T>(n);
          for (std::int64_t i = 0; i < n; ++i)
            x.grad()[static_cast<std::size_t>((o * n + i) * inner + in)] += g;
        }
    });
    return y;
  }

  Tn sum_all(const Tn& x) {
    T acc = T(0);
    for (std::int64_t i = 0; i < x.size(); ++i) acc += x.at(i);
    Tn y = Tn::scalar(acc);
    record("sum_all", {x}, y, [x = x, y]() mutable {
      T g = y.grad()[0];
      for (std::int64_t i = 0; i < x.size(); ++i) x.grad()[static_cast<std::size_t>(i)] += g;
    });
    return y;
  }

  // ---- normalization -----------------------------------------------------

  Tn softmax(const Tn& x, int axis) {
    auto [outer, n, inner] = axis_split(x.shape(), axis, "softmax");
    Tn y(x.shape());
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t in = 0; in < inner; ++in) {
        T mx = x.at((o * n) * inner + in);
        for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, x.at((o * n + i) * inner + in));
        double denom = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
          double e = std::exp(static_cast<double>(x.at((o * n + i) * inner + in) - mx));
          y.at((o * n + i) * inner + in) = static_cast<T>(e);
          denom += e;
        }
        for (std::int64_t i = 0; i < n; ++i)
          y.at((o * n + i) * inner + in) = static_cast<T>(static_cast<double>(y.at((o * n + i) * inner + in)) / denom);
      }
    record("softmax", {x}, y, [x = x, y, outer = outer, n = n, inner = inner]() mutable {
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
          T dot = T(0);
          for (std::int64_t i = 0; i < n; ++i) {
            std::int64_t idx = (o * n + i) * inner + in;
            dot += y.grad()[static_cast<std::size_t>(idx)] * y.at(idx);
          }
          for (std::int64_t i = 0; i < n; ++i) {
            std::int64_t idx = (o * n + i) * inner + in;
            x.grad()[static_cast<std::size_t>(idx)] += y.at(idx) * (y.grad()[static_cast<std::size_t>(idx)] - dot);
          }
        }
    });
    return y;
  }

  // Normalizes along `axis`; gain/bias have shape {dims[axis]}.
  Tn layer_norm(const Tn& x, const Tn& gain, const Tn& bias, int axis, double eps = 1e-5) {
    auto [outer, n, inner] = axis_split(x.shape(), axis, "layer_norm");
    if (gain.size() != n || bias.size() != n)
      throw OpError("layer_norm: gain/bias must have " + std::to_string(n) + " elements");
    Tn y(x.shape());
    // cache per-slice mean and inverse stddev for the adjoint
    std::vector<double> mean_c(static_cast<std::size_t>(outer * inner));
    std::vector<double> istd_c(static_cast<std::size_t>(outer * inner));
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t in = 0; in < inner; ++in) {
        double mu = 0.0;
        for (std::int64_t i = 0; i < n; ++i) mu += static_cast<double>(x.at((o * n + i) * inner + in));
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
          double d = static_cast<double>(x.at((o * n + i) * inner + in)) - mu;
          var += d * d;
        }
        var /= static_cast<double>(n);
        double istd = 1.0 / std::sqrt(var + eps);
        mean_c[static_cast<std::size_t>(o * inner + in)] = mu;
        istd_c[static_cast<std::size_t>(o * inner + in)] = istd;
        for (std::int64_t i = 0; i < n; ++i) {
          std::int64_t idx = (o * n + i) * inner + in;
          double xh = (static_cast<double>(x.at(idx)) - mu) * istd;
          y.at(idx) = static_cast<T>(xh * static_cast<double>(gain.at(i)) + static_cast<double>(bias.at(i)));
        }
      }
    record("layer_norm", {x, gain, bias}, y,
           [x = x, gain = gain, bias = bias, y, outer = outer, n = n, inner = inner, mean_c, istd_c]() mutable {
             for (std::int64_t o = 0; o < outer; ++o)
               for (std::int64_t in = 0; in < inner; ++in) {
                 double mu = mean_c[static_cast<std::size_t>(o * inner + in)];
                 double istd = istd_c[static_cast<std::size_t>(o * inner + in)];
                 double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                 for (std::int64_t i = 0; i < n; ++i) {
                   std::int64_t idx = (o * n + i) * inner + in;
                   double xh = (static_cast<double>(x.at(idx)) - mu) * istd;
                   double dy = static_cast<double>(y.grad()[static_cast<std::size_t>(idx)]);
                   double dxh = dy * static_cast<double>(gain.at(i));
                   sum_dxh += dxh;
                   sum_dxh_xh += dxh * xh;
                   gain.grad()[static_cast<std::size_t>(i)] += static_cast<T>(dy * xh);
                   bias.grad()[static_cast<std::size_t>(i)] += static_cast<T>(dy);
                 }
                 for (std::int64_t i = 0; i < n; ++i) {
                   std::int64_t idx = (o * n + i) * inner + in;
                   double xh = (static_cast<double>(x.at(idx)) - mu) * istd;
                   double dy = static_cast<double>(y.grad()[static_cast<std::size_t>(idx)]);
                   double dxh = dy * static_cast<double>(gain.at(i));
                   double dx = (dxh - sum_dxh / static_cast<double>(n) - xh * sum_dxh_xh / static_cast<double>(n)) * istd;
                   x.grad()[static_cast<std::size_t>(idx)] += static_cast<T>(dx);
                 }
               }
           });
    return y;
  }

  // ---- linear algebra ----------------------------------------------------

  // 2D [m,k]x[k,n] or batched 3D [b,m,k]x[b,k,n].
  Tn matmul(const Tn& a, const Tn& b) {
    if (a.rank() == 2 && b.rank() == 2) {
      if (a.dim(1) != b.dim(0))
        throw OpError("matmul: inner dims differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
      Tn y(Shape{a.dim(0), b.dim(1)});
      gemm(a.data().data(), b.data().data(), y.data().data(), a.dim(0), a.dim(1), b.dim(1));
      record("matmul", {a, b}, y, [a = a, b = b, y]() mutable { matmul_adjoint(a, b, y, 0); });
      return y;
    }
    if (a.rank() == 3 && b.rank() == 3) {
      if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw OpError("matmul: batched dims differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
      Tn y(Shape{a.dim(0), a.dim(1), b.dim(2)});
      const int bt = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
      for (int s = 0; s < bt; ++s)
        gemm(a.data().data() + static_cast<std::size_t>(s) * m * k,
             b.data().data() + static_cast<std::size_t>(s) * k * n,
             y.data().data() + static_cast<std::size_t>(s) * m * n, m, k, n);
      record("matmul", {a, b}, y, [a = a, b = b, y]() mutable {
        for (int s = 0; s < a.dim(0); ++s) matmul_adjoint(a, b, y, s);
      });
      return y;
    }
    throw OpError("matmul: expects two 2D or two 3D tensors, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }

  // x: [H,W,Cin], w: [kh,kw,Cin,Cout]
  Tn conv2d(const Tn& x, const Tn& w, int stride = 1, int padding = 0, int dilation = 1) {
    if (x.rank() != 3 || w.rank() != 4)
      throw OpError("conv2d: expects x [H,W,Cin] and w [kh,kw,Cin,Cout]");
    if (x.dim(2) != w.dim(2))
      throw OpError("conv2d: channel mismatch, input has " + std::to_string(x.dim(2)) +
                    ", kernel expects " + std::to_string(w.dim(2)));
    if (stride < 1 || dilation < 1 || padding < 0) throw OpError("conv2d: bad attributes");
    const int H = x.dim(0), W = x.dim(1), Ci = x.dim(2);
    const int kh = w.dim(0), kw = w.dim(1), Co = w.dim(3);
    const int Ho = (H + 2 * padding - dilation * (kh - 1) - 1) / stride + 1;
    const int Wo = (W + 2 * padding - dilation * (kw - 1) - 1) / stride + 1;
    if (Ho < 1 || Wo < 1) throw OpError("conv2d: kernel does not fit input " + shape_str(x.shape()));
    Tn y(Shape{Ho, Wo, Co});
    const T* xd = x.data().data();
    const T* wd = w.data().data();
    T* yd = y.data().data();
    for (int ho = 0; ho < Ho; ++ho)
      for (int wo = 0; wo < Wo; ++wo) {
        T* yrow = yd + (static_cast<std::size_t>(ho) * Wo + wo) * Co;
        for (int r = 0; r < kh; ++r) {
          const int hi = ho * stride - padding + r * dilation;
          if (hi < 0 || hi >= H) continue;
          for (int c = 0; c < kw; ++c) {
            const int wi = wo * stride - padding + c * dilation;
            if (wi < 0 || wi >= W) continue;
            const T* xrow = xd + (static_cast<std::size_t>(hi) * W + wi) * Ci;
            const T* wrow = wd + (static_cast<std::size_t>(r) * kw + c) * Ci * Co;
            for (int ci = 0; ci < Ci; ++ci) {
              const T xv = xrow[ci];
              const T* wk = wrow + static_cast<std::size_t>(ci) * Co;
              for (int co = 0; co < Co; ++co) yrow[co] += xv * wk[co];
            }
          }
        }
      }
    record("conv2d", {x, w}, y, [x = x, w = w, y, stride, padding, dilation]() mutable {
      const int H = x.dim(0), W = x.dim(1), Ci = x.dim(2);
      const int kh = w.dim(0), kw = w.dim(1), Co = w.dim(3);
      const int Ho = y.dim(0), Wo = y.dim(1);
      const T* xd = x.data().data();
      const T* wd = w.data().data();
      const T* gyd = y.grad().data();
      T* gxd = x.grad().data();
      T* gwd = w.grad().data();
      for (int ho = 0; ho < Ho; ++ho)
        for (int wo = 0; wo < Wo; ++wo) {
          const T* gyrow = gyd + (static_cast<std::size_t>(ho) * Wo + wo) * Co;
          for (int r = 0; r < kh; ++r) {
            const int hi = ho * stride - padding + r * dilation;
            if (hi < 0 || hi >= H) continue;
            for (int c = 0; c < kw; ++c) {
              const int wi = wo * stride - padding + c * dilation;
              if (wi < 0 || wi >= W) continue;
              const T* xrow = xd + (static_cast<std::size_t>(hi) * W + wi) * Ci;
              T* gxrow = gxd + (static_cast<std::size_t>(hi) * W + wi) * Ci;
              const T* wrow = wd + (static_cast<std::size_t>(r) * kw + c) * Ci * Co;
              T* gwrow = gwd + (static_cast<std::size_t>(r) * kw + c) * Ci * Co;
              for (int ci = 0; ci < Ci; ++ci) {
                const T* wk = wrow + static_cast<std::size_t>(ci) * Co;
                T* gwk = gwrow + static_cast<std::size_t>(ci) * Co;
                const T xv = xrow[ci];
                T acc = T(0);
                for (int co = 0; co < Co; ++co) {
                  const T gy = gyrow[co];
                  acc += gy * wk[co];
                  gwk[co] += gy * xv;
                }
                gxrow[ci] += acc;
              }
            }
          }
        }
    });
    return y;
  }

  // Shared linear layer over the last axis: x [..., Cin] -> [..., Cout].
  // Composition of reshape/matmul/add, so it needs no adjoint of its own.
  Tn pointwise_linear(const Tn& x, const Tn& w, const Tn& b) {
    if (w.rank() != 2 || x.dim(x.rank() - 1) != w.dim(0))
      throw OpError("pointwise_linear: x " + shape_str(x.shape()) + " vs w " + shape_str(w.shape()));
    Shape out_shape = x.shape();
    out_shape.back() = w.dim(1);
    std::int64_t rows = x.size() / w.dim(0);
    Tn flat = reshape(x, Shape{static_cast<int>(rows), w.dim(0)});
    Tn prod = add(matmul(flat, w), b);
    return reshape(prod, out_shape);
  }

  // Nearest-neighbor 2x spatial upsample of [H,W,C].
  Tn upsample2(const Tn& x) {
    if (x.rank() != 3) throw OpError("upsample2: expects [H,W,C]");
    const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
    Tn y(Shape{2 * H, 2 * W, C});
    for (int h = 0; h < 2 * H; ++h)
      for (int w = 0; w < 2 * W; ++w) {
        const T* src = x.data().data() + (static_cast<std::size_t>(h / 2) * W + w / 2) * C;
        T* dst = y.data().data() + (static_cast<std::size_t>(h) * 2 * W + w) * C;
        std::copy_n(src, C, dst);
      }
    record("upsample2", {x}, y, [x = x, y]() mutable {
      const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
      for (int h = 0; h < 2 * H; ++h)
        for (int w = 0; w < 2 * W; ++w) {
          const T* gsrc = y.grad().data() + (static_cast<std::size_t>(h) * 2 * W + w) * C;
          T* gdst = x.grad().data() + (static_cast<std::size_t>(h / 2) * W + w / 2) * C;
          for (int c = 0; c < C; ++c) gdst[c] += gsrc[c];
        }
    });
    return y;
  }

  // ---- losses ------------------------------------------------------------

  // 1 - 2*sum(l*p) / (sum(l^2) + sum(p^2) + eps); label is a constant.
  Tn soft_dice(const Tn& pred, const Tn& label, double eps = 1e-12) {
    if (pred.shape() != label.shape())
      throw OpError("soft_dice: shapes differ " + shape_str(pred.shape()) + " vs " + shape_str(label.shape()));
    double s = 0.0, d = eps;
    for (std::int64_t i = 0; i < pred.size(); ++i) {
      double p = static_cast<double>(pred.at(i));
      double l = static_cast<double>(label.at(i));
      s += p * l;
      d += p * p + l * l;
    }
    Tn y = Tn::scalar(static_cast<T>(1.0 - 2.0 * s / d));
    record("soft_dice", {pred}, y, [pred = pred, label = label, y, s, d]() mutable {
      const double g = static_cast<double>(y.grad()[0]);
      for (std::int64_t i = 0; i < pred.size(); ++i) {
        double p = static_cast<double>(pred.at(i));
        double l = static_cast<double>(label.at(i));
        double dp = -2.0 * (l * d - s * 2.0 * p) / (d * d);
        pred.grad()[static_cast<std::size_t>(i)] += static_cast<T>(g * dp);
      }
    });
    return y;
  }

  // Mean over all grids of -log softmax(logits)[label]; logits [H,W,K].
  Tn cross_entropy(const Tn& logits, const std::vector<std::uint8_t>& labels) {
    if (logits.rank() != 3) throw OpError("cross_entropy: logits must be [H,W,K]");
    const int HW = logits.dim(0) * logits.dim(1);
    const int K = logits.dim(2);
    if (static_cast<int>(labels.size()) != HW)
      throw OpError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(HW) + " grids");
    std::vector<double> probs(static_cast<std::size_t>(HW) * K);
    double loss = 0.0;
    for (int g = 0; g < HW; ++g) {
      if (labels[static_cast<std::size_t>(g)] >= K)
        throw OpError("cross_entropy: label " + std::to_string(labels[static_cast<std::size_t>(g)]) +
                      " out of range for " + std::to_string(K) + " classes");
      const T* row = logits.data().data() + static_cast<std::size_t>(g) * K;
      double mx = static_cast<double>(row[0]);
      for (int k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(row[k]));
      double denom = 0.0;
      for (int k = 0; k < K; ++k) {
        double e = std::exp(static_cast<double>(row[k]) - mx);
        probs[static_cast<std::size_t>(g) * K + k] = e;
        denom += e;
      }
      for (int k = 0; k < K; ++k) probs[static_cast<std::size_t>(g) * K + k] /= denom;
      loss -= std::log(probs[static_cast<std::size_t>(g) * K + labels[static_cast<std::size_t>(g)]]);
    }
    Tn y = Tn::scalar(static_cast<T>(loss / HW));
    record("cross_entropy", {logits}, y, [logits = logits, y, labels, probs, HW, K]() mutable {
      const double g0 = static_cast<double>(y.grad()[0]) / HW;
      for (int g = 0; g < HW; ++g)
        for (int k = 0; k < K; ++k) {
          double onehot = (labels[static_cast<std::size_t>(g)] == k) ? 1.0 : 0.0;
          logits.grad()[static_cast<std::size_t>(g) * K + k] +=
              static_cast<T>(g0 * (probs[static_cast<std::size_t>(g) * K + k] - onehot));
        }
    });
    return y;
  }

  // ---- backward ----------------------------------------------------------

  void backward(const Tn& loss) {
    if (records_.empty()) throw OpError("backward: empty tape");
    if (loss.size() != 1) throw OpError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!produced_ids_.count(loss.node_id())) throw OpError("backward: loss was not produced on this tape");
    for (auto& t : touched_) {
      t.ensure_grad();
      if (produced_ids_.count(t.node_id())) t.zero_grad();
    }
    Tn seed = loss;
    seed.grad()[0] += T(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->adjoint();
  }

 private:
  struct Record {
    const char* op;
    std::function<void()> adjoint;
  };

  void record(const char* op, std::initializer_list<Tn> inputs, const Tn& out,
              std::function<void()> adjoint) {
    record(op, std::vector<Tn>(inputs), out, std::move(adjoint));
  }

  void record(const char* op, const std::vector<Tn>& inputs, const Tn& out,
              std::function<void()> adjoint) {
#ifdef LLDN_CHECK_FINITE
    if (!out.all_finite()) throw NumericError(std::string("non-finite output of op ") + op);
#endif
    for (const auto& t : inputs) touch(t);
    touch(out);
    produced_ids_.insert(out.node_id());
    records_.push_back(Record{op, std::move(adjoint)});
  }

  void touch(const Tn& t) {
    if (touched_ids_.insert(t.node_id()).second) touched_.push_back(t);
  }

  static void gemm(const T* a, const T* b, T* y, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
      T* yrow = y + static_cast<std::size_t>(i) * n;
      for (int p = 0; p < k; ++p) {
        const T av = a[static_cast<std::size_t>(i) * k + p];
        const T* brow = b + static_cast<std::size_t>(p) * n;
        for (int j = 0; j < n; ++j) yrow[j] += av * brow[j];
      }
    }
  }

  // dA += dY B^T ; dB += A^T dY for batch slice s
  static void matmul_adjoint(Tn& a, Tn& b, Tn& y, int s) {
    const int m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1), n = b.dim(b.rank() - 1);
    const T* ad = a.data().data() + static_cast<std::size_t>(s) * m * k;
    const T* bd = b.data().data() + static_cast<std::size_t>(s) * k * n;
    const T* gy = y.grad().data() + static_cast<std::size_t>(s) * m * n;
    T* ga = a.grad().data() + static_cast<std::size_t>(s) * m * k;
    T* gb = b.grad().data() + static_cast<std::size_t>(s) * k * n;
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        const T* gyrow = gy + static_cast<std::size_t>(i) * n;
        const T* brow = bd + static_cast<std::size_t>(p) * n;
        T acc = T(0);
        for (int j = 0; j < n; ++j) acc += gyrow[j] * brow[j];
        ga[static_cast<std::size_t>(i) * k + p] += acc;
      }
    for (int p = 0; p < k; ++p)
      for (int i = 0; i < m; ++i) {
        const T av = ad[static_cast<std::size_t>(i) * k + p];
        const T* gyrow = gy + static_cast<std::size_t>(i) * n;
        T* gbrow = gb + static_cast<std::size_t>(p) * n;
        for (int j = 0; j < n; ++j) gbrow[j] += av * gyrow[j];
      }
  }

  static std::tuple<std::int64_t, std::int64_t, std::int64_t> axis_split(const Shape& s, int axis,
                                                                         const char* op) {
    if (axis < 0 || axis >= static_cast<int>(s.size()))
      throw OpError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
    return {outer, s[static_cast<std::size_t>(axis)], inner};
  }

  static Shape reduced_shape(const Shape& s, int axis) {
    Shape out;
    for (int i = 0; i < static_cast<int>(s.size()); ++i)
      if (i != axis) out.push_back(s[static_cast<std::size_t>(i)]);
    if (out.empty()) out.push_back(1);
    return out;
  }

  static std::int64_t strides_inner(const Shape& s, int axis) {
    std::int64_t inner = 1;
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
    return inner;
  }

  static std::int64_t strides_outer(const Shape& s, int axis) {
    std::int64_t outer = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
    return outer;
  }

  // flat source index -> flat destination index under permutation
  static std::vector<std::int64_t> transpose_map(const Shape& s, const std::vector<int>& perm) {
    const int r = static_cast<int>(s.size());
    std::vector<std::int64_t> in_strides(static_cast<std::size_t>(r), 1);
    for (int i = r - 2; i >= 0; --i)
      in_strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(i + 1)] * s[static_cast<std::size_t>(i + 1)];
    Shape out_shape(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) out_shape[static_cast<std::size_t>(i)] = s[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    std::vector<std::int64_t> out_strides(static_cast<std::size_t>(r), 1);
    for (int i = r - 2; i >= 0; --i)
      out_strides[static_cast<std::size_t>(i)] = out_strides[static_cast<std::size_t>(i + 1)] * out_shape[static_cast<std::size_t>(i + 1)];
    // stride of source axis a in the destination layout
    std::vector<std::int64_t> dst_stride_of_src(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i)
      dst_stride_of_src[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = out_strides[static_cast<std::size_t>(i)];
    std::int64_t total = shape_numel(s);
    std::vector<std::int64_t> map(static_cast<std::size_t>(total));
    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    for (std::int64_t flat = 0; flat < total; ++flat) {
      std::int64_t dst = 0;
      for (int i = 0; i < r; ++i) dst += idx[static_cast<std::size_t>(i)] * dst_stride_of_src[static_cast<std::size_t>(i)];
      map[static_cast<std::size_t>(flat)] = dst;
      for (int i = r - 1; i >= 0; --i) {
        if (++idx[static_cast<std::size_t>(i)] < s[static_cast<std::size_t>(i)]) break;
        idx[static_cast<std::size_t>(i)] = 0;
      }
    }
    return map;
  }

  std::vector<Record> records_;
  std::vector<Tn> touched_;
  std::unordered_set<std::uint64_t> touched_ids_;
  std::unordered_set<std::uint64_t> produced_ids_;
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace lldn
