#pragma once

// Differentiable kernels over Var. Shapes follow two conventions: point
// features are [N x C] (row per point), grid features are [C x H x W].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "frnet/error.hpp"
#include "frnet/geometry.hpp"
#include "frnet/nn/tensor.hpp"

namespace frnet::nn {

namespace detail {

inline void expect_rank(const Var& v, std::size_t rank, const char* what) {
  if (v.shape().size() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(v.shape()));
  }
}

inline std::span<double> grad_of(Node& out, std::size_t k) {
  Node& in = *out.inputs[k];
  return in.requires_grad ? in.value.grad() : std::span<double>{};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var relu(const Var& x) {
  Tensor out(x.shape());
  auto in = x.data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  return make_result(std::move(out), {x}, [](Node& self) {
    auto gx = detail::grad_of(self, 0);
    auto xin = std::as_const(self.inputs[0]->value).data();
    auto g = std::as_const(self.value).grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xin[i] > 0.0) gx[i] += g[i];
    }
  });
}

inline Var sigmoid(const Var& x) {
  Tensor out(x.shape());
  auto in = x.data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-in[i]));
  return make_result(std::move(out), {x}, [](Node& self) {
    auto gx = detail::grad_of(self, 0);
    auto y = std::as_const(self.value).data();
    auto g = std::as_const(self.value).grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

inline Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out(a.shape());
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    auto g = std::as_const(self.value).grad();
    for (std::size_t k = 0; k < 2; ++k) {
      auto gi = detail::grad_of(self, k);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw ShapeError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out(a.shape());
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    auto g = std::as_const(self.value).grad();
    auto va = std::as_const(self.inputs[0]->value).data();
    auto vb = std::as_const(self.inputs[1]->value).data();
    auto ga = detail::grad_of(self, 0);
    auto gb = detail::grad_of(self, 1);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * vb[i];
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * va[i];
  });
}

inline Var scale(const Var& x, double factor) {
  Tensor out(x.shape());
  auto in = x.data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = factor * in[i];
  return make_result(std::move(out), {x}, [factor](Node& self) {
    auto gx = detail::grad_of(self, 0);
    auto g = std::as_const(self.value).grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * g[i];
  });
}

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result(Tensor({1}, std::vector<double>{s}), {x}, [](Node& self) {
    auto gx = detail::grad_of(self, 0);
    const double g = std::as_const(self.value).grad()[0];
    for (double& v : gx) v += g;
  });
}

// Multiplies every channel of a [C x H x W] grid by a fixed per-pixel mask.
inline Var mask_pixels(const Var& x, std::vector<double> mask) {
  detail::expect_rank(x, 3, "mask_pixels");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (mask.size() != hw) throw ShapeError("mask_pixels: mask length mismatch");
  Tensor out(x.shape());
  auto in = x.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < hw; ++p) out[ch * hw + p] = in[ch * hw + p] * mask[p];
  }
  return make_result(std::move(out), {x}, [c, hw, mask = std::move(mask)](Node& self) {
    auto gx = detail::grad_of(self, 0);
    auto g = std::as_const(self.value).grad();
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t p = 0; p < hw; ++p) gx[ch * hw + p] += g[ch * hw + p] * mask[p];
    }
  });
}

// ---------------------------------------------------------------------------
// Dense layers

// out[N x Cout] = in[N x Cin] * W[Cin x Cout] + b
inline Var dense(const Var& in, const Var& weight, const Var& bias) {
  detail::expect_rank(in, 2, "dense input");
  detail::expect_rank(weight, 2, "dense weight");
  detail::expect_rank(bias, 1, "dense bias");
  const std::size_t n = in.dim(0), cin = in.dim(1), cout = weight.dim(1);
  if (weight.dim(0) != cin || bias.dim(0) != cout) {
    throw ShapeError("dense: input " + shape_str(in.shape()) + ", weight " + shape_str(weight.shape()) + ", bias " +
                     shape_str(bias.shape()));
  }
  Tensor out({n, cout});
  auto x = in.data(), w = weight.data(), b = bias.data();
  auto y = out.data();
  for (std::size_t r = 0; r < n; ++r) {
    double* yr = y.data() + r * cout;
    std::copy(b.begin(), b.end(), yr);
    for (std::size_t i = 0; i < cin; ++i) {
      const double xv = x[r * cin + i];
      if (xv == 0.0) continue;
      const double* wr = w.data() + i * cout;
      for (std::size_t o = 0; o < cout; ++o) yr[o] += xv * wr[o];
    }
  }
  return make_result(std::move(out), {in, weight, bias}, [n, cin, cout](Node& self) {
    auto g = std::as_const(self.value).grad();
    auto x = std::as_const(self.inputs[0]->value).data();
    auto w = std::as_const(self.inputs[1]->value).data();
    auto gx = detail::grad_of(self, 0);
    auto gw = detail::grad_of(self, 1);
    auto gb = detail::grad_of(self, 2);
    for (std::size_t r = 0; r < n; ++r) {
      const double* gr = g.data() + r * cout;
      if (!gx.empty()) {
        for (std::size_t i = 0; i < cin; ++i) {
          const double* wr = w.data() + i * cout;
          double acc = 0.0;
          for (std::size_t o = 0; o < cout; ++o) acc += gr[o] * wr[o];
          gx[r * cin + i] += acc;
        }
      }
      if (!gw.empty()) {
        for (std::size_t i = 0; i < cin; ++i) {
          const double xv = x[r * cin + i];
          if (xv == 0.0) continue;
          double* gwr = gw.data() + i * cout;
          for (std::size_t o = 0; o < cout; ++o) gwr[o] += xv * gr[o];
        }
      }
      if (!gb.empty()) {
        for (std::size_t o = 0; o < cout; ++o) gb[o] += gr[o];
      }
    }
  });
}

// Per-pixel dense layer on a grid: out[Cout x H x W] from in[Cin x H x W] with
// weight [Cin x Cout] (a 1x1 convolution).
inline Var conv1x1(const Var& in, const Var& weight, const Var& bias) {
  detail::expect_rank(in, 3, "conv1x1 input");
  const std::size_t cin = in.dim(0), hw = in.dim(1) * in.dim(2), cout = weight.dim(1);
  if (weight.shape().size() != 2 || weight.dim(0) != cin || bias.shape() != Shape{cout}) {
    throw ShapeError("conv1x1: input " + shape_str(in.shape()) + ", weight " + shape_str(weight.shape()));
  }
  Tensor out({cout, in.dim(1), in.dim(2)});
  auto x = in.data(), w = weight.data(), b = bias.data();
  for (std::size_t o = 0; o < cout; ++o) {
    double* yo = out.data().data() + o * hw;
    std::fill(yo, yo + hw, b[o]);
    for (std::size_t i = 0; i < cin; ++i) {
      const double wv = w[i * cout + o];
      const double* xi = x.data() + i * hw;
      for (std::size_t p = 0; p < hw; ++p) yo[p] += wv * xi[p];
    }
  }
  return make_result(std::move(out), {in, weight, bias}, [cin, cout, hw](Node& self) {
    auto g = std::as_const(self.value).grad();
    auto x = std::as_const(self.inputs[0]->value).data();
    auto w = std::as_const(self.inputs[1]->value).data();
    auto gx = detail::grad_of(self, 0);
    auto gw = detail::grad_of(self, 1);
    auto gb = detail::grad_of(self, 2);
    for (std::size_t o = 0; o < cout; ++o) {
      const double* go = g.data() + o * hw;
      if (!gb.empty()) {
        double acc = 0.0;
        for (std::size_t p = 0; p < hw; ++p) acc += go[p];
        gb[o] += acc;
      }
      for (std::size_t i = 0; i < cin; ++i) {
        const double* xi = x.data() + i * hw;
        if (!gw.empty()) {
          double acc = 0.0;
          for (std::size_t p = 0; p < hw; ++p) acc += go[p] * xi[p];
          gw[i * cout + o] += acc;
        }
        if (!gx.empty()) {
          const double wv = w[i * cout + o];
          double* gxi = gx.data() + i * hw;
          for (std::size_t p = 0; p < hw; ++p) gxi[p] += wv * go[p];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// 3x3 convolution, zero padding 1, stride 1 or 2 (cross-correlation).
// weight [Cout x Cin x 3 x 3]; output spatial size ceil(H/stride) x ceil(W/stride).

inline std::size_t conv_out_dim(std::size_t in, int stride) {
  return (in + static_cast<std::size_t>(stride) - 1) / static_cast<std::size_t>(stride);
}

inline Var conv3x3(const Var& in, const Var& weight, const Var& bias, int stride) {
  detail::expect_rank(in, 3, "conv3x3 input");
  detail::expect_rank(weight, 4, "conv3x3 weight");
  if (stride != 1 && stride != 2) throw ShapeError("conv3x3: stride must be 1 or 2");
  const std::size_t cin = in.dim(0), h = in.dim(1), w = in.dim(2);
  const std::size_t cout = weight.dim(0);
  if (weight.dim(1) != cin || weight.dim(2) != 3 || weight.dim(3) != 3 || bias.shape() != Shape{cout}) {
    throw ShapeError("conv3x3: input " + shape_str(in.shape()) + ", weight " + shape_str(weight.shape()) +
                     ", bias " + shape_str(bias.shape()));
  }
  const std::size_t ho = conv_out_dim(h, stride), wo = conv_out_dim(w, stride);
  const auto s = static_cast<long>(stride);

  // Valid output column range for each kernel column offset.
  struct Span {
    std::size_t lo, hi;
  };
  auto valid_range = [s](std::size_t out_len, std::size_t in_len, int k) {
    // input = o*s + k - 1 must lie in [0, in_len)
    long lo = 0;
    while (lo < static_cast<long>(out_len) && lo * s + k - 1 < 0) ++lo;
    long hi = static_cast<long>(out_len);
    while (hi > lo && (hi - 1) * s + k - 1 >= static_cast<long>(in_len)) --hi;
    return Span{static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
  };
  Span rows[3], cols[3];
  for (int k = 0; k < 3; ++k) {
    rows[k] = valid_range(ho, h, k);
    cols[k] = valid_range(wo, w, k);
  }

  Tensor out({cout, ho, wo});
  auto x = in.data(), wt = weight.data(), b = bias.data();
  auto y = out.data();
  for (std::size_t o = 0; o < cout; ++o) {
    double* yo = y.data() + o * ho * wo;
    std::fill(yo, yo + ho * wo, b[o]);
    for (std::size_t i = 0; i < cin; ++i) {
      const double* xi = x.data() + i * h * w;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double wv = wt[((o * cin + i) * 3 + ky) * 3 + kx];
          for (std::size_t oy = rows[ky].lo; oy < rows[ky].hi; ++oy) {
            const double* xr = xi + (oy * stride + ky - 1) * w;
            double* yr = yo + oy * wo;
            for (std::size_t ox = cols[kx].lo; ox < cols[kx].hi; ++ox) yr[ox] += wv * xr[ox * stride + kx - 1];
          }
        }
      }
    }
  }

  std::vector<Span> row_v(rows, rows + 3), col_v(cols, cols + 3);
  return make_result(std::move(out), {in, weight, bias},
                     [cin, cout, h, w, ho, wo, stride, row_v, col_v](Node& self) {
                       auto g = std::as_const(self.value).grad();
                       auto x = std::as_const(self.inputs[0]->value).data();
                       auto wt = std::as_const(self.inputs[1]->value).data();
                       auto gx = detail::grad_of(self, 0);
                       auto gw = detail::grad_of(self, 1);
                       auto gb = detail::grad_of(self, 2);
                       for (std::size_t o = 0; o < cout; ++o) {
                         const double* go = g.data() + o * ho * wo;
                         if (!gb.empty()) {
                           double acc = 0.0;
                           for (std::size_t p = 0; p < ho * wo; ++p) acc += go[p];
                           gb[o] += acc;
                         }
                         for (std::size_t i = 0; i < cin; ++i) {
                           for (int ky = 0; ky < 3; ++ky) {
                             for (int kx = 0; kx < 3; ++kx) {
                               const std::size_t widx = ((o * cin + i) * 3 + ky) * 3 + kx;
                               const double wv = wt[widx];
                               double acc = 0.0;
                               for (std::size_t oy = row_v[ky].lo; oy < row_v[ky].hi; ++oy) {
                                 const std::size_t iy = oy * stride + ky - 1;
                                 const double* gr = go + oy * wo;
                                 const double* xr = x.data() + (i * h + iy) * w;
                                 double* gxr = gx.empty() ? nullptr : gx.data() + (i * h + iy) * w;
                                 for (std::size_t ox = col_v[kx].lo; ox < col_v[kx].hi; ++ox) {
                                   const std::size_t ix = ox * stride + kx - 1;
                                   acc += gr[ox] * xr[ix];
                                   if (gxr) gxr[ix] += wv * gr[ox];
                                 }
                               }
                               if (!gw.empty()) gw[widx] += acc;
                             }
                           }
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Point <-> frustum grid

// Per-pixel, per-channel maximum over member points; empty pixels are 0. The
// winner of each (channel, pixel) is recorded in argmax (layout C x H x W,
// kNoPoint for empty pixels); equal values keep the smallest point index.
inline Var scatter_max(const Var& points, const FrustumIndex& index, std::vector<std::int64_t>* argmax_out = nullptr) {
  detail::expect_rank(points, 2, "scatter_max");
  const std::size_t n = points.dim(0), c = points.dim(1);
  if (n != index.num_points()) {
    throw ShapeError("scatter_max: " + std::to_string(n) + " feature rows for " + std::to_string(index.num_points()) +
                     " indexed points");
  }
  const std::size_t hw = index.num_pixels();
  Tensor out({c, static_cast<std::size_t>(index.height()), static_cast<std::size_t>(index.width())});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(c * hw, kNoPoint);
  auto x = points.data();
  for (std::size_t px = 0; px < hw; ++px) {
    auto members = index.members(px);
    if (members.empty()) continue;
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::size_t best = members.front();
      double best_val = x[best * c + ch];
      for (std::size_t m : members.subspan(1)) {
        if (x[m * c + ch] > best_val) {
          best_val = x[m * c + ch];
          best = m;
        }
      }
      out[ch * hw + px] = best_val;
      (*argmax)[ch * hw + px] = static_cast<std::int64_t>(best);
    }
  }
  if (argmax_out) *argmax_out = *argmax;
  return make_result(std::move(out), {points}, [argmax, c, hw](Node& self) {
    auto gx = detail::grad_of(self, 0);
    auto g = std::as_const(self.value).grad();
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t px = 0; px < hw; ++px) {
        const std::int64_t win = (*argmax)[ch * hw + px];
        if (win != kNoPoint) gx[static_cast<std::size_t>(win) * c + ch] += g[ch * hw + px];
      }
    }
  });
}

// Each point reads the channel vector of its pixel: out[N x C].
inline Var gather(const Var& grid, const FrustumIndex& index) {
  detail::expect_rank(grid, 3, "gather");
  const std::size_t c = grid.dim(0);
  if (grid.dim(1) != static_cast<std::size_t>(index.height()) || grid.dim(2) != static_cast<std::size_t>(index.width())) {
    throw ShapeError("gather: grid " + shape_str(grid.shape()) + " vs index " + std::to_string(index.height()) + "x" +
                     std::to_string(index.width()));
  }
  const std::size_t n = index.num_points(), hw = index.num_pixels();
  std::vector<std::size_t> pixel(n);
  for (std::size_t i = 0; i < n; ++i) pixel[i] = index.pixel_of(i);
  Tensor out({n, c});
  auto g = grid.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] = g[ch * hw + pixel[i]];
  }
  return make_result(std::move(out), {grid}, [pixel = std::move(pixel), c, hw](Node& self) {
    auto gg = detail::grad_of(self, 0);
    auto g = std::as_const(self.value).grad();
    for (std::size_t i = 0; i < pixel.size(); ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) gg[ch * hw + pixel[i]] += g[i * c + ch];
    }
  });
}

// ---------------------------------------------------------------------------
// Bilinear resize with half-pixel centers (align_corners = false).

namespace detail {

struct LerpTap {
  std::size_t lo, hi;
  double frac;  // weight of hi
};

inline std::vector<LerpTap> lerp_taps(std::size_t in_len, std::size_t out_len) {
  std::vector<LerpTap> taps(out_len);
  const double ratio = static_cast<double>(in_len) / static_cast<double>(out_len);
  for (std::size_t o = 0; o < out_len; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in_len - 1) lo = in_len - 1;
    std::size_t hi = std::min(lo + 1, in_len - 1);
    taps[o] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace detail

inline Var upsample_bilinear(const Var& in, std::size_t out_h, std::size_t out_w) {
  detail::expect_rank(in, 3, "upsample_bilinear");
  const std::size_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
  if (out_h < h || out_w < w) throw ShapeError("upsample_bilinear: output smaller than input");
  auto ty = detail::lerp_taps(h, out_h);
  auto tx = detail::lerp_taps(w, out_w);
  Tensor out({c, out_h, out_w});
  auto x = in.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* xc = x.data() + ch * h * w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[ox];
        const double top = (1.0 - b.frac) * xc[a.lo * w + b.lo] + b.frac * xc[a.lo * w + b.hi];
        const double bot = (1.0 - b.frac) * xc[a.hi * w + b.lo] + b.frac * xc[a.hi * w + b.hi];
        out[(ch * out_h + oy) * out_w + ox] = (1.0 - a.frac) * top + a.frac * bot;
      }
    }
  }
  return make_result(std::move(out), {in}, [c, h, w, out_h, out_w, ty = std::move(ty), tx = std::move(tx)](Node& self) {
    auto gx = detail::grad_of(self, 0);
    auto g = std::as_const(self.value).grad();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* gc = gx.data() + ch * h * w;
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const auto& a = ty[oy];
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const auto& b = tx[ox];
          const double gv = g[(ch * out_h + oy) * out_w + ox];
          gc[a.lo * w + b.lo] += (1.0 - a.frac) * (1.0 - b.frac) * gv;
          gc[a.lo * w + b.hi] += (1.0 - a.frac) * b.frac * gv;
          gc[a.hi * w + b.lo] += a.frac * (1.0 - b.frac) * gv;
          gc[a.hi * w + b.hi] += a.frac * b.frac * gv;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Layout helpers

// Concatenates [N x Ci] blocks along columns.
inline Var concat_columns(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_columns: no inputs");
  const std::size_t n = parts.front().dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    detail::expect_rank(p, 2, "concat_columns");
    if (p.dim(0) != n) throw ShapeError("concat_columns: row count mismatch");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  Tensor out({n, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto d = parts[k].data();
    for (std::size_t r = 0; r < n; ++r) {
      std::copy_n(d.data() + r * widths[k], widths[k], out.data().data() + r * total + off);
    }
    off += widths[k];
  }
  return make_result(std::move(out), parts, [n, total, widths](Node& self) {
    auto g = std::as_const(self.value).grad();
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      auto gk = detail::grad_of(self, k);
      if (!gk.empty()) {
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t j = 0; j < widths[k]; ++j) gk[r * widths[k] + j] += g[r * total + off + j];
        }
      }
      off += widths[k];
    }
  });
}

// Concatenates [Ci x H x W] grids along channels.
inline Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const std::size_t h = parts.front().dim(1), w = parts.front().dim(2);
  std::vector<std::size_t> sizes;
  std::size_t channels = 0;
  for (const Var& p : parts) {
    detail::expect_rank(p, 3, "concat_channels");
    if (p.dim(1) != h || p.dim(2) != w) throw ShapeError("concat_channels: spatial mismatch");
    sizes.push_back(p.value().size());
    channels += p.dim(0);
  }
  Tensor out({channels, h, w});
  std::size_t off = 0;
  for (const Var& p : parts) {
    auto d = p.data();
    std::copy(d.begin(), d.end(), out.data().data() + off);
    off += d.size();
  }
  return make_result(std::move(out), parts, [sizes](Node& self) {
    auto g = std::as_const(self.value).grad();
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      auto gk = detail::grad_of(self, k);
      for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += g[off + i];
      off += sizes[k];
    }
  });
}

// [C x H x W] -> [HW x C], one row per pixel in row-major pixel order.
inline Var grid_to_rows(const Var& grid) {
  detail::expect_rank(grid, 3, "grid_to_rows");
  const std::size_t c = grid.dim(0), hw = grid.dim(1) * grid.dim(2);
  Tensor out({hw, c});
  auto x = grid.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < hw; ++p) out[p * c + ch] = x[ch * hw + p];
  }
  return make_result(std::move(out), {grid}, [c, hw](Node& self) {
    auto gx = detail::grad_of(self, 0);
    auto g = std::as_const(self.value).grad();
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t p = 0; p < hw; ++p) gx[ch * hw + p] += g[p * c + ch];
    }
  });
}

// Row-wise softmax of [M x C].
inline Var softmax_rows(const Var& logits) {
  detail::expect_rank(logits, 2, "softmax_rows");
  const std::size_t m = logits.dim(0), c = logits.dim(1);
  Tensor out({m, c});
  auto x = logits.data();
  for (std::size_t r = 0; r < m; ++r) {
    const double* xr = x.data() + r * c;
    double mx = *std::max_element(xr, xr + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(xr[j] - mx);
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = std::exp(xr[j] - mx) / z;
  }
  return make_result(std::move(out), {logits}, [m, c](Node& self) {
    auto gx = detail::grad_of(self, 0);
    auto y = std::as_const(self.value).data();
    auto g = std::as_const(self.value).grad();
    for (std::size_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[r * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += y[r * c + j] * (g[r * c + j] - dot);
    }
  });
}

}  // namespace frnet::nn
