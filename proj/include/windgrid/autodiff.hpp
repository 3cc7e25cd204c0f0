#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "windgrid/parallel.hpp"
#include "windgrid/rng.hpp"
#include "windgrid/tensor.hpp"

// Reverse-mode automatic differentiation over dense tensors, with exactly the
// operator set the forecasting model needs. A graph belongs to one logical
// thread; parameters (leaves) may be reused across graphs.
namespace windgrid::ad {

template <typename T>
struct Node;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated by backward(); same shape as value
  bool requires_grad = false;
  bool backward_done = false;
  std::vector<NodePtr<T>> parents;
  std::function<void()> backprop;  // accumulates this->grad into parents
  std::string op;
  std::string name;  // parameter name, empty otherwise
};

template <typename T>
void require_finite(const Tensor<T>& t, const char* op) {
  for (std::int64_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(static_cast<double>(t[i])))
      throw NumericError(std::string("non-finite value produced by ") + op);
}

template <typename T>
NodePtr<T> leaf(Tensor<T> value, bool requires_grad = false, std::string name = "") {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->op = "leaf";
  n->name = std::move(name);
  return n;
}

template <typename T>
NodePtr<T> constant(Tensor<T> value) {
  return leaf(std::move(value), false);
}

template <typename T>
NodePtr<T> make_node(Tensor<T> value, std::vector<NodePtr<T>> parents, const char* op) {
  require_finite(value, op);
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  n->op = op;
  return n;
}

// ---------------------------------------------------------------------------
// broadcasting (same rank, size-1 axes stretch)

inline std::vector<int> broadcast_shape(const std::vector<int>& a, const std::vector<int>& b,
                                        const char* op) {
  if (a.size() != b.size())
    throw ShapeError(std::string(op) + ": rank mismatch " + Tensor<float>::shape_to_string(a) +
                     " vs " + Tensor<float>::shape_to_string(b));
  std::vector<int> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1)
      out[i] = a[i];
    else if (a[i] == 1)
      out[i] = b[i];
    else
      throw ShapeError(std::string(op) + ": incompatible shapes " +
                       Tensor<float>::shape_to_string(a) + " vs " +
                       Tensor<float>::shape_to_string(b));
  }
  return out;
}

inline std::vector<std::int64_t> broadcast_strides(const std::vector<int>& shape,
                                                   const std::vector<int>& out) {
  std::vector<std::int64_t> strides(shape.size(), 0);
  std::int64_t s = 1;
  for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
    const std::size_t ui = static_cast<std::size_t>(i);
    strides[ui] = shape[ui] == 1 && out[ui] != 1 ? 0 : s;
    s *= shape[ui];
  }
  return strides;
}

// f(out_flat, a_flat, b_flat) over the broadcast iteration space
template <typename F>
void for_each_broadcast(const std::vector<int>& out_shape, const std::vector<int>& a_shape,
                        const std::vector<int>& b_shape, F&& f) {
  const int rank = static_cast<int>(out_shape.size());
  const auto sa = broadcast_strides(a_shape, out_shape);
  const auto sb = broadcast_strides(b_shape, out_shape);
  std::vector<int> idx(static_cast<std::size_t>(rank), 0);
  std::int64_t oa = 0, ob = 0, oo = 0;
  const std::int64_t total = Tensor<float>::count(out_shape);
  for (std::int64_t n = 0; n < total; ++n) {
    f(oo, oa, ob);
    ++oo;
    for (int d = rank - 1; d >= 0; --d) {
      const std::size_t ud = static_cast<std::size_t>(d);
      ++idx[ud];
      oa += sa[ud];
      ob += sb[ud];
      if (idx[ud] < out_shape[ud]) break;
      oa -= sa[ud] * out_shape[ud];
      ob -= sb[ud] * out_shape[ud];
      idx[ud] = 0;
    }
  }
}

// Sums `g` down to `target` shape (inverse of broadcasting), accumulating.
template <typename T>
void reduce_into(const Tensor<T>& g, Tensor<T>& target) {
  if (g.shape() == target.shape()) {
    for (std::int64_t i = 0; i < g.size(); ++i) target[i] += g[i];
    return;
  }
  for_each_broadcast(g.shape(), target.shape(), target.shape(),
                     [&](std::int64_t og, std::int64_t ot, std::int64_t) { target[ot] += g[og]; });
}

// ---------------------------------------------------------------------------
// elementwise ops

template <typename T>
NodePtr<T> add(NodePtr<T> a, NodePtr<T> b) {
  const auto out_shape = broadcast_shape(a->value.shape(), b->value.shape(), "add");
  Tensor<T> out(out_shape);
  if (a->value.shape() == b->value.shape()) {
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
  } else {
    for_each_broadcast(out_shape, a->value.shape(), b->value.shape(),
                       [&](std::int64_t oo, std::int64_t oa, std::int64_t ob) {
                         out[oo] = a->value[oa] + b->value[ob];
                       });
  }
  auto n = make_node(std::move(out), {a, b}, "add");
  Node<T>* self = n.get();
  n->backprop = [self, a, b]() {
    if (a->requires_grad) reduce_into(self->grad, a->grad);
    if (b->requires_grad) reduce_into(self->grad, b->grad);
  };
  return n;
}

template <typename T>
NodePtr<T> sub(NodePtr<T> a, NodePtr<T> b) {
  const auto out_shape = broadcast_shape(a->value.shape(), b->value.shape(), "sub");
  Tensor<T> out(out_shape);
  if (a->value.shape() == b->value.shape()) {
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] - b->value[i];
  } else {
    for_each_broadcast(out_shape, a->value.shape(), b->value.shape(),
                       [&](std::int64_t oo, std::int64_t oa, std::int64_t ob) {
                         out[oo] = a->value[oa] - b->value[ob];
                       });
  }
  auto n = make_node(std::move(out), {a, b}, "sub");
  Node<T>* self = n.get();
  n->backprop = [self, a, b]() {
    if (a->requires_grad) reduce_into(self->grad, a->grad);
    if (b->requires_grad) {
      Tensor<T> neg(self->grad.shape());
      for (std::int64_t i = 0; i < neg.size(); ++i) neg[i] = -self->grad[i];
      reduce_into(neg, b->grad);
    }
  };
  return n;
}

template <typename T>
NodePtr<T> mul(NodePtr<T> a, NodePtr<T> b) {
  const auto out_shape = broadcast_shape(a->value.shape(), b->value.shape(), "mul");
  Tensor<T> out(out_shape);
  if (a->value.shape() == b->value.shape()) {
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
  } else {
    for_each_broadcast(out_shape, a->value.shape(), b->value.shape(),
                       [&](std::int64_t oo, std::int64_t oa, std::int64_t ob) {
                         out[oo] = a->value[oa] * b->value[ob];
                       });
  }
  auto n = make_node(std::move(out), {a, b}, "mul");
  Node<T>* self = n.get();
  n->backprop = [self, a, b]() {
    if (a->requires_grad) {
      Tensor<T> ga(a->value.shape());
      for_each_broadcast(self->grad.shape(), a->value.shape(), b->value.shape(),
                         [&](std::int64_t oo, std::int64_t oa, std::int64_t ob) {
                           ga[oa] += self->grad[oo] * b->value[ob];
                         });
      for (std::int64_t i = 0; i < ga.size(); ++i) a->grad[i] += ga[i];
    }
    if (b->requires_grad) {
      Tensor<T> gb(b->value.shape());
      for_each_broadcast(self->grad.shape(), a->value.shape(), b->value.shape(),
                         [&](std::int64_t oo, std::int64_t oa, std::int64_t ob) {
                           gb[ob] += self->grad[oo] * a->value[oa];
                         });
      for (std::int64_t i = 0; i < gb.size(); ++i) b->grad[i] += gb[i];
    }
  };
  return n;
}

template <typename T>
NodePtr<T> scale(NodePtr<T> a, T c) {
  Tensor<T> out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = c * a->value[i];
  auto n = make_node(std::move(out), {a}, "scale");
  Node<T>* self = n.get();
  n->backprop = [self, a, c]() {
    if (a->requires_grad)
      for (std::int64_t i = 0; i < a->grad.size(); ++i) a->grad[i] += c * self->grad[i];
  };
  return n;
}

template <typename T>
NodePtr<T> relu(NodePtr<T> a) {
  Tensor<T> out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] > T(0) ? a->value[i] : T(0);
  auto n = make_node(std::move(out), {a}, "relu");
  Node<T>* self = n.get();
  n->backprop = [self, a]() {
    if (!a->requires_grad) return;
    for (std::int64_t i = 0; i < a->grad.size(); ++i)
      if (a->value[i] > T(0)) a->grad[i] += self->grad[i];
  };
  return n;
}

// Outputs stay strictly inside (0, 1): saturated values are nudged off the
// endpoints by one ulp so the attention-map invariant holds in float32 too.
template <typename T>
NodePtr<T> sigmoid(NodePtr<T> a) {
  Tensor<T> out(a->value.shape());
  const T one = T(1);
  const T below_one = std::nextafter(one, T(0));
  const T above_zero = std::numeric_limits<T>::min();
  for (std::int64_t i = 0; i < out.size(); ++i) {
    const T x = a->value[i];
    T y;
    if (x >= T(0)) {
      y = one / (one + std::exp(-x));
    } else {
      const T e = std::exp(x);
      y = e / (one + e);
    }
    if (y >= one) y = below_one;
    if (y <= T(0)) y = above_zero;
    out[i] = y;
  }
  auto n = make_node(std::move(out), {a}, "sigmoid");
  Node<T>* self = n.get();
  n->backprop = [self, a]() {
    if (!a->requires_grad) return;
    for (std::int64_t i = 0; i < a->grad.size(); ++i) {
      const T y = self->value[i];
      a->grad[i] += self->grad[i] * y * (T(1) - y);
    }
  };
  return n;
}

template <typename T>
NodePtr<T> sum_all(NodePtr<T> a) {
  double acc = 0;
  for (std::int64_t i = 0; i < a->value.size(); ++i) acc += static_cast<double>(a->value[i]);
  auto n = make_node(Tensor<T>::scalar(static_cast<T>(acc)), {a}, "sum_all");
  Node<T>* self = n.get();
  n->backprop = [self, a]() {
    if (!a->requires_grad) return;
    const T g = self->grad[0];
    for (std::int64_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
  };
  return n;
}

// ---------------------------------------------------------------------------
// structural ops on (b, c, t, h, w)

template <typename T>
void require_rank5(const NodePtr<T>& x, const char* op) {
  if (x->value.rank() != 5)
    throw ShapeError(std::string(op) + ": expected rank-5 input, got " + x->value.shape_str());
}

template <typename T>
NodePtr<T> spatial_mean(NodePtr<T> x) {
  require_rank5(x, "spatial_mean");
  const auto& s = x->value.shape();
  const int b = s[0], c = s[1], t = s[2], h = s[3], w = s[4];
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  Tensor<T> out({b, c, t, 1, 1});
  const T* in = x->value.data();
  for (std::int64_t bct = 0; bct < static_cast<std::int64_t>(b) * c * t; ++bct) {
    double acc = 0;
    const T* p = in + bct * hw;
    for (std::int64_t i = 0; i < hw; ++i) acc += static_cast<double>(p[i]);
    out[bct] = static_cast<T>(acc / static_cast<double>(hw));
  }
  auto n = make_node(std::move(out), {x}, "spatial_mean");
  Node<T>* self = n.get();
  n->backprop = [self, x, hw]() {
    if (!x->requires_grad) return;
    for (std::int64_t bct = 0; bct < self->grad.size(); ++bct) {
      const T g = static_cast<T>(self->grad[bct] / static_cast<T>(hw));
      T* p = x->grad.data() + bct * hw;
      for (std::int64_t i = 0; i < hw; ++i) p[i] += g;
    }
  };
  return n;
}

// nearest-neighbour 2x upsampling of the two spatial dims
template <typename T>
NodePtr<T> upsample2x_spatial(NodePtr<T> x) {
  require_rank5(x, "upsample2x_spatial");
  const auto& s = x->value.shape();
  const int b = s[0], c = s[1], t = s[2], h = s[3], w = s[4];
  Tensor<T> out({b, c, t, 2 * h, 2 * w});
  const std::int64_t planes = static_cast<std::int64_t>(b) * c * t;
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* in = x->value.data() + p * h * w;
    T* o = out.data() + p * (4ll * h * w);
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx) o[static_cast<std::int64_t>(y) * 2 * w + xx] = in[static_cast<std::int64_t>(y / 2) * w + xx / 2];
  }
  auto n = make_node(std::move(out), {x}, "upsample2x_spatial");
  Node<T>* self = n.get();
  n->backprop = [self, x, planes, h, w]() {
    if (!x->requires_grad) return;
    for (std::int64_t p = 0; p < planes; ++p) {
      const T* g = self->grad.data() + p * (4ll * h * w);
      T* gx = x->grad.data() + p * h * w;
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx)
          gx[static_cast<std::int64_t>(y / 2) * w + xx / 2] += g[static_cast<std::int64_t>(y) * 2 * w + xx];
    }
  };
  return n;
}

// zero-pads or centre-crops the spatial dims to (target_h, target_w)
template <typename T>
NodePtr<T> pad_crop_spatial(NodePtr<T> x, int target_h, int target_w) {
  require_rank5(x, "pad_crop_spatial");
  if (target_h < 1 || target_w < 1) throw ShapeError("pad_crop_spatial: bad target size");
  const auto& s = x->value.shape();
  const int b = s[0], c = s[1], t = s[2], h = s[3], w = s[4];
  const int copy_h = std::min(h, target_h), copy_w = std::min(w, target_w);
  const int src_y = h > target_h ? (h - target_h) / 2 : 0;
  const int dst_y = target_h > h ? (target_h - h) / 2 : 0;
  const int src_x = w > target_w ? (w - target_w) / 2 : 0;
  const int dst_x = target_w > w ? (target_w - w) / 2 : 0;
  Tensor<T> out({b, c, t, target_h, target_w});
  const std::int64_t planes = static_cast<std::int64_t>(b) * c * t;
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* in = x->value.data() + p * h * w;
    T* o = out.data() + p * static_cast<std::int64_t>(target_h) * target_w;
    for (int y = 0; y < copy_h; ++y)
      for (int xx = 0; xx < copy_w; ++xx)
        o[static_cast<std::int64_t>(dst_y + y) * target_w + dst_x + xx] =
            in[static_cast<std::int64_t>(src_y + y) * w + src_x + xx];
  }
  auto n = make_node(std::move(out), {x}, "pad_crop_spatial");
  Node<T>* self = n.get();
  n->backprop = [self, x, planes, h, w, target_h, target_w, copy_h, copy_w, src_y, dst_y, src_x,
                 dst_x]() {
    if (!x->requires_grad) return;
    for (std::int64_t p = 0; p < planes; ++p) {
      const T* g = self->grad.data() + p * static_cast<std::int64_t>(target_h) * target_w;
      T* gx = x->grad.data() + p * h * w;
      for (int y = 0; y < copy_h; ++y)
        for (int xx = 0; xx < copy_w; ++xx)
          gx[static_cast<std::int64_t>(src_y + y) * w + src_x + xx] +=
              g[static_cast<std::int64_t>(dst_y + y) * target_w + dst_x + xx];
    }
  };
  return n;
}

// ---------------------------------------------------------------------------
// 3-D convolution (cross-correlation), naive reference and im2col fast path

struct Conv3dGeom {
  int st = 1, sh = 1, sw = 1;  // stride (time, height, width)
  int pt = 0, ph = 0, pw = 0;  // zero padding
};

enum class ConvImpl { Im2col, Naive };

struct Conv3dDims {
  int b, ci, t, h, w;
  int co, kt, kh, kw;
  int ot, oh, ow;
};

inline Conv3dDims conv3d_dims(const std::vector<int>& xs, const std::vector<int>& ws,
                              const Conv3dGeom& g) {
  if (xs.size() != 5 || ws.size() != 5)
    throw ShapeError("conv3d: input " + Tensor<float>::shape_to_string(xs) + " and weights " +
                     Tensor<float>::shape_to_string(ws) + " must be rank 5");
  Conv3dDims d;
  d.b = xs[0];
  d.ci = xs[1];
  d.t = xs[2];
  d.h = xs[3];
  d.w = xs[4];
  d.co = ws[0];
  d.kt = ws[2];
  d.kh = ws[3];
  d.kw = ws[4];
  if (ws[1] != d.ci)
    throw ShapeError("conv3d: channel mismatch, input " + Tensor<float>::shape_to_string(xs) +
                     " vs weights " + Tensor<float>::shape_to_string(ws));
  d.ot = (d.t + 2 * g.pt - d.kt) / g.st + 1;
  d.oh = (d.h + 2 * g.ph - d.kh) / g.sh + 1;
  d.ow = (d.w + 2 * g.pw - d.kw) / g.sw + 1;
  if (d.t + 2 * g.pt < d.kt || d.h + 2 * g.ph < d.kh || d.w + 2 * g.pw < d.kw || d.ot < 1 ||
      d.oh < 1 || d.ow < 1)
    throw ShapeError("conv3d: kernel larger than padded input, input " +
                     Tensor<float>::shape_to_string(xs) + " vs weights " +
                     Tensor<float>::shape_to_string(ws));
  return d;
}

template <typename T>
Tensor<T> conv3d_forward_naive(const Tensor<T>& x, const Tensor<T>& wgt, const Tensor<T>& bias,
                               const Conv3dGeom& g) {
  const Conv3dDims d = conv3d_dims(x.shape(), wgt.shape(), g);
  Tensor<T> out({d.b, d.co, d.ot, d.oh, d.ow});
  for (int b = 0; b < d.b; ++b)
    for (int co = 0; co < d.co; ++co)
      for (int oz = 0; oz < d.ot; ++oz)
        for (int oy = 0; oy < d.oh; ++oy)
          for (int ox = 0; ox < d.ow; ++ox) {
            T acc = bias[co];
            for (int ci = 0; ci < d.ci; ++ci)
              for (int kz = 0; kz < d.kt; ++kz) {
                const int iz = oz * g.st - g.pt + kz;
                if (iz < 0 || iz >= d.t) continue;
                for (int ky = 0; ky < d.kh; ++ky) {
                  const int iy = oy * g.sh - g.ph + ky;
                  if (iy < 0 || iy >= d.h) continue;
                  for (int kx = 0; kx < d.kw; ++kx) {
                    const int ix = ox * g.sw - g.pw + kx;
                    if (ix < 0 || ix >= d.w) continue;
                    acc += x.at(b, ci, iz, iy, ix) * wgt.at(co, ci, kz, ky, kx);
                  }
                }
              }
            out.at(b, co, oz, oy, ox) = acc;
          }
  return out;
}

namespace detail {

// col is (ci*kt*kh*kw) x (oh*ow) for one output time slice of one batch item;
// slicing over oz bounds the unfold buffer for long sequences
template <typename T>
void im2col_slice(const T* x, const Conv3dDims& d, const Conv3dGeom& g, int oz, T* col) {
  const std::int64_t P = static_cast<std::int64_t>(d.oh) * d.ow;
  std::int64_t r = 0;
  for (int ci = 0; ci < d.ci; ++ci)
    for (int kz = 0; kz < d.kt; ++kz) {
      const int iz = oz * g.st - g.pt + kz;
      for (int ky = 0; ky < d.kh; ++ky)
        for (int kx = 0; kx < d.kw; ++kx, ++r) {
          T* dst = col + r * P;
          const T* src = x + static_cast<std::int64_t>(ci) * d.t * d.h * d.w;
          std::int64_t p = 0;
          for (int oy = 0; oy < d.oh; ++oy) {
            const int iy = oy * g.sh - g.ph + ky;
            const bool row_ok = iz >= 0 && iz < d.t && iy >= 0 && iy < d.h;
            const T* line =
                row_ok ? src + (static_cast<std::int64_t>(iz) * d.h + iy) * d.w : nullptr;
            for (int ox = 0; ox < d.ow; ++ox, ++p) {
              const int ix = ox * g.sw - g.pw + kx;
              dst[p] = (row_ok && ix >= 0 && ix < d.w) ? line[ix] : T(0);
            }
          }
        }
    }
}

template <typename T>
void col2im_slice_accum(const T* col, const Conv3dDims& d, const Conv3dGeom& g, int oz, T* gx) {
  const std::int64_t P = static_cast<std::int64_t>(d.oh) * d.ow;
  std::int64_t r = 0;
  for (int ci = 0; ci < d.ci; ++ci)
    for (int kz = 0; kz < d.kt; ++kz) {
      const int iz = oz * g.st - g.pt + kz;
      for (int ky = 0; ky < d.kh; ++ky)
        for (int kx = 0; kx < d.kw; ++kx, ++r) {
          const T* src = col + r * P;
          T* dst = gx + static_cast<std::int64_t>(ci) * d.t * d.h * d.w;
          std::int64_t p = 0;
          for (int oy = 0; oy < d.oh; ++oy) {
            const int iy = oy * g.sh - g.ph + ky;
            const bool row_ok = iz >= 0 && iz < d.t && iy >= 0 && iy < d.h;
            T* line = row_ok ? dst + (static_cast<std::int64_t>(iz) * d.h + iy) * d.w : nullptr;
            for (int ox = 0; ox < d.ow; ++ox, ++p) {
              const int ix = ox * g.sw - g.pw + kx;
              if (row_ok && ix >= 0 && ix < d.w) line[ix] += src[p];
            }
          }
        }
    }
}

}  // namespace detail

template <typename T>
Tensor<T> conv3d_forward_im2col(const Tensor<T>& x, const Tensor<T>& wgt, const Tensor<T>& bias,
                                const Conv3dGeom& g) {
  const Conv3dDims d = conv3d_dims(x.shape(), wgt.shape(), g);
  const std::int64_t CK = static_cast<std::int64_t>(d.ci) * d.kt * d.kh * d.kw;
  const std::int64_t P = static_cast<std::int64_t>(d.oh) * d.ow;
  const std::int64_t out_plane = static_cast<std::int64_t>(d.ot) * P;
  Tensor<T> out({d.b, d.co, d.ot, d.oh, d.ow});
  std::vector<T> col(static_cast<std::size_t>(CK * P));
  for (int b = 0; b < d.b; ++b) {
    const T* xb = x.data() + static_cast<std::int64_t>(b) * d.ci * d.t * d.h * d.w;
    T* ob = out.data() + static_cast<std::int64_t>(b) * d.co * out_plane;
    for (int oz = 0; oz < d.ot; ++oz) {
      detail::im2col_slice(xb, d, g, oz, col.data());
      // gemm target: per-channel rows of this output time slice
      parallel_for(d.co, [&](std::int64_t co) {
        T* crow = ob + co * out_plane + static_cast<std::int64_t>(oz) * P;
        for (std::int64_t p = 0; p < P; ++p) crow[p] = bias[co];
        const T* arow = wgt.data() + co * CK;
        for (std::int64_t kk = 0; kk < CK; ++kk) {
          const T a = arow[kk];
          if (a == T(0)) continue;
          const T* brow = col.data() + kk * P;
          for (std::int64_t p = 0; p < P; ++p) crow[p] += a * brow[p];
        }
      });
    }
  }
  return out;
}

template <typename T>
void conv3d_backward(const Tensor<T>& x, const Tensor<T>& wgt, const Conv3dGeom& g,
                     const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb,
                     ConvImpl impl) {
  const Conv3dDims d = conv3d_dims(x.shape(), wgt.shape(), g);
  if (impl == ConvImpl::Naive) {
    for (int b = 0; b < d.b; ++b)
      for (int co = 0; co < d.co; ++co)
        for (int oz = 0; oz < d.ot; ++oz)
          for (int oy = 0; oy < d.oh; ++oy)
            for (int ox = 0; ox < d.ow; ++ox) {
              const T gout = gy.at(b, co, oz, oy, ox);
              if (gb) (*gb)[co] += gout;
              for (int ci = 0; ci < d.ci; ++ci)
                for (int kz = 0; kz < d.kt; ++kz) {
                  const int iz = oz * g.st - g.pt + kz;
                  if (iz < 0 || iz >= d.t) continue;
                  for (int ky = 0; ky < d.kh; ++ky) {
                    const int iy = oy * g.sh - g.ph + ky;
                    if (iy < 0 || iy >= d.h) continue;
                    for (int kx = 0; kx < d.kw; ++kx) {
                      const int ix = ox * g.sw - g.pw + kx;
                      if (ix < 0 || ix >= d.w) continue;
                      if (gw) gw->at(co, ci, kz, ky, kx) += gout * x.at(b, ci, iz, iy, ix);
                      if (gx) gx->at(b, ci, iz, iy, ix) += gout * wgt.at(co, ci, kz, ky, kx);
                    }
                  }
                }
            }
    return;
  }

  const std::int64_t CK = static_cast<std::int64_t>(d.ci) * d.kt * d.kh * d.kw;
  const std::int64_t P = static_cast<std::int64_t>(d.oh) * d.ow;
  const std::int64_t out_plane = static_cast<std::int64_t>(d.ot) * P;
  std::vector<T> col(static_cast<std::size_t>(CK * P));
  std::vector<T> dcol;
  if (gx) dcol.assign(static_cast<std::size_t>(CK * P), T(0));
  for (int b = 0; b < d.b; ++b) {
    const T* gyb = gy.data() + static_cast<std::int64_t>(b) * d.co * out_plane;
    const T* xb = x.data() + static_cast<std::int64_t>(b) * d.ci * d.t * d.h * d.w;
    if (gb) {
      for (int co = 0; co < d.co; ++co) {
        T acc = T(0);
        const T* gr = gyb + co * out_plane;
        for (std::int64_t p = 0; p < out_plane; ++p) acc += gr[p];
        (*gb)[co] += acc;
      }
    }
    for (int oz = 0; oz < d.ot; ++oz) {
      if (gw || gx) detail::im2col_slice(xb, d, g, oz, col.data());
      const T* gyz = gyb + static_cast<std::int64_t>(oz) * P;
      if (gw) {
        // dW(co x CK) += dY_slice(co x P) * col^T(P x CK)
        T* gwd = gw->data();
        parallel_for(d.co, [&](std::int64_t co) {
          const T* gr = gyz + co * out_plane;
          for (std::int64_t r = 0; r < CK; ++r) {
            const T* cr = col.data() + r * P;
            T acc = T(0);
            for (std::int64_t p = 0; p < P; ++p) acc += gr[p] * cr[p];
            gwd[co * CK + r] += acc;
          }
        });
      }
      if (gx) {
        std::fill(dcol.begin(), dcol.end(), T(0));
        // dcol(CK x P) = W^T(CK x co) * dY_slice(co x P)
        parallel_for(CK, [&](std::int64_t r) {
          T* drow = dcol.data() + r * P;
          for (int co = 0; co < d.co; ++co) {
            const T a = wgt[static_cast<std::int64_t>(co) * CK + r];
            if (a == T(0)) continue;
            const T* gr = gyz + static_cast<std::int64_t>(co) * out_plane;
            for (std::int64_t p = 0; p < P; ++p) drow[p] += a * gr[p];
          }
        });
        detail::col2im_slice_accum(dcol.data(), d, g, oz,
                                   gx->data() +
                                       static_cast<std::int64_t>(b) * d.ci * d.t * d.h * d.w);
      }
    }
  }
}

// Cross-correlation plus bias, differentiable w.r.t. input, weights and bias.
template <typename T>
NodePtr<T> conv3d(NodePtr<T> x, NodePtr<T> wgt, NodePtr<T> bias, const Conv3dGeom& g,
                  ConvImpl impl = ConvImpl::Im2col) {
  const Conv3dDims d = conv3d_dims(x->value.shape(), wgt->value.shape(), g);
  if (bias->value.rank() != 1 || bias->value.dim(0) != d.co)
    throw ShapeError("conv3d: bias shape " + bias->value.shape_str() + " does not match " +
                     std::to_string(d.co) + " output channels");
  Tensor<T> out = impl == ConvImpl::Naive ? conv3d_forward_naive(x->value, wgt->value, bias->value, g)
                                          : conv3d_forward_im2col(x->value, wgt->value, bias->value, g);
  auto n = make_node(std::move(out), {x, wgt, bias}, "conv3d");
  Node<T>* self = n.get();
  n->backprop = [self, x, wgt, bias, g, impl]() {
    conv3d_backward(x->value, wgt->value, g, self->grad, x->requires_grad ? &x->grad : nullptr,
                    wgt->requires_grad ? &wgt->grad : nullptr,
                    bias->requires_grad ? &bias->grad : nullptr, impl);
  };
  return n;
}

// ---------------------------------------------------------------------------
// batch normalization over (b, t, h, w) per channel

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;  // shape {c}
  Tensor<T> running_var;   // population variance

  explicit BatchNormState(int channels = 0)
      : running_mean({channels}, T(0)), running_var({channels}, T(1)) {}
};

template <typename T>
NodePtr<T> batchnorm(NodePtr<T> x, NodePtr<T> gamma, NodePtr<T> beta, BatchNormState<T>& state,
                     bool train, double momentum = 0.1, double eps = 1e-5) {
  require_rank5(x, "batchnorm");
  const auto& s = x->value.shape();
  const int b = s[0], c = s[1], t = s[2], h = s[3], w = s[4];
  if (gamma->value.size() != c || beta->value.size() != c ||
      state.running_mean.size() != c || state.running_var.size() != c)
    throw ShapeError("batchnorm: parameter length does not match " + std::to_string(c) +
                     " channels");
  const std::int64_t plane = static_cast<std::int64_t>(t) * h * w;
  const std::int64_t m = static_cast<std::int64_t>(b) * plane;
  if (m == 0) throw ConfigError("batchnorm: empty reduction set");

  std::vector<double> mean(static_cast<std::size_t>(c), 0);
  std::vector<double> inv_std(static_cast<std::size_t>(c), 0);
  if (train) {
    for (int ch = 0; ch < c; ++ch) {
      double acc = 0;
      for (int bb = 0; bb < b; ++bb) {
        const T* p = x->value.data() + (static_cast<std::int64_t>(bb) * c + ch) * plane;
        for (std::int64_t i = 0; i < plane; ++i) acc += static_cast<double>(p[i]);
      }
      const double mu = acc / static_cast<double>(m);
      double var = 0;
      for (int bb = 0; bb < b; ++bb) {
        const T* p = x->value.data() + (static_cast<std::int64_t>(bb) * c + ch) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const double dx = static_cast<double>(p[i]) - mu;
          var += dx * dx;
        }
      }
      var /= static_cast<double>(m);
      mean[static_cast<std::size_t>(ch)] = mu;
      inv_std[static_cast<std::size_t>(ch)] = 1.0 / std::sqrt(var + eps);
      state.running_mean[ch] =
          static_cast<T>((1.0 - momentum) * static_cast<double>(state.running_mean[ch]) +
                         momentum * mu);
      state.running_var[ch] = static_cast<T>(
          (1.0 - momentum) * static_cast<double>(state.running_var[ch]) + momentum * var);
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[static_cast<std::size_t>(ch)] = static_cast<double>(state.running_mean[ch]);
      inv_std[static_cast<std::size_t>(ch)] =
          1.0 / std::sqrt(static_cast<double>(state.running_var[ch]) + eps);
    }
  }

  Tensor<T> out(x->value.shape());
  for (int bb = 0; bb < b; ++bb)
    for (int ch = 0; ch < c; ++ch) {
      const std::int64_t base = (static_cast<std::int64_t>(bb) * c + ch) * plane;
      const double mu = mean[static_cast<std::size_t>(ch)];
      const double istd = inv_std[static_cast<std::size_t>(ch)];
      const double gm = static_cast<double>(gamma->value[ch]);
      const double bt = static_cast<double>(beta->value[ch]);
      const T* p = x->value.data() + base;
      T* o = out.data() + base;
      for (std::int64_t i = 0; i < plane; ++i)
        o[i] = static_cast<T>(gm * ((static_cast<double>(p[i]) - mu) * istd) + bt);
    }

  auto n = make_node(std::move(out), {x, gamma, beta}, "batchnorm");
  Node<T>* self = n.get();
  n->backprop = [self, x, gamma, beta, mean, inv_std, b, c, plane, m, train]() {
    for (int ch = 0; ch < c; ++ch) {
      const double mu = mean[static_cast<std::size_t>(ch)];
      const double istd = inv_std[static_cast<std::size_t>(ch)];
      const double gm = static_cast<double>(gamma->value[ch]);
      double sum_g = 0, sum_gx = 0;
      for (int bb = 0; bb < b; ++bb) {
        const std::int64_t base = (static_cast<std::int64_t>(bb) * c + ch) * plane;
        const T* g = self->grad.data() + base;
        const T* xv = x->value.data() + base;
        for (std::int64_t i = 0; i < plane; ++i) {
          const double xh = (static_cast<double>(xv[i]) - mu) * istd;
          sum_g += static_cast<double>(g[i]);
          sum_gx += static_cast<double>(g[i]) * xh;
        }
      }
      if (gamma->requires_grad) gamma->grad[ch] += static_cast<T>(sum_gx);
      if (beta->requires_grad) beta->grad[ch] += static_cast<T>(sum_g);
      if (!x->requires_grad) continue;
      const double inv_m = 1.0 / static_cast<double>(m);
      for (int bb = 0; bb < b; ++bb) {
        const std::int64_t base = (static_cast<std::int64_t>(bb) * c + ch) * plane;
        const T* g = self->grad.data() + base;
        const T* xv = x->value.data() + base;
        T* gx = x->grad.data() + base;
        for (std::int64_t i = 0; i < plane; ++i) {
          const double gi = static_cast<double>(g[i]);
          double d;
          if (train) {
            const double xh = (static_cast<double>(xv[i]) - mu) * istd;
            d = gm * istd * (gi - (sum_g + xh * sum_gx) * inv_m);
          } else {
            d = gm * istd * gi;
          }
          gx[i] += static_cast<T>(d);
        }
      }
    }
  };
  return n;
}

// ---------------------------------------------------------------------------
// backward pass and finite-difference checking

template <typename T>
void backward(const NodePtr<T>& loss) {
  if (loss->value.size() != 1) throw UsageError("backward: loss must be a scalar");
  if (loss->backward_done)
    throw UsageError("backward: already called on this graph; re-run the forward pass");
  loss->backward_done = true;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.push_back({loss.get(), 0});
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next].get();
      ++next;
      if (!seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<T>* n : order)
    if (n->requires_grad) n->grad = Tensor<T>(n->value.shape());
  if (!loss->requires_grad) return;  // nothing reachable requires gradients
  loss->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop && (*it)->requires_grad) (*it)->backprop();
}

struct GradCheckItem {
  std::string name;
  double max_rel_err = 0;
  int checked = 0;
  int skipped_nonsmooth = 0;
};

struct GradCheckReport {
  double max_rel_err = 0;
  std::vector<GradCheckItem> items;
};

// Central finite differences against the analytic gradients, on sampled
// coordinates of each parameter. Meant for the 64-bit instantiation.
//
// A central difference is only a valid derivative oracle where f is smooth on
// [theta-eps, theta+eps]; a rectifier kink inside that interval biases it by
// O(eps). Each coordinate is therefore screened with a Richardson consistency
// test (fd at eps vs eps/2) and kink-straddling coordinates are skipped,
// reported per tensor. A wrong backward still fails through the smooth
// coordinates, which dominate.
template <typename F>
GradCheckReport grad_check(F&& f, const std::vector<NodePtr<double>>& params, double eps = 1e-5,
                           int samples_per_tensor = 200, std::uint64_t seed = 20240501) {
  auto loss = f();
  // fd noise scales with the loss magnitude (cancellation over 2*eps); the
  // consistency slack and the relative-error floor scale with it so that any
  // kink bias passing the screen stays below 1e-4 of the floor
  const double loss_scale = std::max(1.0, std::abs(loss->value[0]));
  const double fd_noise = 1e-11 * loss_scale;
  const double consistency_slack = 10 * fd_noise;
  const double rel_floor = 1e5 * fd_noise;
  backward(loss);
  std::vector<Tensor<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    if (!p->requires_grad) throw UsageError("grad_check: parameter without requires_grad");
    analytic.push_back(p->grad);
  }

  Rng rng(seed);
  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& value = params[pi]->value;
    std::vector<std::int64_t> coords;
    if (value.size() <= static_cast<std::int64_t>(samples_per_tensor)) {
      coords.resize(static_cast<std::size_t>(value.size()));
      for (std::int64_t i = 0; i < value.size(); ++i) coords[static_cast<std::size_t>(i)] = i;
    } else {
      std::unordered_set<std::int64_t> picked;
      while (static_cast<int>(picked.size()) < samples_per_tensor)
        picked.insert(static_cast<std::int64_t>(
            rng.uniform_index(static_cast<std::uint64_t>(value.size()))));
      coords.assign(picked.begin(), picked.end());
      std::sort(coords.begin(), coords.end());
    }
    GradCheckItem item;
    item.name = params[pi]->name.empty() ? ("param" + std::to_string(pi)) : params[pi]->name;
    for (std::int64_t k : coords) {
      const double orig = value[k];
      auto fd_at = [&](double e) {
        value[k] = orig + e;
        const double lp = f()->value[0];
        value[k] = orig - e;
        const double lm = f()->value[0];
        value[k] = orig;
        return (lp - lm) / (2 * e);
      };
      const double fd = fd_at(eps);
      const double fd_half = fd_at(eps / 2);
      if (std::abs(fd - fd_half) >
          1e-5 * std::max(std::abs(fd), std::abs(fd_half)) + consistency_slack) {
        ++item.skipped_nonsmooth;
        continue;
      }
      const double an = analytic[pi][k];
      const double rel =
          std::abs(fd_half - an) / std::max(std::abs(fd_half) + std::abs(an), rel_floor);
      item.max_rel_err = std::max(item.max_rel_err, rel);
      ++item.checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, item.max_rel_err);
    report.items.push_back(std::move(item));
  }
  return report;
}

}  // namespace windgrid::ad
