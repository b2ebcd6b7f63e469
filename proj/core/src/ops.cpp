#include "reconformer/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

#include "reconformer/finite.hpp"
#include "reconformer/kspace.hpp"

namespace reconformer {

namespace {

template <typename S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename S>
TensorT<S> make_op(const char* name, Shape shape, std::vector<S> value,
                   std::vector<TensorT<S>> parents,
                   std::function<void(TensorNode<S>&)> backprop) {
  if (!all_finite(value.data(), value.size()))
    fail(ErrorKind::Domain, std::string("diff-engine::") + name, "non-finite values produced");
  auto node = std::make_shared<TensorNode<S>>();
  node->shape = shape;
  node->value = std::move(value);
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  node->requires_grad = any;
  if (any) {
    node->interior = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backprop = std::move(backprop);
  }
  return TensorT<S>(std::move(node));
}

template <typename S>
void add_into(TensorNode<S>& parent, const std::vector<S>& g) {
  parent.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) parent.grad[i] += g[i];
}

enum class Broadcast { Same, AScalar, BScalar, BBias };

template <typename S>
Broadcast classify(const char* name, const TensorT<S>& a, const TensorT<S>& b, bool allow_bias) {
  if (a.shape() == b.shape()) return Broadcast::Same;
  if (b.size() == 1) return Broadcast::BScalar;
  if (a.size() == 1) return Broadcast::AScalar;
  if (allow_bias && b.shape().rank() == 1 && b.shape()[0] == a.shape().back())
    return Broadcast::BBias;
  fail(ErrorKind::Shape, std::string("diff-engine::") + name,
       "cannot broadcast " + a.shape().str() + " with " + b.shape().str());
}

// Flattens `shape` into (outer, len, inner) around `axis`.
struct AxisSplit {
  std::size_t outer, len, inner;
};
AxisSplit split_axis(const Shape& shape, int axis) {
  require(axis >= 0 && axis < shape.rank(), ErrorKind::Shape, "diff-engine::axis",
          "axis out of range for " + shape.str());
  AxisSplit s{1, static_cast<std::size_t>(shape[axis]), 1};
  for (int i = 0; i < axis; ++i) s.outer *= static_cast<std::size_t>(shape[i]);
  for (int i = axis + 1; i < shape.rank(); ++i) s.inner *= static_cast<std::size_t>(shape[i]);
  return s;
}

template <typename S>
std::vector<S>& scratch_cols() {
  thread_local std::vector<S> v;
  return v;
}
template <typename S>
std::vector<S>& scratch_rows() {
  thread_local std::vector<S> v;
  return v;
}

struct ConvGeom {
  int batch, in_h, in_w, in_c;
  int k, out_c, stride, pad;
  int out_h, out_w;
  std::size_t rows() const { return static_cast<std::size_t>(batch) * out_h * out_w; }
  std::size_t patch() const { return static_cast<std::size_t>(k) * k * in_c; }
};

// cols[row, (ky*k + kx)*Ci + ci] = x[b, oy*s - p + ky, ox*s - p + kx, ci] (0 outside).
template <typename S>
void im2col(const S* x, const ConvGeom& g, S* cols) {
  const std::size_t patch = g.patch();
  for (int b = 0; b < g.batch; ++b)
    for (int oy = 0; oy < g.out_h; ++oy)
      for (int ox = 0; ox < g.out_w; ++ox) {
        S* row = cols + ((static_cast<std::size_t>(b) * g.out_h + oy) * g.out_w + ox) * patch;
        for (int ky = 0; ky < g.k; ++ky) {
          int iy = oy * g.stride - g.pad + ky;
          for (int kx = 0; kx < g.k; ++kx) {
            int ix = ox * g.stride - g.pad + kx;
            S* dst = row + (static_cast<std::size_t>(ky) * g.k + kx) * g.in_c;
            if (iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w) {
              const S* src =
                  x + ((static_cast<std::size_t>(b) * g.in_h + iy) * g.in_w + ix) * g.in_c;
              std::memcpy(dst, src, sizeof(S) * g.in_c);
            } else {
              std::memset(dst, 0, sizeof(S) * g.in_c);
            }
          }
        }
      }
}

// Adjoint of im2col: scatter-adds patch rows back into the input layout.
template <typename S>
void col2im_add(const S* rows, const ConvGeom& g, S* dx) {
  const std::size_t patch = g.patch();
  for (int b = 0; b < g.batch; ++b)
    for (int oy = 0; oy < g.out_h; ++oy)
      for (int ox = 0; ox < g.out_w; ++ox) {
        const S* row = rows + ((static_cast<std::size_t>(b) * g.out_h + oy) * g.out_w + ox) * patch;
        for (int ky = 0; ky < g.k; ++ky) {
          int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          for (int kx = 0; kx < g.k; ++kx) {
            int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.in_w) continue;
            const S* src = row + (static_cast<std::size_t>(ky) * g.k + kx) * g.in_c;
            S* dst = dx + ((static_cast<std::size_t>(b) * g.in_h + iy) * g.in_w + ix) * g.in_c;
            for (int c = 0; c < g.in_c; ++c) dst[c] += src[c];
          }
        }
      }
}

// y[rows, Co] = im2col(x) * w  (w viewed as [patch, Co])
template <typename S>
void conv_fwd_raw(const S* x, const S* w, const ConvGeom& g, S* y) {
  auto& cols = scratch_cols<S>();
  cols.resize(g.rows() * g.patch());
  im2col(x, g, cols.data());
  ConstMatMap<S> cm(cols.data(), static_cast<Eigen::Index>(g.rows()),
                    static_cast<Eigen::Index>(g.patch()));
  ConstMatMap<S> wm(w, static_cast<Eigen::Index>(g.patch()), g.out_c);
  MatMap<S> ym(y, static_cast<Eigen::Index>(g.rows()), g.out_c);
  ym.noalias() = cm * wm;
}

// dw += im2col(x)^T * dy
template <typename S>
void conv_bwd_weight_raw(const S* x, const S* dy, const ConvGeom& g, S* dw) {
  auto& cols = scratch_cols<S>();
  cols.resize(g.rows() * g.patch());
  im2col(x, g, cols.data());
  ConstMatMap<S> cm(cols.data(), static_cast<Eigen::Index>(g.rows()),
                    static_cast<Eigen::Index>(g.patch()));
  ConstMatMap<S> gm(dy, static_cast<Eigen::Index>(g.rows()), g.out_c);
  MatMap<S> wm(dw, static_cast<Eigen::Index>(g.patch()), g.out_c);
  wm.noalias() += cm.transpose() * gm;
}

// dx += col2im(dy * w^T)
template <typename S>
void conv_bwd_input_raw(const S* dy, const S* w, const ConvGeom& g, S* dx) {
  auto& rows = scratch_rows<S>();
  rows.resize(g.rows() * g.patch());
  ConstMatMap<S> gm(dy, static_cast<Eigen::Index>(g.rows()), g.out_c);
  ConstMatMap<S> wm(w, static_cast<Eigen::Index>(g.patch()), g.out_c);
  MatMap<S> rm(rows.data(), static_cast<Eigen::Index>(g.rows()),
               static_cast<Eigen::Index>(g.patch()));
  rm.noalias() = gm * wm.transpose();
  col2im_add(rows.data(), g, dx);
}

// [kh,kw,Ci,Co] -> [kh,kw,Co,Ci]
template <typename S>
std::vector<S> swap_channel_axes(const S* w, int k, int ci, int co) {
  std::vector<S> out(static_cast<std::size_t>(k) * k * ci * co);
  for (int t = 0; t < k * k; ++t)
    for (int a = 0; a < ci; ++a)
      for (int b = 0; b < co; ++b)
        out[(static_cast<std::size_t>(t) * co + b) * ci + a] =
            w[(static_cast<std::size_t>(t) * ci + a) * co + b];
  return out;
}

}  // namespace

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  Broadcast mode = classify("add", a, b, true);
  bool flip = mode == Broadcast::AScalar;
  const TensorT<S>& big = flip ? b : a;
  const TensorT<S>& small = flip ? a : b;

  std::vector<S> out(big.value());
  if (mode == Broadcast::Same) {
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  } else if (mode == Broadcast::BBias) {
    const auto& bias = b.value();
    std::size_t c = bias.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i % c];
  } else {
    S s = small.value()[0];
    for (auto& v : out) v += s;
  }

  return make_op<S>("add", big.shape(), std::move(out), {a, b}, [mode](TensorNode<S>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    auto reduce_into = [&](TensorNode<S>& p) {
      p.ensure_grad();
      if (p.value.size() == n.grad.size()) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
      } else if (mode == Broadcast::BBias) {
        std::size_t c = p.value.size();
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i % c] += n.grad[i];
      } else {
        S s = 0;
        for (S g : n.grad) s += g;
        p.grad[0] += s;
      }
    };
    if (pa.requires_grad) reduce_into(pa);
    if (pb.requires_grad) reduce_into(pb);
  });
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  Broadcast mode = classify("sub", a, b, false);
  Shape shape = mode == Broadcast::AScalar ? b.shape() : a.shape();
  std::vector<S> out(shape.element_count());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    S x = mode == Broadcast::AScalar ? av[0] : av[i];
    S y = mode == Broadcast::BScalar ? bv[0] : bv[i];
    out[i] = x - y;
  }
  return make_op<S>("sub", shape, std::move(out), {a, b}, [](TensorNode<S>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    auto reduce = [&](TensorNode<S>& p, S sign) {
      p.ensure_grad();
      if (p.value.size() == n.grad.size()) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += sign * n.grad[i];
      } else {
        S s = 0;
        for (S g : n.grad) s += g;
        p.grad[0] += sign * s;
      }
    };
    if (pa.requires_grad) reduce(pa, S(1));
    if (pb.requires_grad) reduce(pb, S(-1));
  });
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  Broadcast mode = classify("mul", a, b, false);
  Shape shape = mode == Broadcast::AScalar ? b.shape() : a.shape();
  std::vector<S> out(shape.element_count());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    S x = mode == Broadcast::AScalar ? av[0] : av[i];
    S y = mode == Broadcast::BScalar ? bv[0] : bv[i];
    out[i] = x * y;
  }
  return make_op<S>("mul", shape, std::move(out), {a, b}, [](TensorNode<S>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    auto reduce = [&](TensorNode<S>& dst, TensorNode<S>& other) {
      dst.ensure_grad();
      bool dst_scalar = dst.value.size() == 1 && n.grad.size() > 1;
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        S o = other.value.size() == 1 ? other.value[0] : other.value[i];
        dst.grad[dst_scalar ? 0 : i] += n.grad[i] * o;
      }
    };
    if (pa.requires_grad) reduce(pa, pb);
    if (pb.requires_grad) reduce(pb, pa);
  });
}

template <typename S>
TensorT<S> scale(const TensorT<S>& a, S factor) {
  std::vector<S> out(a.value());
  for (auto& v : out) v *= factor;
  return make_op<S>("scale", a.shape(), std::move(out), {a}, [factor](TensorNode<S>& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += factor * n.grad[i];
  });
}

template <typename S>
TensorT<S> relu(const TensorT<S>& a) {
  std::vector<S> out(a.value());
  for (auto& v : out) v = v > S(0) ? v : S(0);
  return make_op<S>("relu", a.shape(), std::move(out), {a}, [](TensorNode<S>& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (p.value[i] > S(0)) p.grad[i] += n.grad[i];
  });
}

template <typename S>
TensorT<S> gelu(const TensorT<S>& a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kCube = 0.044715;
  std::vector<S> out(a.size());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = static_cast<double>(av[i]);
    double t = std::tanh(kC * (x + kCube * x * x * x));
    out[i] = static_cast<S>(0.5 * x * (1.0 + t));
  }
  return make_op<S>("gelu", a.shape(), std::move(out), {a}, [](TensorNode<S>& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      double x = static_cast<double>(p.value[i]);
      double u = kC * (x + kCube * x * x * x);
      double t = std::tanh(u);
      double du = kC * (1.0 + 3.0 * kCube * x * x);
      double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      p.grad[i] += n.grad[i] * static_cast<S>(d);
    }
  });
}

template <typename S>
TensorT<S> softmax(const TensorT<S>& a, int axis) {
  AxisSplit sp = split_axis(a.shape(), axis);
  std::vector<S> out(a.size());
  const auto& av = a.value();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      S mx = av[base];
      for (std::size_t j = 1; j < sp.len; ++j) mx = std::max(mx, av[base + j * sp.inner]);
      double denom = 0;
      for (std::size_t j = 0; j < sp.len; ++j) {
        double e = std::exp(static_cast<double>(av[base + j * sp.inner] - mx));
        out[base + j * sp.inner] = static_cast<S>(e);
        denom += e;
      }
      for (std::size_t j = 0; j < sp.len; ++j)
        out[base + j * sp.inner] = static_cast<S>(out[base + j * sp.inner] / denom);
    }
  return make_op<S>("softmax", a.shape(), std::move(out), {a}, [sp](TensorNode<S>& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.len * sp.inner + in;
        double dot = 0;
        for (std::size_t j = 0; j < sp.len; ++j)
          dot += static_cast<double>(n.grad[base + j * sp.inner]) * n.value[base + j * sp.inner];
        for (std::size_t j = 0; j < sp.len; ++j) {
          std::size_t idx = base + j * sp.inner;
          p.grad[idx] += static_cast<S>(n.value[idx] * (n.grad[idx] - static_cast<S>(dot)));
        }
      }
  });
}

template <typename S>
TensorT<S> layer_norm(const TensorT<S>& a, const TensorT<S>& gamma, const TensorT<S>& beta,
                      S eps) {
  const char* where = "diff-engine::layer_norm";
  const int c = a.shape().back();
  require(gamma.shape().rank() == 1 && gamma.shape()[0] == c, ErrorKind::Shape, where,
          "gamma shape mismatch");
  require(beta.shape().rank() == 1 && beta.shape()[0] == c, ErrorKind::Shape, where,
          "beta shape mismatch");
  const std::size_t rows = a.size() / c;
  std::vector<S> out(a.size());
  const auto& av = a.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const S* x = av.data() + r * c;
    double mu = 0;
    for (int j = 0; j < c; ++j) mu += x[j];
    mu /= c;
    double var = 0;
    for (int j = 0; j < c; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= c;
    double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    S* y = out.data() + r * c;
    for (int j = 0; j < c; ++j)
      y[j] = static_cast<S>((x[j] - mu) * inv) * gv[j] + bv[j];
  }
  return make_op<S>("layer_norm", a.shape(), std::move(out), {a, gamma, beta},
                    [c, rows, eps](TensorNode<S>& n) {
    auto& px = *n.parents[0];
    auto& pg = *n.parents[1];
    auto& pb = *n.parents[2];
    if (px.requires_grad) px.ensure_grad();
    if (pg.requires_grad) pg.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    std::vector<double> xhat(c);
    for (std::size_t r = 0; r < rows; ++r) {
      const S* x = px.value.data() + r * c;
      const S* g = n.grad.data() + r * c;
      double mu = 0;
      for (int j = 0; j < c; ++j) mu += x[j];
      mu /= c;
      double var = 0;
      for (int j = 0; j < c; ++j) var += (x[j] - mu) * (x[j] - mu);
      var /= c;
      double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
      for (int j = 0; j < c; ++j) xhat[j] = (x[j] - mu) * inv;
      if (pg.requires_grad)
        for (int j = 0; j < c; ++j) pg.grad[j] += static_cast<S>(g[j] * xhat[j]);
      if (pb.requires_grad)
        for (int j = 0; j < c; ++j) pb.grad[j] += g[j];
      if (px.requires_grad) {
        double sum_dh = 0, sum_dh_xhat = 0;
        for (int j = 0; j < c; ++j) {
          double dh = static_cast<double>(g[j]) * pg.value[j];
          sum_dh += dh;
          sum_dh_xhat += dh * xhat[j];
        }
        for (int j = 0; j < c; ++j) {
          double dh = static_cast<double>(g[j]) * pg.value[j];
          px.grad[r * c + j] +=
              static_cast<S>(inv * (dh - sum_dh / c - xhat[j] * sum_dh_xhat / c));
        }
      }
    }
  });
}

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  const char* where = "diff-engine::matmul";
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  require(sa.rank() >= 2 && sb.rank() >= 2, ErrorKind::Shape, where, "operands must be rank >= 2");
  const int m = sa[sa.rank() - 2], k = sa[sa.rank() - 1];
  const int kb = sb[sb.rank() - 2], nn = sb[sb.rank() - 1];
  require(k == kb, ErrorKind::Shape, where,
          "inner extents differ: " + sa.str() + " x " + sb.str());
  const bool broadcast_b = sb.rank() == 2 && sa.rank() > 2;
  if (!broadcast_b) {
    require(sa.rank() == sb.rank(), ErrorKind::Shape, where, "leading axes differ");
    for (int i = 0; i < sa.rank() - 2; ++i)
      require(sa[i] == sb[i], ErrorKind::Shape, where, "leading axes differ");
  }

  std::vector<int> od;
  for (int i = 0; i < sa.rank() - 2; ++i) od.push_back(sa[i]);
  od.push_back(m);
  od.push_back(nn);
  Shape out_shape(od);

  std::size_t batches = 1;
  for (int i = 0; i < sa.rank() - 2; ++i) batches *= static_cast<std::size_t>(sa[i]);
  std::vector<S> out(out_shape.element_count());
  const std::size_t as = static_cast<std::size_t>(m) * k;
  const std::size_t bs = static_cast<std::size_t>(k) * nn;
  const std::size_t os = static_cast<std::size_t>(m) * nn;
  for (std::size_t t = 0; t < batches; ++t) {
    ConstMatMap<S> am(a.value().data() + t * as, m, k);
    ConstMatMap<S> bm(b.value().data() + (broadcast_b ? 0 : t * bs), k, nn);
    MatMap<S> om(out.data() + t * os, m, nn);
    om.noalias() = am * bm;
  }

  return make_op<S>("matmul", out_shape, std::move(out), {a, b},
                    [m, k, nn, batches, broadcast_b, as, bs, os](TensorNode<S>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) pa.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    for (std::size_t t = 0; t < batches; ++t) {
      ConstMatMap<S> gm(n.grad.data() + t * os, m, nn);
      ConstMatMap<S> am(pa.value.data() + t * as, m, k);
      ConstMatMap<S> bm(pb.value.data() + (broadcast_b ? 0 : t * bs), k, nn);
      if (pa.requires_grad) {
        MatMap<S> dam(pa.grad.data() + t * as, m, k);
        dam.noalias() += gm * bm.transpose();
      }
      if (pb.requires_grad) {
        MatMap<S> dbm(pb.grad.data() + (broadcast_b ? 0 : t * bs), k, nn);
        dbm.noalias() += am.transpose() * gm;
      }
    }
  });
}

template <typename S>
TensorT<S> transpose_last2(const TensorT<S>& a) {
  const Shape& sa = a.shape();
  require(sa.rank() >= 2, ErrorKind::Shape, "diff-engine::transpose_last2", "rank must be >= 2");
  const int m = sa[sa.rank() - 2], nn = sa[sa.rank() - 1];
  std::vector<int> od;
  for (int i = 0; i < sa.rank() - 2; ++i) od.push_back(sa[i]);
  od.push_back(nn);
  od.push_back(m);
  Shape out_shape(od);
  std::size_t batches = a.size() / (static_cast<std::size_t>(m) * nn);
  std::vector<S> out(a.size());
  const auto& av = a.value();
  const std::size_t bs = static_cast<std::size_t>(m) * nn;
  for (std::size_t t = 0; t < batches; ++t)
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < nn; ++j)
        out[t * bs + static_cast<std::size_t>(j) * m + i] =
            av[t * bs + static_cast<std::size_t>(i) * nn + j];
  return make_op<S>("transpose_last2", out_shape, std::move(out), {a},
                    [m, nn, batches, bs](TensorNode<S>& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t t = 0; t < batches; ++t)
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < nn; ++j)
          p.grad[t * bs + static_cast<std::size_t>(i) * nn + j] +=
              n.grad[t * bs + static_cast<std::size_t>(j) * m + i];
  });
}

template <typename S>
TensorT<S> reshape(const TensorT<S>& a, Shape shape) {
  require(shape.element_count() == a.size(), ErrorKind::Shape, "diff-engine::reshape",
          "element count changes from " + a.shape().str() + " to " + shape.str());
  std::vector<S> out(a.value());
  return make_op<S>("reshape", shape, std::move(out), {a}, [](TensorNode<S>& n) {
    auto& p = *n.parents[0];
    add_into(p, n.grad);
  });
}

template <typename S>
TensorT<S> concat_channels(const std::vector<TensorT<S>>& xs) {
  const char* where = "diff-engine::concat_channels";
  require(!xs.empty(), ErrorKind::Shape, where, "empty input list");
  const Shape& s0 = xs[0].shape();
  std::size_t lead = s0.element_count() / s0.back();
  int total_c = 0;
  std::vector<int> channels;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    require(s.rank() == s0.rank(), ErrorKind::Shape, where, "rank mismatch");
    for (int i = 0; i < s.rank() - 1; ++i)
      require(s[i] == s0[i], ErrorKind::Shape, where, "leading extents differ");
    channels.push_back(s.back());
    total_c += s.back();
  }
  std::vector<int> od;
  for (int i = 0; i < s0.rank() - 1; ++i) od.push_back(s0[i]);
  od.push_back(total_c);
  Shape out_shape(od);

  std::vector<S> out(out_shape.element_count());
  for (std::size_t r = 0; r < lead; ++r) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const auto& v = xs[i].value();
      std::memcpy(out.data() + r * total_c + off, v.data() + r * channels[i],
                  sizeof(S) * channels[i]);
      off += channels[i];
    }
  }
  std::vector<TensorT<S>> parents(xs.begin(), xs.end());
  return make_op<S>("concat_channels", out_shape, std::move(out), std::move(parents),
                    [lead, total_c, channels](TensorNode<S>& n) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      auto& p = *n.parents[i];
      if (p.requires_grad) {
        p.ensure_grad();
        for (std::size_t r = 0; r < lead; ++r)
          for (int c = 0; c < channels[i]; ++c)
            p.grad[r * channels[i] + c] += n.grad[r * total_c + off + c];
      }
      off += channels[i];
    }
  });
}

template <typename S>
TensorT<S> sum_all(const TensorT<S>& a) {
  double acc = 0;
  for (S v : a.value()) acc += v;
  return make_op<S>("sum_all", Shape{1}, {static_cast<S>(acc)}, {a}, [](TensorNode<S>& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (auto& g : p.grad) g += n.grad[0];
  });
}

template <typename S>
TensorT<S> l1_loss(const TensorT<S>& pred, const TensorT<S>& target) {
  require(pred.shape() == target.shape(), ErrorKind::Shape, "diff-engine::l1_loss",
          "shape mismatch");
  const std::size_t n = pred.size();
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i)
    acc += std::fabs(static_cast<double>(pred.value()[i]) - target.value()[i]);
  return make_op<S>("l1_loss", Shape{1}, {static_cast<S>(acc / n)}, {pred, target},
                    [n](TensorNode<S>& node) {
    auto& pp = *node.parents[0];
    auto& pt = *node.parents[1];
    const S g = node.grad[0] / static_cast<S>(n);
    if (pp.requires_grad) pp.ensure_grad();
    if (pt.requires_grad) pt.ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      S d = pp.value[i] - pt.value[i];
      S s = d > S(0) ? g : (d < S(0) ? -g : S(0));
      if (pp.requires_grad) pp.grad[i] += s;
      if (pt.requires_grad) pt.grad[i] -= s;
    }
  });
}

template <typename S>
TensorT<S> conv2d(const TensorT<S>& input, const TensorT<S>& weight, const TensorT<S>& bias,
                  int stride, Padding padding, bool transposed) {
  const char* where = "diff-engine::conv2d";
  const Shape& si = input.shape();
  const Shape& sw = weight.shape();
  require(si.rank() == 3 || si.rank() == 4, ErrorKind::Shape, where,
          "input must be [B,H,W,C] or [H,W,C]");
  require(sw.rank() == 4 && sw[0] == sw[1], ErrorKind::Shape, where,
          "weight must be [k,k,Cin,Cout]");
  const int k = sw[0];
  require(k == 1 || k == 3 || k == 5, ErrorKind::Config, where, "kernel must be 1, 3, or 5");
  require(stride == 1 || stride == 2, ErrorKind::Config, where, "stride must be 1 or 2");

  const bool rank3 = si.rank() == 3;
  const int batch = rank3 ? 1 : si[0];
  const int h = rank3 ? si[0] : si[1];
  const int w = rank3 ? si[1] : si[2];
  const int ci = rank3 ? si[2] : si[3];
  const int co = sw[3];
  require(sw[2] == ci, ErrorKind::Shape, where,
          "weight input channels " + std::to_string(sw[2]) + " != input channels " +
              std::to_string(ci));
  if (bias.defined())
    require(bias.shape().rank() == 1 && bias.shape()[0] == co, ErrorKind::Shape, where,
            "bias extent != output channels");

  int out_h, out_w, pad;
  ConvGeom geom{};  // geometry of the underlying plain convolution
  if (!transposed) {
    pad = padding == Padding::Same ? (k - 1) / 2 : 0;
    out_h = (h + 2 * pad - k) / stride + 1;
    out_w = (w + 2 * pad - k) / stride + 1;
    require(out_h >= 1 && out_w >= 1, ErrorKind::Shape, where, "output collapses to zero");
    geom = ConvGeom{batch, h, w, ci, k, co, stride, pad, out_h, out_w};
  } else {
    require(padding == Padding::Same, ErrorKind::Config, where,
            "transposed convolution supports Same padding only");
    pad = (k - 1) / 2;
    out_h = h * stride;
    out_w = w * stride;
    // underlying conv maps [out_h] -> [h]; consistency of floor arithmetic
    require((out_h + 2 * pad - k) / stride + 1 == h && (out_w + 2 * pad - k) / stride + 1 == w,
            ErrorKind::Shape, where, "transposed geometry is inconsistent");
    geom = ConvGeom{batch, out_h, out_w, co, k, ci, stride, pad, h, w};
  }

  std::vector<int> od;
  if (!rank3) od.push_back(batch);
  od.push_back(out_h);
  od.push_back(out_w);
  od.push_back(co);
  Shape out_shape(od);
  std::vector<S> out(out_shape.element_count());

  if (!transposed) {
    conv_fwd_raw(input.value().data(), weight.value().data(), geom, out.data());
  } else {
    std::vector<S> wt = swap_channel_axes(weight.value().data(), k, ci, co);
    std::fill(out.begin(), out.end(), S(0));
    conv_bwd_input_raw(input.value().data(), wt.data(), geom, out.data());
  }
  if (bias.defined()) {
    const auto& bv = bias.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % co];
  }

  std::vector<TensorT<S>> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  const bool has_bias = bias.defined();

  return make_op<S>("conv2d", out_shape, std::move(out), std::move(parents),
                    [geom, k, ci, co, transposed, has_bias](TensorNode<S>& n) {
    auto& px = *n.parents[0];
    auto& pw = *n.parents[1];
    if (!transposed) {
      if (px.requires_grad) {
        px.ensure_grad();
        conv_bwd_input_raw(n.grad.data(), pw.value.data(), geom, px.grad.data());
      }
      if (pw.requires_grad) {
        pw.ensure_grad();
        conv_bwd_weight_raw(px.value.data(), n.grad.data(), geom, pw.grad.data());
      }
    } else {
      std::vector<S> wt = swap_channel_axes(pw.value.data(), k, ci, co);
      if (px.requires_grad) {
        px.ensure_grad();
        auto& buf = scratch_rows<S>();
        buf.resize(px.grad.size());
        conv_fwd_raw(n.grad.data(), wt.data(), geom, buf.data());
        for (std::size_t i = 0; i < px.grad.size(); ++i) px.grad[i] += buf[i];
      }
      if (pw.requires_grad) {
        pw.ensure_grad();
        std::vector<S> dwt(wt.size(), S(0));
        conv_bwd_weight_raw(n.grad.data(), px.value.data(), geom, dwt.data());
        for (int t = 0; t < k * k; ++t)
          for (int a = 0; a < co; ++a)
            for (int b = 0; b < ci; ++b)
              pw.grad[(static_cast<std::size_t>(t) * ci + b) * co + a] +=
                  dwt[(static_cast<std::size_t>(t) * co + a) * ci + b];
      }
    }
    if (has_bias) {
      auto& pb = *n.parents[2];
      if (pb.requires_grad) {
        pb.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
          pb.grad[i % pb.value.size()] += n.grad[i];
      }
    }
  });
}

template <typename S>
TensorT<S> fft2c_op(const TensorT<S>& image) {
  const Shape& s = image.shape();
  require(s.rank() == 3 && s[2] == 2, ErrorKind::Shape, "diff-engine::fft2c_op",
          "expected [H,W,2]");
  const int h = s[0], w = s[1];
  std::vector<S> out(image.size());
  fft2c_raw(h, w, image.value().data(), out.data(), false);
  return make_op<S>("fft2c_op", s, std::move(out), {image}, [h, w](TensorNode<S>& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    std::vector<S> tmp(n.grad.size());
    fft2c_raw(h, w, n.grad.data(), tmp.data(), true);
    for (std::size_t i = 0; i < tmp.size(); ++i) p.grad[i] += tmp[i];
  });
}

template <typename S>
TensorT<S> ifft2c_op(const TensorT<S>& kspace) {
  const Shape& s = kspace.shape();
  require(s.rank() == 3 && s[2] == 2, ErrorKind::Shape, "diff-engine::ifft2c_op",
          "expected [H,W,2]");
  const int h = s[0], w = s[1];
  std::vector<S> out(kspace.size());
  fft2c_raw(h, w, kspace.value().data(), out.data(), true);
  return make_op<S>("ifft2c_op", s, std::move(out), {kspace}, [h, w](TensorNode<S>& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    std::vector<S> tmp(n.grad.size());
    fft2c_raw(h, w, n.grad.data(), tmp.data(), false);
    for (std::size_t i = 0; i < tmp.size(); ++i) p.grad[i] += tmp[i];
  });
}

template <typename S>
TensorT<S> roll2d(const TensorT<S>& a, int shift_r, int shift_c) {
  const Shape& s = a.shape();
  require(s.rank() == 3, ErrorKind::Shape, "diff-engine::roll2d", "expected [H,W,C]");
  const int h = s[0], w = s[1], c = s[2];
  auto wrap = [](int v, int n) { return ((v % n) + n) % n; };
  std::vector<S> out(a.size());
  const auto& av = a.value();
  for (int r = 0; r < h; ++r) {
    int dr = wrap(r + shift_r, h);
    for (int x = 0; x < w; ++x) {
      int dc = wrap(x + shift_c, w);
      std::memcpy(out.data() + (static_cast<std::size_t>(dr) * w + dc) * c,
                  av.data() + (static_cast<std::size_t>(r) * w + x) * c, sizeof(S) * c);
    }
  }
  return make_op<S>("roll2d", s, std::move(out), {a}, [h, w, c, shift_r, shift_c, wrap](TensorNode<S>& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (int r = 0; r < h; ++r) {
      int dr = wrap(r + shift_r, h);
      for (int x = 0; x < w; ++x) {
        int dc = wrap(x + shift_c, w);
        const S* src = n.grad.data() + (static_cast<std::size_t>(dr) * w + dc) * c;
        S* dst = p.grad.data() + (static_cast<std::size_t>(r) * w + x) * c;
        for (int j = 0; j < c; ++j) dst[j] += src[j];
      }
    }
  });
}

namespace {

// Flat pixel index of the source of each output token of a window partition.
std::vector<int> partition_index(int h, int w, int k, int shift) {
  const int wy_count = h / k, wx_count = w / k;
  std::vector<int> idx(static_cast<std::size_t>(h) * w);
  std::size_t t = 0;
  for (int wy = 0; wy < wy_count; ++wy)
    for (int wx = 0; wx < wx_count; ++wx)
      for (int ty = 0; ty < k; ++ty)
        for (int tx = 0; tx < k; ++tx) {
          int r = (wy * k + ty + shift) % h;
          int c = (wx * k + tx + shift) % w;
          idx[t++] = r * w + c;
        }
  return idx;
}

}  // namespace

template <typename S>
TensorT<S> window_partition_op(const TensorT<S>& feat, int window, int shift) {
  const char* where = "rsa-attention::window_partition";
  const Shape& s = feat.shape();
  require(s.rank() == 3, ErrorKind::Shape, where, "expected [H,W,C]");
  const int h = s[0], w = s[1], c = s[2];
  require(window >= 1 && h % window == 0 && w % window == 0, ErrorKind::Shape, where,
          "window size must divide feature extents");
  require(shift >= 0 && shift < window, ErrorKind::Shape, where, "shift must be in [0, window)");

  const int nw = (h / window) * (w / window);
  auto idx = std::make_shared<std::vector<int>>(partition_index(h, w, window, shift));
  std::vector<S> out(feat.size());
  const auto& fv = feat.value();
  for (std::size_t t = 0; t < idx->size(); ++t)
    std::memcpy(out.data() + t * c, fv.data() + static_cast<std::size_t>((*idx)[t]) * c,
                sizeof(S) * c);
  return make_op<S>("window_partition", Shape{nw, window * window, c}, std::move(out), {feat},
                    [idx, c](TensorNode<S>& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t t = 0; t < idx->size(); ++t) {
      const S* src = n.grad.data() + t * c;
      S* dst = p.grad.data() + static_cast<std::size_t>((*idx)[t]) * c;
      for (int j = 0; j < c; ++j) dst[j] += src[j];
    }
  });
}

template <typename S>
TensorT<S> window_merge_op(const TensorT<S>& windows, int height, int width, int window,
                           int shift) {
  const char* where = "rsa-attention::window_merge";
  const Shape& s = windows.shape();
  require(s.rank() == 3 && s[1] == window * window, ErrorKind::Shape, where,
          "expected [num_windows, K^2, C]");
  require(height % window == 0 && width % window == 0, ErrorKind::Shape, where,
          "window size must divide feature extents");
  require(s[0] == (height / window) * (width / window), ErrorKind::Shape, where,
          "window count does not match geometry");
  const int c = s[2];

  auto idx = std::make_shared<std::vector<int>>(partition_index(height, width, window, shift));
  std::vector<S> out(windows.size());
  const auto& wv = windows.value();
  for (std::size_t t = 0; t < idx->size(); ++t)
    std::memcpy(out.data() + static_cast<std::size_t>((*idx)[t]) * c, wv.data() + t * c,
                sizeof(S) * c);
  return make_op<S>("window_merge", Shape{height, width, c}, std::move(out), {windows},
                    [idx, c](TensorNode<S>& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t t = 0; t < idx->size(); ++t) {
      const S* src = n.grad.data() + static_cast<std::size_t>((*idx)[t]) * c;
      S* dst = p.grad.data() + t * c;
      for (int j = 0; j < c; ++j) dst[j] += src[j];
    }
  });
}

template <typename S>
TensorT<S> box_filter_windows(const TensorT<S>& windows, int window, int s) {
  const char* where = "rsa-attention::scale_aggregate";
  const Shape& sh = windows.shape();
  require(sh.rank() == 3 && sh[1] == window * window, ErrorKind::Shape, where,
          "expected [num_windows, K^2, C]");
  require(s % 2 == 1, ErrorKind::Config, where, "scale must be odd");
  require(s >= 1 && s <= window, ErrorKind::Config, where, "scale must not exceed the window");

  const int nw = sh[0], c = sh[2], kk = window * window;
  const int half = (s - 1) / 2;

  // Per-token source lists (within the K x K grid) and averaging counts.
  auto sources = std::make_shared<std::vector<std::vector<int>>>(kk);
  for (int ty = 0; ty < window; ++ty)
    for (int tx = 0; tx < window; ++tx) {
      auto& list = (*sources)[ty * window + tx];
      for (int dy = -half; dy <= half; ++dy)
        for (int dx = -half; dx <= half; ++dx) {
          int y = ty + dy, x = tx + dx;
          if (y >= 0 && y < window && x >= 0 && x < window) list.push_back(y * window + x);
        }
    }

  std::vector<S> out(windows.size(), S(0));
  const auto& wv = windows.value();
  for (int win = 0; win < nw; ++win) {
    const std::size_t base = static_cast<std::size_t>(win) * kk * c;
    for (int t = 0; t < kk; ++t) {
      const auto& list = (*sources)[t];
      const S inv = S(1) / static_cast<S>(list.size());
      S* dst = out.data() + base + static_cast<std::size_t>(t) * c;
      for (int src : list) {
        const S* sp = wv.data() + base + static_cast<std::size_t>(src) * c;
        for (int j = 0; j < c; ++j) dst[j] += sp[j];
      }
      for (int j = 0; j < c; ++j) dst[j] *= inv;
    }
  }
  return make_op<S>("scale_aggregate", sh, std::move(out), {windows},
                    [sources, nw, kk, c](TensorNode<S>& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (int win = 0; win < nw; ++win) {
      const std::size_t base = static_cast<std::size_t>(win) * kk * c;
      for (int t = 0; t < kk; ++t) {
        const auto& list = (*sources)[t];
        const S inv = S(1) / static_cast<S>(list.size());
        const S* g = n.grad.data() + base + static_cast<std::size_t>(t) * c;
        for (int src : list) {
          S* dst = p.grad.data() + base + static_cast<std::size_t>(src) * c;
          for (int j = 0; j < c; ++j) dst[j] += g[j] * inv;
        }
      }
    }
  });
}

#define RECONFORMER_INSTANTIATE_OPS(S)                                                        \
  template TensorT<S> add(const TensorT<S>&, const TensorT<S>&);                              \
  template TensorT<S> sub(const TensorT<S>&, const TensorT<S>&);                              \
  template TensorT<S> mul(const TensorT<S>&, const TensorT<S>&);                              \
  template TensorT<S> scale(const TensorT<S>&, S);                                            \
  template TensorT<S> relu(const TensorT<S>&);                                                \
  template TensorT<S> gelu(const TensorT<S>&);                                                \
  template TensorT<S> softmax(const TensorT<S>&, int);                                        \
  template TensorT<S> layer_norm(const TensorT<S>&, const TensorT<S>&, const TensorT<S>&, S); \
  template TensorT<S> matmul(const TensorT<S>&, const TensorT<S>&);                           \
  template TensorT<S> transpose_last2(const TensorT<S>&);                                     \
  template TensorT<S> reshape(const TensorT<S>&, Shape);                                      \
  template TensorT<S> concat_channels(const std::vector<TensorT<S>>&);                        \
  template TensorT<S> sum_all(const TensorT<S>&);                                             \
  template TensorT<S> l1_loss(const TensorT<S>&, const TensorT<S>&);                          \
  template TensorT<S> conv2d(const TensorT<S>&, const TensorT<S>&, const TensorT<S>&, int,    \
                             Padding, bool);                                                  \
  template TensorT<S> fft2c_op(const TensorT<S>&);                                            \
  template TensorT<S> ifft2c_op(const TensorT<S>&);                                           \
  template TensorT<S> roll2d(const TensorT<S>&, int, int);                                    \
  template TensorT<S> window_partition_op(const TensorT<S>&, int, int);                       \
  template TensorT<S> window_merge_op(const TensorT<S>&, int, int, int, int);                 \
  template TensorT<S> box_filter_windows(const TensorT<S>&, int, int);

RECONFORMER_INSTANTIATE_OPS(float)
RECONFORMER_INSTANTIATE_OPS(double)

#undef RECONFORMER_INSTANTIATE_OPS

}  // namespace reconformer
