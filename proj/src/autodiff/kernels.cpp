// SPDX-License-Identifier: Apache-2.0

#include "kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "taskmod/common/error.hpp"

namespace taskmod::ad {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, double fill)
    : shape(std::move(s)), data(static_cast<std::size_t>(numel(shape)), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (static_cast<std::int64_t>(data.size()) != numel(shape)) {
    throw ShapeError("tensor data size " + std::to_string(data.size()) +
                     " does not match shape " + to_string(shape));
  }
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         (a.data.empty() || std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) {
    throw ShapeError("max_abs_diff: " + to_string(a.shape) + " vs " + to_string(b.shape));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

namespace detail {
namespace {

// Dense kernels below accumulate every output element over the reduction
// index in increasing order; vectorization only runs across independent
// outputs, so results do not depend on buffer alignment.

// Strided matrix view: element (i, j) lives at ptr[i * rs + j * cs].
struct MatView {
  const double* ptr;
  std::int64_t rs;
  std::int64_t cs;
  double operator()(std::int64_t i, std::int64_t j) const { return ptr[i * rs + j * cs]; }
};

constexpr std::int64_t kMr = 4;
constexpr std::int64_t kNr = 8;

// c[i,j] (+)= sum_p a(i,p) * b(p,j) for an MR x NR tile read from packed
// A (ap[p*MR + i]) and B rows bp[p*ldb + j]. The sum runs over p = 0..k-1 in
// order for every element, so the result does not depend on tiling or
// vector width.
template <std::int64_t MR, std::int64_t NR>
void gemm_tile(const double* ap, const double* bp, std::int64_t ldb, double* c, std::int64_t ldc, std::int64_t mr,
               std::int64_t nr, std::int64_t k, bool accumulate) {
  double acc[MR][NR] = {};
  if (accumulate) {
    for (std::int64_t i = 0; i < mr; ++i) {
      for (std::int64_t j = 0; j < nr; ++j) acc[i][j] = c[i * ldc + j];
    }
  }
  for (std::int64_t p = 0; p < k; ++p) {
    const double* bv = bp + p * ldb;
    const double* av = ap + p * MR;
    for (std::int64_t i = 0; i < MR; ++i) {
      for (std::int64_t j = 0; j < NR; ++j) acc[i][j] += av[i] * bv[j];
    }
  }
  for (std::int64_t i = 0; i < mr; ++i) {
    for (std::int64_t j = 0; j < nr; ++j) c[i * ldc + j] = acc[i][j];
  }
}

// c[m,n] (+)= a(m,k) * b(k,n), c row-major with leading dimension n.
void gemm(MatView a, MatView b, double* c, std::int64_t m, std::int64_t k, std::int64_t n, bool accumulate) {
  const std::int64_t mb = (m + kMr - 1) / kMr;
  std::vector<double> apack(static_cast<std::size_t>(mb * kMr * k), 0.0);
  for (std::int64_t ib = 0; ib < mb; ++ib) {
    double* dst = apack.data() + ib * kMr * k;
    for (std::int64_t p = 0; p < k; ++p) {
      for (std::int64_t i = 0; i < kMr; ++i) {
        const std::int64_t row = ib * kMr + i;
        dst[p * kMr + i] = row < m ? a(row, p) : 0.0;
      }
    }
  }
  std::vector<double> bpack(static_cast<std::size_t>(kNr * k));
  for (std::int64_t j0 = 0; j0 < n; j0 += kNr) {
    const std::int64_t nr = std::min(kNr, n - j0);
    const double* bp = b.ptr + j0 * b.cs;
    std::int64_t ldb = b.rs;
    if (b.cs != 1 || nr < kNr) {
      for (std::int64_t p = 0; p < k; ++p) {
        for (std::int64_t j = 0; j < kNr; ++j) {
          bpack[static_cast<std::size_t>(p * kNr + j)] = j < nr ? b(p, j0 + j) : 0.0;
        }
      }
      bp = bpack.data();
      ldb = kNr;
    }
    for (std::int64_t ib = 0; ib < mb; ++ib) {
      const std::int64_t i0 = ib * kMr;
      gemm_tile<kMr, kNr>(apack.data() + ib * kMr * k, bp, ldb, c + i0 * n + j0, n, std::min(kMr, m - i0), nr, k,
                          accumulate);
    }
  }
}

// c[m,n] (+)= a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n,
             bool accumulate) {
  gemm({a, k, 1}, {b, n, 1}, c, m, k, n, accumulate);
}

// c[k,n] = a[m,k]^T * b[m,n]
void gemm_tn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n) {
  gemm({a, 1, k}, {b, n, 1}, c, k, m, n, false);
}

// c[m,n] += a[m,k] * b[n,k]^T
void gemm_nt_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n) {
  gemm({a, k, 1}, {b, 1, k}, c, m, k, n, true);
}

[[noreturn]] void shape_fail(OpKind kind, const Shape& a, const Shape& b, const std::string& why = {}) {
  std::string msg = std::string(op_name(kind)) + ": incompatible shapes " + to_string(a) + " and " +
                    to_string(b);
  if (!why.empty()) msg += " (" + why + ")";
  throw ShapeError(msg);
}

[[noreturn]] void shape_fail1(OpKind kind, const Shape& a, const std::string& why) {
  throw ShapeError(std::string(op_name(kind)) + ": invalid input shape " + to_string(a) + " (" +
                   why + ")");
}

std::vector<std::int64_t> row_major_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Strides of `in` expressed in the index space of `out` (right-aligned),
// with 0 for broadcast dimensions.
std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  const auto in_st = row_major_strides(in);
  std::vector<std::int64_t> st(out.size(), 0);
  const std::size_t off = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i) {
    st[off + i] = (in[i] == 1 && out[off + i] != 1) ? 0 : in_st[i];
  }
  return st;
}

// Calls f(out_index, offsets...) over the row-major index space of `shape`
// with one running offset per stride vector.
template <std::size_t K, class F>
void for_each_index(const Shape& shape, const std::array<std::vector<std::int64_t>, K>& strides, F&& f) {
  const std::size_t rank = shape.size();
  const std::int64_t total = numel(shape);
  if (total == 0) return;
  if (rank == 0) {
    std::array<std::int64_t, K> offs{};
    f(0, offs);
    return;
  }
  std::vector<std::int64_t> idx(rank, 0);
  std::array<std::int64_t, K> offs{};
  const std::int64_t inner = shape[rank - 1];
  std::int64_t linear = 0;
  while (linear < total) {
    std::array<std::int64_t, K> o = offs;
    for (std::int64_t j = 0; j < inner; ++j) {
      f(linear + j, o);
      for (std::size_t k = 0; k < K; ++k) o[k] += strides[k][rank - 1];
    }
    linear += inner;
    // advance outer odometer
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      for (std::size_t k = 0; k < K; ++k) offs[k] += strides[k][d];
      if (idx[d] < shape[d]) break;
      for (std::size_t k = 0; k < K; ++k) offs[k] -= strides[k][d] * shape[d];
      idx[d] = 0;
    }
  }
}

template <class F>
Tensor binary(const Tensor& a, const Tensor& b, const Shape& out_shape, F f) {
  Tensor out(out_shape);
  if (a.shape == out_shape && b.shape == out_shape) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  std::array<std::vector<std::int64_t>, 2> st{broadcast_strides(a.shape, out_shape),
                                               broadcast_strides(b.shape, out_shape)};
  for_each_index<2>(out_shape, st, [&](std::int64_t i, const std::array<std::int64_t, 2>& o) {
    out.data[static_cast<std::size_t>(i)] = f(a.data[static_cast<std::size_t>(o[0])],
                                              b.data[static_cast<std::size_t>(o[1])]);
  });
  return out;
}

template <class F>
Tensor unary(const Tensor& x, F f) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

// Reduces `x` onto `target` (same rank, dims equal or 1) with `op`.
template <class F>
Tensor reduce_to(const Tensor& x, const Shape& target, double init, F op) {
  Tensor out(target, init);
  std::array<std::vector<std::int64_t>, 1> st{broadcast_strides(target, x.shape)};
  for_each_index<1>(x.shape, st, [&](std::int64_t i, const std::array<std::int64_t, 1>& o) {
    auto& acc = out.data[static_cast<std::size_t>(o[0])];
    acc = op(acc, x.data[static_cast<std::size_t>(i)]);
  });
  return out;
}

Shape keepdim_shape(const Shape& s, const std::vector<std::int64_t>& axes) {
  Shape k = s;
  for (auto a : axes) k[static_cast<std::size_t>(a)] = 1;
  return k;
}

Shape reduced_shape(const Shape& s, const std::vector<std::int64_t>& axes, bool keepdim) {
  if (keepdim) return keepdim_shape(s, axes);
  Shape r;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!std::binary_search(axes.begin(), axes.end(), static_cast<std::int64_t>(i))) r.push_back(s[i]);
  }
  return r;
}

Shape left_pad(const Shape& s, std::size_t rank) {
  Shape r(rank - s.size(), 1);
  r.insert(r.end(), s.begin(), s.end());
  return r;
}

bool broadcastable_to(const Shape& from, const Shape& to) {
  if (from.size() > to.size()) return false;
  const std::size_t off = to.size() - from.size();
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i] != 1 && from[i] != to[off + i]) return false;
  }
  return true;
}

std::int64_t conv_out(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

Shape conv_shape(OpKind kind, const Shape& x, const Shape& w, std::int64_t stride, std::int64_t pad) {
  if (x.size() != 4 || w.size() != 4) shape_fail(kind, x, w, "conv2d needs rank-4 input and kernel");
  if (x[1] != w[1]) shape_fail(kind, x, w, "input channels differ");
  if (w[2] != w[3]) shape_fail(kind, x, w, "kernel must be square");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (pad < 0) throw ShapeError("conv2d: padding must be >= 0");
  const auto ho = conv_out(x[2], w[2], stride, pad);
  const auto wo = conv_out(x[3], w[3], stride, pad);
  if (ho <= 0 || wo <= 0) shape_fail(kind, x, w, "empty output");
  return {x[0], w[0], ho, wo};
}

struct ConvGeom {
  std::int64_t n, ci, h, w, co, k, ho, wo, stride, pad;
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
  std::int64_t col_rows() const { return ci * k * k; }
  std::int64_t col_cols() const { return ho * wo; }
};

ConvGeom geom(const Shape& x, const Shape& w, std::int64_t stride, std::int64_t pad) {
  return {x[0], x[1], x[2], x[3], w[0], w[2], conv_out(x[2], w[2], stride, pad),
          conv_out(x[3], w[3], stride, pad), stride, pad};
}

void im2col(const double* x, const ConvGeom& g, double* cols) {
  const std::int64_t hw = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.ci; ++c) {
    for (std::int64_t ky = 0; ky < g.k; ++ky) {
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        double* row = cols + ((c * g.k + ky) * g.k + kx) * hw;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = x + (c * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix < 0 || ix >= g.w) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

// Accumulates columns back into an image (x must be zeroed).
void col2im(const double* cols, const ConvGeom& g, double* x) {
  const std::int64_t hw = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.ci; ++c) {
    for (std::int64_t ky = 0; ky < g.k; ++ky) {
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((c * g.k + ky) * g.k + kx) * hw;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          double* dst = x + (c * g.h + iy) * g.w;
          const double* src = row + oy * g.wo;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, std::int64_t stride, std::int64_t pad) {
  const ConvGeom g = geom(x.shape, w.shape, stride, pad);
  Tensor out({g.n, g.co, g.ho, g.wo});
  std::vector<double> cols;
  if (!g.pointwise()) cols.resize(static_cast<std::size_t>(g.col_rows() * g.col_cols()));
  for (std::int64_t n = 0; n < g.n; ++n) {
    const double* xn = x.data.data() + n * g.ci * g.h * g.w;
    if (!g.pointwise()) im2col(xn, g, cols.data());
    gemm_nn(w.data.data(), g.pointwise() ? xn : cols.data(), out.data.data() + n * g.co * g.col_cols(), g.co,
            g.col_rows(), g.col_cols(), false);
  }
  return out;
}

Tensor conv2d_input_grad(const Tensor& dy, const Tensor& w, const Shape& x_shape, std::int64_t stride,
                         std::int64_t pad) {
  const ConvGeom g = geom(x_shape, w.shape, stride, pad);
  Tensor dx(x_shape);
  std::vector<double> dcols;
  if (!g.pointwise()) dcols.resize(static_cast<std::size_t>(g.col_rows() * g.col_cols()));
  for (std::int64_t n = 0; n < g.n; ++n) {
    const double* dyn = dy.data.data() + n * g.co * g.col_cols();
    double* dxn = dx.data.data() + n * g.ci * g.h * g.w;
    if (g.pointwise()) {
      gemm_tn(w.data.data(), dyn, dxn, g.co, g.col_rows(), g.col_cols());
    } else {
      gemm_tn(w.data.data(), dyn, dcols.data(), g.co, g.col_rows(), g.col_cols());
      col2im(dcols.data(), g, dxn);
    }
  }
  return dx;
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& dy, const Shape& w_shape, std::int64_t stride,
                          std::int64_t pad) {
  const ConvGeom g = geom(x.shape, w_shape, stride, pad);
  Tensor dw(w_shape);
  // dw[co, r] = sum_n sum_p dy[n, co, p] * cols_n[r, p]
  const std::int64_t rows = g.col_rows(), npos = g.col_cols();
  std::vector<double> cols;
  if (!g.pointwise()) cols.resize(static_cast<std::size_t>(rows * npos));
  for (std::int64_t n = 0; n < g.n; ++n) {
    const double* xn = x.data.data() + n * g.ci * g.h * g.w;
    if (!g.pointwise()) im2col(xn, g, cols.data());
    gemm_nt_acc(dy.data.data() + n * g.co * npos, g.pointwise() ? xn : cols.data(), dw.data.data(), g.co, npos,
                rows);
  }
  return dw;
}

// Views a tensor as [outer, axis, inner] around `axis`.
struct AxisSplit {
  std::int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::int64_t axis) {
  AxisSplit r;
  for (std::int64_t i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  r.len = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

std::int64_t norm_axis(std::int64_t axis, std::size_t rank, OpKind kind) {
  const auto r = static_cast<std::int64_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError(std::string(op_name(kind)) + ": axis out of range for rank " + std::to_string(rank));
  }
  return axis;
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  const Shape pa = left_pad(a, rank), pb = left_pad(b, rank);
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] == pb[i] || pb[i] == 1) {
      out[i] = pa[i];
    } else if (pa[i] == 1) {
      out[i] = pb[i];
    } else {
      throw ShapeError("broadcast: incompatible shapes " + to_string(a) + " and " + to_string(b));
    }
  }
  return out;
}

std::vector<std::int64_t> normalize_axes(const std::vector<std::int64_t>& axes, std::size_t rank) {
  std::vector<std::int64_t> out;
  for (auto a : axes) {
    const auto r = static_cast<std::int64_t>(rank);
    const auto n = a < 0 ? a + r : a;
    if (n < 0 || n >= r) throw ShapeError("axis " + std::to_string(a) + " out of range for rank " + std::to_string(rank));
    out.push_back(n);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

Shape infer_shape(OpKind kind, const OpAttrs& at, std::span<const Shape* const> in) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      throw ShapeError(std::string(op_name(kind)) + ": expected " + std::to_string(n) + " inputs, got " +
                       std::to_string(in.size()));
    }
  };
  switch (kind) {
    case OpKind::Leaf:
      throw UnknownOpError("leaf nodes are created with Graph::leaf or Graph::constant");
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul:
    case OpKind::Div: {
      need(2);
      try {
        return broadcast_shapes(*in[0], *in[1]);
      } catch (const ShapeError&) {
        shape_fail(kind, *in[0], *in[1]);
      }
    }
    case OpKind::Neg:
    case OpKind::Scale:
    case OpKind::AddScalar:
    case OpKind::Relu:
    case OpKind::Relu6:
    case OpKind::Sigmoid:
    case OpKind::Tanh:
    case OpKind::Log:
    case OpKind::Exp:
    case OpKind::Sqrt:
    case OpKind::Abs:
    case OpKind::Softplus:
    case OpKind::Detach:
    case OpKind::Sign:
      need(1);
      return *in[0];
    case OpKind::Clamp:
    case OpKind::StepMask:
      need(1);
      if (!(at.lo <= at.hi)) throw ShapeError(std::string(op_name(kind)) + ": requires lo <= hi");
      return *in[0];
    case OpKind::MatMul: {
      need(2);
      const auto &a = *in[0], &b = *in[1];
      if (a.size() != 2 || b.size() != 2 || a[1] != b[0]) shape_fail(kind, a, b);
      return {a[0], b[1]};
    }
    case OpKind::Transpose:
      need(1);
      if (in[0]->size() != 2) shape_fail1(kind, *in[0], "rank 2 required");
      return {(*in[0])[1], (*in[0])[0]};
    case OpKind::Conv2d:
      need(2);
      return conv_shape(kind, *in[0], *in[1], at.stride, at.pad);
    case OpKind::Conv2dGradInput: {
      need(2);
      const Shape expect = conv_shape(kind, at.shape, *in[1], at.stride, at.pad);
      if (expect != *in[0]) shape_fail(kind, *in[0], expect, "gradient shape");
      return at.shape;
    }
    case OpKind::Conv2dGradWeight: {
      need(2);
      const Shape expect = conv_shape(kind, *in[0], at.shape, at.stride, at.pad);
      if (expect != *in[1]) shape_fail(kind, *in[1], expect, "gradient shape");
      return at.shape;
    }
    case OpKind::Sum:
    case OpKind::ReduceMax: {
      need(1);
      return reduced_shape(*in[0], normalize_axes(at.axes, in[0]->size()), at.keepdim);
    }
    case OpKind::L2Norm:
      need(1);
      return keepdim_shape(*in[0], normalize_axes(at.axes, in[0]->size()));
    case OpKind::BroadcastTo:
      need(1);
      if (!broadcastable_to(*in[0], at.shape)) shape_fail(kind, *in[0], at.shape);
      return at.shape;
    case OpKind::SumTo:
      need(1);
      if (!broadcastable_to(at.shape, *in[0])) shape_fail(kind, *in[0], at.shape);
      return at.shape;
    case OpKind::Reshape:
      need(1);
      if (numel(*in[0]) != numel(at.shape)) shape_fail(kind, *in[0], at.shape, "element count");
      return at.shape;
    case OpKind::Upsample: {
      need(1);
      const auto& s = *in[0];
      if (s.size() != 4) shape_fail1(kind, s, "rank 4 required");
      if (at.factor < 1) throw ShapeError("upsample: factor must be >= 1");
      return {s[0], s[1], s[2] * at.factor, s[3] * at.factor};
    }
    case OpKind::SumPool: {
      need(1);
      const auto& s = *in[0];
      if (s.size() != 4) shape_fail1(kind, s, "rank 4 required");
      if (at.factor < 1 || s[2] % at.factor || s[3] % at.factor) {
        shape_fail1(kind, s, "spatial size not divisible by factor");
      }
      return {s[0], s[1], s[2] / at.factor, s[3] / at.factor};
    }
    case OpKind::Concat: {
      if (in.empty()) throw ShapeError("concat: no inputs");
      const auto axis = norm_axis(at.axis, in[0]->size(), kind);
      Shape out = *in[0];
      for (std::size_t i = 1; i < in.size(); ++i) {
        const auto& s = *in[i];
        if (s.size() != out.size()) shape_fail(kind, out, s);
        for (std::size_t d = 0; d < s.size(); ++d) {
          if (static_cast<std::int64_t>(d) != axis && s[d] != out[d]) shape_fail(kind, out, s);
        }
        out[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
      }
      return out;
    }
    case OpKind::Slice: {
      need(1);
      const auto axis = norm_axis(at.axis, in[0]->size(), kind);
      Shape out = *in[0];
      const auto len = out[static_cast<std::size_t>(axis)];
      if (at.start < 0 || at.stop > len || at.start >= at.stop) shape_fail1(kind, out, "slice bounds");
      out[static_cast<std::size_t>(axis)] = at.stop - at.start;
      return out;
    }
    case OpKind::Pad: {
      need(1);
      const auto axis = norm_axis(at.axis, in[0]->size(), kind);
      Shape out = *in[0];
      if (at.start < 0 || at.start + out[static_cast<std::size_t>(axis)] > at.length) {
        shape_fail1(kind, out, "pad bounds");
      }
      out[static_cast<std::size_t>(axis)] = at.length;
      return out;
    }
    default:
      throw UnknownOpError(std::string(op_name(kind)) + " is not a primitive op");
  }
}

Tensor compute(const Node& node, std::span<const Tensor* const> in) {
  const auto& at = node.attrs;
  switch (node.op) {
    case OpKind::Add:
      return binary(*in[0], *in[1], node.shape, [](double a, double b) { return a + b; });
    case OpKind::Sub:
      return binary(*in[0], *in[1], node.shape, [](double a, double b) { return a - b; });
    case OpKind::Mul:
      return binary(*in[0], *in[1], node.shape, [](double a, double b) { return a * b; });
    case OpKind::Div:
      if (at.safe) {
        return binary(*in[0], *in[1], node.shape, [](double a, double b) { return b == 0.0 ? 0.0 : a / b; });
      }
      return binary(*in[0], *in[1], node.shape, [](double a, double b) { return a / b; });
    case OpKind::Neg:
      return unary(*in[0], [](double x) { return -x; });
    case OpKind::Scale: {
      const double s = at.scalar;
      return unary(*in[0], [s](double x) { return x * s; });
    }
    case OpKind::AddScalar: {
      const double s = at.scalar;
      return unary(*in[0], [s](double x) { return x + s; });
    }
    case OpKind::MatMul: {
      const auto &a = *in[0], &b = *in[1];
      Tensor out(node.shape);
      gemm_nn(a.data.data(), b.data.data(), out.data.data(), a.shape[0], a.shape[1], b.shape[1], false);
      return out;
    }
    case OpKind::Transpose: {
      const auto& x = *in[0];
      Tensor out(node.shape);
      const auto r = x.shape[0], c = x.shape[1];
      for (std::int64_t i = 0; i < r; ++i) {
        for (std::int64_t j = 0; j < c; ++j) out.data[static_cast<std::size_t>(j * r + i)] = x.data[static_cast<std::size_t>(i * c + j)];
      }
      return out;
    }
    case OpKind::Conv2d:
      return conv2d_forward(*in[0], *in[1], at.stride, at.pad);
    case OpKind::Conv2dGradInput:
      return conv2d_input_grad(*in[0], *in[1], at.shape, at.stride, at.pad);
    case OpKind::Conv2dGradWeight:
      return conv2d_weight_grad(*in[0], *in[1], at.shape, at.stride, at.pad);
    case OpKind::Relu:
      return unary(*in[0], [](double x) { return x > 0.0 ? x : 0.0; });
    case OpKind::Relu6:
      return unary(*in[0], [](double x) { return std::clamp(x, 0.0, 6.0); });
    case OpKind::Clamp: {
      const double lo = at.lo, hi = at.hi;
      return unary(*in[0], [lo, hi](double x) { return std::clamp(x, lo, hi); });
    }
    case OpKind::Sigmoid:
      return unary(*in[0], stable_sigmoid);
    case OpKind::Tanh:
      return unary(*in[0], [](double x) { return std::tanh(x); });
    case OpKind::Log:
      return unary(*in[0], [](double x) { return std::log(x); });
    case OpKind::Exp:
      return unary(*in[0], [](double x) { return std::exp(x); });
    case OpKind::Sqrt:
      return unary(*in[0], [](double x) { return std::sqrt(x); });
    case OpKind::Abs:
      return unary(*in[0], [](double x) { return std::abs(x); });
    case OpKind::Softplus:
      return unary(*in[0], stable_softplus);
    case OpKind::Detach:
      return *in[0];
    case OpKind::Sign:
      return unary(*in[0], [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
    case OpKind::StepMask: {
      const double lo = at.lo, hi = at.hi;
      return unary(*in[0], [lo, hi](double x) { return (x > lo && x < hi) ? 1.0 : 0.0; });
    }
    case OpKind::Sum: {
      const auto axes = normalize_axes(at.axes, in[0]->rank());
      Tensor r = reduce_to(*in[0], keepdim_shape(in[0]->shape, axes), 0.0,
                           [](double acc, double v) { return acc + v; });
      r.shape = node.shape;
      return r;
    }
    case OpKind::ReduceMax: {
      const auto axes = normalize_axes(at.axes, in[0]->rank());
      Tensor r = reduce_to(*in[0], keepdim_shape(in[0]->shape, axes), -std::numeric_limits<double>::infinity(),
                           [](double acc, double v) { return std::max(acc, v); });
      r.shape = node.shape;
      return r;
    }
    case OpKind::L2Norm: {
      const auto axes = normalize_axes(at.axes, in[0]->rank());
      Tensor r = reduce_to(*in[0], node.shape, 0.0, [](double acc, double v) { return acc + v * v; });
      for (auto& v : r.data) v = std::sqrt(v);
      return r;
    }
    case OpKind::BroadcastTo: {
      const auto& x = *in[0];
      Tensor out(node.shape);
      std::array<std::vector<std::int64_t>, 1> st{broadcast_strides(x.shape, node.shape)};
      for_each_index<1>(node.shape, st, [&](std::int64_t i, const std::array<std::int64_t, 1>& o) {
        out.data[static_cast<std::size_t>(i)] = x.data[static_cast<std::size_t>(o[0])];
      });
      return out;
    }
    case OpKind::SumTo: {
      const auto& x = *in[0];
      Tensor r = reduce_to(x, left_pad(node.shape, x.rank()), 0.0, [](double acc, double v) { return acc + v; });
      r.shape = node.shape;
      return r;
    }
    case OpKind::Reshape: {
      Tensor r = *in[0];
      r.shape = node.shape;
      return r;
    }
    case OpKind::Upsample: {
      const auto& x = *in[0];
      const auto f = at.factor;
      Tensor out(node.shape);
      const auto H = x.shape[2], W = x.shape[3], OH = node.shape[2], OW = node.shape[3];
      for (std::int64_t p = 0; p < x.shape[0] * x.shape[1]; ++p) {
        const double* src = x.data.data() + p * H * W;
        double* dst = out.data.data() + p * OH * OW;
        for (std::int64_t y = 0; y < OH; ++y) {
          for (std::int64_t xx = 0; xx < OW; ++xx) dst[y * OW + xx] = src[(y / f) * W + xx / f];
        }
      }
      return out;
    }
    case OpKind::SumPool: {
      const auto& x = *in[0];
      const auto f = at.factor;
      Tensor out(node.shape);
      const auto H = x.shape[2], W = x.shape[3], OH = node.shape[2], OW = node.shape[3];
      for (std::int64_t p = 0; p < x.shape[0] * x.shape[1]; ++p) {
        const double* src = x.data.data() + p * H * W;
        double* dst = out.data.data() + p * OH * OW;
        for (std::int64_t y = 0; y < OH; ++y) {
          for (std::int64_t xx = 0; xx < OW; ++xx) {
            double acc = 0.0;
            for (std::int64_t dy = 0; dy < f; ++dy) {
              for (std::int64_t dx = 0; dx < f; ++dx) acc += src[(y * f + dy) * W + xx * f + dx];
            }
            dst[y * OW + xx] = acc;
          }
        }
      }
      return out;
    }
    case OpKind::Concat: {
      const auto axis = norm_axis(at.axis, node.shape.size(), node.op);
      Tensor out(node.shape);
      const AxisSplit os = split_at(node.shape, axis);
      std::int64_t offset = 0;
      for (const Tensor* t : in) {
        const AxisSplit is = split_at(t->shape, axis);
        for (std::int64_t o = 0; o < is.outer; ++o) {
          std::copy_n(t->data.data() + o * is.len * is.inner, is.len * is.inner,
                      out.data.data() + (o * os.len + offset) * os.inner);
        }
        offset += is.len;
      }
      return out;
    }
    case OpKind::Slice: {
      const auto axis = norm_axis(at.axis, node.shape.size(), node.op);
      Tensor out(node.shape);
      const AxisSplit is = split_at(in[0]->shape, axis);
      const AxisSplit os = split_at(node.shape, axis);
      for (std::int64_t o = 0; o < is.outer; ++o) {
        std::copy_n(in[0]->data.data() + (o * is.len + at.start) * is.inner, os.len * os.inner,
                    out.data.data() + o * os.len * os.inner);
      }
      return out;
    }
    case OpKind::Pad: {
      const auto axis = norm_axis(at.axis, node.shape.size(), node.op);
      Tensor out(node.shape);
      const AxisSplit is = split_at(in[0]->shape, axis);
      const AxisSplit os = split_at(node.shape, axis);
      for (std::int64_t o = 0; o < is.outer; ++o) {
        std::copy_n(in[0]->data.data() + o * is.len * is.inner, is.len * is.inner,
                    out.data.data() + (o * os.len + at.start) * os.inner);
      }
      return out;
    }
    default:
      throw UnknownOpError(std::string("no kernel for ") + std::string(op_name(node.op)));
  }
}

}  // namespace detail
}  // namespace taskmod::ad
