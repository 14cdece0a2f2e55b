// SPDX-License-Identifier: Apache-2.0

#include "armattn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace armattn::ops {

namespace {

using Impl = detail::TensorImpl;
using ImplPtr = std::shared_ptr<Impl>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void check_finite(const char* name, const std::vector<double>& values) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericalError(std::string(name) + " produced a non-finite value");
  }
}

Tensor finish(const char* name, Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
              std::function<void(const Tape::Node&)> adjoint) {
  check_finite(name, values);
  auto out = std::make_shared<Impl>();
  out->shape = std::move(shape);
  out->data = std::move(values);
  Tape* tape = Tape::active();
  const bool needs = tape && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (needs) {
    out->requires_grad = true;
    out->is_leaf = false;
    Tape::Node node{name, {}, out, std::move(adjoint)};
    for (const auto& t : inputs) node.inputs.push_back(t.impl());
    tape->record(std::move(node));
  }
  return Tensor(std::move(out));
}

// Gradient buffer of input i, or nullptr when it needs none.
std::vector<double>* grad_of(const Tape::Node& node, std::size_t i) {
  auto& in = *node.inputs[i];
  return in.requires_grad ? &in.ensure_grad() : nullptr;
}

void require_defined(const char* name, const Tensor& t) {
  if (!t.defined()) throw ShapeError(std::string(name) + ": undefined operand");
}

void require_same_shape(const char* name, const Tensor& a, const Tensor& b) {
  require_defined(name, a);
  require_defined(name, b);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

std::size_t normalize_axis(const char* name, int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError(std::string(name) + ": axis " + std::to_string(axis) + " out of range");
  return static_cast<std::size_t>(a);
}

// outer = product of extents before axis, inner = product after.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};
AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <class F, class DF>
Tensor unary(const char* name, const Tensor& a, F f, DF df) {
  require_defined(name, a);
  const auto& x = a.data();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return finish(name, a.shape(), std::move(y), {a}, [df](const Tape::Node& n) {
    auto* g = grad_of(n, 0);
    if (!g) return;
    const auto& x = n.inputs[0]->data;
    const auto& y = n.output->data;
    const auto& gy = n.output->grad;
    for (std::size_t i = 0; i < x.size(); ++i) (*g)[i] += gy[i] * df(x[i], y[i]);
  });
}

// Small products go through a plain loop; Eigen handles the rest.
void gemm_acc(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m,
              bool transpose_a, bool transpose_b) {
  // c (n x m) += op(a) * op(b)
  if (n * k * m <= 512) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double av = transpose_a ? a[p * n + i] : a[i * k + p];
        if (av == 0.0) continue;
        double* crow = c + i * m;
        if (transpose_b) {
          for (std::size_t j = 0; j < m; ++j) crow[j] += av * b[j * k + p];
        } else {
          const double* brow = b + p * m;
          for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
      }
    }
    return;
  }
  const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  MutMap C(c, ei(n), ei(m));
  if (!transpose_a && !transpose_b) {
    C.noalias() += ConstMap(a, ei(n), ei(k)) * ConstMap(b, ei(k), ei(m));
  } else if (transpose_a && !transpose_b) {
    C.noalias() += ConstMap(a, ei(k), ei(n)).transpose() * ConstMap(b, ei(k), ei(m));
  } else if (!transpose_a && transpose_b) {
    C.noalias() += ConstMap(a, ei(n), ei(k)) * ConstMap(b, ei(m), ei(k)).transpose();
  } else {
    C.noalias() += ConstMap(a, ei(k), ei(n)).transpose() * ConstMap(b, ei(m), ei(k)).transpose();
  }
}

// Index mapping shared by transpose and broadcast: for each output element,
// the flat source offset under the given source strides.
template <class F>
void for_each_index(const Shape& shape, const std::vector<std::size_t>& src_strides, F f) {
  const std::size_t rank = shape.size();
  const std::size_t total = shape_numel(shape);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t out = 0; out < total; ++out) {
    f(out, src);
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      src += src_strides[ax];
      if (idx[ax] < shape[ax]) break;
      src -= src_strides[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined("matmul", a);
  require_defined("matmul", b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) throw ShapeError("matmul: operands need rank >= 2");
  const std::size_t n = sa[sa.size() - 2], k = sa.back();
  const std::size_t kb = sb[sb.size() - 2], m = sb.back();
  if (k != kb) throw ShapeError("matmul: inner extents differ " + shape_str(sa) + " x " + shape_str(sb));
  const bool shared_b = sb.size() == 2;
  if (!shared_b && !std::equal(sa.begin(), sa.end() - 2, sb.begin(), sb.end() - 2)) {
    throw ShapeError("matmul: batch extents differ " + shape_str(sa) + " x " + shape_str(sb));
  }
  const std::size_t batch = shape_numel(Shape(sa.begin(), sa.end() - 2));
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(m);
  std::vector<double> c(batch * n * m, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  if (shared_b) {
    gemm_acc(pa, pb, c.data(), batch * n, k, m, false, false);
  } else {
    for (std::size_t i = 0; i < batch; ++i) gemm_acc(pa + i * n * k, pb + i * k * m, c.data() + i * n * m, n, k, m, false, false);
  }
  return finish("matmul", std::move(out_shape), std::move(c), {a, b}, [=](const Tape::Node& node) {
    const double* gc = node.output->grad.data();
    const double* xa = node.inputs[0]->data.data();
    const double* xb = node.inputs[1]->data.data();
    if (auto* ga = grad_of(node, 0)) {
      if (shared_b) {
        gemm_acc(gc, xb, ga->data(), batch * n, m, k, false, true);
      } else {
        for (std::size_t i = 0; i < batch; ++i) gemm_acc(gc + i * n * m, xb + i * k * m, ga->data() + i * n * k, n, m, k, false, true);
      }
    }
    if (auto* gb = grad_of(node, 1)) {
      if (shared_b) {
        gemm_acc(xa, gc, gb->data(), k, batch * n, m, true, false);
      } else {
        for (std::size_t i = 0; i < batch; ++i) gemm_acc(xa + i * n * k, gc + i * n * m, gb->data() + i * k * m, k, n, m, true, false);
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> y(a.numel());
  const auto xa = a.data(), xb = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xa[i] + xb[i];
  return finish("add", a.shape(), std::move(y), {a, b}, [](const Tape::Node& n) {
    const auto& g = n.output->grad;
    for (std::size_t s = 0; s < 2; ++s) {
      if (auto* gi = grad_of(n, s)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> y(a.numel());
  const auto xa = a.data(), xb = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xa[i] - xb[i];
  return finish("sub", a.shape(), std::move(y), {a, b}, [](const Tape::Node& n) {
    const auto& g = n.output->grad;
    if (auto* ga = grad_of(n, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (auto* gb = grad_of(n, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> y(a.numel());
  const auto xa = a.data(), xb = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xa[i] * xb[i];
  return finish("mul", a.shape(), std::move(y), {a, b}, [](const Tape::Node& n) {
    const auto& g = n.output->grad;
    const auto& xa = n.inputs[0]->data;
    const auto& xb = n.inputs[1]->data;
    if (auto* ga = grad_of(n, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * xb[i];
    }
    if (auto* gb = grad_of(n, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * xa[i];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape("div", a, b);
  std::vector<double> y(a.numel());
  const auto xa = a.data(), xb = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xa[i] / xb[i];
  return finish("div", a.shape(), std::move(y), {a, b}, [](const Tape::Node& n) {
    const auto& g = n.output->grad;
    const auto& xb = n.inputs[1]->data;
    const auto& y = n.output->data;
    if (auto* ga = grad_of(n, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / xb[i];
    }
    if (auto* gb = grad_of(n, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i] * y[i] / xb[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor log_sigmoid(const Tensor& a) {
  return unary(
      "log_sigmoid", a,
      [](double x) { return x < 0.0 ? x - std::log1p(std::exp(x)) : -std::log1p(std::exp(-x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(x)); });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary(
      "leaky_relu", a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor gelu(const Tensor& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double w = 0.044715;
  return unary(
      "gelu", a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + w * x * x * x))); },
      [](double x, double) {
        const double t = std::tanh(c * (x + w * x * x * x));
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * w * x * x);
      });
}

Tensor masked_softmax(const Tensor& a, std::span<const std::uint8_t> mask) {
  require_defined("masked_softmax", a);
  const Shape& s = a.shape();
  if (s.size() < 2) throw ShapeError("masked_softmax: rank must be >= 2");
  const std::size_t n = s[s.size() - 2], m = s.back();
  if (mask.size() != n * m) throw ShapeError("masked_softmax: mask size does not match " + shape_str(s));
  for (std::size_t i = 0; i < n; ++i) {
    if (std::none_of(mask.begin() + static_cast<std::ptrdiff_t>(i * m), mask.begin() + static_cast<std::ptrdiff_t>((i + 1) * m),
                     [](std::uint8_t v) { return v != 0; })) {
      throw ShapeError("masked_softmax: row " + std::to_string(i) + " is fully masked");
    }
  }
  const std::size_t rows = a.numel() / m;
  const auto& x = a.data();
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::uint8_t* mrow = mask.data() + (r % n) * m;
    const double* xr = x.data() + r * m;
    double* yr = y.data() + r * m;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      if (mrow[j]) mx = std::max(mx, xr[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (mrow[j]) {
        yr[j] = std::exp(xr[j] - mx);
        total += yr[j];
      }
    }
    for (std::size_t j = 0; j < m; ++j) yr[j] /= total;
  }
  return finish("masked_softmax", s, std::move(y), {a}, [m](const Tape::Node& node) {
    auto* g = grad_of(node, 0);
    if (!g) return;
    const auto& y = node.output->data;
    const auto& gy = node.output->grad;
    for (std::size_t r = 0; r < y.size() / m; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += y[r * m + j] * gy[r * m + j];
      for (std::size_t j = 0; j < m; ++j) (*g)[r * m + j] += y[r * m + j] * (gy[r * m + j] - dot);
    }
  });
}

Tensor rms_normalize(const Tensor& a, double eps) {
  require_defined("rms_normalize", a);
  if (a.dim() == 0) throw ShapeError("rms_normalize: scalar input");
  const std::size_t width = a.shape().back();
  const std::size_t rows = a.numel() / width;
  const auto& x = a.data();
  std::vector<double> y(x.size());
  std::vector<double> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < width; ++j) ss += x[r * width + j] * x[r * width + j];
    inv[r] = 1.0 / std::sqrt(ss / static_cast<double>(width) + eps);
    for (std::size_t j = 0; j < width; ++j) y[r * width + j] = x[r * width + j] * inv[r];
  }
  return finish("rms_normalize", a.shape(), std::move(y), {a}, [width, inv = std::move(inv)](const Tape::Node& node) {
    auto* g = grad_of(node, 0);
    if (!g) return;
    const auto& y = node.output->data;
    const auto& gy = node.output->grad;
    for (std::size_t r = 0; r < inv.size(); ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < width; ++j) dot += gy[r * width + j] * y[r * width + j];
      dot /= static_cast<double>(width);
      for (std::size_t j = 0; j < width; ++j) {
        (*g)[r * width + j] += inv[r] * (gy[r * width + j] - y[r * width + j] * dot);
      }
    }
  });
}

Tensor transpose(const Tensor& a, int axis0, int axis1) {
  require_defined("transpose", a);
  const std::size_t r = a.dim();
  const std::size_t p = normalize_axis("transpose", axis0, r);
  const std::size_t q = normalize_axis("transpose", axis1, r);
  Shape out_shape = a.shape();
  std::swap(out_shape[p], out_shape[q]);
  auto src_strides = strides_of(a.shape());
  std::swap(src_strides[p], src_strides[q]);
  std::vector<double> y(a.numel());
  const auto& x = a.data();
  for_each_index(out_shape, src_strides, [&](std::size_t out, std::size_t src) { y[out] = x[src]; });
  return finish("transpose", out_shape, std::move(y), {a}, [out_shape, src_strides](const Tape::Node& node) {
    auto* g = grad_of(node, 0);
    if (!g) return;
    const auto& gy = node.output->grad;
    for_each_index(out_shape, src_strides, [&](std::size_t out, std::size_t src) { (*g)[src] += gy[out]; });
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined("reshape", a);
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> y(a.data().begin(), a.data().end());
  return finish("reshape", std::move(shape), std::move(y), {a}, [](const Tape::Node& node) {
    auto* g = grad_of(node, 0);
    if (!g) return;
    const auto& gy = node.output->grad;
    for (std::size_t i = 0; i < gy.size(); ++i) (*g)[i] += gy[i];
  });
}

Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end) {
  require_defined("slice", a);
  const std::size_t ax = normalize_axis("slice", axis, a.dim());
  const AxisSplit sp = split_at(a.shape(), ax);
  if (begin > end || end > sp.len) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                     shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[ax] = end - begin;
  const std::size_t width = (end - begin) * sp.inner;
  std::vector<double> y(sp.outer * width);
  const auto& x = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(o * sp.len * sp.inner + begin * sp.inner), width,
                y.begin() + static_cast<std::ptrdiff_t>(o * width));
  }
  return finish("slice", std::move(out_shape), std::move(y), {a}, [sp, begin, width](const Tape::Node& node) {
    auto* g = grad_of(node, 0);
    if (!g) return;
    const auto& gy = node.output->grad;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < width; ++i) (*g)[o * sp.len * sp.inner + begin * sp.inner + i] += gy[o * width + i];
    }
  });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  for (const auto& p : parts) require_defined("concat", p);
  const Shape& first = parts[0].shape();
  const std::size_t ax = normalize_axis("concat", axis, first.size());
  std::vector<std::size_t> lens;
  std::size_t total_len = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != ax && s[i] != first[i]) throw ShapeError("concat: extents differ off the concat axis");
    }
    lens.push_back(s[ax]);
    total_len += s[ax];
  }
  Shape out_shape = first;
  out_shape[ax] = total_len;
  const AxisSplit sp = split_at(out_shape, ax);
  std::vector<double> y(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& x = parts[pi].data();
    const std::size_t width = lens[pi] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(o * width), width,
                  y.begin() + static_cast<std::ptrdiff_t>(o * total_len * sp.inner + offset * sp.inner));
    }
    offset += lens[pi];
  }
  check_finite("concat", y);
  auto out = std::make_shared<Impl>();
  out->shape = out_shape;
  out->data = std::move(y);
  Tape* tape = Tape::active();
  if (tape && std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); })) {
    out->requires_grad = true;
    out->is_leaf = false;
    Tape::Node node{"concat", {}, out, [sp, lens, total_len](const Tape::Node& n) {
                      const auto& gy = n.output->grad;
                      std::size_t off = 0;
                      for (std::size_t pi = 0; pi < lens.size(); ++pi) {
                        const std::size_t width = lens[pi] * sp.inner;
                        if (auto* g = grad_of(n, pi)) {
                          for (std::size_t o = 0; o < sp.outer; ++o) {
                            for (std::size_t i = 0; i < width; ++i) {
                              (*g)[o * width + i] += gy[o * total_len * sp.inner + off * sp.inner + i];
                            }
                          }
                        }
                        off += lens[pi];
                      }
                    }};
    for (const auto& p : parts) node.inputs.push_back(p.impl());
    tape->record(std::move(node));
  }
  return Tensor(std::move(out));
}

Tensor cumsum(const Tensor& a, int axis) {
  require_defined("cumsum", a);
  const std::size_t ax = normalize_axis("cumsum", axis, a.dim());
  const AxisSplit sp = split_at(a.shape(), ax);
  std::vector<double> y(a.data().begin(), a.data().end());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    double* base = y.data() + o * sp.len * sp.inner;
    for (std::size_t t = 1; t < sp.len; ++t) {
      for (std::size_t i = 0; i < sp.inner; ++i) base[t * sp.inner + i] += base[(t - 1) * sp.inner + i];
    }
  }
  return finish("cumsum", a.shape(), std::move(y), {a}, [sp](const Tape::Node& node) {
    auto* g = grad_of(node, 0);
    if (!g) return;
    const auto& gy = node.output->grad;
    std::vector<double> acc(sp.inner);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const std::size_t base = o * sp.len * sp.inner;
      for (std::size_t t = sp.len; t-- > 0;) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
          acc[i] += gy[base + t * sp.inner + i];
          (*g)[base + t * sp.inner + i] += acc[i];
        }
      }
    }
  });
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  require_defined("broadcast_to", a);
  const Shape& s = a.shape();
  if (s.size() > shape.size()) throw ShapeError("broadcast_to: target rank too small");
  const std::size_t lead = shape.size() - s.size();
  const auto st = strides_of(s);
  std::vector<std::size_t> src_strides(shape.size(), 0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == shape[lead + i]) {
      src_strides[lead + i] = st[i];
    } else if (s[i] != 1) {
      throw ShapeError("broadcast_to: cannot broadcast " + shape_str(s) + " to " + shape_str(shape));
    }
  }
  std::vector<double> y(shape_numel(shape));
  const auto& x = a.data();
  for_each_index(shape, src_strides, [&](std::size_t out, std::size_t src) { y[out] = x[src]; });
  return finish("broadcast_to", shape, std::move(y), {a}, [shape, src_strides](const Tape::Node& node) {
    auto* g = grad_of(node, 0);
    if (!g) return;
    const auto& gy = node.output->grad;
    for_each_index(shape, src_strides, [&](std::size_t out, std::size_t src) { (*g)[src] += gy[out]; });
  });
}

Tensor sum(const Tensor& a) {
  require_defined("sum", a);
  double total = 0.0;
  for (double v : a.data()) total += v;
  return finish("sum", {}, {total}, {a}, [](const Tape::Node& node) {
    auto* g = grad_of(node, 0);
    if (!g) return;
    const double gy = node.output->grad[0];
    for (double& v : *g) v += gy;
  });
}

Tensor mean(const Tensor& a) {
  require_defined("mean", a);
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  double total = 0.0;
  for (double v : a.data()) total += v;
  const double count = static_cast<double>(a.numel());
  return finish("mean", {}, {total / count}, {a}, [count](const Tape::Node& node) {
    auto* g = grad_of(node, 0);
    if (!g) return;
    const double gy = node.output->grad[0] / count;
    for (double& v : *g) v += gy;
  });
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  require_same_shape("mse", pred, target);
  if (pred.numel() == 0) throw ShapeError("mse: empty tensor");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = pred.data()[i] - target.data()[i];
    total += d * d;
  }
  const double count = static_cast<double>(pred.numel());
  return finish("mse", {}, {total / count}, {pred, target}, [count](const Tape::Node& node) {
    const auto& p = node.inputs[0]->data;
    const auto& t = node.inputs[1]->data;
    const double gy = node.output->grad[0] * 2.0 / count;
    if (auto* gp = grad_of(node, 0)) {
      for (std::size_t i = 0; i < p.size(); ++i) (*gp)[i] += gy * (p[i] - t[i]);
    }
    if (auto* gt = grad_of(node, 1)) {
      for (std::size_t i = 0; i < p.size(); ++i) (*gt)[i] -= gy * (p[i] - t[i]);
    }
  });
}

std::vector<std::uint8_t> causal_mask(std::size_t n, std::size_t m, std::ptrdiff_t offset) {
  std::vector<std::uint8_t> mask(n * m, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      mask[i * m + j] = static_cast<std::ptrdiff_t>(j) <= static_cast<std::ptrdiff_t>(i) + offset ? 1 : 0;
    }
  }
  return mask;
}

const std::vector<std::string>& primitive_names() {
  static const std::vector<std::string> names = {
      "matmul",  "add",        "sub",         "mul",       "div",     "exp",     "sigmoid",
      "log_sigmoid", "leaky_relu", "gelu",    "masked_softmax", "rms_normalize", "transpose", "reshape",
      "slice",   "concat",     "cumsum",      "broadcast_to", "scale", "sum",     "mean",
      "mse"};
  return names;
}

Tensor apply_primitive(std::string_view name, std::span<const Tensor> in, const PrimitiveArgs& args) {
  auto need = [&](std::size_t count) {
    if (in.size() != count) {
      throw ShapeError(std::string(name) + ": expected " + std::to_string(count) + " inputs, got " + std::to_string(in.size()));
    }
  };
  if (name == "matmul") return need(2), matmul(in[0], in[1]);
  if (name == "add") return need(2), add(in[0], in[1]);
  if (name == "sub") return need(2), sub(in[0], in[1]);
  if (name == "mul") return need(2), mul(in[0], in[1]);
  if (name == "div") return need(2), div(in[0], in[1]);
  if (name == "exp") return need(1), exp(in[0]);
  if (name == "sigmoid") return need(1), sigmoid(in[0]);
  if (name == "log_sigmoid") return need(1), log_sigmoid(in[0]);
  if (name == "leaky_relu") return need(1), leaky_relu(in[0], args.slope);
  if (name == "gelu") return need(1), gelu(in[0]);
  if (name == "masked_softmax") return need(1), masked_softmax(in[0], args.mask);
  if (name == "rms_normalize") return need(1), rms_normalize(in[0], args.eps);
  if (name == "transpose") return need(1), transpose(in[0], args.axis, args.axis1);
  if (name == "reshape") return need(1), reshape(in[0], args.shape);
  if (name == "slice") return need(1), slice(in[0], args.axis, args.begin, args.end);
  if (name == "concat") return concat(in, args.axis);
  if (name == "cumsum") return need(1), cumsum(in[0], args.axis);
  if (name == "broadcast_to") return need(1), broadcast_to(in[0], args.shape);
  if (name == "scale") return need(1), scale(in[0], args.factor);
  if (name == "sum") return need(1), sum(in[0]);
  if (name == "mean") return need(1), mean(in[0]);
  if (name == "mse") return need(2), mse(in[0], in[1]);
  throw std::invalid_argument("unknown primitive '" + std::string(name) + "'");
}

}  // namespace armattn::ops
