// SPDX-License-Identifier: Apache-2.0

#include "armattn/arma.hpp"

#include <cmath>
#include <stdexcept>

#include "armattn/attention_ops.hpp"
#include "armattn/ops.hpp"

namespace armattn {

void ArmaConfig::validate() const {
  if (!(alpha > 0.0)) throw std::invalid_argument("arma.alpha must be > 0");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw std::invalid_argument("arma.leaky_slope must lie in (0, 1)");
  if (variant.head_count <= 0 || variant.head_dim <= 0) throw std::invalid_argument("arma.variant has empty heads");
  if (variant.kind == AttnKind::ElementWise && variant.head_dim != 1) {
    throw std::invalid_argument("arma.variant: element-wise attention needs head_dim 1");
  }
}

ArmaConfig ArmaConfig::autoregressive(AttnVariant variant) {
  ArmaConfig c;
  c.variant = variant;
  c.ma_enabled = false;
  c.wv_identity = false;
  return c;
}

ArmaConfig ArmaConfig::with_ma(AttnVariant variant) {
  ArmaConfig c;
  c.variant = variant;
  c.ma_enabled = true;
  c.wv_identity = variant.kind != AttnKind::Fixed;
  return c;
}

MaForm ma_form_for(AttnKind kind) { return kind == AttnKind::ElementWise ? MaForm::ElementWise : MaForm::Linear; }

MaParams MaParams::from(const ArmaConfig& config) {
  return {config.alpha, config.leaky_slope, config.variant.head_count, ma_form_for(config.variant.kind)};
}

namespace {

int ma_width(const MaParams& p, std::size_t model_dim) {
  if (p.form == MaForm::ElementWise) return 1;
  if (p.heads <= 0 || model_dim % static_cast<std::size_t>(p.heads) != 0) {
    throw ShapeError("model dim not divisible by MA head count");
  }
  return static_cast<int>(model_dim) / p.heads;
}

}  // namespace

Matrix phi_q_ma(const Matrix& q, int width, double slope) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(width));
  return q.unaryExpr([=](double x) {
    const double y = -x * inv;
    return -(y > 0.0 ? y : slope * y);
  });
}

Matrix phi_k_ma(const Matrix& k, int width, double alpha) {
  const double s = alpha / std::sqrt(static_cast<double>(width));
  return k.unaryExpr([=](double x) { return kernels::sigmoid(s * x); });
}

Matrix token_shift_residual(const Matrix& v, const Matrix& o_ar) {
  if (v.rows() < 1) throw std::invalid_argument("token shift needs at least one token");
  if (v.rows() != o_ar.rows() || v.cols() != o_ar.cols()) throw ShapeError("v and o_ar must share shape");
  const Eigen::Index n = v.rows();
  return v.bottomRows(n - 1) - o_ar.topRows(n - 1);
}

Matrix ma_output(const Matrix& q_ma, const Matrix& k_ma, const Matrix& r, const MaParams& params) {
  const Eigen::Index n = q_ma.rows(), d = q_ma.cols();
  if (n == 0) throw std::invalid_argument("MA output over an empty sequence");
  if (k_ma.rows() != n || k_ma.cols() != d) throw ShapeError("q_ma and k_ma must share shape");
  if (r.rows() != n - 1 || (n > 1 && r.cols() != d)) throw ShapeError("residuals must be (N-1) x d");
  const int width = ma_width(params, static_cast<std::size_t>(d));
  const Matrix pq = phi_q_ma(q_ma, width, params.leaky_slope);
  const Matrix pk = phi_k_ma(k_ma, width, params.alpha);

  Matrix out = Matrix::Zero(n, d);
  if (params.form == MaForm::ElementWise) {
    RowVector acc = RowVector::Zero(d);
    for (Eigen::Index t = 1; t < n; ++t) {
      acc += pk.row(t - 1).cwiseProduct(r.row(t - 1));
      out.row(t) = pq.row(t - 1).cwiseProduct(acc);
    }
  } else {
    LinearState state(params.heads, width);
    const double mean_scale = 1.0 / static_cast<double>(width);
    for (Eigen::Index t = 1; t < n; ++t) {
      out.row(t) = mean_scale * state.step(pq.row(t - 1), pk.row(t - 1), r.row(t - 1));
    }
  }
  if (!out.allFinite()) throw NumericalError("MA output is non-finite");
  return out;
}

Tensor phi_q_ma(const Tensor& q, int width, double slope) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(width));
  return ops::scale(ops::leaky_relu(ops::scale(q, -inv), slope), -1.0);
}

Tensor phi_k_ma(const Tensor& k, int width, double alpha) {
  return ops::sigmoid(ops::scale(k, alpha / std::sqrt(static_cast<double>(width))));
}

Tensor token_shift_residual(const Tensor& v, const Tensor& o_ar) {
  if (v.dim() != 3 || v.shape() != o_ar.shape()) throw ShapeError("v and o_ar must share a [B, N, d] shape");
  const std::size_t n = v.size(1);
  if (n < 1) throw std::invalid_argument("token shift needs at least one token");
  return ops::sub(ops::slice(v, 1, 1, n), ops::slice(o_ar, 1, 0, n - 1));
}

Tensor ma_output(const Tensor& q_ma, const Tensor& k_ma, const Tensor& r, const MaParams& params) {
  if (q_ma.dim() != 3 || q_ma.shape() != k_ma.shape()) throw ShapeError("q_ma and k_ma must share a [B, N, d] shape");
  const std::size_t b = q_ma.size(0), n = q_ma.size(1), d = q_ma.size(2);
  if (n == 0) throw std::invalid_argument("MA output over an empty sequence");
  if (r.dim() != 3 || r.size(0) != b || r.size(1) != n - 1 || r.size(2) != d) {
    throw ShapeError("residuals must be [B, N-1, d]");
  }
  if (n == 1) return Tensor::zeros({b, 1, d});
  const int width = ma_width(params, d);
  Tensor pq = phi_q_ma(ops::slice(q_ma, 1, 0, n - 1), width, params.leaky_slope);
  Tensor pk = phi_k_ma(ops::slice(k_ma, 1, 0, n - 1), width, params.alpha);
  Tensor shifted;
  if (params.form == MaForm::ElementWise) {
    shifted = ops::mul(pq, ops::cumsum(ops::mul(pk, r), 1));
  } else {
    shifted = ops::scale(attn::linear_scan(pq, pk, r, params.heads), 1.0 / static_cast<double>(width));
  }
  const Tensor parts[] = {Tensor::zeros({b, 1, d}), shifted};
  return ops::concat(parts, 1);
}

AttentionWeights AttentionWeights::init(const ArmaConfig& config, int model_dim, int max_tokens, Rng& rng,
                                        double init_std, double out_std) {
  config.validate();
  if (config.variant.model_dim() != model_dim) throw std::invalid_argument("variant dims do not match model dim");
  const auto d = static_cast<std::size_t>(model_dim);
  const auto nmax = static_cast<std::size_t>(max_tokens);
  auto normal = [&rng](Shape shape, double stddev) {
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = rng.normal(0.0, stddev);
    return Tensor::from(std::move(shape), std::move(values), true);
  };
  const bool fixed = config.variant.kind == AttnKind::Fixed;
  AttentionWeights w;
  if (!fixed) {
    w.w_q = normal({d, d}, init_std);
    w.w_k_ar = normal({d, d}, init_std);
    if (config.ma_enabled) {
      if (!config.share_wq) w.w_q_ma = normal({d, d}, init_std);
      w.w_k_ma = normal({d, d}, init_std);
    }
  }
  if (!config.wv_identity) w.w_v = normal({d, d}, init_std);
  if (config.variant.kind == AttnKind::GatedLinear) w.w_g = normal({d, 1}, init_std);
  if (fixed) {
    w.fixed_ar = normal({nmax, nmax}, init_std);
    if (config.ma_enabled) {
      w.fixed_ma_q = normal({nmax, d}, init_std);
      w.fixed_ma_k = normal({nmax, d}, init_std);
    }
  }
  w.w_o = normal({d, d}, out_std);
  return w;
}

std::vector<std::pair<std::string, Tensor>> AttentionWeights::named(const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto add = [&](const char* name, const Tensor& t) {
    if (t.defined()) out.emplace_back(prefix + "." + name, t);
  };
  add("w_q", w_q);
  add("w_q_ma", w_q_ma);
  add("w_k_ar", w_k_ar);
  add("w_k_ma", w_k_ma);
  add("w_v", w_v);
  add("w_g", w_g);
  add("fixed_ar", fixed_ar);
  add("fixed_ma_q", fixed_ma_q);
  add("fixed_ma_k", fixed_ma_k);
  add("w_o", w_o);
  return out;
}

std::size_t AttentionWeights::param_count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : named("")) total += t.numel();
  return total;
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout rate must be < 1");
  std::vector<double> mask(x.numel());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  return ops::mul(x, Tensor::from(x.shape(), std::move(mask)));
}

ArmaLayerOutput arma_attention_forward(const Tensor& x, const AttentionWeights& w, const ArmaConfig& config,
                                       const LayerRuntime& runtime) {
  if (x.dim() != 3) throw ShapeError("attention input must be [B, N, d]");
  const std::size_t b = x.size(0), n = x.size(1), d = x.size(2);
  if (n == 0) throw std::invalid_argument("attention over an empty sequence");
  const AttnVariant& var = config.variant;
  if (static_cast<std::size_t>(var.model_dim()) != d) throw ShapeError("input width does not match the variant");

  const Tensor v = config.wv_identity ? x : ops::matmul(x, w.w_v);
  Tensor q;
  ArmaLayerOutput out;
  if (var.kind == AttnKind::Fixed) {
    out.ar = attn::fixed(w.fixed_ar, v);
  } else {
    q = ops::matmul(x, w.w_q);
    const Tensor k = ops::matmul(x, w.w_k_ar);
    switch (var.kind) {
      case AttnKind::StdSoftmax: out.ar = attn::std_softmax(q, k, v, var.head_count); break;
      case AttnKind::Linear: out.ar = attn::linear(q, k, v, var.head_count); break;
      case AttnKind::ElementWise: out.ar = attn::elementwise(q, k, v); break;
      case AttnKind::GatedLinear: out.ar = attn::gated_linear(q, k, v, ops::matmul(x, w.w_g), var.head_count); break;
      case AttnKind::Fixed: break;
    }
  }

  if (config.ma_enabled && n >= 2) {
    const Tensor r = token_shift_residual(v, out.ar);
    Tensor q_ma, k_ma;
    if (var.kind == AttnKind::Fixed) {
      q_ma = ops::broadcast_to(ops::slice(w.fixed_ma_q, 0, 0, n), {b, n, d});
      k_ma = ops::broadcast_to(ops::slice(w.fixed_ma_k, 0, 0, n), {b, n, d});
    } else {
      q_ma = config.share_wq ? q : ops::matmul(x, w.w_q_ma);
      k_ma = ops::matmul(x, w.w_k_ma);
    }
    out.ma = ma_output(q_ma, k_ma, r, MaParams::from(config));
  }

  const bool drop = runtime.training && runtime.dropout > 0.0;
  if (drop && runtime.rng == nullptr) throw std::invalid_argument("dropout needs an rng");
  Tensor mixed = drop ? dropout(out.ar, runtime.dropout, *runtime.rng) : out.ar;
  if (out.ma.defined()) mixed = ops::add(mixed, drop ? dropout(out.ma, runtime.dropout, *runtime.rng) : out.ma);
  out.output = ops::matmul(mixed, w.w_o);
  return out;
}

}  // namespace armattn
