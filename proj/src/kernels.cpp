// SPDX-License-Identifier: Apache-2.0

#include "armattn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "armattn/tensor.hpp"

namespace armattn {

std::string_view to_string(AttnKind kind) {
  switch (kind) {
    case AttnKind::StdSoftmax: return "std_softmax";
    case AttnKind::Linear: return "linear";
    case AttnKind::ElementWise: return "elementwise";
    case AttnKind::GatedLinear: return "gated_linear";
    case AttnKind::Fixed: return "fixed";
  }
  return "unknown";
}

std::optional<AttnKind> parse_attn_kind(std::string_view name) {
  if (name == "std_softmax" || name == "std" || name == "softmax") return AttnKind::StdSoftmax;
  if (name == "linear" || name == "lin") return AttnKind::Linear;
  if (name == "elementwise" || name == "elin") return AttnKind::ElementWise;
  if (name == "gated_linear" || name == "glin" || name == "gated") return AttnKind::GatedLinear;
  if (name == "fixed") return AttnKind::Fixed;
  return std::nullopt;
}

AttnVariant AttnVariant::make(AttnKind kind, int model_dim, int heads) {
  if (model_dim <= 0 || heads <= 0) throw std::invalid_argument("attention dims must be positive");
  if (kind == AttnKind::ElementWise) return {kind, model_dim, 1};
  if (model_dim % heads != 0) {
    throw std::invalid_argument("model dim " + std::to_string(model_dim) + " not divisible by " + std::to_string(heads) +
                                " heads");
  }
  return {kind, heads, model_dim / heads};
}

namespace kernels {

namespace {

int checked_head_dim(const Matrix& q, const Matrix& k, const Matrix& v, int heads) {
  if (q.rows() == 0) throw std::invalid_argument("attention over an empty sequence");
  if (k.rows() != q.rows() || v.rows() != q.rows() || k.cols() != q.cols() || v.cols() != q.cols()) {
    throw ShapeError("q, k, v must share shape");
  }
  if (heads <= 0 || q.cols() % heads != 0) throw ShapeError("model dim not divisible by head count");
  return static_cast<int>(q.cols()) / heads;
}

void check_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NumericalError(std::string(what) + " produced a non-finite value");
}

}  // namespace

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double log_sigmoid(double x) { return x < 0.0 ? x - std::log1p(std::exp(x)) : -std::log1p(std::exp(-x)); }

Vector cumulative_log_gates(const Vector& gate_logits) {
  Vector out(gate_logits.size());
  double acc = 0.0;
  for (Eigen::Index t = 0; t < gate_logits.size(); ++t) {
    acc += log_sigmoid(gate_logits[t]);
    out[t] = acc;
  }
  return out;
}

Matrix std_softmax_recurrent(const Matrix& q, const Matrix& k, const Matrix& v, int heads) {
  const int hd = checked_head_dim(q, k, v, heads);
  SoftmaxState state(heads, hd);
  Matrix out(q.rows(), q.cols());
  for (Eigen::Index t = 0; t < q.rows(); ++t) out.row(t) = state.step(q.row(t), k.row(t), v.row(t));
  return out;
}

Matrix std_softmax_parallel(const Matrix& q, const Matrix& k, const Matrix& v, int heads) {
  const int hd = checked_head_dim(q, k, v, heads);
  const Eigen::Index n = q.rows();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  Matrix out(n, q.cols());
  for (int h = 0; h < heads; ++h) {
    const auto cols = Eigen::seqN(h * hd, hd);
    Matrix logits = q(Eigen::all, cols) * k(Eigen::all, cols).transpose() * inv_sqrt;
    if (!logits.allFinite()) throw NumericalError("softmax logits are non-finite");
    Matrix weights = Matrix::Zero(n, n);
    for (Eigen::Index t = 0; t < n; ++t) {
      const double mx = logits.row(t).head(t + 1).maxCoeff();
      double total = 0.0;
      for (Eigen::Index i = 0; i <= t; ++i) {
        weights(t, i) = std::exp(logits(t, i) - mx);
        total += weights(t, i);
      }
      weights.row(t) /= total;
    }
    out(Eigen::all, cols) = weights * v(Eigen::all, cols);
  }
  return out;
}

Matrix linear_recurrent(const Matrix& q, const Matrix& k, const Matrix& v, int heads) {
  const int hd = checked_head_dim(q, k, v, heads);
  LinearState state(heads, hd);
  Matrix out(q.rows(), q.cols());
  for (Eigen::Index t = 0; t < q.rows(); ++t) out.row(t) = state.step(q.row(t), k.row(t), v.row(t));
  check_finite(out, "linear attention");
  return out;
}

Matrix linear_parallel(const Matrix& q, const Matrix& k, const Matrix& v, int heads) {
  const int hd = checked_head_dim(q, k, v, heads);
  Matrix out(q.rows(), q.cols());
  for (int h = 0; h < heads; ++h) {
    const auto cols = Eigen::seqN(h * hd, hd);
    Matrix scores = q(Eigen::all, cols) * k(Eigen::all, cols).transpose();
    scores.triangularView<Eigen::StrictlyUpper>().setZero();
    out(Eigen::all, cols) = scores * v(Eigen::all, cols);
  }
  check_finite(out, "linear attention");
  return out;
}

Matrix elementwise_recurrent(const Matrix& q, const Matrix& k, const Matrix& v) {
  checked_head_dim(q, k, v, 1);
  ElementWiseState state(static_cast<int>(q.cols()));
  Matrix out(q.rows(), q.cols());
  for (Eigen::Index t = 0; t < q.rows(); ++t) out.row(t) = state.step(q.row(t), k.row(t), v.row(t));
  check_finite(out, "element-wise attention");
  return out;
}

Matrix elementwise_parallel(const Matrix& q, const Matrix& k, const Matrix& v) {
  checked_head_dim(q, k, v, 1);
  const Eigen::Index n = q.rows();
  Matrix out(n, q.cols());
  for (Eigen::Index c = 0; c < q.cols(); ++c) {
    Matrix weights = Matrix::Zero(n, n);
    for (Eigen::Index t = 0; t < n; ++t) {
      const double mx = k.col(c).head(t + 1).maxCoeff();
      double total = 0.0;
      for (Eigen::Index i = 0; i <= t; ++i) {
        weights(t, i) = std::exp(k(i, c) - mx);
        total += weights(t, i);
      }
      weights.row(t) /= total;
    }
    const Vector mixed = weights * v.col(c);
    for (Eigen::Index t = 0; t < n; ++t) out(t, c) = sigmoid(q(t, c)) * mixed[t];
  }
  check_finite(out, "element-wise attention");
  return out;
}

Matrix gated_linear_recurrent(const Matrix& q, const Matrix& k, const Matrix& v, const Vector& gate_logits, int heads) {
  const int hd = checked_head_dim(q, k, v, heads);
  if (gate_logits.size() != q.rows()) throw ShapeError("one gate logit per step required");
  GatedLinearState state(heads, hd);
  Matrix out(q.rows(), q.cols());
  for (Eigen::Index t = 0; t < q.rows(); ++t) out.row(t) = state.step(q.row(t), k.row(t), v.row(t), gate_logits[t]);
  check_finite(out, "gated linear attention");
  return out;
}

Matrix gated_linear_parallel(const Matrix& q, const Matrix& k, const Matrix& v, const Vector& gate_logits, int heads) {
  const int hd = checked_head_dim(q, k, v, heads);
  if (gate_logits.size() != q.rows()) throw ShapeError("one gate logit per step required");
  const Vector gates = cumulative_log_gates(gate_logits).array().exp();
  Matrix out(q.rows(), q.cols());
  for (int h = 0; h < heads; ++h) {
    const auto cols = Eigen::seqN(h * hd, hd);
    Matrix scores = q(Eigen::all, cols) * k(Eigen::all, cols).transpose();
    scores.triangularView<Eigen::StrictlyUpper>().setZero();
    scores = scores * gates.asDiagonal();
    out(Eigen::all, cols) = scores * v(Eigen::all, cols);
  }
  check_finite(out, "gated linear attention");
  return out;
}

namespace {
void check_fixed(const Matrix& weights, const Matrix& v) {
  if (v.rows() == 0) throw std::invalid_argument("attention over an empty sequence");
  if (v.rows() > weights.rows() || v.rows() > weights.cols()) {
    throw std::invalid_argument("sequence length " + std::to_string(v.rows()) + " exceeds fixed table size " +
                                std::to_string(weights.rows()));
  }
}
}  // namespace

Matrix fixed_recurrent(const Matrix& weights, const Matrix& v) {
  check_fixed(weights, v);
  Matrix out = Matrix::Zero(v.rows(), v.cols());
  for (Eigen::Index t = 0; t < v.rows(); ++t) {
    for (Eigen::Index i = 0; i <= t; ++i) out.row(t) += weights(t, i) * v.row(i);
  }
  return out;
}

Matrix fixed_parallel(const Matrix& weights, const Matrix& v) {
  check_fixed(weights, v);
  const Eigen::Index n = v.rows();
  Matrix masked = weights.topLeftCorner(n, n);
  masked.triangularView<Eigen::StrictlyUpper>().setZero();
  return masked * v;
}

}  // namespace kernels

Matrix run_kernel(AttnKind kind, KernelForm form, const KernelInputs& in) {
  const bool rec = form == KernelForm::Recurrent;
  switch (kind) {
    case AttnKind::StdSoftmax:
      return rec ? kernels::std_softmax_recurrent(in.q, in.k, in.v, in.heads)
                 : kernels::std_softmax_parallel(in.q, in.k, in.v, in.heads);
    case AttnKind::Linear:
      return rec ? kernels::linear_recurrent(in.q, in.k, in.v, in.heads) : kernels::linear_parallel(in.q, in.k, in.v, in.heads);
    case AttnKind::ElementWise:
      return rec ? kernels::elementwise_recurrent(in.q, in.k, in.v) : kernels::elementwise_parallel(in.q, in.k, in.v);
    case AttnKind::GatedLinear:
      return rec ? kernels::gated_linear_recurrent(in.q, in.k, in.v, in.gate_logits, in.heads)
                 : kernels::gated_linear_parallel(in.q, in.k, in.v, in.gate_logits, in.heads);
    case AttnKind::Fixed:
      return rec ? kernels::fixed_recurrent(in.fixed_weights, in.v) : kernels::fixed_parallel(in.fixed_weights, in.v);
  }
  throw std::invalid_argument("unknown attention kind");
}

LinearState::LinearState(int heads, int head_dim)
    : heads_(heads), head_dim_(head_dim), state_(static_cast<std::size_t>(heads), Matrix::Zero(head_dim, head_dim)) {}

RowVector LinearState::step(const RowVector& q, const RowVector& k, const RowVector& v, double decay) {
  RowVector out(heads_ * head_dim_);
  for (int h = 0; h < heads_; ++h) {
    const auto cols = Eigen::seqN(h * head_dim_, head_dim_);
    auto& s = state_[static_cast<std::size_t>(h)];
    s.noalias() += decay * k(cols).transpose() * v(cols);
    out(cols) = q(cols) * s;
  }
  ++steps_;
  return out;
}

GatedLinearState::GatedLinearState(int heads, int head_dim) : inner_(heads, head_dim) {}

RowVector GatedLinearState::step(const RowVector& q, const RowVector& k, const RowVector& v, double gate_logit) {
  log_gate_ += kernels::log_sigmoid(gate_logit);
  return inner_.step(q, k, v, std::exp(log_gate_));
}

ElementWiseState::ElementWiseState(int dim)
    : num_(RowVector::Zero(dim)),
      den_(RowVector::Zero(dim)),
      max_(RowVector::Constant(dim, -std::numeric_limits<double>::infinity())) {}

RowVector ElementWiseState::step(const RowVector& q, const RowVector& k, const RowVector& v) {
  RowVector out(q.size());
  for (Eigen::Index c = 0; c < q.size(); ++c) {
    const double new_max = std::max(max_[c], k[c]);
    const double rescale = steps_ == 0 ? 0.0 : std::exp(max_[c] - new_max);
    const double w = std::exp(k[c] - new_max);
    num_[c] = num_[c] * rescale + w * v[c];
    den_[c] = den_[c] * rescale + w;
    max_[c] = new_max;
    out[c] = kernels::sigmoid(q[c]) * num_[c] / den_[c];
  }
  ++steps_;
  return out;
}

SoftmaxState::SoftmaxState(int heads, int head_dim) : heads_(heads), head_dim_(head_dim) {}

RowVector SoftmaxState::step(const RowVector& q, const RowVector& k, const RowVector& v) {
  keys_.push_back(k);
  values_.push_back(v);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim_));
  RowVector out = RowVector::Zero(heads_ * head_dim_);
  std::vector<double> logits(keys_.size());
  for (int h = 0; h < heads_; ++h) {
    const auto cols = Eigen::seqN(h * head_dim_, head_dim_);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < keys_.size(); ++i) {
      logits[i] = q(cols).dot(keys_[i](cols)) * inv_sqrt;
      if (!std::isfinite(logits[i])) throw NumericalError("softmax logits are non-finite");
      mx = std::max(mx, logits[i]);
    }
    double den = 0.0;
    for (std::size_t i = 0; i < keys_.size(); ++i) {
      const double w = std::exp(logits[i] - mx);
      den += w;
      out(cols) += w * values_[i](cols);
    }
    out(cols) /= den;
  }
  return out;
}

}  // namespace armattn
