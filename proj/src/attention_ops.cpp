// SPDX-License-Identifier: Apache-2.0

#include "armattn/attention_ops.hpp"

#include <cmath>

#include "armattn/ops.hpp"

namespace armattn::attn {

namespace {
void require_bnd(const Tensor& t, const char* what) {
  if (t.dim() != 3) throw ShapeError(std::string(what) + " must be [batch, N, d], got " + shape_str(t.shape()));
  if (t.size(1) == 0) throw std::invalid_argument("attention over an empty sequence");
}

void require_qkv(const Tensor& q, const Tensor& k, const Tensor& v) {
  require_bnd(q, "q");
  if (q.shape() != k.shape() || q.shape() != v.shape()) throw ShapeError("q, k, v must share shape");
}
}  // namespace

Tensor split_heads(const Tensor& x, int heads) {
  require_bnd(x, "input");
  const std::size_t b = x.size(0), n = x.size(1), d = x.size(2);
  const auto h = static_cast<std::size_t>(heads);
  if (heads <= 0 || d % h != 0) throw ShapeError("model dim not divisible by head count");
  return ops::transpose(ops::reshape(x, {b, n, h, d / h}), 1, 2);
}

Tensor merge_heads(const Tensor& x) {
  if (x.dim() != 4) throw ShapeError("merge_heads expects [B, h, N, dh]");
  const std::size_t b = x.size(0), h = x.size(1), n = x.size(2), dh = x.size(3);
  return ops::reshape(ops::transpose(x, 1, 2), {b, n, h * dh});
}

Tensor std_softmax(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
  require_qkv(q, k, v);
  const std::size_t n = q.size(1);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.size(2) / static_cast<std::size_t>(heads)));
  Tensor qh = split_heads(q, heads), kh = split_heads(k, heads), vh = split_heads(v, heads);
  Tensor logits = ops::scale(ops::matmul(qh, ops::transpose(kh, -1, -2)), inv_sqrt);
  Tensor weights = ops::masked_softmax(logits, ops::causal_mask(n, n));
  return merge_heads(ops::matmul(weights, vh));
}

Tensor linear_scan(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
  require_qkv(q, k, v);
  Tensor qh = split_heads(q, heads), kh = split_heads(k, heads), vh = split_heads(v, heads);
  const std::size_t n = qh.size(2);
  // sum_{j<=t} (q_t . k_j) v_j, i.e. the running state S_t = sum k_j v_j^T read by q_t.
  Tensor scores = ops::matmul(qh, ops::transpose(kh, -1, -2));
  const auto mask = ops::causal_mask(n, n);
  Tensor m = Tensor::from({n, n}, std::vector<double>(mask.begin(), mask.end()));
  return merge_heads(ops::matmul(ops::mul(scores, ops::broadcast_to(m, scores.shape())), vh));
}

Tensor linear(const Tensor& q, const Tensor& k, const Tensor& v, int heads) { return linear_scan(q, k, v, heads); }

Tensor gated_linear(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& gate_logits, int heads) {
  require_qkv(q, k, v);
  if (gate_logits.dim() != 3 || gate_logits.size(0) != q.size(0) || gate_logits.size(1) != q.size(1) ||
      gate_logits.size(2) != 1) {
    throw ShapeError("gate logits must be [batch, N, 1]");
  }
  // G_i = exp(sum_{s<=i} log sigmoid(g_s)); applied to k_i it scales k_i^T v_i.
  Tensor gates = ops::exp(ops::cumsum(ops::log_sigmoid(gate_logits), 1));
  Tensor gated_k = ops::mul(k, ops::broadcast_to(gates, k.shape()));
  return linear_scan(q, gated_k, v, heads);
}

Tensor elementwise(const Tensor& q, const Tensor& k, const Tensor& v) {
  require_qkv(q, k, v);
  const std::size_t b = q.size(0), n = q.size(1), d = q.size(2);
  // Per channel, row t holds softmax over k_1..k_t; the row-max shift only
  // sees visible entries, so it stays causal.
  Tensor logits = ops::broadcast_to(ops::reshape(ops::transpose(k, 1, 2), {b, d, 1, n}), {b, d, n, n});
  Tensor weights = ops::masked_softmax(logits, ops::causal_mask(n, n));
  Tensor mixed = ops::matmul(weights, ops::reshape(ops::transpose(v, 1, 2), {b, d, n, 1}));
  Tensor averaged = ops::transpose(ops::reshape(mixed, {b, d, n}), 1, 2);
  return ops::mul(ops::sigmoid(q), averaged);
}

Tensor fixed(const Tensor& weights, const Tensor& v) {
  require_bnd(v, "v");
  const std::size_t n = v.size(1);
  if (weights.dim() != 2 || n > weights.size(0) || n > weights.size(1)) {
    throw std::invalid_argument("sequence length " + std::to_string(n) + " exceeds fixed table size");
  }
  const auto mask = ops::causal_mask(n, n);
  std::vector<double> mask_values(mask.begin(), mask.end());
  Tensor table = ops::slice(ops::slice(weights, 0, 0, n), 1, 0, n);
  Tensor masked = ops::mul(table, Tensor::from({n, n}, std::move(mask_values)));
  // o = (W . M) v, computed as v^T (W . M)^T to keep the shared operand on the right.
  Tensor out_t = ops::matmul(ops::transpose(v, 1, 2), ops::transpose(masked, 0, 1));
  return ops::transpose(out_t, 1, 2);
}

Tensor to_tensor(const Matrix& m, bool requires_grad) {
  std::vector<double> values(m.data(), m.data() + m.size());
  return Tensor::from({1, static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(values),
                      requires_grad);
}

Matrix to_matrix(const Tensor& t, std::size_t batch_index) {
  if (t.dim() != 3) throw ShapeError("to_matrix expects [batch, N, d]");
  const std::size_t n = t.size(1), d = t.size(2);
  if (batch_index >= t.size(0)) throw ShapeError("batch index out of range");
  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  std::copy_n(t.data().data() + batch_index * n * d, n * d, m.data());
  return m;
}

}  // namespace armattn::attn
