// SPDX-License-Identifier: Apache-2.0
//
// The five autoregressive attention mechanisms, each in a recurrent form
// (O(N) state update, one token at a time) and a parallel form (explicit
// masked N x N weights). Inputs are row-per-token N x d matrices; multi-head
// variants split the columns into head_count contiguous blocks.

#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace armattn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Vector = Eigen::VectorXd;

enum class AttnKind { StdSoftmax, Linear, ElementWise, GatedLinear, Fixed };

inline constexpr AttnKind kAllAttnKinds[] = {AttnKind::StdSoftmax, AttnKind::Linear, AttnKind::ElementWise,
                                             AttnKind::GatedLinear, AttnKind::Fixed};

std::string_view to_string(AttnKind kind);
/// Accepts the canonical names ("std_softmax", "linear", "elementwise",
/// "gated_linear", "fixed") and the short table labels ("std", "lin",
/// "elin", "glin").
std::optional<AttnKind> parse_attn_kind(std::string_view name);

struct AttnVariant {
  AttnKind kind = AttnKind::Linear;
  int head_count = 1;
  int head_dim = 1;

  int model_dim() const { return head_count * head_dim; }

  /// ElementWise always runs one head per channel.
  static AttnVariant make(AttnKind kind, int model_dim, int heads);
};

enum class KernelForm { Recurrent, Parallel };

namespace kernels {

/// Softmax attention, logits scaled by 1/sqrt(head_dim), causal.
Matrix std_softmax_recurrent(const Matrix& q, const Matrix& k, const Matrix& v, int heads);
Matrix std_softmax_parallel(const Matrix& q, const Matrix& k, const Matrix& v, int heads);

/// o_t = q_t sum_{i<=t} k_i^T v_i per head, no feature map, no denominator.
Matrix linear_recurrent(const Matrix& q, const Matrix& k, const Matrix& v, int heads);
Matrix linear_parallel(const Matrix& q, const Matrix& k, const Matrix& v, int heads);

/// o_t = sigmoid(q_t) * sum exp(k_i) v_i / sum exp(k_i), channel-wise.
Matrix elementwise_recurrent(const Matrix& q, const Matrix& k, const Matrix& v);
Matrix elementwise_parallel(const Matrix& q, const Matrix& k, const Matrix& v);

/// o_t = q_t sum_{i<=t} G_i k_i^T v_i with G_i = prod_{s<=i} sigmoid(gate_s).
/// `gate_logits` holds one logit per step, shared by all heads.
Matrix gated_linear_recurrent(const Matrix& q, const Matrix& k, const Matrix& v, const Vector& gate_logits, int heads);
Matrix gated_linear_parallel(const Matrix& q, const Matrix& k, const Matrix& v, const Vector& gate_logits, int heads);

/// o_t = sum_{i<=t} w_{t,i} v_i. `weights` is N_max x N_max; only the top-left
/// N x N lower triangle (diagonal included) is read.
Matrix fixed_recurrent(const Matrix& weights, const Matrix& v);
Matrix fixed_parallel(const Matrix& weights, const Matrix& v);

/// Cumulative log-gates: log G_i = sum_{s<=i} log sigmoid(gate_s).
Vector cumulative_log_gates(const Vector& gate_logits);

double log_sigmoid(double x);
double sigmoid(double x);

}  // namespace kernels

/// Everything one kernel call may need; unused fields are ignored.
struct KernelInputs {
  Matrix q, k, v;
  Vector gate_logits;
  Matrix fixed_weights;
  int heads = 1;
};

Matrix run_kernel(AttnKind kind, KernelForm form, const KernelInputs& in);

// Recurrent state for token-at-a-time decoding.

class LinearState {
 public:
  LinearState(int heads, int head_dim);
  /// Consumes one token; q, k, v are 1 x d rows. `decay` scales the new
  /// outer product (1 for plain linear attention).
  RowVector step(const RowVector& q, const RowVector& k, const RowVector& v, double decay = 1.0);
  const std::vector<Matrix>& state() const { return state_; }
  std::size_t steps() const { return steps_; }

 private:
  int heads_, head_dim_;
  std::vector<Matrix> state_;  // per head, head_dim x head_dim
  std::size_t steps_ = 0;
};

class GatedLinearState {
 public:
  GatedLinearState(int heads, int head_dim);
  RowVector step(const RowVector& q, const RowVector& k, const RowVector& v, double gate_logit);
  double log_gate() const { return log_gate_; }
  std::size_t steps() const { return inner_.steps(); }

 private:
  LinearState inner_;
  double log_gate_ = 0.0;
};

class ElementWiseState {
 public:
  explicit ElementWiseState(int dim);
  RowVector step(const RowVector& q, const RowVector& k, const RowVector& v);
  const RowVector& denominator() const { return den_; }
  std::size_t steps() const { return steps_; }

 private:
  RowVector num_, den_, max_;  // numerator/denominator scaled by exp(-max)
  std::size_t steps_ = 0;
};

class SoftmaxState {
 public:
  SoftmaxState(int heads, int head_dim);
  RowVector step(const RowVector& q, const RowVector& k, const RowVector& v);
  std::size_t steps() const { return keys_.size(); }

 private:
  int heads_, head_dim_;
  std::vector<RowVector> keys_, values_;
};

}  // namespace armattn
