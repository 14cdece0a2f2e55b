// SPDX-License-Identifier: Apache-2.0
//
// ARMA attention: an autoregressive attention output plus a moving-average
// term computed over token-shifted residuals r_j = v_{j+1} - o^AR_j.
//
// The MA weights are generated indirectly: the layer applies linear
// attention with weights beta_{t-1,j} = phi_q(q_{t-1}) . phi_k(k_j) to the
// residuals, never forming the implied error weights Theta. The inner product
// behind beta is averaged over the head width, and the phi scaling uses
// sqrt(head width). Element-wise attention uses one channel per head.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "armattn/kernels.hpp"
#include "armattn/rng.hpp"
#include "armattn/tensor.hpp"

namespace armattn {

struct ArmaConfig {
  double alpha = 0.05;        // key activation scale
  double leaky_slope = 0.02;  // query activation negative slope
  AttnVariant variant;
  bool share_wq = true;     // MA query reuses W_q
  bool wv_identity = true;  // V = X, no W_v parameters
  bool ma_enabled = true;   // ablation switch; false gives the plain AR layer

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;

  /// AR-only layer with its own W_v.
  static ArmaConfig autoregressive(AttnVariant variant);
  /// ARMA layer with the parameter-sharing scheme: W_q shared, W_v replaced
  /// by W_k^MA. Fixed attention keeps W_v since it has no keys to trade.
  static ArmaConfig with_ma(AttnVariant variant);
};

enum class MaForm { Linear, ElementWise };
MaForm ma_form_for(AttnKind kind);

struct MaParams {
  double alpha = 0.05;
  double leaky_slope = 0.02;
  int heads = 1;
  MaForm form = MaForm::Linear;

  static MaParams from(const ArmaConfig& config);
};

// Numeric (matrix) forms.

/// -LeakyReLU(-q / sqrt(width), slope), element-wise.
Matrix phi_q_ma(const Matrix& q, int width, double slope = 0.02);
/// sigmoid(alpha * k / sqrt(width)), element-wise.
Matrix phi_k_ma(const Matrix& k, int width, double alpha = 0.05);

/// Rows r_j = v_{j+1} - o^AR_j for j = 1..N-1; empty for N = 1.
Matrix token_shift_residual(const Matrix& v, const Matrix& o_ar);

/// Recurrent MA output, N x d, row 1 always zero. q_ma and k_ma are N x d
/// (the last row is never read); r is (N-1) x d.
Matrix ma_output(const Matrix& q_ma, const Matrix& k_ma, const Matrix& r, const MaParams& params);

// Differentiable forms on [B, N, d] tensors.

Tensor phi_q_ma(const Tensor& q, int width, double slope);
Tensor phi_k_ma(const Tensor& k, int width, double alpha);
Tensor token_shift_residual(const Tensor& v, const Tensor& o_ar);
Tensor ma_output(const Tensor& q_ma, const Tensor& k_ma, const Tensor& r, const MaParams& params);

/// Projection weights of one attention layer. Which members are defined
/// depends on the config; see AttentionWeights::init.
struct AttentionWeights {
  Tensor w_q, w_q_ma, w_k_ar, w_k_ma, w_v, w_o, w_g;
  Tensor fixed_ar, fixed_ma_q, fixed_ma_k;

  /// All present weights ~ N(0, init_std^2) except W_o, which uses out_std.
  static AttentionWeights init(const ArmaConfig& config, int model_dim, int max_tokens, Rng& rng, double init_std,
                               double out_std);

  /// (name, tensor) for every present weight, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named(const std::string& prefix) const;
  std::size_t param_count() const;
};

struct LayerRuntime {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;  // required when training with dropout > 0
};

struct ArmaLayerOutput {
  Tensor output;  // (o^AR + o^MA) W_o
  Tensor ar;      // o^AR before dropout
  Tensor ma;      // o^MA before dropout; undefined when the MA term is off
};

/// x: [B, N, d], already normalized.
ArmaLayerOutput arma_attention_forward(const Tensor& x, const AttentionWeights& weights, const ArmaConfig& config,
                                       const LayerRuntime& runtime = {});

inline Tensor arma_attention_layer(const Tensor& x, const AttentionWeights& weights, const ArmaConfig& config,
                                   const LayerRuntime& runtime = {}) {
  return arma_attention_forward(x, weights, config, runtime).output;
}

/// Inverted dropout with a constant keep-mask; identity when rate is 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

}  // namespace armattn
