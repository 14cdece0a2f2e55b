// SPDX-License-Identifier: Apache-2.0
//
// Differentiable versions of the attention kernels for [batch, N, d] tensors.
// Linear and gated attention run as scans (cumulative sums of per-step outer
// products, O(N) in sequence length); softmax, element-wise and fixed
// attention use the masked-matrix form. All outputs are exactly causal.

#pragma once

#include "armattn/kernels.hpp"
#include "armattn/tensor.hpp"

namespace armattn::attn {

/// [B, N, d] -> [B, h, N, d/h]
Tensor split_heads(const Tensor& x, int heads);
/// [B, h, N, dh] -> [B, N, h*dh]
Tensor merge_heads(const Tensor& x);

Tensor std_softmax(const Tensor& q, const Tensor& k, const Tensor& v, int heads);
Tensor linear(const Tensor& q, const Tensor& k, const Tensor& v, int heads);
Tensor elementwise(const Tensor& q, const Tensor& k, const Tensor& v);
/// gate_logits: [B, N, 1].
Tensor gated_linear(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& gate_logits, int heads);
/// weights: [N_max, N_max] table; v: [B, N, d].
Tensor fixed(const Tensor& weights, const Tensor& v);

/// Per-head scan o_t = q_t * sum_{i<=t} k_i^T v_i, shared by the linear,
/// gated and moving-average paths. q, k, v: [B, N, d].
Tensor linear_scan(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

/// Converts a [N, d] matrix into a [1, N, d] constant tensor and back.
Tensor to_tensor(const Matrix& m, bool requires_grad = false);
Matrix to_matrix(const Tensor& t, std::size_t batch_index = 0);

}  // namespace armattn::attn
