// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Every primitive validates shapes, rejects
// non-finite results, and records its adjoint on the active tape when any
// input requires a gradient.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "armattn/tensor.hpp"

namespace armattn::ops {

/// a: [..., n, k]; b: [k, m] (shared across the batch) or [..., k, m].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor exp(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log_sigmoid(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
/// tanh approximation, as in GPT-2.
Tensor gelu(const Tensor& a);

/// Softmax over the last axis of a [..., n, m] tensor. `mask` is an n*m
/// row-major table (1 = visible) shared by every leading index; masked
/// entries get exactly zero weight. Every row needs a visible entry.
Tensor masked_softmax(const Tensor& a, std::span<const std::uint8_t> mask);

/// x / sqrt(mean(x^2) + eps) over the last axis.
Tensor rms_normalize(const Tensor& a, double eps = 1e-8);

Tensor transpose(const Tensor& a, int axis0, int axis1);
Tensor reshape(const Tensor& a, Shape shape);
/// Elements [begin, end) along `axis`.
Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor cumsum(const Tensor& a, int axis);
/// Right-aligned broadcast: each source extent equals the target or is 1;
/// missing leading axes are added.
Tensor broadcast_to(const Tensor& a, const Shape& shape);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// mean((pred - target)^2).
Tensor mse(const Tensor& pred, const Tensor& target);

/// Causal mask table: entry (i, j) visible iff j <= i + offset.
std::vector<std::uint8_t> causal_mask(std::size_t n, std::size_t m, std::ptrdiff_t offset = 0);

/// Extra scalar/shape arguments for the by-name dispatcher.
struct PrimitiveArgs {
  double slope = 0.02;
  double factor = 1.0;
  double eps = 1e-8;
  int axis = -1;
  int axis1 = -2;
  std::size_t begin = 0;
  std::size_t end = 0;
  Shape shape;
  std::vector<std::uint8_t> mask;
};

/// Names accepted by apply_primitive, in a stable order.
const std::vector<std::string>& primitive_names();

/// Dispatches a primitive by name. Throws std::invalid_argument for an
/// unknown name.
Tensor apply_primitive(std::string_view name, std::span<const Tensor> inputs, const PrimitiveArgs& args = {});

}  // namespace armattn::ops
