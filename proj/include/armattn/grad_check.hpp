// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "armattn/tensor.hpp"

namespace armattn {

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  /// Tensor and flat index of the worst entry.
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  /// Denominator floor so near-zero gradients compare absolutely.
  double abs_floor = 1e-8;
  /// Also floor the denominator at noise / tolerance, where noise is the
  /// round-off of the central difference: the larger of 2 eps_mach |f| / h and
  /// the observed spread between the quotients at steps h and 2h. Gradients
  /// below that noise cannot be resolved and must agree to within it instead.
  bool roundoff_floor = true;
  /// Check at most this many entries per tensor (evenly strided); 0 = all.
  std::size_t max_entries_per_tensor = 0;
};

/// Scalar-valued function of the tensors passed to grad_check. It must build
/// its graph from those same tensor handles.
using ScalarFn = std::function<Tensor()>;

/// Compares the tape gradient of `f` with respect to each of `wrt` against
/// central differences. Throws std::runtime_error if `f` is not
/// deterministic (two evaluations at the same point disagree).
GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensor> wrt, const GradCheckOptions& options = {});

/// Single-input form: f maps x to a scalar (or any tensor, summed).
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step, double tolerance);

}  // namespace armattn
