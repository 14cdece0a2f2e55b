// SPDX-License-Identifier: Apache-2.0
//
// Whole-library self checks used by the CLI and the acceptance suite.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "armattn/grad_check.hpp"
#include "armattn/model.hpp"

namespace armattn {

struct GradCheckRow {
  std::string target;  // "layer" or "model"
  AttnKind kind = AttnKind::Linear;
  bool ma_enabled = true;
  GradCheckReport report;
};

/// Options used by gradcheck_all: h = 1e-5, relative tolerance 1e-4.
GradCheckOptions default_gradcheck_options();

/// Full attention layer (B=2, N=5, d=8) and an m=1 model (d=8, N=4) for
/// every variant with the MA term on and off.
std::vector<GradCheckRow> gradcheck_all(std::uint64_t seed, const GradCheckOptions& options = default_gradcheck_options());

GradCheckReport gradcheck_layer(AttnKind kind, bool ma_enabled, std::uint64_t seed, const GradCheckOptions& options);
GradCheckReport gradcheck_model(AttnKind kind, bool ma_enabled, std::uint64_t seed, const GradCheckOptions& options);

struct ParamRow {
  AttnKind kind = AttnKind::Linear;
  std::size_t ar = 0, arma = 0;
};

/// AR and ARMA parameter counts of `base` for every variant.
std::vector<ParamRow> param_table(ModelConfig base);

struct EquivalenceRow {
  AttnKind kind = AttnKind::Linear;
  int cases = 0;
  double max_rel_err = 0.0;  // max |rec - par| / max |par| over cases
  bool causal = true;        // outputs before a perturbed token unchanged, both forms
  double recurrent_ms = 0.0, parallel_ms = 0.0;
};

/// Random cases with N in [1, max_n], d = heads * head_dim (element-wise
/// uses d channels).
std::vector<EquivalenceRow> bench_equivalence(int cases, int max_n, int d, int heads, std::uint64_t seed);

}  // namespace armattn
