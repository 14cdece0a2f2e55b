// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only patch forecaster. Each channel is an independent batch item:
// patches [B, N, L_P] -> linear embedding + learned positions -> RMSNorm ->
// m pre-norm blocks (ARMA attention, GELU MLP) -> RMSNorm -> linear head
// predicting the next patch at every position.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "armattn/arma.hpp"
#include "json.hpp"

namespace armattn {

/// round(16 sqrt(C)) rounded up to a multiple of heads.
int resolve_dim(int channels, int heads);

struct ModelConfig {
  int num_layers = 3;
  int heads = 8;
  int channels = 1;
  int model_dim = 0;  // 0 derives the width from channels
  int patch_len = 16;
  int max_tokens = 64;
  double dropout = 0.1;
  AttnKind kind = AttnKind::Linear;
  bool ma_enabled = true;
  double alpha = 0.05;
  double leaky_slope = 0.02;
  bool share_wq = true;
  std::optional<bool> wv_identity;  // unset: identity for ARMA q/k/v variants
  double init_std = 0.02;

  int dim() const;
  int mlp_hidden() const { return 4 * dim(); }
  AttnVariant variant() const;
  ArmaConfig arma() const;
  /// Throws std::invalid_argument naming the field.
  void validate() const;

  nlohmann::json to_json() const;
};

/// y = x W + b over the last axis.
struct Linear {
  Tensor w, b;  // [in, out], [out]; b may be undefined
  Tensor operator()(const Tensor& x) const;
};

struct Block {
  Tensor norm1, norm2;  // RMSNorm scales [d]
  AttentionWeights attn;
  Linear fc1, fc2;
};

class ForecastModel {
 public:
  ModelConfig config;
  ArmaConfig arma;
  Linear input;
  Tensor pos;  // [N_max, d]
  Tensor norm_in;
  std::vector<Block> blocks;
  Tensor norm_out;
  Linear head;

  /// patches: [B, N, L_P] with 1 <= N <= N_max; returns [B, N, L_P].
  Tensor forward(const Tensor& patches, const LayerRuntime& runtime = {}) const;

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t param_count() const;
};

ForecastModel build_model(const ModelConfig& config, std::uint64_t seed);

/// JSON checkpoint: {version, config, tensors: [{name, shape, data}]}.
void save_checkpoint(const ForecastModel& model, const std::string& path);
nlohmann::json checkpoint_json(const ForecastModel& model);
/// Copies named tensors into an already built model; throws on any mismatch.
void load_weights(ForecastModel& model, const nlohmann::json& checkpoint);

}  // namespace armattn
