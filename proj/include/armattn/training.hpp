// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "armattn/data.hpp"
#include "armattn/model.hpp"
#include "json.hpp"

namespace armattn {

struct TrainConfig {
  double lr_peak = 6e-4;
  double lr_start = 6e-5;
  int warmup_epochs = 5;
  int max_epochs = 100;
  int patience = 12;
  int batch_size = 32;  // effective batch, in windows
  int grad_accum_steps = 1;
  double beta1 = 0.9, beta2 = 0.95;
  double weight_decay = 0.1;
  double eps = 1e-8;
  std::uint64_t seed = 2024;
  std::optional<double> last_token_weight;  // unset: N
  int max_steps_per_epoch = 0;              // 0: full pass over the train windows
  int max_steps = 0;                        // 0: no global cap
  int eval_stride = 1;                      // stride over val/test windows

  void validate() const;
  nlohmann::json to_json() const;
};

/// Linear warm-up lr_start -> lr_peak over [0, warmup], then cosine back to
/// lr_start at max_epochs.
double lr_at(int epoch, const TrainConfig& config);

struct AdamConfig {
  double beta1 = 0.9, beta2 = 0.95, eps = 1e-8, weight_decay = 0.1;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  long step = 0;
};

/// One AdamW update with decoupled decay: p -= lr*wd*p (where decay[i]),
/// then p -= lr * m_hat / (sqrt(v_hat) + eps). Throws NumericalError naming
/// the parameter when a gradient is non-finite; nothing is updated then.
void adamw_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads, AdamState& state,
                double lr, const AdamConfig& config, const std::vector<bool>& decay);

/// Parameters of rank >= 2 decay; biases and norm scales do not.
std::vector<bool> decay_mask(const std::vector<Tensor>& params);

/// Mean over all elements of w * (pred - target)^2 where w is 1 except the
/// last token, which gets `last_weight`. pred, target: [B, N, L_P].
Tensor weighted_token_loss(const Tensor& pred, const Tensor& target, double last_weight);

class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}
  /// Returns true when training should stop after this epoch.
  bool update(double val_loss);
  bool improved() const { return improved_; }
  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }  // 1-based

 private:
  int patience_;
  int epoch_ = 0, bad_ = 0, best_epoch_ = 0;
  double best_ = 0.0;
  bool improved_ = false;
};

struct ForecastMetrics {
  double mse = 0.0, mae = 0.0;
  std::size_t windows = 0;
};

/// Last-token forecast for every stride-th window in `range`, RevIN
/// denormalized, scored against the raw rows in dataset-standardized units.
ForecastMetrics evaluate(const ForecastModel& model, const data::SeriesDataset& ds, const data::SplitRange& range,
                         int input_len, int stride = 1);

/// Last-token forecasts [C, L_P] per window, denormalized; for dumps.
std::vector<Matrix> predict_windows(const ForecastModel& model, const data::SeriesDataset& ds,
                                    const std::vector<std::size_t>& starts, int input_len);

struct Metrics {
  std::string variant;
  bool ma_enabled = true;
  int input_len = 0, patch_len = 0;
  std::uint64_t seed = 0;
  double mse = 0.0, mae = 0.0;
  int epochs_run = 0, best_epoch = 0;
  long steps = 0;
  double initial_loss = 0.0;  // train loss of the first optimizer step
  std::size_t param_count = 0;
  std::vector<double> train_loss, val_loss, test_loss;

  double final_train_loss() const { return train_loss.empty() ? 0.0 : train_loss.back(); }
  nlohmann::json to_json() const;
};

struct TrainResult {
  Metrics metrics;
  nlohmann::json checkpoint;  // best-val weights, also restored into the model
};

/// Trains in place. Throws NumericalError when the loss diverges.
TrainResult train(ForecastModel& model, const data::SeriesDataset& ds, int input_len, const TrainConfig& config);

}  // namespace armattn
