// SPDX-License-Identifier: Apache-2.0

#include "armattn/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "armattn/ops.hpp"

namespace armattn {

void TrainConfig::validate() const {
  if (!(lr_peak > 0.0)) throw std::invalid_argument("train.lr_peak must be > 0");
  if (!(lr_start > 0.0)) throw std::invalid_argument("train.lr_start must be > 0");
  if (warmup_epochs < 0) throw std::invalid_argument("train.warmup_epochs must be >= 0");
  if (max_epochs < 1) throw std::invalid_argument("train.max_epochs must be >= 1");
  if (warmup_epochs >= max_epochs) throw std::invalid_argument("train.warmup_epochs must be < train.max_epochs");
  if (patience < 1) throw std::invalid_argument("train.patience must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
  if (grad_accum_steps < 1 || batch_size % grad_accum_steps != 0) {
    throw std::invalid_argument("train.grad_accum_steps must divide train.batch_size");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("train.beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("train.beta2 must lie in [0, 1)");
  if (weight_decay < 0.0) throw std::invalid_argument("train.weight_decay must be >= 0");
  if (!(eps > 0.0)) throw std::invalid_argument("train.eps must be > 0");
  if (last_token_weight && !(*last_token_weight > 0.0)) throw std::invalid_argument("train.last_token_weight must be > 0");
  if (max_steps_per_epoch < 0) throw std::invalid_argument("train.max_steps_per_epoch must be >= 0");
  if (max_steps < 0) throw std::invalid_argument("train.max_steps must be >= 0");
  if (eval_stride < 1) throw std::invalid_argument("train.eval_stride must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j;
  j["lr_peak"] = lr_peak;
  j["lr_start"] = lr_start;
  j["warmup_epochs"] = warmup_epochs;
  j["max_epochs"] = max_epochs;
  j["patience"] = patience;
  j["batch_size"] = batch_size;
  j["grad_accum_steps"] = grad_accum_steps;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["weight_decay"] = weight_decay;
  j["eps"] = eps;
  j["seed"] = seed;
  j["last_token_weight"] = last_token_weight ? nlohmann::json(*last_token_weight) : nlohmann::json(nullptr);
  j["max_steps_per_epoch"] = max_steps_per_epoch;
  j["max_steps"] = max_steps;
  j["eval_stride"] = eval_stride;
  return j;
}

double lr_at(int epoch, const TrainConfig& c) {
  if (epoch < 0) throw std::invalid_argument("epoch must be >= 0");
  if (epoch < c.warmup_epochs) {
    return c.lr_start + (c.lr_peak - c.lr_start) * static_cast<double>(epoch) / c.warmup_epochs;
  }
  const double span = static_cast<double>(c.max_epochs - c.warmup_epochs);
  const double progress = std::min(1.0, static_cast<double>(epoch - c.warmup_epochs) / span);
  return c.lr_start + (c.lr_peak - c.lr_start) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads, AdamState& state,
                double lr, const AdamConfig& c, const std::vector<bool>& decay) {
  if (grads.size() != params.size() || decay.size() != params.size()) {
    throw std::invalid_argument("params, grads and decay mask differ in length");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].numel()) throw ShapeError("gradient " + std::to_string(i) + " has the wrong size");
    for (std::size_t j = 0; j < grads[i].size(); ++j) {
      if (!std::isfinite(grads[i][j])) {
        throw NumericalError("non-finite gradient in parameter " + std::to_string(i) + " at entry " + std::to_string(j));
      }
    }
  }
  if (state.m.empty()) {
    for (const Tensor& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const double shrink = decay[i] ? lr * c.weight_decay : 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = grads[i][j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
      p[j] -= shrink * p[j];
      p[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + c.eps);
    }
  }
}

std::vector<bool> decay_mask(const std::vector<Tensor>& params) {
  std::vector<bool> mask;
  for (const Tensor& p : params) mask.push_back(p.dim() >= 2);
  return mask;
}

Tensor weighted_token_loss(const Tensor& pred, const Tensor& target, double last_weight) {
  if (pred.dim() != 3 || pred.shape() != target.shape()) throw ShapeError("pred and target must share a [B, N, L_P] shape");
  const std::size_t b = pred.size(0), n = pred.size(1), lp = pred.size(2);
  std::vector<double> w(n * lp, 1.0);
  std::fill(w.end() - static_cast<std::ptrdiff_t>(lp), w.end(), last_weight);
  const Tensor diff = ops::sub(pred, target);
  const Tensor weights = ops::broadcast_to(Tensor::from({n, lp}, std::move(w)), {b, n, lp});
  return ops::mean(ops::mul(ops::mul(diff, diff), weights));
}

bool EarlyStopper::update(double val_loss) {
  ++epoch_;
  improved_ = epoch_ == 1 || val_loss < best_;
  if (improved_) {
    best_ = val_loss;
    best_epoch_ = epoch_;
    bad_ = 0;
    return false;
  }
  return ++bad_ >= patience_;
}

namespace {

constexpr std::size_t kEvalChunk = 64;

// Last-token predictions for each window, denormalized: one C x L_P matrix per window.
std::vector<Matrix> forecast(const ForecastModel& model, const data::SeriesDataset& ds,
                             const std::vector<std::size_t>& starts, int input_len) {
  NoGradGuard no_grad;
  const int lp = model.config.patch_len;
  const auto c = static_cast<std::size_t>(ds.channels());
  std::vector<Matrix> out;
  out.reserve(starts.size());
  for (std::size_t lo = 0; lo < starts.size(); lo += kEvalChunk) {
    const std::vector<std::size_t> chunk(starts.begin() + static_cast<std::ptrdiff_t>(lo),
                                         starts.begin() + static_cast<std::ptrdiff_t>(std::min(starts.size(), lo + kEvalChunk)));
    const data::Batch batch = data::make_batch(ds, chunk, input_len, lp);
    const Tensor pred = model.forward(batch.inputs);
    const std::size_t n = pred.size(1);
    const auto values = pred.data();
    for (std::size_t w = 0; w < chunk.size(); ++w) {
      Matrix m(static_cast<Eigen::Index>(c), lp);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t base = ((w * c + ch) * n + (n - 1)) * static_cast<std::size_t>(lp);
        const double mu = batch.revin[w].mean(static_cast<Eigen::Index>(ch));
        const double sd = batch.revin[w].std(static_cast<Eigen::Index>(ch));
        for (int i = 0; i < lp; ++i) m(static_cast<Eigen::Index>(ch), i) = values[base + static_cast<std::size_t>(i)] * sd + mu;
      }
      out.push_back(std::move(m));
    }
  }
  return out;
}

std::vector<std::size_t> strided(std::vector<std::size_t> starts, int stride) {
  if (stride <= 1) return starts;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < starts.size(); i += static_cast<std::size_t>(stride)) out.push_back(starts[i]);
  return out;
}

std::vector<std::vector<double>> snapshot(const std::vector<Tensor>& params) {
  std::vector<std::vector<double>> out;
  for (const Tensor& p : params) out.emplace_back(p.data().begin(), p.data().end());
  return out;
}

void restore(std::vector<Tensor>& params, const std::vector<std::vector<double>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) std::copy(values[i].begin(), values[i].end(), params[i].mutable_data().begin());
}

}  // namespace

std::vector<Matrix> predict_windows(const ForecastModel& model, const data::SeriesDataset& ds,
                                    const std::vector<std::size_t>& starts, int input_len) {
  return forecast(model, ds, starts, input_len);
}

ForecastMetrics evaluate(const ForecastModel& model, const data::SeriesDataset& ds, const data::SplitRange& range,
                         int input_len, int stride) {
  const int lp = model.config.patch_len;
  const auto span = static_cast<std::size_t>(input_len + lp);
  if (range.size() < span) {
    throw std::invalid_argument("split of " + std::to_string(range.size()) + " rows is shorter than L_I + L_P = " +
                                std::to_string(span));
  }
  const auto starts = strided(data::window_starts(range, span), stride);
  const auto preds = forecast(model, ds, starts, input_len);
  double se = 0.0, ae = 0.0;
  std::size_t count = 0;
  for (std::size_t w = 0; w < starts.size(); ++w) {
    const auto truth = ds.values.middleRows(static_cast<Eigen::Index>(starts[w]) + input_len, lp).transpose();
    const Matrix err = preds[w] - truth;
    se += err.squaredNorm();
    ae += err.cwiseAbs().sum();
    count += static_cast<std::size_t>(err.size());
  }
  return {se / static_cast<double>(count), ae / static_cast<double>(count), starts.size()};
}

nlohmann::json Metrics::to_json() const {
  nlohmann::json j;
  j["variant"] = variant;
  j["ma_enabled"] = ma_enabled;
  j["L_I"] = input_len;
  j["L_P"] = patch_len;
  j["seed"] = seed;
  j["mse"] = mse;
  j["mae"] = mae;
  j["epochs_run"] = epochs_run;
  j["best_epoch"] = best_epoch;
  j["steps"] = steps;
  j["initial_loss"] = initial_loss;
  j["final_train_loss"] = final_train_loss();
  j["param_count"] = param_count;
  j["loss_curves"] = {{"train", train_loss}, {"val", val_loss}, {"test", test_loss}};
  return j;
}

TrainResult train(ForecastModel& model, const data::SeriesDataset& ds, int input_len, const TrainConfig& config) {
  config.validate();
  const int lp = model.config.patch_len;
  const auto span = static_cast<std::size_t>(input_len + lp);
  const int n_tokens = data::token_count(input_len, lp);
  if (n_tokens > model.config.max_tokens) {
    throw std::invalid_argument("L_I = " + std::to_string(input_len) + " needs " + std::to_string(n_tokens) +
                                " tokens, above model.max_tokens");
  }
  if (ds.channels() != model.config.channels) throw std::invalid_argument("dataset channels differ from model.channels");
  std::vector<std::size_t> train_starts = data::window_starts(ds.train, span);
  if (train_starts.empty()) throw std::invalid_argument("train split is shorter than L_I + L_P");
  if (ds.val.size() < span) throw std::invalid_argument("val split is shorter than L_I + L_P");
  const bool log_test = ds.test.size() >= span;

  std::vector<Tensor> params = model.parameters();
  const std::vector<bool> decay = decay_mask(params);
  const AdamConfig adam{config.beta1, config.beta2, config.eps, config.weight_decay};
  AdamState state;
  Rng shuffle_rng(config.seed, RngStream::Shuffle);
  Rng dropout_rng(config.seed, RngStream::Dropout);
  const LayerRuntime runtime{true, model.config.dropout, &dropout_rng};
  const double last_weight = config.last_token_weight.value_or(static_cast<double>(n_tokens));
  const auto micro = static_cast<std::size_t>(config.batch_size / config.grad_accum_steps);

  Metrics metrics;
  metrics.variant = std::string(to_string(model.config.kind));
  metrics.ma_enabled = model.config.ma_enabled;
  metrics.input_len = input_len;
  metrics.patch_len = lp;
  metrics.seed = config.seed;
  metrics.param_count = model.param_count();

  EarlyStopper stopper(config.patience);
  std::vector<std::vector<double>> best = snapshot(params);
  bool done = false;
  for (int epoch = 0; epoch < config.max_epochs && !done; ++epoch) {
    const double lr = lr_at(epoch, config);
    std::shuffle(train_starts.begin(), train_starts.end(), shuffle_rng.engine());
    double epoch_loss = 0.0;
    int epoch_steps = 0;
    for (std::size_t lo = 0; lo < train_starts.size(); lo += static_cast<std::size_t>(config.batch_size)) {
      if (config.max_steps_per_epoch > 0 && epoch_steps >= config.max_steps_per_epoch) break;
      if (config.max_steps > 0 && metrics.steps >= config.max_steps) {
        done = true;
        break;
      }
      const std::size_t hi = std::min(train_starts.size(), lo + static_cast<std::size_t>(config.batch_size));
      double step_loss = 0.0;
      for (std::size_t a = lo; a < hi; a += micro) {
        const std::vector<std::size_t> chunk(train_starts.begin() + static_cast<std::ptrdiff_t>(a),
                                             train_starts.begin() + static_cast<std::ptrdiff_t>(std::min(hi, a + micro)));
        const double fraction = static_cast<double>(chunk.size()) / static_cast<double>(hi - lo);
        const data::Batch batch = data::make_batch(ds, chunk, input_len, lp);
        Tape tape;
        const Tensor loss = weighted_token_loss(model.forward(batch.inputs, runtime), batch.targets, last_weight);
        const double value = loss.item();
        if (!std::isfinite(value) || value > 1e6) {
          throw NumericalError("training diverged at epoch " + std::to_string(epoch + 1) + ", step " +
                               std::to_string(metrics.steps + 1) + ": loss " + std::to_string(value));
        }
        step_loss += fraction * value;
        tape.backward(ops::scale(loss, fraction));
      }
      std::vector<std::vector<double>> grads;
      for (Tensor& p : params) {
        if (p.has_grad()) {
          grads.emplace_back(p.grad().begin(), p.grad().end());
        } else {
          grads.emplace_back(p.numel(), 0.0);
        }
        p.zero_grad();
      }
      adamw_step(params, grads, state, lr, adam, decay);
      if (metrics.steps == 0) metrics.initial_loss = step_loss;
      ++metrics.steps;
      ++epoch_steps;
      epoch_loss += step_loss;
    }
    if (epoch_steps == 0) break;
    metrics.train_loss.push_back(epoch_loss / epoch_steps);
    const double val = evaluate(model, ds, ds.val, input_len, config.eval_stride).mse;
    metrics.val_loss.push_back(val);
    if (log_test) metrics.test_loss.push_back(evaluate(model, ds, ds.test, input_len, config.eval_stride).mse);
    ++metrics.epochs_run;
    const bool stop = stopper.update(val);
    if (stopper.improved()) best = snapshot(params);
    spdlog::info("epoch {} lr {:.3g} train {:.6f} val {:.6f}{}", epoch + 1, lr, metrics.train_loss.back(), val,
                 stopper.improved() ? " *" : "");
    if (stop) done = true;
  }

  restore(params, best);
  metrics.best_epoch = stopper.best_epoch();
  if (log_test) {
    const ForecastMetrics test = evaluate(model, ds, ds.test, input_len, 1);
    metrics.mse = test.mse;
    metrics.mae = test.mae;
  }
  return {metrics, checkpoint_json(model)};
}

}  // namespace armattn
