// SPDX-License-Identifier: Apache-2.0
//
// JSON run configuration:
//   {"data": {...}, "model": {...}, "arma": {...}, "train": {...}, "output_dir": "..."}
// Every section is optional; unknown keys are rejected with their full path.

#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include "armattn/data.hpp"
#include "armattn/model.hpp"
#include "armattn/training.hpp"
#include "json.hpp"

namespace armattn {

/// Validation failure for a config entry; `path()` is e.g. "train.lr_peak".
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string path, const std::string& message)
      : std::invalid_argument(path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct DataConfig {
  std::string source;  // CSV path; empty selects the synthetic generator
  data::SyntheticSpec synthetic;
  int input_len = 512;
  int patch_len = 96;
  data::SplitSpec split;
};

struct RunConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  std::string output_dir = "runs";
  bool channels_given = false;  // model.channels was set explicitly

  nlohmann::json to_json() const;
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

/// Loads or generates the series and applies the split. Sets model.channels
/// from the data (or checks it when given explicitly).
data::SeriesDataset load_dataset(RunConfig& config);

}  // namespace armattn
