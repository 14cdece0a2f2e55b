// SPDX-License-Identifier: Apache-2.0
//
// Series ingestion, train/val/test splitting with train-only z-scoring,
// per-window RevIN, and patch tokenization with front zero-padding.

#pragma once

#include <cstdint>
#include <istream>
#include <string>
#include <vector>

#include "armattn/kernels.hpp"
#include "armattn/tensor.hpp"

namespace armattn::data {

struct SplitRange {
  std::size_t begin = 0, end = 0;
  std::size_t size() const { return end - begin; }
};

struct SeriesDataset {
  Matrix values;  // L x C
  std::vector<std::string> columns;
  std::string frequency;
  SplitRange train, val, test;
  RowVector mean, std;  // train-split statistics, set by split_standardize

  std::size_t length() const { return static_cast<std::size_t>(values.rows()); }
  int channels() const { return static_cast<int>(values.cols()); }
};

/// Header row required. A first column that does not parse as a number in
/// the first data row is treated as a timestamp and dropped.
SeriesDataset load_csv(const std::string& path);
SeriesDataset parse_csv(std::istream& in, const std::string& source = "<stream>");
void write_csv(const SeriesDataset& ds, const std::string& path);

struct SplitSpec {
  std::string preset = "generic";  // generic | ett-hourly | ett-15min | ratios
  double train = 0.7, val = 0.1, test = 0.2;
};

/// Sets split ranges and z-scores every column with train-split mean and
/// population std (floored at 1e-8).
SeriesDataset split_standardize(SeriesDataset ds, const SplitSpec& spec);

struct RevinState {
  RowVector mean, std;  // std already floored
};

constexpr double kRevinEps = 1e-5;

/// Per-column window mean and population std, std floored at eps.
RevinState revin_stats(const Matrix& window, double eps = kRevinEps);
Matrix revin_normalize(const Matrix& window, const RevinState& state);
Matrix revin_denormalize(const Matrix& values, const RevinState& state);

/// P = (-L_I) mod L_P.
int padding(int input_len, int patch_len);
/// N = (L_I + P) / L_P.
int token_count(int input_len, int patch_len);

struct PatchBatch {
  int tokens_per_channel = 0, patch_len = 0, pad = 0, channels = 0;
  Tensor tokens;   // [C, N, L_P]
  Tensor targets;  // [C, N, L_P]; undefined when no future patch was given
  RevinState revin;
};

/// Normalizes the L_I x C window with RevIN, front-pads with zeros and cuts
/// N tokens per channel.
PatchBatch patchify(const Matrix& window, int patch_len);
/// Window of L_I + L_P rows: tokens from the first L_I, targets are the next
/// token at each position with the future patch as the last target. The
/// future rows use the input window's RevIN state.
PatchBatch patchify_with_target(const Matrix& window, int input_len, int patch_len);
/// Inverse of patchify on the unpadded region, in normalized units: L_I x C.
Matrix unpatchify(const Tensor& tokens, int pad);

/// Stride-1 window starts whose span lies fully inside the range.
std::vector<std::size_t> window_starts(const SplitRange& range, std::size_t span);

/// Stacks windows starting at `starts` into one batch of B*C sequences.
struct Batch {
  Tensor inputs, targets;  // [B*C, N, L_P]
  std::vector<RevinState> revin;
};
Batch make_batch(const SeriesDataset& ds, const std::vector<std::size_t>& starts, int input_len, int patch_len);

struct SyntheticSpec {
  std::string kind = "seasonal";  // seasonal | arma11 | seasonal-plus-shocks
  std::size_t length = 8000;
  int channels = 1;
  double noise = 0.1;
};

SeriesDataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

}  // namespace armattn::data
