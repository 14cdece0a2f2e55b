// SPDX-License-Identifier: Apache-2.0

#include "armattn/data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "armattn/rng.hpp"

namespace armattn::data {

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* begin = s.data();
  if (*begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace

SeriesDataset parse_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::vector<std::string> header;
  while (header.empty() && std::getline(in, line)) {
    if (!trim(line).empty()) header = split_row(line);
  }
  if (header.empty()) throw std::invalid_argument(source + ": empty file");

  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) rows.push_back(split_row(line));
  }
  if (rows.empty()) throw std::invalid_argument(source + ": no data rows");

  const bool has_timestamp = !rows.front().empty() && !parse_number(rows.front().front());
  const std::size_t skip = has_timestamp ? 1 : 0;
  if (header.size() <= skip) throw std::invalid_argument(source + ": no numeric columns");

  SeriesDataset ds;
  ds.columns.assign(header.begin() + static_cast<std::ptrdiff_t>(skip), header.end());
  ds.frequency = "unknown";
  const auto cols = static_cast<Eigen::Index>(ds.columns.size());
  ds.values.resize(static_cast<Eigen::Index>(rows.size()), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& cells = rows[r];
    // Row numbers are 1-based file lines counting the header as line 1.
    const std::string where = source + ": row " + std::to_string(r + 2);
    if (cells.size() != header.size()) {
      throw std::invalid_argument(where + " has " + std::to_string(cells.size()) + " cells, expected " +
                                  std::to_string(header.size()));
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      const std::string& cell = cells[skip + static_cast<std::size_t>(c)];
      const auto v = parse_number(cell);
      if (!v) {
        throw std::invalid_argument(where + ", column '" + ds.columns[static_cast<std::size_t>(c)] + "': " +
                                    (cell.empty() ? "missing value" : "non-numeric value '" + cell + "'"));
      }
      ds.values(static_cast<Eigen::Index>(r), c) = *v;
    }
  }
  return ds;
}

SeriesDataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  return parse_csv(in, path);
}

void write_csv(const SeriesDataset& ds, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw std::runtime_error("cannot write " + path);
  for (std::size_t c = 0; c < ds.columns.size(); ++c) std::fprintf(f, c == 0 ? "%s" : ",%s", ds.columns[c].c_str());
  std::fputc('\n', f);
  for (Eigen::Index r = 0; r < ds.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < ds.values.cols(); ++c) std::fprintf(f, c == 0 ? "%.17g" : ",%.17g", ds.values(r, c));
    std::fputc('\n', f);
  }
  if (std::fclose(f) != 0) throw std::runtime_error("cannot write " + path);
}

SeriesDataset split_standardize(SeriesDataset ds, const SplitSpec& spec) {
  const std::size_t len = ds.length();
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  if (spec.preset == "ett-hourly" || spec.preset == "ett-15min") {
    const std::size_t month = spec.preset == "ett-hourly" ? 30 * 24 : 30 * 24 * 4;
    n_train = 12 * month;
    n_val = 4 * month;
    n_test = 4 * month;
    if (n_train + n_val + n_test > len) {
      throw std::invalid_argument("split.preset " + spec.preset + " needs " + std::to_string(n_train + n_val + n_test) +
                                  " rows, dataset has " + std::to_string(len));
    }
  } else if (spec.preset == "generic" || spec.preset == "ratios") {
    const SplitSpec r = spec.preset == "generic" ? SplitSpec{} : spec;
    if (r.train < 0 || r.val < 0 || r.test < 0) throw std::invalid_argument("split ratios must be >= 0");
    const double total = r.train + r.val + r.test;
    if (total > 1.0 + 1e-12) throw std::invalid_argument("split ratios sum above 1");
    const auto L = static_cast<double>(len);
    n_train = static_cast<std::size_t>(std::floor(L * r.train + 1e-9));
    n_val = static_cast<std::size_t>(std::floor(L * r.val + 1e-9));
    n_test = std::abs(total - 1.0) <= 1e-12 ? len - n_train - n_val
                                             : static_cast<std::size_t>(std::floor(L * r.test + 1e-9));
  } else {
    throw std::invalid_argument("unknown split preset '" + spec.preset + "'");
  }
  if (n_train == 0) throw std::invalid_argument("split produces an empty train set");

  ds.train = {0, n_train};
  ds.val = {n_train, n_train + n_val};
  ds.test = {n_train + n_val, n_train + n_val + n_test};

  const auto train = ds.values.topRows(static_cast<Eigen::Index>(n_train));
  ds.mean = train.colwise().mean();
  const Matrix centered = train.rowwise() - ds.mean;
  ds.std = (centered.colwise().squaredNorm() / static_cast<double>(n_train)).cwiseSqrt().cwiseMax(1e-8);
  for (Eigen::Index r = 0; r < ds.values.rows(); ++r) {
    ds.values.row(r) = (ds.values.row(r) - ds.mean).cwiseQuotient(ds.std);
  }
  return ds;
}

RevinState revin_stats(const Matrix& window, double eps) {
  if (window.rows() < 1) throw std::invalid_argument("RevIN needs at least one row");
  RevinState s;
  s.mean = window.colwise().mean();
  const Matrix centered = window.rowwise() - s.mean;
  s.std = (centered.colwise().squaredNorm() / static_cast<double>(window.rows())).cwiseSqrt().cwiseMax(eps);
  return s;
}

Matrix revin_normalize(const Matrix& window, const RevinState& state) {
  Matrix out(window.rows(), window.cols());
  for (Eigen::Index r = 0; r < window.rows(); ++r) out.row(r) = (window.row(r) - state.mean).cwiseQuotient(state.std);
  return out;
}

Matrix revin_denormalize(const Matrix& values, const RevinState& state) {
  Matrix out(values.rows(), values.cols());
  for (Eigen::Index r = 0; r < values.rows(); ++r) out.row(r) = values.row(r).cwiseProduct(state.std) + state.mean;
  return out;
}

int padding(int input_len, int patch_len) {
  if (input_len < 1 || patch_len < 1) throw std::invalid_argument("lengths must be >= 1");
  return (patch_len - input_len % patch_len) % patch_len;
}

int token_count(int input_len, int patch_len) { return (input_len + padding(input_len, patch_len)) / patch_len; }

namespace {

// Channel-major [C, N, L_P] layout of the padded normalized sequence.
std::vector<double> cut_tokens(const Matrix& normalized, int pad, int n, int patch_len) {
  const auto c_count = static_cast<std::size_t>(normalized.cols());
  const std::size_t per = static_cast<std::size_t>(n) * static_cast<std::size_t>(patch_len);
  std::vector<double> out(c_count * per, 0.0);
  for (std::size_t c = 0; c < c_count; ++c) {
    for (Eigen::Index r = 0; r < normalized.rows(); ++r) {
      out[c * per + static_cast<std::size_t>(pad) + static_cast<std::size_t>(r)] =
          normalized(r, static_cast<Eigen::Index>(c));
    }
  }
  return out;
}

}  // namespace

PatchBatch patchify(const Matrix& window, int patch_len) {
  const int input_len = static_cast<int>(window.rows());
  PatchBatch b;
  b.patch_len = patch_len;
  b.pad = padding(input_len, patch_len);
  b.tokens_per_channel = token_count(input_len, patch_len);
  b.channels = static_cast<int>(window.cols());
  b.revin = revin_stats(window);
  const auto c = static_cast<std::size_t>(b.channels), n = static_cast<std::size_t>(b.tokens_per_channel),
             lp = static_cast<std::size_t>(patch_len);
  b.tokens = Tensor::from({c, n, lp}, cut_tokens(revin_normalize(window, b.revin), b.pad, b.tokens_per_channel, patch_len));
  return b;
}

PatchBatch patchify_with_target(const Matrix& window, int input_len, int patch_len) {
  if (window.rows() != input_len + patch_len) throw ShapeError("window must hold L_I + L_P rows");
  PatchBatch b = patchify(window.topRows(input_len), patch_len);
  const Matrix future = revin_normalize(window.bottomRows(patch_len), b.revin);
  const auto c = static_cast<std::size_t>(b.channels), n = static_cast<std::size_t>(b.tokens_per_channel),
             lp = static_cast<std::size_t>(patch_len);
  std::vector<double> targets(c * n * lp);
  const auto tokens = b.tokens.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const std::size_t base = ch * n * lp;
    std::copy(tokens.begin() + static_cast<std::ptrdiff_t>(base + lp),
              tokens.begin() + static_cast<std::ptrdiff_t>(base + n * lp), targets.begin() + static_cast<std::ptrdiff_t>(base));
    for (std::size_t i = 0; i < lp; ++i) {
      targets[base + (n - 1) * lp + i] = future(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(ch));
    }
  }
  b.targets = Tensor::from({c, n, lp}, std::move(targets));
  return b;
}

Matrix unpatchify(const Tensor& tokens, int pad) {
  if (tokens.dim() != 3) throw ShapeError("tokens must be [C, N, L_P]");
  const std::size_t c = tokens.size(0), per = tokens.size(1) * tokens.size(2);
  const auto p = static_cast<std::size_t>(pad);
  if (p > per) throw ShapeError("padding longer than the sequence");
  Matrix out(static_cast<Eigen::Index>(per - p), static_cast<Eigen::Index>(c));
  const auto data = tokens.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t r = p; r < per; ++r) {
      out(static_cast<Eigen::Index>(r - p), static_cast<Eigen::Index>(ch)) = data[ch * per + r];
    }
  }
  return out;
}

std::vector<std::size_t> window_starts(const SplitRange& range, std::size_t span) {
  std::vector<std::size_t> starts;
  if (span == 0 || range.size() < span) return starts;
  for (std::size_t s = range.begin; s + span <= range.end; ++s) starts.push_back(s);
  return starts;
}

Batch make_batch(const SeriesDataset& ds, const std::vector<std::size_t>& starts, int input_len, int patch_len) {
  if (starts.empty()) throw std::invalid_argument("empty batch");
  const auto span = static_cast<Eigen::Index>(input_len + patch_len);
  const auto c = static_cast<std::size_t>(ds.channels());
  const auto n = static_cast<std::size_t>(token_count(input_len, patch_len));
  const auto lp = static_cast<std::size_t>(patch_len);
  const std::size_t per = c * n * lp;
  std::vector<double> inputs(starts.size() * per), targets(starts.size() * per);
  Batch batch;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    if (starts[i] + static_cast<std::size_t>(span) > ds.length()) throw std::out_of_range("window past the series end");
    PatchBatch pb = patchify_with_target(ds.values.middleRows(static_cast<Eigen::Index>(starts[i]), span), input_len,
                                         patch_len);
    std::copy(pb.tokens.data().begin(), pb.tokens.data().end(), inputs.begin() + static_cast<std::ptrdiff_t>(i * per));
    std::copy(pb.targets.data().begin(), pb.targets.data().end(), targets.begin() + static_cast<std::ptrdiff_t>(i * per));
    batch.revin.push_back(std::move(pb.revin));
  }
  batch.inputs = Tensor::from({starts.size() * c, n, lp}, std::move(inputs));
  batch.targets = Tensor::from({starts.size() * c, n, lp}, std::move(targets));
  return batch;
}

namespace {

constexpr int kPeriodShort = 24;
constexpr int kPeriodLong = 96;

double periodic_sin(std::size_t t, int period, double phase) {
  const double frac = static_cast<double>(t % static_cast<std::size_t>(period)) / period;
  return std::sin(2.0 * std::numbers::pi * frac + phase);
}

}  // namespace

SeriesDataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.length < 1) throw std::invalid_argument("synthetic.length must be >= 1");
  if (spec.channels < 1) throw std::invalid_argument("synthetic.channels must be >= 1");
  if (spec.noise < 0.0) throw std::invalid_argument("synthetic.noise must be >= 0");
  const bool seasonal = spec.kind == "seasonal";
  const bool shocks = spec.kind == "seasonal-plus-shocks";
  const bool arma = spec.kind == "arma11";
  if (!seasonal && !shocks && !arma) throw std::invalid_argument("unknown synthetic kind '" + spec.kind + "'");

  Rng rng(seed, RngStream::Data);
  SeriesDataset ds;
  ds.frequency = "synthetic";
  ds.values.resize(static_cast<Eigen::Index>(spec.length), spec.channels);
  for (int c = 0; c < spec.channels; ++c) {
    ds.columns.push_back("x" + std::to_string(c));
    auto col = ds.values.col(c);
    if (arma) {
      // x_t = 0.7 x_{t-1} + e_t - 0.5 e_{t-1}, after a burn-in.
      double x = 0.0, e_prev = 0.0;
      for (std::size_t t = 0; t < spec.length + 200; ++t) {
        const double e = rng.normal();
        x = 0.7 * x + e - 0.5 * e_prev;
        e_prev = e;
        if (t >= 200) col(static_cast<Eigen::Index>(t - 200)) = x;
      }
      continue;
    }
    const double a1 = 0.5 + rng.uniform(), a2 = 0.5 + rng.uniform();
    const double p1 = 2.0 * std::numbers::pi * rng.uniform(), p2 = 2.0 * std::numbers::pi * rng.uniform();
    double shock = 0.0;
    for (std::size_t t = 0; t < spec.length; ++t) {
      double x = a1 * periodic_sin(t, kPeriodShort, p1) + a2 * periodic_sin(t, kPeriodLong, p2);
      if (spec.noise > 0.0) x += spec.noise * rng.normal();
      if (shocks) {
        shock *= 0.85;
        if (rng.uniform() < 0.01) shock += 2.0 * rng.normal();
        x += shock;
      }
      col(static_cast<Eigen::Index>(t)) = x;
    }
  }
  return ds;
}

}  // namespace armattn::data
