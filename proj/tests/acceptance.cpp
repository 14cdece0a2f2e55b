// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. Oracles here are written against Eigen
// directly and do not call the library's own explicit-matrix helpers.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/LU>
#include <spdlog/spdlog.h>

#include "armattn/arma.hpp"
#include "armattn/attention_ops.hpp"
#include "armattn/data.hpp"
#include "armattn/diagnostics.hpp"
#include "armattn/ma_analysis.hpp"
#include "armattn/run_config.hpp"

using namespace armattn;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("%s %d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Matrix randm(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

double rel(const Matrix& got, const Matrix& want) {
  const double scale = want.cwiseAbs().maxCoeff();
  const double err = (got - want).cwiseAbs().maxCoeff();
  return scale > 0.0 ? err / scale : err;
}

// beta[t][j] = (1/w) sum_c phiq(q[t-1])_c phik(k[j])_c for j < t, with
// phiq(x) = -LeakyReLU(-x/sqrt(w), 0.02) and phik(x) = sigmoid(0.05 x/sqrt(w)),
// over the w columns starting at c0.
Matrix oracle_B(const Matrix& q, const Matrix& k, Eigen::Index c0, Eigen::Index w) {
  const Eigen::Index n = q.rows();
  const double s = std::sqrt(static_cast<double>(w));
  Matrix b = Matrix::Zero(n, n);
  for (Eigen::Index t = 1; t < n; ++t) {
    for (Eigen::Index j = 0; j < t; ++j) {
      double acc = 0.0;
      for (Eigen::Index c = c0; c < c0 + w; ++c) {
        const double u = -q(t - 1, c) / s;
        const double pq = -(u >= 0.0 ? u : 0.02 * u);
        const double pk = 1.0 / (1.0 + std::exp(-0.05 * k(j, c) / s));
        acc += pq * pk;
      }
      b(t, j) = acc / static_cast<double>(w);
    }
  }
  return b;
}

Matrix dense_theta(const Matrix& b) {
  const Matrix eye = Matrix::Identity(b.rows(), b.cols());
  return b * (eye - b).inverse();
}

// 1. MA output of the full layer equals explicit B [R; 0] per head, and
//    B r = Theta eps with eps = (I + Theta)^-1 r.
void criterion1() {
  const auto t0 = Clock::now();
  double worst_ma = 0.0, worst_id = 0.0;
  int cases = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed, RngStream::Analysis);
    const int n = 2 + static_cast<int>(rng.next() % 63);
    const int heads = 1 << (rng.next() % 3);
    const int width = 2 + static_cast<int>(rng.next() % (32 / heads - 1));
    const int d = heads * width;
    for (AttnKind kind : kAllAttnKinds) {
      const ArmaConfig cfg = ArmaConfig::with_ma(AttnVariant::make(kind, d, heads));
      const AttentionWeights w = AttentionWeights::init(cfg, d, 64, rng, 0.5, 0.5);
      const Matrix x = randm(n, d, rng);
      ArmaLayerOutput out;
      {
        NoGradGuard no_grad;
        out = arma_attention_forward(attn::to_tensor(x).detach(), w, cfg);
      }
      // Rebuild q_ma, k_ma and v from the weights.
      auto as_matrix = [](const Tensor& t) {
        Matrix m(static_cast<Eigen::Index>(t.size(0)), static_cast<Eigen::Index>(t.size(1)));
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
          for (Eigen::Index c = 0; c < m.cols(); ++c) {
            m(i, c) = t.at({static_cast<std::size_t>(i), static_cast<std::size_t>(c)});
          }
        }
        return m;
      };
      Matrix q, k, v;
      if (kind == AttnKind::Fixed) {
        q = as_matrix(w.fixed_ma_q).topRows(n);
        k = as_matrix(w.fixed_ma_k).topRows(n);
        v = x * as_matrix(w.w_v);
      } else {
        q = x * as_matrix(w.w_q);
        k = x * as_matrix(w.w_k_ma);
        v = x;
      }
      const Matrix ar = attn::to_matrix(out.ar);
      Matrix r = Matrix::Zero(n, d);  // [R; 0]
      r.topRows(n - 1) = v.bottomRows(n - 1) - ar.topRows(n - 1);
      const Eigen::Index groups = kind == AttnKind::ElementWise ? d : heads;
      const Eigen::Index gw = d / groups;
      Matrix want(n, d);
      for (Eigen::Index g = 0; g < groups; ++g) {
        const Matrix b = oracle_B(q, k, g * gw, gw);
        want.middleCols(g * gw, gw) = b * r.middleCols(g * gw, gw);
        if (g == 0) {
          const Matrix theta = dense_theta(b);
          const Matrix eps = (Matrix::Identity(n, n) + theta).partialPivLu().solve(r.middleCols(0, gw));
          worst_id = std::max(worst_id, rel(theta * eps, b * r.middleCols(0, gw)));
        }
      }
      worst_ma = std::max(worst_ma, rel(attn::to_matrix(out.ma), want));
      ++cases;
    }
  }
  const double secs = seconds_since(t0);
  report(1, worst_ma <= 1e-9 && worst_id <= 1e-9 && secs < 10.0,
         fmt("%d layer cases, max rel err MA vs B[R;0] %.2e, B r vs Theta eps %.2e, %.2f s", cases, worst_ma, worst_id,
             secs));
}

// 2. Closed form theta_ij = b (1 + b)^(i-j-1) against the triangular solve and
//    a dense inverse.
void criterion2() {
  double worst = 0.0;
  for (double b : {-0.9, -0.5, -0.1, 0.1}) {
    for (int n = 2; n <= 32; ++n) {
      Matrix bm = Matrix::Zero(n, n);
      for (int i = 1; i < n; ++i) {
        for (int j = 0; j < i; ++j) bm(i, j) = b;
      }
      const Matrix closed = ma::constant_b_theta(b, n);
      worst = std::max(worst, (closed - ma::implicit_theta(bm)).cwiseAbs().maxCoeff());
      worst = std::max(worst, (closed - dense_theta(bm)).cwiseAbs().maxCoeff());
    }
  }
  report(2, worst <= 1e-12, fmt("max abs err %.2e over b in {-0.9,-0.5,-0.1,0.1}, N = 2..32", worst));
}

// 3. Recurrent vs parallel kernels plus causality.
void criterion3() {
  const auto rows = bench_equivalence(100, 64, 32, 4, 2024);
  double worst = 0.0;
  bool causal = true;
  std::string names;
  for (const auto& r : rows) {
    worst = std::max(worst, r.max_rel_err);
    causal = causal && r.causal;
    names += fmt("%s %.1e; ", std::string(to_string(r.kind)).c_str(), r.max_rel_err);
  }
  report(3, rows.size() == 5 && worst <= 1e-10 && causal,
         fmt("100 cases per kernel, %scausal %s", names.c_str(), causal ? "yes" : "NO"));
}

// 4. Finite-difference gradient checks at h = 1e-5, rel tol 1e-4.
void criterion4() {
  const GradCheckOptions opts = default_gradcheck_options();
  const auto rows = gradcheck_all(2024, opts);
  bool ok = opts.step == 1e-5 && opts.tolerance == 1e-4;
  double worst = 0.0;
  std::size_t entries = 0;
  for (const auto& r : rows) {
    ok = ok && r.report.pass;
    worst = std::max(worst, r.report.max_rel_err);
    entries += r.report.checked;
  }
  report(4, ok && rows.size() == 20,
         fmt("%zu checks (layer + m=1 model, MA on/off, 5 variants), %zu entries, worst rel err %.2e", rows.size(),
             entries, worst));
}

// 5. AR/ARMA parameter parity.
void criterion5() {
  bool ok = true;
  std::string detail;
  for (int channels : {1, 7, 21}) {
    ModelConfig base;
    base.channels = channels;
    base.patch_len = 96;
    for (const ParamRow& r : param_table(base)) {
      if (r.kind == AttnKind::Fixed) continue;
      ok = ok && r.ar == r.arma;
      if (channels == 7) detail += fmt("%s %zu/%zu; ", std::string(to_string(r.kind)).c_str(), r.ar, r.arma);
    }
  }
  report(5, ok, fmt("C in {1,7,21}; at C=7, L_P=96 (AR/ARMA): %s", detail.c_str()));
}

// 6. Token counts and RevIN round trip.
void criterion6() {
  const bool counts = data::token_count(512, 96) == 6 && data::padding(512, 96) == 64 &&
                      data::token_count(512, 12) == 43 && data::padding(512, 12) == 4;
  Rng rng(6);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    Matrix w = randm(512, 7, rng, 50.0);
    w.rowwise() += RowVector::Constant(7, 1000.0 * rng.normal());
    for (int lp : {96, 12}) {
      const data::PatchBatch pb = data::patchify(w, lp);
      const Matrix back = data::revin_denormalize(data::unpatchify(pb.tokens, pb.pad), pb.revin);
      worst = std::max(worst, (back - w).cwiseAbs().maxCoeff());
      worst = std::max(worst, static_cast<double>(pb.tokens.size(1) != (lp == 96 ? 6u : 43u)));
    }
  }
  report(6, counts && worst <= 1e-10,
         fmt("(512,96) -> N=6, (512,12) -> N=43; patch + RevIN round trip max abs err %.2e", worst));
}

// 7. Desk-scale training smoke for Linear AR and Linear ARMA.
void criterion7() {
  const nlohmann::json j = {
      {"data", {{"synthetic", {{"kind", "seasonal-plus-shocks"}, {"length", 8000}, {"channels", 3}}}, {"L_I", 256}, {"L_P", 32}}},
      {"model", {{"variant", "linear"}}},
      {"train", {{"max_epochs", 12}, {"warmup_epochs", 2}, {"max_steps_per_epoch", 40}, {"eval_stride", 4}, {"seed", 2024}}}};
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  double mse[2] = {0.0, 0.0};
  for (int ma = 0; ma < 2; ++ma) {
    RunConfig cfg = parse_run_config(j);
    cfg.model.ma_enabled = ma == 1;
    const data::SeriesDataset ds = load_dataset(cfg);
    ForecastModel model = build_model(cfg.model, cfg.train.seed);
    const TrainResult r = train(model, ds, cfg.data.input_len, cfg.train);
    const Metrics& m = r.metrics;
    const bool converged = m.final_train_loss() <= 0.5 * m.initial_loss;
    ok = ok && converged && m.epochs_run <= 30;
    mse[ma] = m.mse;
    detail += fmt("%s: %d epochs, loss %.4f -> %.4f (%.2f), test mse %.4f; ", ma ? "Linear+ARMA" : "Linear AR",
                  m.epochs_run, m.initial_loss, m.final_train_loss(), m.final_train_loss() / m.initial_loss, m.mse);
  }
  const double secs = seconds_since(t0);
  detail += fmt("ARMA <= AR: %s (non-gating); %.1f s", mse[1] <= mse[0] ? "yes" : "no", secs);
  report(7, ok && secs < 300.0, detail);
}

// 8. Weight-map shape over 20 seeds: |theta| peaks at offset 1 and most
//    entries are negative. Checked on the library export and on a dense
//    recomputation from the same q, k draws.
void criterion8() {
  const ma::PhiPair phi;
  int good = 0;
  double worst_match = 0.0, min_neg = 1.0;
  for (std::uint64_t seed = 2024; seed < 2044; ++seed) {
    const ma::Analysis a = ma::simulate(64, 32, 1, phi, seed);
    Rng rng(seed, RngStream::Analysis);
    const Matrix q = randm(64, 32, rng), k = randm(64, 32, rng);
    const Matrix theta = dense_theta(oracle_B(q, k, 0, 32));
    worst_match = std::max(worst_match, rel(a.averaged.Theta, theta));
    std::vector<double> prof(63, 0.0);
    int neg = 0;
    for (int off = 1; off < 64; ++off) {
      for (int i = off; i < 64; ++i) {
        prof[static_cast<std::size_t>(off - 1)] += std::abs(theta(i, i - off)) / (64 - off);
        if (theta(i, i - off) < 0.0) ++neg;
      }
    }
    const double frac = neg / (64.0 * 63.0 / 2.0);
    min_neg = std::min(min_neg, frac);
    const bool peak = std::max_element(prof.begin(), prof.end()) == prof.begin();
    const bool lib_peak = std::max_element(a.averaged.diag_profile.begin(), a.averaged.diag_profile.end()) ==
                          a.averaged.diag_profile.begin();
    if (peak && lib_peak && frac > 0.5 && a.averaged.negativity_fraction > 0.5) ++good;
  }
  report(8, good == 20 && worst_match <= 1e-9,
         fmt("%d/20 seeds peak at offset 1 and majority-negative (min negative fraction %.3f); library vs dense "
             "Theta rel err %.1e",
             good, min_neg, worst_match));
}

// 9. Same seed, byte-identical metrics and checkpoint JSON.
void criterion9() {
  const nlohmann::json j = {
      {"data", {{"synthetic", {{"kind", "seasonal-plus-shocks"}, {"length", 1500}, {"channels", 2}}}, {"L_I", 64}, {"L_P", 16}}},
      {"model", {{"variant", "gated_linear"}, {"num_layers", 2}}},
      {"train", {{"max_epochs", 3}, {"warmup_epochs", 1}, {"max_steps_per_epoch", 5}, {"batch_size", 8}}}};
  auto once = [&](std::uint64_t seed) {
    RunConfig cfg = parse_run_config(j);
    cfg.train.seed = seed;
    const data::SeriesDataset ds = load_dataset(cfg);
    ForecastModel model = build_model(cfg.model, seed);
    const TrainResult r = train(model, ds, cfg.data.input_len, cfg.train);
    return std::make_pair(r.metrics.to_json().dump(2), r.checkpoint.dump(2));
  };
  const auto a = once(2024), b = once(2024), c = once(2025);
  const bool same = a == b;
  const bool differs = a.second != c.second;
  report(9, same && differs,
         fmt("two seed-2024 runs: metrics %s, checkpoint %s (%zu bytes); seed 2025 differs: %s",
             a.first == b.first ? "identical" : "DIFFER", a.second == b.second ? "identical" : "DIFFER",
             a.second.size(), differs ? "yes" : "no"));
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<std::function<void()>> criteria = {criterion1, criterion2, criterion3, criterion4, criterion5,
                                                       criterion6, criterion7, criterion8, criterion9};
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    try {
      criteria[i]();
    } catch (const std::exception& e) {
      report(static_cast<int>(i + 1), false, std::string("exception: ") + e.what());
    }
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
