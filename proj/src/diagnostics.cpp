// SPDX-License-Identifier: Apache-2.0

#include "armattn/diagnostics.hpp"

#include <chrono>

#include "armattn/ops.hpp"
#include "armattn/training.hpp"

namespace armattn {

namespace {

Tensor random_tensor(Shape shape, double stddev, Rng& rng, bool requires_grad) {
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.normal(0.0, stddev);
  return Tensor::from(std::move(shape), std::move(values), requires_grad);
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, stddev);
  return m;
}

constexpr int kCheckDim = 8;
constexpr int kCheckHeads = 2;
constexpr double kCheckInitStd = 0.5;

}  // namespace

GradCheckOptions default_gradcheck_options() {
  GradCheckOptions o;
  o.step = 1e-5;
  o.tolerance = 1e-4;
  // Gradients below 1e-6 compare absolutely. The MA-key gradients of the
  // fixed layer sit near 1e-7, where the difference quotient is round-off.
  o.abs_floor = 1e-6;
  return o;
}

GradCheckReport gradcheck_layer(AttnKind kind, bool ma_enabled, std::uint64_t seed, const GradCheckOptions& options) {
  constexpr std::size_t b = 2, n = 5, d = kCheckDim;
  Rng rng(seed, RngStream::Analysis);
  const AttnVariant var = AttnVariant::make(kind, kCheckDim, kCheckHeads);
  const ArmaConfig cfg = ma_enabled ? ArmaConfig::with_ma(var) : ArmaConfig::autoregressive(var);
  const AttentionWeights w = AttentionWeights::init(cfg, kCheckDim, static_cast<int>(n), rng, kCheckInitStd, kCheckInitStd);
  const Tensor x = random_tensor({b, n, d}, 1.0, rng, true);
  const Tensor probe = random_tensor({b, n, d}, 1.0, rng, false);
  std::vector<Tensor> wrt = {x};
  for (auto& [name, t] : w.named("attn")) wrt.push_back(t);
  return grad_check([&] { return ops::sum(ops::mul(arma_attention_layer(x, w, cfg), probe)); }, wrt, options);
}

GradCheckReport gradcheck_model(AttnKind kind, bool ma_enabled, std::uint64_t seed, const GradCheckOptions& options) {
  ModelConfig mc;
  mc.num_layers = 1;
  mc.heads = kCheckHeads;
  mc.channels = 1;
  mc.model_dim = kCheckDim;
  mc.patch_len = 4;
  mc.max_tokens = 4;
  mc.dropout = 0.0;
  mc.kind = kind;
  mc.ma_enabled = ma_enabled;
  mc.init_std = kCheckInitStd;
  const ForecastModel model = build_model(mc, seed);
  Rng rng(seed, RngStream::Analysis);
  const Tensor inputs = random_tensor({2, 4, 4}, 1.0, rng, false);
  const Tensor targets = random_tensor({2, 4, 4}, 1.0, rng, false);
  return grad_check([&] { return weighted_token_loss(model.forward(inputs), targets, 4.0); }, model.parameters(),
                    options);
}

std::vector<GradCheckRow> gradcheck_all(std::uint64_t seed, const GradCheckOptions& options) {
  std::vector<GradCheckRow> rows;
  for (AttnKind kind : kAllAttnKinds) {
    for (bool ma : {false, true}) {
      rows.push_back({"layer", kind, ma, gradcheck_layer(kind, ma, seed, options)});
      rows.push_back({"model", kind, ma, gradcheck_model(kind, ma, seed, options)});
    }
  }
  return rows;
}

std::vector<ParamRow> param_table(ModelConfig base) {
  std::vector<ParamRow> rows;
  for (AttnKind kind : kAllAttnKinds) {
    base.kind = kind;
    base.wv_identity.reset();
    base.ma_enabled = false;
    const std::size_t ar = build_model(base, 0).param_count();
    base.ma_enabled = true;
    const std::size_t arma = build_model(base, 0).param_count();
    rows.push_back({kind, ar, arma});
  }
  return rows;
}

std::vector<EquivalenceRow> bench_equivalence(int cases, int max_n, int d, int heads, std::uint64_t seed) {
  using clock = std::chrono::steady_clock;
  std::vector<EquivalenceRow> rows;
  for (AttnKind kind : kAllAttnKinds) {
    Rng rng(seed, RngStream::Analysis);
    EquivalenceRow row;
    row.kind = kind;
    row.cases = cases;
    double rec_s = 0.0, par_s = 0.0;
    for (int c = 0; c < cases; ++c) {
      const auto n = static_cast<Eigen::Index>(1 + rng.next() % static_cast<std::uint64_t>(max_n));
      KernelInputs in;
      in.heads = heads;
      in.q = random_matrix(n, d, 1.0, rng);
      in.k = random_matrix(n, d, 1.0, rng);
      in.v = random_matrix(n, d, 1.0, rng);
      in.gate_logits = random_matrix(n, 1, 1.0, rng).col(0);
      in.fixed_weights = random_matrix(n, n, 0.3, rng);

      const auto t0 = clock::now();
      const Matrix rec = run_kernel(kind, KernelForm::Recurrent, in);
      const auto t1 = clock::now();
      const Matrix par = run_kernel(kind, KernelForm::Parallel, in);
      const auto t2 = clock::now();
      rec_s += std::chrono::duration<double>(t1 - t0).count();
      par_s += std::chrono::duration<double>(t2 - t1).count();
      const double scale = std::max(par.cwiseAbs().maxCoeff(), 1e-300);
      row.max_rel_err = std::max(row.max_rel_err, (rec - par).cwiseAbs().maxCoeff() / scale);

      // Perturb one token; every earlier output row must stay bit-identical.
      const auto t_pert = static_cast<Eigen::Index>(rng.next() % static_cast<std::uint64_t>(n));
      KernelInputs pert = in;
      pert.q.row(t_pert).array() += 1.0;
      pert.k.row(t_pert).array() += 1.0;
      pert.v.row(t_pert).array() += 1.0;
      pert.gate_logits(t_pert) += 1.0;
      for (KernelForm form : {KernelForm::Recurrent, KernelForm::Parallel}) {
        const Matrix base = form == KernelForm::Recurrent ? rec : par;
        const Matrix moved = run_kernel(kind, form, pert);
        if (t_pert > 0 && base.topRows(t_pert) != moved.topRows(t_pert)) row.causal = false;
      }
    }
    row.recurrent_ms = 1e3 * rec_s;
    row.parallel_ms = 1e3 * par_s;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace armattn
