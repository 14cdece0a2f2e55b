// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "armattn/arma.hpp"
#include "armattn/attention_ops.hpp"
#include "armattn/diagnostics.hpp"
#include "armattn/grad_check.hpp"
#include "armattn/ma_analysis.hpp"
#include "armattn/ops.hpp"

using namespace armattn;

namespace {

Matrix randm(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

Tensor randt(Shape shape, Rng& rng, bool grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal();
  return Tensor::from(std::move(shape), std::move(v), grad);
}

// Explicit oracle: B (N x N, per head) applied to the residuals padded with
// a zero last row.
Matrix explicit_ma(const Matrix& q, const Matrix& k, const Matrix& r, int heads) {
  const Eigen::Index n = q.rows(), d = q.cols(), w = d / heads;
  Matrix padded = Matrix::Zero(n, d);
  padded.topRows(n - 1) = r;
  const auto bs = ma::explicit_B_heads(q, k, ma::PhiPair{}, heads);
  Matrix out(n, d);
  for (int h = 0; h < heads; ++h) out.middleCols(h * w, w) = bs[static_cast<std::size_t>(h)] * padded.middleCols(h * w, w);
  return out;
}

}  // namespace

TEST(Phi, QueryValues) {
  const int d = 16;
  const double s = std::sqrt(16.0);
  const Matrix q = (Matrix(1, 3) << 0.0, -s, s).finished();
  const Matrix y = phi_q_ma(q, d, 0.02);
  EXPECT_EQ(y(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(y(0, 1), -1.0);
  EXPECT_DOUBLE_EQ(y(0, 2), 0.02);
}

TEST(Phi, KeyValues) {
  const Matrix k = (Matrix(1, 3) << 0.0, 1e6, 4.0).finished();
  const Matrix y = phi_k_ma(k, 16, 0.05);
  EXPECT_EQ(y(0, 0), 0.5);
  EXPECT_LE(y(0, 1), 1.0);
  EXPECT_GT(y(0, 1), 0.999);
  EXPECT_NEAR(y(0, 2), 0.51250, 5e-6);
  EXPECT_DOUBLE_EQ(y(0, 2), 1.0 / (1.0 + std::exp(-0.05)));
}

TEST(TokenShift, HandExample) {
  const Matrix v = (Matrix(3, 1) << 1, 2, 3).finished();
  const Matrix o = (Matrix(3, 1) << 0.5, 1.5, 2.5).finished();
  const Matrix r = token_shift_residual(v, o);
  ASSERT_EQ(r.rows(), 2);
  EXPECT_DOUBLE_EQ(r(0, 0), 1.5);
  EXPECT_DOUBLE_EQ(r(1, 0), 1.5);
}

TEST(TokenShift, PerfectPredictorGivesZero) {
  const Matrix v = (Matrix(4, 2) << 1, 2, 3, 4, 5, 6, 7, 8).finished();
  Matrix o = Matrix::Zero(4, 2);
  o.topRows(3) = v.bottomRows(3);
  EXPECT_TRUE(token_shift_residual(v, o).isZero(0.0));
  EXPECT_EQ(token_shift_residual(v.topRows(2), o.topRows(2)).rows(), 1);
}

TEST(MaOutput, EmptyHistoryAndZeroResidual) {
  Rng rng(1);
  const MaParams p{0.05, 0.02, 2, MaForm::Linear};
  EXPECT_TRUE(ma_output(randm(1, 4, rng), randm(1, 4, rng), Matrix(0, 4), p).isZero(0.0));
  EXPECT_TRUE(ma_output(randm(6, 4, rng), randm(6, 4, rng), Matrix::Zero(5, 4), p).isZero(0.0));
}

TEST(MaOutput, MatchesExplicitB) {
  Rng rng(2);
  for (int heads : {1, 2}) {
    const Matrix q = randm(8, 4, rng), k = randm(8, 4, rng), r = randm(7, 4, rng);
    const Matrix got = ma_output(q, k, r, {0.05, 0.02, heads, MaForm::Linear});
    const Matrix want = explicit_ma(q, k, r, heads);
    EXPECT_LE((got - want).cwiseAbs().maxCoeff() / want.cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(MaOutput, ElementWiseIsPerChannelB) {
  Rng rng(3);
  const Matrix q = randm(9, 3, rng), k = randm(9, 3, rng), r = randm(8, 3, rng);
  const Matrix got = ma_output(q, k, r, {0.05, 0.02, 3, MaForm::ElementWise});
  const Matrix want = explicit_ma(q, k, r, 3);
  EXPECT_LE((got - want).cwiseAbs().maxCoeff() / want.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MaOutput, TensorFormMatchesMatrixForm) {
  Rng rng(4);
  const Matrix q = randm(7, 6, rng), k = randm(7, 6, rng), r = randm(6, 6, rng);
  const MaParams p{0.05, 0.02, 3, MaForm::Linear};
  const Matrix want = ma_output(q, k, r, p);
  const Tensor got = ma_output(attn::to_tensor(q), attn::to_tensor(k), attn::to_tensor(r), p);
  EXPECT_LE((attn::to_matrix(got) - want).cwiseAbs().maxCoeff(), 1e-14);
}

class LayerTest : public ::testing::TestWithParam<AttnKind> {};

TEST_P(LayerTest, DisabledMaReproducesArLayer) {
  Rng rng(5);
  const AttnVariant var = AttnVariant::make(GetParam(), 8, 2);
  ArmaConfig cfg = ArmaConfig::with_ma(var);
  const AttentionWeights w = AttentionWeights::init(cfg, 8, 6, rng, 0.3, 0.3);
  const Tensor x = randt({2, 6, 8}, rng);
  const ArmaLayerOutput full = arma_attention_forward(x, w, cfg);
  cfg.ma_enabled = false;
  const Tensor ar_only = arma_attention_layer(x, w, cfg);
  const Tensor expect = ops::matmul(full.ar, w.w_o);
  for (std::size_t i = 0; i < expect.numel(); ++i) EXPECT_EQ(ar_only.data()[i], expect.data()[i]);
}

TEST_P(LayerTest, SingleTokenHasNoMaTerm) {
  Rng rng(6);
  const ArmaConfig cfg = ArmaConfig::with_ma(AttnVariant::make(GetParam(), 8, 2));
  const AttentionWeights w = AttentionWeights::init(cfg, 8, 4, rng, 0.3, 0.3);
  const ArmaLayerOutput out = arma_attention_forward(randt({3, 1, 8}, rng), w, cfg);
  const Tensor expect = ops::matmul(out.ar, w.w_o);
  for (std::size_t i = 0; i < expect.numel(); ++i) EXPECT_EQ(out.output.data()[i], expect.data()[i]);
}

TEST_P(LayerTest, CausalUnderPerturbation) {
  Rng rng(7);
  const ArmaConfig cfg = ArmaConfig::with_ma(AttnVariant::make(GetParam(), 8, 2));
  const AttentionWeights w = AttentionWeights::init(cfg, 8, 10, rng, 0.3, 0.3);
  const Tensor x = randt({1, 10, 8}, rng);
  std::vector<double> moved(x.data().begin(), x.data().end());
  for (std::size_t c = 0; c < 8; ++c) moved[6 * 8 + c] += 2.0;
  const Tensor a = arma_attention_layer(x, w, cfg);
  const Tensor b = arma_attention_layer(Tensor::from({1, 10, 8}, moved), w, cfg);
  for (std::size_t i = 0; i < 6 * 8; ++i) EXPECT_EQ(a.data()[i], b.data()[i]) << to_string(GetParam());
  bool changed = false;
  for (std::size_t i = 6 * 8; i < 80; ++i) changed |= a.data()[i] != b.data()[i];
  EXPECT_TRUE(changed);
}

TEST_P(LayerTest, ParameterParity) {
  Rng rng(8);
  const AttnVariant var = AttnVariant::make(GetParam(), 16, 4);
  const auto ar = AttentionWeights::init(ArmaConfig::autoregressive(var), 16, 12, rng, 0.02, 0.02).param_count();
  const auto arma = AttentionWeights::init(ArmaConfig::with_ma(var), 16, 12, rng, 0.02, 0.02).param_count();
  if (GetParam() == AttnKind::Fixed) {
    EXPECT_EQ(arma, ar + 2u * 12u * 16u);
  } else {
    EXPECT_EQ(arma, ar);
  }
}

TEST_P(LayerTest, FourTokenLayerGradient) {
  Rng rng(9);
  const ArmaConfig cfg = ArmaConfig::with_ma(AttnVariant::make(GetParam(), 8, 2));
  const AttentionWeights w = AttentionWeights::init(cfg, 8, 4, rng, 0.5, 0.5);
  const Tensor x = randt({1, 4, 8}, rng, true);
  const Tensor probe = randt({1, 4, 8}, rng);
  std::vector<Tensor> wrt = {x};
  for (auto& [name, t] : w.named("attn")) wrt.push_back(t);
  const auto r = grad_check([&] { return ops::sum(ops::mul(arma_attention_layer(x, w, cfg), probe)); }, wrt,
                            default_gradcheck_options());
  EXPECT_TRUE(r.pass) << r.max_rel_err << " tensor " << r.worst_tensor << " index " << r.worst_index;
}

INSTANTIATE_TEST_SUITE_P(AllKinds, LayerTest, ::testing::ValuesIn(kAllAttnKinds),
                         [](const auto& info) { return std::string(to_string(info.param)); });

// With a plain sum loss the fixed layer's MA-key gradients are ~1e-7 and the
// central difference is dominated by round-off: the error shrinks as h grows.
TEST(Layer, FixedSumLossErrorIsRoundOff) {
  std::vector<double> errs;
  for (double h : {1e-3, 1e-5, 1e-6}) {
    Rng rng(9);
    const ArmaConfig cfg = ArmaConfig::with_ma(AttnVariant::make(AttnKind::Fixed, 8, 2));
    const AttentionWeights w = AttentionWeights::init(cfg, 8, 4, rng, 0.5, 0.5);
    const Tensor x = randt({1, 4, 8}, rng, true);
    std::vector<Tensor> wrt = {x};
    for (auto& [name, t] : w.named("attn")) wrt.push_back(t);
    GradCheckOptions o;
    o.step = h;
    o.abs_floor = 1e-6;
    o.roundoff_floor = false;
    errs.push_back(grad_check([&] { return ops::sum(arma_attention_layer(x, w, cfg)); }, wrt, o).max_rel_err);
  }
  EXPECT_LE(errs[0], 1e-5);
  EXPECT_LT(errs[0], errs[1]);
  EXPECT_LT(errs[1], errs[2]);
}

TEST(Layer, SeparateMaQueryAddsOneMatrix) {
  Rng rng(10);
  const AttnVariant var = AttnVariant::make(AttnKind::Linear, 8, 2);
  ArmaConfig cfg = ArmaConfig::with_ma(var);
  const auto shared = AttentionWeights::init(cfg, 8, 4, rng, 0.02, 0.02).param_count();
  cfg.share_wq = false;
  EXPECT_EQ(AttentionWeights::init(cfg, 8, 4, rng, 0.02, 0.02).param_count(), shared + 64u);
}

TEST(Layer, ConfigValidation) {
  ArmaConfig cfg = ArmaConfig::with_ma(AttnVariant::make(AttnKind::Linear, 8, 2));
  cfg.alpha = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.alpha = 0.05;
  cfg.leaky_slope = 1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Layer, DropoutKeepsExpectation) {
  Rng rng(11);
  const Tensor x = Tensor::full({20000}, 1.0);
  const Tensor y = dropout(x, 0.1, rng);
  double total = 0.0;
  for (double v : y.data()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.9) < 1e-15);
    total += v;
  }
  EXPECT_NEAR(total / 20000.0, 1.0, 0.02);
}
