// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "armattn/ma_analysis.hpp"
#include "armattn/rng.hpp"
#include "json.hpp"

using namespace armattn;

namespace {

Matrix randm(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

Matrix random_strict_lower(int n, Rng& rng, double scale) {
  Matrix b = scale * randm(n, n, rng);
  b.triangularView<Eigen::Upper>().setZero();
  return b;
}

// sum_{p>=1} B^p, exact once B^p vanishes.
Matrix power_series(const Matrix& b) {
  Matrix total = Matrix::Zero(b.rows(), b.cols());
  Matrix term = b;
  for (Eigen::Index p = 1; p <= b.rows(); ++p) {
    total += term;
    term = term * b;
  }
  return total;
}

}  // namespace

TEST(ExplicitB, TwoTokens) {
  const Matrix q = (Matrix(2, 2) << -1.0, 0.5, 7, 7).finished();
  const Matrix k = (Matrix(2, 2) << 0.3, -2.0, 7, 7).finished();
  const ma::PhiPair phi;
  const Matrix b = ma::explicit_B(q, k, phi);
  const Matrix pq = ma::apply_phi_q(q, phi), pk = ma::apply_phi_k(k, phi);
  EXPECT_DOUBLE_EQ(b(1, 0), pq.row(0).dot(pk.row(0)) / 2.0);
  EXPECT_EQ(b(0, 0), 0.0);
  EXPECT_EQ(b(0, 1), 0.0);
  EXPECT_EQ(b(1, 1), 0.0);
}

TEST(ExplicitB, ZeroQueryGivesZero) {
  Rng rng(1);
  EXPECT_TRUE(ma::explicit_B(Matrix::Zero(6, 4), randm(6, 4, rng), {}).isZero(0.0));
}

TEST(Theta, NilpotentOrderTwo) {
  const Matrix b = (Matrix(2, 2) << 0, 0, -0.3, 0).finished();
  EXPECT_EQ(ma::implicit_theta(b), b);
  EXPECT_TRUE(ma::implicit_theta(Matrix::Zero(5, 5)).isZero(0.0));
}

TEST(Theta, ThreeByThreeConstant) {
  Matrix b = Matrix::Zero(3, 3);
  b(1, 0) = b(2, 1) = b(2, 0) = -0.5;
  const Matrix theta = ma::implicit_theta(b);
  const Matrix want = (Matrix(3, 3) << 0, 0, 0, -0.5, 0, 0, -0.25, -0.5, 0).finished();
  EXPECT_LT((theta - want).cwiseAbs().maxCoeff(), 1e-15);

  const Matrix r = (Matrix(3, 1) << 1, 0, 0).finished();
  const Matrix eps = ma::recover_epsilon(theta, r);
  EXPECT_NEAR(eps(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(eps(1, 0), 0.5, 1e-15);
  EXPECT_NEAR(eps(2, 0), 0.5, 1e-15);
}

TEST(Theta, MatchesPowerSeries) {
  Rng rng(2);
  for (int n : {3, 8, 20}) {
    const Matrix b = random_strict_lower(n, rng, 0.3);
    EXPECT_LT((ma::implicit_theta(b) - power_series(b)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Theta, StaysStrictlyLower) {
  Rng rng(3);
  const Matrix theta = ma::implicit_theta(random_strict_lower(12, rng, 0.5));
  for (Eigen::Index i = 0; i < 12; ++i) {
    for (Eigen::Index j = i; j < 12; ++j) EXPECT_EQ(theta(i, j), 0.0);
  }
  EXPECT_THROW(ma::implicit_theta(Matrix::Identity(3, 3)), std::invalid_argument);
}

TEST(Epsilon, IdentityAndRoundTrip) {
  Rng rng(4);
  const Matrix r = randm(10, 3, rng);
  EXPECT_EQ(ma::recover_epsilon(Matrix::Zero(10, 10), r), r);
  const Matrix theta = ma::implicit_theta(random_strict_lower(10, rng, 0.4));
  const Matrix eps = ma::recover_epsilon(theta, r);
  const Matrix back = (Matrix::Identity(10, 10) + theta) * eps;
  EXPECT_LT((back - r).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Epsilon, EqualsWeightedResiduals) {
  Rng rng(5);
  const Matrix q = randm(16, 8, rng), k = randm(16, 8, rng), r = randm(16, 2, rng);
  const Matrix b = ma::explicit_B(q, k, {});
  const Matrix theta = ma::implicit_theta(b);
  const Matrix lhs = b * r, rhs = theta * ma::recover_epsilon(theta, r);
  EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff() / lhs.cwiseAbs().maxCoeff(), 1e-9);
}

TEST(ClosedForm, MatchesImplicitTheta) {
  for (double b : {-0.9, -0.5, -0.1, 0.1}) {
    for (int n = 2; n <= 32; ++n) {
      const Matrix want = ma::implicit_theta(ma::constant_B(b, n));
      EXPECT_LE((ma::constant_b_theta(b, n) - want).cwiseAbs().maxCoeff(), 1e-12) << "b=" << b << " n=" << n;
    }
  }
}

TEST(ClosedForm, ZeroAndSubdiagonal) {
  EXPECT_TRUE(ma::constant_b_theta(0.0, 7).isZero(0.0));
  const Matrix t = ma::constant_b_theta(-0.37, 9);
  for (Eigen::Index i = 1; i < 9; ++i) EXPECT_EQ(t(i, i - 1), -0.37);
  // theta_ij = b (1 + b)^(i - j - 1)
  EXPECT_NEAR(t(8, 2), -0.37 * std::pow(0.63, 5), 1e-15);
}

TEST(ClosedForm, DecaysForNegativeB) {
  for (double b : {-1.5, -0.9, -0.5, -0.1}) {
    const auto prof = ma::diag_profile(ma::constant_b_theta(b, 24));
    for (std::size_t i = 1; i < prof.size(); ++i) EXPECT_LE(prof[i], prof[i - 1] + 1e-15) << b;
  }
}

TEST(Profile, DiagonalMeans) {
  const Matrix t = (Matrix(3, 3) << 0, 0, 0, -1, 0, 0, 4, 3, 0).finished();
  const auto prof = ma::diag_profile(t);
  ASSERT_EQ(prof.size(), 2u);
  EXPECT_DOUBLE_EQ(prof[0], 2.0);
  EXPECT_DOUBLE_EQ(prof[1], 4.0);
  EXPECT_DOUBLE_EQ(ma::negativity_fraction(t), 1.0 / 3.0);
}

// With q, k standard normal: mean beta < 0 and the positive part is capped by
// the leaky slope, i.e. beta <= slope * max(phi_k) * max(|q| / sqrt(d)).
TEST(SignStatistics, ThousandSeeds) {
  const ma::PhiPair phi;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed, RngStream::Analysis);
    const Matrix q = randm(64, 32, rng), k = randm(64, 32, rng);
    const Matrix b = ma::explicit_B(q, k, phi);
    double sum = 0.0, max_pos = 0.0;
    for (Eigen::Index i = 1; i < 64; ++i) {
      for (Eigen::Index j = 0; j < i; ++j) {
        sum += b(i, j);
        max_pos = std::max(max_pos, b(i, j));
      }
    }
    ASSERT_LT(sum, 0.0) << seed;
    const double bound = phi.leaky_slope * ma::apply_phi_k(k, phi).maxCoeff() * q.cwiseAbs().maxCoeff() / std::sqrt(32.0);
    ASSERT_LE(max_pos, bound) << seed;
  }
}

TEST(Registry, NamesAndApplication) {
  EXPECT_EQ(ma::query_phi_names().size(), 8u);
  EXPECT_EQ(ma::key_phi_names(), std::vector<std::string>{"sigmoid"});
  ma::PhiPair bad;
  bad.q_name = "tanh";
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  ma::PhiPair pos;
  pos.q_name = "pos-relu";
  const Matrix q = (Matrix(1, 4) << 2, -2, 0.5, -0.5).finished();
  const Matrix y = ma::apply_phi_q(q, pos);
  EXPECT_DOUBLE_EQ(y(0, 0), 1.0);
  EXPECT_EQ(y(0, 1), 0.0);
  ma::PhiPair neg;
  neg.q_name = "neg-relu";
  const Matrix z = ma::apply_phi_q(q, neg);
  EXPECT_EQ(z(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(z(0, 1), -1.0);
}

TEST(Simulate, PerHeadAndAverage) {
  const auto a = ma::simulate(16, 8, 2, {}, 3);
  ASSERT_EQ(a.per_head.size(), 2u);
  const Matrix avg = 0.5 * (a.per_head[0].B + a.per_head[1].B);
  EXPECT_LT((a.averaged.B - avg).cwiseAbs().maxCoeff(), 1e-15);
  const auto again = ma::simulate(16, 8, 2, {}, 3);
  EXPECT_EQ(a.averaged.Theta, again.averaged.Theta);
}

TEST(Export, WritesMapsAndSidecar) {
  const auto dir = std::filesystem::temp_directory_path() / "armattn_export_test";
  std::filesystem::create_directories(dir);
  const auto a = ma::simulate(64, 32, 1, {}, 7);
  const std::string prefix = (dir / "map").string();
  ma::export_weight_maps(a.averaged, prefix);
  std::ifstream theta(prefix + "_theta.csv");
  std::string line;
  int rows = 0;
  while (std::getline(theta, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 63);
  }
  EXPECT_EQ(rows, 64);
  std::ifstream side(prefix + ".json");
  const auto j = nlohmann::json::parse(side);
  EXPECT_EQ(j["n"], 64);
  EXPECT_EQ(j["d"], 32);
  EXPECT_EQ(j["phi_q"], "neg-leaky-relu");
  EXPECT_TRUE(std::filesystem::exists(prefix + "_B.csv"));
  std::filesystem::remove_all(dir);
}
