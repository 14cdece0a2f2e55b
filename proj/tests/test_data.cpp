// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "armattn/data.hpp"
#include "armattn/rng.hpp"

using namespace armattn;
using namespace armattn::data;

namespace {

Matrix randm(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0, double shift = 0.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = shift + scale * rng.normal();
  return m;
}

SeriesDataset ramp(std::size_t len, int channels) {
  SeriesDataset ds;
  ds.values.resize(static_cast<Eigen::Index>(len), channels);
  for (Eigen::Index r = 0; r < ds.values.rows(); ++r) {
    for (int c = 0; c < channels; ++c) ds.values(r, c) = std::sin(0.1 * static_cast<double>(r) + c) + 0.01 * r;
  }
  for (int c = 0; c < channels; ++c) ds.columns.push_back("c" + std::to_string(c));
  return ds;
}

}  // namespace

TEST(Patching, TokenCounts) {
  EXPECT_EQ(padding(512, 96), 64);
  EXPECT_EQ(token_count(512, 96), 6);
  EXPECT_EQ(padding(512, 12), 4);
  EXPECT_EQ(token_count(512, 12), 43);
  EXPECT_EQ(padding(96, 96), 0);
  EXPECT_EQ(token_count(96, 96), 1);
  EXPECT_THROW(padding(0, 4), std::invalid_argument);
}

TEST(Patching, FrontZeroPadding) {
  Rng rng(1);
  const Matrix w = randm(10, 2, rng);
  const PatchBatch pb = patchify(w, 4);
  EXPECT_EQ(pb.pad, 2);
  EXPECT_EQ(pb.tokens.shape(), (Shape{2, 3, 4}));
  const Matrix norm = revin_normalize(w, pb.revin);
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_EQ(pb.tokens.at({c, 0, 0}), 0.0);
    EXPECT_EQ(pb.tokens.at({c, 0, 1}), 0.0);
    EXPECT_EQ(pb.tokens.at({c, 0, 2}), norm(0, static_cast<Eigen::Index>(c)));
    EXPECT_EQ(pb.tokens.at({c, 2, 3}), norm(9, static_cast<Eigen::Index>(c)));
  }
}

TEST(Patching, UnpatchifyInverts) {
  Rng rng(2);
  for (int lp : {1, 3, 12, 96, 100}) {
    const Matrix w = randm(96, 3, rng, 4.0, 7.0);
    const PatchBatch pb = patchify(w, lp);
    const Matrix back = unpatchify(pb.tokens, pb.pad);
    EXPECT_EQ(back, revin_normalize(w, pb.revin)) << lp;
    EXPECT_LE((revin_denormalize(back, pb.revin) - w).cwiseAbs().maxCoeff(), 1e-10) << lp;
  }
}

TEST(Patching, TargetsAreNextToken) {
  Rng rng(3);
  const Matrix w = randm(14, 2, rng);
  const PatchBatch pb = patchify_with_target(w, 10, 4);
  ASSERT_EQ(pb.targets.shape(), (Shape{2, 3, 4}));
  const Matrix future = revin_normalize(w.bottomRows(4), pb.revin);
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t t = 0; t + 1 < 3; ++t) {
      for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(pb.targets.at({c, t, i}), pb.tokens.at({c, t + 1, i}));
    }
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_EQ(pb.targets.at({c, 2, i}), future(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)));
    }
  }
  EXPECT_THROW(patchify_with_target(w, 9, 4), ShapeError);
}

TEST(Revin, HandExample) {
  const Matrix w = (Matrix(3, 1) << 1, 2, 3).finished();
  const RevinState s = revin_stats(w);
  EXPECT_DOUBLE_EQ(s.mean(0), 2.0);
  EXPECT_DOUBLE_EQ(s.std(0), std::sqrt(2.0 / 3.0));
  const Matrix back = revin_denormalize(revin_normalize(w, s), s);
  EXPECT_LE((back - w).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Revin, ConstantWindow) {
  const Matrix w = Matrix::Constant(5, 2, 3.25);
  const RevinState s = revin_stats(w);
  EXPECT_EQ(s.std(0), kRevinEps);
  const Matrix n = revin_normalize(w, s);
  EXPECT_TRUE(n.isZero(0.0));
  EXPECT_EQ(revin_denormalize(n, s), w);
}

TEST(Revin, RoundTripRandom) {
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const Matrix w = randm(64, 4, rng, 100.0, -50.0);
    const RevinState s = revin_stats(w);
    EXPECT_LE((revin_denormalize(revin_normalize(w, s), s) - w).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Csv, ShapeAndTimestamp) {
  std::istringstream plain("a,b\n1,2\n3,4\n5,6\n");
  const SeriesDataset ds = parse_csv(plain);
  EXPECT_EQ(ds.values.rows(), 3);
  EXPECT_EQ(ds.values.cols(), 2);
  EXPECT_EQ(ds.values(2, 1), 6.0);
  EXPECT_EQ(ds.columns, (std::vector<std::string>{"a", "b"}));

  std::istringstream stamped("date,a,b\n2020-01-01 00:00,1,2\n2020-01-01 01:00,3,4\n");
  const SeriesDataset ts = parse_csv(stamped);
  EXPECT_EQ(ts.channels(), 2);
  EXPECT_EQ(ts.values(1, 0), 3.0);
}

TEST(Csv, Errors) {
  std::istringstream missing("a,b\n1,2\n3,\n");
  try {
    parse_csv(missing, "m.csv");
    FAIL() << "missing cell accepted";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'b'"), std::string::npos) << msg;
  }
  std::istringstream bad("a,b\n1,2\n3,x\n");
  EXPECT_THROW(parse_csv(bad), std::invalid_argument);
  std::istringstream ragged("a,b\n1,2\n3\n");
  EXPECT_THROW(parse_csv(ragged), std::invalid_argument);
  std::istringstream empty("");
  EXPECT_THROW(parse_csv(empty), std::invalid_argument);
}

TEST(Split, GenericRatios) {
  const SeriesDataset ds = split_standardize(ramp(100, 2), {});
  EXPECT_EQ(ds.train.size(), 70u);
  EXPECT_EQ(ds.val.size(), 10u);
  EXPECT_EQ(ds.test.size(), 20u);
  EXPECT_EQ(ds.val.begin, 70u);
  EXPECT_EQ(ds.test.end, 100u);
}

TEST(Split, TrainStatisticsOnly) {
  const SeriesDataset a = split_standardize(ramp(200, 3), {});
  const auto train = a.values.topRows(140);
  EXPECT_LE(train.colwise().mean().cwiseAbs().maxCoeff(), 1e-10);
  const RowVector var = (train.rowwise() - train.colwise().mean()).colwise().squaredNorm() / 140.0;
  EXPECT_LE((var.array() - 1.0).abs().maxCoeff(), 1e-10);

  SeriesDataset moved = ramp(200, 3);
  moved.values.bottomRows(40).array() += 1000.0;
  const SeriesDataset b = split_standardize(moved, {});
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.std, b.std);
  EXPECT_EQ(a.values.topRows(160), b.values.topRows(160));
}

TEST(Split, ConstantColumn) {
  SeriesDataset ds = ramp(50, 2);
  ds.values.col(1).setConstant(4.0);
  const SeriesDataset s = split_standardize(ds, {});
  EXPECT_TRUE(s.values.col(1).isZero(0.0));
}

TEST(Split, PresetsAndErrors) {
  SplitSpec ett{"ett-hourly"};
  EXPECT_THROW(split_standardize(ramp(1000, 1), ett), std::invalid_argument);
  const SeriesDataset e = split_standardize(ramp(20 * 30 * 24, 1), ett);
  EXPECT_EQ(e.train.size(), 12u * 30 * 24);
  EXPECT_EQ(e.test.size(), 4u * 30 * 24);
  SplitSpec none{"ratios", 0.0, 0.5, 0.5};
  EXPECT_THROW(split_standardize(ramp(100, 1), none), std::invalid_argument);
  SplitSpec over{"ratios", 0.8, 0.2, 0.2};
  EXPECT_THROW(split_standardize(ramp(100, 1), over), std::invalid_argument);
  EXPECT_THROW(split_standardize(ramp(100, 1), SplitSpec{"weekly"}), std::invalid_argument);
}

TEST(Windows, StartsAndBatch) {
  const auto starts = window_starts({10, 30}, 8);
  ASSERT_EQ(starts.size(), 13u);
  EXPECT_EQ(starts.front(), 10u);
  EXPECT_EQ(starts.back(), 22u);
  EXPECT_TRUE(window_starts({0, 5}, 8).empty());

  const SeriesDataset ds = split_standardize(ramp(60, 2), {});
  const Batch b = make_batch(ds, {0, 5, 9}, 6, 2);
  EXPECT_EQ(b.inputs.shape(), (Shape{6, 3, 2}));
  EXPECT_EQ(b.revin.size(), 3u);
  const PatchBatch one = patchify_with_target(ds.values.middleRows(5, 8), 6, 2);
  for (std::size_t i = 0; i < one.tokens.numel(); ++i) EXPECT_EQ(b.inputs.data()[2 * 3 * 2 + i], one.tokens.data()[i]);
  EXPECT_THROW(make_batch(ds, {55}, 6, 2), std::out_of_range);
}

TEST(Synthetic, Determinism) {
  for (const char* kind : {"seasonal", "arma11", "seasonal-plus-shocks"}) {
    SyntheticSpec s{kind, 500, 2, 0.1};
    EXPECT_EQ(gen_synthetic(s, 3).values, gen_synthetic(s, 3).values) << kind;
    EXPECT_NE(gen_synthetic(s, 3).values, gen_synthetic(s, 4).values) << kind;
  }
  EXPECT_THROW(gen_synthetic(SyntheticSpec{"walk"}, 0), std::invalid_argument);
}

// rho_1 = (1 + phi theta)(phi + theta) / (1 + 2 phi theta + theta^2), phi = 0.7, theta = -0.5.
TEST(Synthetic, Arma11LagOneAutocorrelation) {
  const double phi = 0.7, theta = -0.5;
  const double rho = (1 + phi * theta) * (phi + theta) / (1 + 2 * phi * theta + theta * theta);
  EXPECT_NEAR(rho, 0.2364, 1e-4);
  const SeriesDataset ds = gen_synthetic({"arma11", 10000, 1, 0.0}, 11);
  const auto x = ds.values.col(0);
  const double mean = x.mean();
  double num = 0.0, den = 0.0;
  for (Eigen::Index t = 0; t < x.size(); ++t) {
    den += (x(t) - mean) * (x(t) - mean);
    if (t > 0) num += (x(t) - mean) * (x(t - 1) - mean);
  }
  EXPECT_NEAR(num / den, rho, 0.1);
}

TEST(Synthetic, NoiselessSeasonalIsPeriodic) {
  const SeriesDataset ds = gen_synthetic({"seasonal", 960, 3, 0.0}, 5);
  for (Eigen::Index t = 96; t < 960; ++t) EXPECT_EQ(ds.values.row(t), ds.values.row(t - 96));
}
