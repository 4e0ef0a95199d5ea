#include "selind/estimators.h"

#include <cmath>
#include <limits>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "oracles.h"
#include "selind/error.h"

namespace selind {
namespace {

using testing::Gen;

const Eigen::Matrix2d kP2 = (Eigen::Matrix2d() << 0.9, 0.1, 0.2, 0.8).finished();

void expect_simplex(const Eigen::VectorXd& v) {
  EXPECT_GE(v.minCoeff(), 0.0);
  EXPECT_NEAR(v.sum(), 1.0, 1e-10);
}

TEST(BmaTest, HandComputedPosterior) {
  // seq = (a,a,a,b,a). Lag-1 transitions: .9 * .1 * .2; lag-2: .9 * .1 * .9.
  const TransitionMatrix P(kP2);
  const Sequence seq{0, 0, 0, 1, 0};
  const PredictionRecord r = bma_predict(seq, P, LagSet({1, 2}));
  EXPECT_NEAR(r.lag_weights(0), 2.0 / 11.0, 1e-12);
  EXPECT_NEAR(r.lag_weights(1), 9.0 / 11.0, 1e-12);
  EXPECT_NEAR(r.distribution(0), 3.6 / 11.0, 1e-12);
  EXPECT_NEAR(r.distribution(1), 7.4 / 11.0, 1e-12);
  EXPECT_FALSE(r.selected_lag.has_value());
  EXPECT_EQ(r.method, Method::kBma);
}

TEST(BmaTest, EqualLikelihoodCase) {
  const TransitionMatrix P(kP2);
  const Sequence seq{0, 0, 0, 1, 1};
  const PredictionRecord r = bma_predict(seq, P, LagSet({1, 2}));
  EXPECT_NEAR(r.lag_weights(0), 8.0 / 9.0, 1e-12);
  EXPECT_NEAR(r.distribution(1), 0.8, 1e-12);
}

TEST(BmaTest, UniformMatrixAndSingleLag) {
  Gen gen(3);
  const Sequence seq = gen.tokens(12, 3);
  const PredictionRecord u = bma_predict(seq, TransitionMatrix::uniform(3), LagSet({1, 2, 3}));
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(u.lag_weights(c), 1.0 / 3.0, 1e-12);
  for (int s = 0; s < 3; ++s) EXPECT_NEAR(u.distribution(s), 1.0 / 3.0, 1e-12);
  const TransitionMatrix P(gen.stochastic_matrix(3));
  const PredictionRecord one = bma_predict(seq, P, LagSet({2}));
  EXPECT_DOUBLE_EQ(one.lag_weights(0), 1.0);
  EXPECT_LT((one.distribution - P.row(seq[10])).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(BmaTest, StableForLongSequences) {
  // Raw likelihood products underflow here; log-space weights must not.
  const TransitionMatrix P = sample_transition_matrix(9, 5);
  const SequenceBatch b = sample_batch(P, LagSet({1, 2, 3}), 1, 3000, 4);
  const PredictionRecord r = bma_predict(b.sequence(0), P, LagSet({1, 2, 3}));
  EXPECT_TRUE(r.lag_weights.allFinite());
  expect_simplex(r.lag_weights);
  expect_simplex(r.distribution);
}

TEST(MleTest, HandCaseAndTies) {
  const TransitionMatrix P(kP2);
  const Sequence seq{0, 0, 0, 1, 0};
  const PredictionRecord r = mle_predict(seq, P, LagSet({1, 2}));
  EXPECT_EQ(r.selected_lag, 2);
  EXPECT_DOUBLE_EQ(r.lag_weights(1), 1.0);
  EXPECT_DOUBLE_EQ(r.distribution(0), 0.2);
  const PredictionRecord tie = mle_predict(seq, TransitionMatrix::uniform(2), LagSet({2, 3, 4}));
  EXPECT_EQ(tie.selected_lag, 2);
  EXPECT_EQ(mle_predict(seq, P, LagSet({3})).selected_lag, 3);
}

TEST(ConstructionEstimateTest, HandComputedWeights) {
  // Summed p~ over positions 3..5 is 13/11 for lag 1 and 20/11 for lag 2.
  const TransitionMatrix P(kP2);
  const Sequence seq{0, 0, 0, 1, 0};
  const PredictionRecord r = construction_estimate(seq, P, LagSet({1, 2}), 3.0);
  const double w1 = 1.0 / (1.0 + std::exp(7.0 / 11.0));
  EXPECT_NEAR(r.lag_weights(0), w1, 1e-12);
  EXPECT_NEAR(r.distribution(0), w1 * 0.9 + (1 - w1) * 0.2, 1e-12);
  EXPECT_EQ(hardmax_predict(seq, P, LagSet({1, 2})).selected_lag, 2);
}

TEST(ConstructionEstimateTest, DegenerateCases) {
  Gen gen(8);
  const Sequence seq = gen.tokens(20, 4);
  const TransitionMatrix P(gen.stochastic_matrix(4));
  const LagSet lags({1, 2, 3});
  const PredictionRecord flat = construction_estimate(seq, P, lags, 0.0);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(flat.lag_weights(c), 1.0 / 3.0, 1e-15);
  const PredictionRecord u = construction_estimate(seq, TransitionMatrix::uniform(4), lags, 100);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(u.lag_weights(c), 1.0 / 3.0, 1e-12);
  const PredictionRecord one = construction_estimate(seq, P, LagSet({2}), 100);
  EXPECT_LT(kl_divergence(P.row(seq[18]), one.distribution), 1e-15);
  EXPECT_THROW(construction_estimate(std::vector<int>{0, 1, 2}, P, lags, 1.0), Error);
}

TEST(HardmaxTest, LargeBetaAgreesAndTemperatureFree) {
  Gen gen(12);
  for (int trial = 0; trial < 300; ++trial) {
    const TransitionMatrix P(gen.stochastic_matrix(5));
    const LagSet lags({1, 2, 3});
    const Sequence seq = gen.tokens(10 + gen.below(60), 5);
    const PredictionRecord h = hardmax_predict(seq, P, lags);
    const PredictionRecord c = construction_estimate(seq, P, lags, 1e4);
    Eigen::Index best = 0;
    c.lag_weights.maxCoeff(&best);
    EXPECT_EQ(lags[static_cast<int>(best)], *h.selected_lag);
    expect_simplex(h.distribution);
    expect_simplex(c.distribution);
    expect_simplex(c.lag_weights);
  }
  EXPECT_EQ(hardmax_predict(std::vector<int>{0, 1, 0, 1}, TransitionMatrix::uniform(2),
                            LagSet({1, 2}))
                .selected_lag,
            1);
}

TEST(KlTest, ClosedForms) {
  const Eigen::Vector2d p(1.0, 0.0), q(0.5, 0.5);
  EXPECT_NEAR(kl_divergence(p, q), std::log(2.0), 1e-15);
  EXPECT_EQ(kl_divergence(q, q), 0.0);
  EXPECT_EQ(kl_divergence(q, p), std::numeric_limits<double>::infinity());
  EXPECT_THROW(kl_divergence(q, Eigen::Vector3d(0.2, 0.3, 0.5)), Error);
}

TEST(KlTest, NonnegativeOnRandomPairs) {
  Gen gen(31);
  for (int i = 0; i < 10000; ++i) {
    const int S = 2 + gen.below(9);
    const Eigen::VectorXd p = gen.distribution(S);
    const Eigen::VectorXd q = gen.distribution(S);
    const double d = kl_divergence(p, q);
    EXPECT_GE(d, 0.0);
    EXPECT_NEAR(d, testing::kl(p, q), 1e-12);
  }
}

TEST(EstimatorOptimalityTest, BmaMinimizesExpectedKl) {
  // Exact expectation over all 64 sequences and both lags.
  const TransitionMatrix P(kP2);
  const LagSet lags({1, 2});
  double expected[4] = {0, 0, 0, 0};
  testing::for_each_sequence(6, 2, [&](const std::vector<int>& seq) {
    for (int k : {1, 2}) {
      const double w = 0.5 * testing::sequence_probability(seq, P.entries(), P.stationary(), k, 2);
      const Eigen::VectorXd truth = P.row(seq[6 - k]);
      expected[0] += w * kl_divergence(truth, bma_predict(seq, P, lags).distribution);
      expected[1] += w * kl_divergence(truth, mle_predict(seq, P, lags).distribution);
      expected[2] += w * kl_divergence(truth, construction_estimate(seq, P, lags, 100).distribution);
      expected[3] += w * kl_divergence(truth, hardmax_predict(seq, P, lags).distribution);
    }
  });
  for (int m = 1; m < 4; ++m) {
    EXPECT_TRUE(std::isfinite(expected[m]));
    EXPECT_LE(expected[0], expected[m] + 1e-15);
  }
}

TEST(PredictionRecordTest, JsonFields) {
  const TransitionMatrix P(kP2);
  const Sequence seq{0, 0, 0, 1, 0};
  nlohmann::json j = mle_predict(seq, P, LagSet({1, 2}));
  EXPECT_EQ(j["method"], "mle");
  EXPECT_EQ(j["selected_lag"], 2);
  EXPECT_EQ(j["lag_weights"].size(), 2u);
  EXPECT_EQ(j["distribution"].size(), 2u);
  nlohmann::json b = bma_predict(seq, P, LagSet({1, 2}));
  EXPECT_TRUE(b["selected_lag"].is_null());
}

}  // namespace
}  // namespace selind
