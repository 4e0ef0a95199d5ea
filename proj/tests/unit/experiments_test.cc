#include "selind/experiments.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "oracles.h"
#include "selind/error.h"
#include "selind/estimators.h"

namespace selind {
namespace {

using testing::Gen;

const KlCurve& find(const std::vector<KlCurve>& curves, const std::string& method) {
  for (const KlCurve& c : curves) {
    if (c.method == method) return c;
  }
  throw std::runtime_error("missing curve " + method);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

TEST(KlCurveTest, SingleLagIsExact) {
  const TransitionMatrix P = sample_transition_matrix(std::uint64_t{3}, 4);
  KlCurveOptions opts;
  opts.hardmax = true;
  const auto curves = kl_curve(P, LagSet({2}), 20, 15, 1, opts);
  for (const KlCurve& c : curves) {
    EXPECT_EQ(c.first_position, 3);
    ASSERT_EQ(c.mean_kl.size(), 13u);
    for (double v : c.mean_kl) EXPECT_NEAR(v, 0.0, 1e-12) << c.method;
  }
}

TEST(KlCurveTest, MeansMatchDirectAverage) {
  const TransitionMatrix P = sample_transition_matrix(std::uint64_t{5}, 3);
  const LagSet lags({1, 2, 3});
  const SequenceBatch batch = sample_batch(P, lags, 12, 20, 8);
  KlCurveOptions opts;
  opts.mle = false;
  opts.oracle = false;
  const KlCurve bma = find(kl_curve(P, lags, batch, opts), "bma");
  for (int t = 4; t <= 20; ++t) {
    std::vector<double> v;
    for (int n = 0; n < 12; ++n) {
      const auto seq = batch.sequence(n);
      const std::vector<int> prefix(seq.begin(), seq.begin() + t);
      const Eigen::VectorXd truth = P.row(prefix[t - batch.true_lags[n]]);
      v.push_back(testing::kl(truth, bma_predict(prefix, P, lags).distribution));
    }
    double mean = 0.0;
    for (double x : v) mean += x / v.size();
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean) / (v.size() - 1);
    EXPECT_NEAR(bma.mean_kl[t - 4], mean, 1e-12);
    EXPECT_NEAR(bma.stderr_kl[t - 4], std::sqrt(var / v.size()), 1e-12);
  }
}

TEST(KlCurveTest, ConstructedTracksOracleAndThreadsAgree) {
  const TransitionMatrix P = sample_transition_matrix(std::uint64_t{11}, 5);
  const LagSet lags({1, 2, 3});
  KlCurveOptions opts;
  ConstructionConfig cfg;
  cfg.variant = Variant::kContiguous;
  opts.constructed = {{"constructed", cfg}};
  const auto one = kl_curve(P, lags, 8, 30, 2, opts);
  opts.threads = 3;
  const auto three = kl_curve(P, lags, 8, 30, 2, opts);
  const KlCurve& oracle = find(one, "oracle");
  const KlCurve& built = find(one, "constructed");
  // The masked-copy third layer is exact once t >= 2 k_hat + K - 1 = 8.
  for (std::size_t i = 8 - oracle.first_position; i < oracle.mean_kl.size(); ++i) {
    EXPECT_NEAR(built.mean_kl[i], oracle.mean_kl[i], 1e-6) << "position " << oracle.first_position + i;
  }
  ASSERT_EQ(one.size(), three.size());
  for (std::size_t m = 0; m < one.size(); ++m) EXPECT_EQ(one[m].mean_kl, three[m].mean_kl);
  const std::string csv = kl_curves_to_csv(one);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "position,method,mean_kl,stderr");
}

TEST(KlCurveTest, BetaSweepAddsEstimatorCurves) {
  const TransitionMatrix P = sample_transition_matrix(std::uint64_t{13}, 4);
  const LagSet lags({1, 2});
  KlCurveOptions opts;
  opts.beta_sweep = kBetaSweepGrid;
  const auto curves = kl_curve(P, lags, 6, 20, 3, opts);
  EXPECT_EQ(curves.size(), 3u + kBetaSweepGrid.size());
  EXPECT_EQ(find(curves, "oracle_beta=100").mean_kl, find(curves, "oracle").mean_kl);
  EXPECT_NE(find(curves, "oracle_beta=1").mean_kl, find(curves, "oracle").mean_kl);
}

// E[p~_{i,r}] by summing over every sequence of length 2 k_hat + 1.
Eigen::VectorXd brute_expectations(const TransitionMatrix& P, const std::vector<int>& lags,
                                   int true_lag) {
  const int k_hat = lags.back(), T = 2 * k_hat + 1, S = P.alphabet_size();
  const Eigen::VectorXd pi = testing::solve_stationary(P.entries());
  Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<int>(lags.size()));
  testing::for_each_sequence(T, S, [&](const std::vector<int>& seq) {
    const double prob = testing::sequence_probability(seq, P.entries(), pi, true_lag, k_hat);
    for (std::size_t c = 0; c < lags.size(); ++c) {
      e(static_cast<int>(c)) += prob * testing::normalized_prob(seq, P.entries(), lags, T, lags[c]);
    }
  });
  return e;
}

TEST(ClaimTest, ExactExpectationsMatchEnumeration) {
  Gen gen(21);
  for (const std::vector<int>& lags : {std::vector<int>{1, 2}, std::vector<int>{1, 3}, std::vector<int>{2, 3, 4}}) {
    for (int trial = 0; trial < 3; ++trial) {
      const TransitionMatrix P(gen.stochastic_matrix(2));
      for (int k : lags) {
        const Eigen::VectorXd a = exact_normalized_expectations(P, LagSet(lags), k);
        const Eigen::VectorXd b = brute_expectations(P, lags, k);
        EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_NEAR(a.sum(), 1.0, 1e-12);
      }
    }
  }
}

TEST(ClaimTest, MonteCarloAgreesWithExact) {
  const TransitionMatrix P = sample_transition_matrix(std::uint64_t{7}, 3);
  const LagSet lags({1, 2});
  const auto exact = claim_gaps_exact(P, lags);
  const auto mc = claim_gaps_monte_carlo(P, lags, 4000, 12, 99);
  ASSERT_EQ(exact.size(), mc.size());
  for (std::size_t c = 0; c < exact.size(); ++c) {
    EXPECT_EQ(exact[c].true_lag, mc[c].true_lag);
    EXPECT_GT(mc[c].stderr_gap, 0.0);
    EXPECT_LT(std::abs(exact[c].gap - mc[c].gap), 4.0 * mc[c].stderr_gap);
  }
}

TEST(ClaimTest, CheckIsDeterministicAndShaped) {
  ClaimCheckOptions opts;
  opts.num_matrices = 3;
  opts.num_lags = 3;
  opts.max_lag = 6;
  opts.alphabet_size = 3;
  opts.num_sequences = 50;
  opts.length = 30;
  opts.seed = 4;
  const ClaimCheckResult a = claim_check(opts);
  opts.threads = 2;
  const ClaimCheckResult b = claim_check(opts);
  EXPECT_EQ(a.lags.size(), 3);
  EXPECT_LE(a.lags.k_hat(), 6);
  ASSERT_EQ(a.samples.size(), 9u);
  EXPECT_EQ(claim_gaps_to_csv(a), claim_gaps_to_csv(b));
  for (const ClaimGapSample& s : a.samples) EXPECT_NE(s.true_lag, s.runner_up_lag);
}

TEST(ClaimTest, Rejections) {
  const TransitionMatrix P = TransitionMatrix::uniform(2);
  EXPECT_THROW(claim_gaps_exact(P, LagSet({1})), Error);
  EXPECT_THROW(claim_gaps_monte_carlo(P, LagSet({1, 2}), 10, 2, 0), Error);
}

TEST(LemmaTwoTest, ClosedFormsAndSign) {
  const double eps = 0.2;
  Eigen::VectorXd p(2), q(2);
  p << 1 - eps, eps;
  q << eps, 1 - eps;
  EXPECT_NEAR(lemma_two_check(p, q), (1 - 2 * eps) * (1 - 2 * eps), 1e-12);
  EXPECT_NEAR(lemma_two_check(p, p), 0.0, 1e-15);
  Gen gen(3);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_GE(lemma_two_check(gen.distribution(5), gen.distribution(5)), -1e-15);
  }
  EXPECT_THROW(lemma_two_check(p, Eigen::VectorXd::Ones(3)), Error);
}

// E[P(x_{i-k}, x_i)] - E[P(x_{i-r}, x_i)] by enumeration.
double brute_uno(const TransitionMatrix& P, int k, int r) {
  const int L = std::max(k, r) + 1, i = L - 1;
  const Eigen::VectorXd pi = testing::solve_stationary(P.entries());
  double gap = 0.0;
  testing::for_each_sequence(L, P.alphabet_size(), [&](const std::vector<int>& x) {
    gap += testing::sequence_probability(x, P.entries(), pi, k, k) *
           (P(x[i - k], x[i]) - P(x[i - r], x[i]));
  });
  return gap;
}

TEST(LemmaUnoTest, ExactMatchesEnumeration) {
  Gen gen(8);
  for (int trial = 0; trial < 5; ++trial) {
    const TransitionMatrix P(gen.stochastic_matrix(3));
    for (auto [k, r] : {std::pair{1, 2}, std::pair{2, 1}, std::pair{1, 3}, std::pair{2, 4}, std::pair{3, 2}}) {
      const LemmaGap g = lemma_uno_check(P, k, r, LemmaMode::kExact);
      EXPECT_NEAR(g.gap, brute_uno(P, k, r), 1e-12) << k << "," << r;
      EXPECT_GE(g.gap, -1e-12);
    }
  }
}

TEST(LemmaUnoTest, UniformGivesZeroAndMonteCarloAgrees) {
  EXPECT_NEAR(lemma_uno_check(TransitionMatrix::uniform(4), 1, 2, LemmaMode::kExact).gap, 0.0, 1e-15);
  const TransitionMatrix P = sample_transition_matrix(std::uint64_t{2}, 3);
  const LemmaGap exact = lemma_uno_check(P, 2, 3, LemmaMode::kExact);
  const LemmaGap mc = lemma_uno_check(P, 2, 3, LemmaMode::kMonteCarlo, 20000, 6);
  EXPECT_LT(std::abs(exact.gap - mc.gap), 4.0 * mc.stderr_gap);
  EXPECT_THROW(lemma_uno_check(P, 2, 2, LemmaMode::kExact), Error);
}

TEST(LemmaSuiteTest, RowCounts) {
  LemmaSuiteOptions opts;
  opts.num_pairs = 10;
  opts.num_matrices = 2;
  opts.num_samples = 100;
  const auto rows = lemma_suite(opts);
  EXPECT_EQ(rows.size(), 10u + 2u * 6u * 2u);
  const std::string csv = lemma_rows_to_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "lemma,instance,method,true_lag,other_lag,gap,stderr");
}

TEST(ExportTest, ByteStableAndLastRowIsSelection) {
  const auto tmp = std::filesystem::temp_directory_path() / "selind_export_test";
  std::filesystem::remove_all(tmp);
  Gen gen(5);
  const TransitionMatrix P(gen.stochastic_matrix(3));
  const std::vector<int> seq = gen.tokens(12, 3);
  ConstructionConfig cfg;
  cfg.lags = LagSet({1, 2, 3});
  cfg.length = 12;
  const ConstructedModel cm = build_construction(P, cfg);
  const auto a = export_attention_maps(cm.model, seq, tmp / "a", nlohmann::json{{"note", "x"}});
  const auto b = export_attention_maps(cm.model, seq, tmp / "b", nlohmann::json{{"note", "x"}});
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(slurp(a[i]), slurp(b[i]));
  const auto manifest = nlohmann::json::parse(slurp(tmp / "a" / "manifest.json"));
  EXPECT_EQ(manifest["total_heads"], 5);
  EXPECT_EQ(manifest["note"], "x");
  EXPECT_EQ(manifest["maps"].size(), 5u);

  std::istringstream csv(slurp(tmp / "a" / "attn_l3_h1.csv"));
  std::string line, last;
  std::getline(csv, line);
  EXPECT_EQ(line, "row,1,2,3,4,5,6,7,8,9,10,11,12");
  while (std::getline(csv, line)) last = line;
  std::vector<double> row;
  std::stringstream ls(last);
  std::string cell;
  std::getline(ls, cell, ',');
  EXPECT_EQ(cell, "12");
  while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
  const PredictionRecord oracle = construction_estimate(seq, P, cfg.lags, cfg.beta);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(row[12 - cfg.lags[c]], oracle.lag_weights(c), 1e-6);
  std::filesystem::remove_all(tmp);
}

TEST(StatsTest, MeanAndStderr) {
  const auto [m, se] = mean_and_stderr({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m, 2.5);
  EXPECT_NEAR(se, std::sqrt(5.0 / 3.0 / 4.0), 1e-15);
}

}  // namespace
}  // namespace selind
