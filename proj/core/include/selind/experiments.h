#ifndef SELIND_EXPERIMENTS_H_
#define SELIND_EXPERIMENTS_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "selind/chains.h"
#include "selind/constructions.h"
#include "selind/dtransformer.h"

namespace selind {

// ---------------------------------------------------------------------------
// KL curves

struct KlCurve {
  std::string method;
  int first_position = 0;  // 1-based position of mean_kl[0]
  std::vector<double> mean_kl;
  std::vector<double> stderr_kl;
};

struct KlCurveOptions {
  bool bma = true;
  bool mle = true;
  bool oracle = true;  // construction_estimate at `beta`
  bool hardmax = false;
  double beta = 100.0;
  // Extra construction_estimate curves, labelled "oracle_beta=<value>".
  std::vector<double> beta_sweep;
  // Constructed models to evaluate, keyed by method label. Their length is
  // overridden with the batch length.
  std::vector<std::pair<std::string, ConstructionConfig>> constructed;
  int threads = 1;
};

// Mean over the batch of KL(true conditional || prediction from s_{1..t}) for
// t = k_hat+1..T.
std::vector<KlCurve> kl_curve(const TransitionMatrix& P, const LagSet& lags,
                              const SequenceBatch& batch, const KlCurveOptions& options);
std::vector<KlCurve> kl_curve(const TransitionMatrix& P, const LagSet& lags,
                              int num_sequences, int length, std::uint64_t seed,
                              const KlCurveOptions& options);

std::string kl_curves_to_csv(const std::vector<KlCurve>& curves);

// Temperatures swept by `selind eval --beta-sweep`.
inline const std::vector<double> kBetaSweepGrid{1.0, 3.0, 10.0, 30.0, 100.0, 300.0};

// ---------------------------------------------------------------------------
// Evidence-gap check on normalized transition probabilities

struct ClaimCheckOptions {
  int num_matrices = 20;
  int num_lags = 5;
  int max_lag = 10;
  int alphabet_size = 10;
  int num_sequences = 500;
  int length = 500;
  double floor = kDefaultEntryFloor;
  std::uint64_t seed = 0;
  int threads = 1;
  // Replace Monte-Carlo means with exact expectations.
  bool exact = false;
};

struct ClaimGapSample {
  int matrix_index = 0;
  std::uint64_t matrix_seed = 0;
  int true_lag = 0;
  int runner_up_lag = 0;
  double gap = 0.0;
  double stderr_gap = 0.0;  // 0 in exact mode
  std::vector<double> mean_scores;  // E[p~_{T,r}] per lag in LagSet order
};

struct ClaimCheckResult {
  LagSet lags{std::vector<int>{1}};
  std::vector<ClaimGapSample> samples;
};

// Lags are drawn once, without replacement, uniformly from [1, max_lag].
ClaimCheckResult claim_check(const ClaimCheckOptions& options);

// Gap samples for a fixed matrix and lag set: for each true lag, N sequences
// of length T, scored at their final position.
std::vector<ClaimGapSample> claim_gaps_monte_carlo(const TransitionMatrix& P,
                                                   const LagSet& lags, int num_sequences,
                                                   int length, std::uint64_t seed,
                                                   int threads = 1);
std::vector<ClaimGapSample> claim_gaps_exact(const TransitionMatrix& P, const LagSet& lags);

// Exact E[p~_{i,r}] for every r in `lags` under a stationary chain of lag
// `true_lag`, at any position i > 2 k_hat. Enumerates S^(K+1) joint states.
Eigen::VectorXd exact_normalized_expectations(const TransitionMatrix& P,
                                              const LagSet& lags, int true_lag);

std::string claim_gaps_to_csv(const ClaimCheckResult& result);

// ---------------------------------------------------------------------------
// Inequality checks

// sum p^2/(p+q) - sum pq/(p+q); nonnegative for strictly positive p, q.
double lemma_two_check(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

enum class LemmaMode { kExact, kMonteCarlo };

struct LemmaGap {
  double gap = 0.0;
  double stderr_gap = 0.0;
};

// E[P(x_{i-k}, x_i)] - E[P(x_{i-r}, x_i)] for a stationary chain of lag k.
LemmaGap lemma_uno_check(const TransitionMatrix& P, int k, int r, LemmaMode mode,
                         int num_samples = 0, std::uint64_t seed = 0);

struct LemmaSuiteOptions {
  int alphabet_size = 4;
  int num_pairs = 1000;
  int num_matrices = 10;
  LagSet lags{std::vector<int>{1, 2, 3}};
  int num_samples = 20000;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct LemmaRow {
  std::string lemma;
  int instance = 0;
  std::string mode;
  int true_lag = 0;
  int other_lag = 0;
  double gap = 0.0;
  double stderr_gap = 0.0;
};

std::vector<LemmaRow> lemma_suite(const LemmaSuiteOptions& options);
std::string lemma_rows_to_csv(const std::vector<LemmaRow>& rows);

// ---------------------------------------------------------------------------
// Attention-map export

// Writes attn_l<layer>_h<head>.csv (T x T, 1-based headers) per head plus
// manifest.json. Returns the written paths in order.
std::vector<std::filesystem::path> export_attention_maps(
    const DisentangledModel& model, SequenceView seq, const std::filesystem::path& dir,
    const nlohmann::json& manifest_extra);

std::string attention_map_to_csv(const Eigen::MatrixXd& weights);

// ---------------------------------------------------------------------------

// Mean and standard error of the mean.
std::pair<double, double> mean_and_stderr(const std::vector<double>& values);

}  // namespace selind

#endif  // SELIND_EXPERIMENTS_H_
