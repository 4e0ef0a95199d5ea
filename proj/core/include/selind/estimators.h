#ifndef SELIND_ESTIMATORS_H_
#define SELIND_ESTIMATORS_H_

#include <optional>
#include <string>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "selind/chains.h"

namespace selind {

enum class Method { kBma, kMle, kConstruction, kHardmax };

const char* method_name(Method method);

struct PredictionRecord {
  Method method = Method::kBma;
  Eigen::VectorXd distribution;
  // One weight per lag in LagSet order.
  Eigen::VectorXd lag_weights;
  // Set for the selecting methods (MLE and hardmax).
  std::optional<int> selected_lag;
};

// Posterior-weighted mixture under a uniform lag prior.
PredictionRecord bma_predict(SequenceView seq, const TransitionMatrix& P,
                             const LagSet& lags);

// Most likely lag; ties go to the smallest lag.
PredictionRecord mle_predict(SequenceView seq, const TransitionMatrix& P,
                             const LagSet& lags);

// Softmax over lags of beta times the mean normalized transition probability
// over positions k_hat+1..T.
PredictionRecord construction_estimate(SequenceView seq, const TransitionMatrix& P,
                                       const LagSet& lags, double beta);

// Argmax of the summed normalized transition probabilities; ties go to the
// smallest lag.
PredictionRecord hardmax_predict(SequenceView seq, const TransitionMatrix& P,
                                 const LagSet& lags);

// Per-lag sums of p~_{i,k} over positions k_hat+1..T (1-based).
Eigen::VectorXd cumulative_normalized_scores(const NormalizedProbTable& table);

// Per-lag log-likelihoods in LagSet order.
Eigen::VectorXd lag_log_likelihoods(SequenceView seq, const TransitionMatrix& P,
                                    const LagSet& lags);

// Numerically stable softmax.
Eigen::VectorXd softmax(const Eigen::VectorXd& scores);

// Sum of p_i log(p_i / q_i) with 0 log 0 = 0. Returns +infinity when q_i = 0
// and p_i > 0.
double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

void to_json(nlohmann::json& j, const PredictionRecord& record);

}  // namespace selind

#endif  // SELIND_ESTIMATORS_H_
