#include "selind/estimators.h"

#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "selind/error.h"

namespace selind {
namespace {

void require_long_enough(SequenceView seq, const LagSet& lags) {
  if (static_cast<int>(seq.size()) <= lags.k_hat()) {
    throw Error(ErrorKind::kSequenceTooShort,
                "sequence length must exceed the largest lag");
  }
}

// First index of the maximum, so ties resolve to the smallest lag.
int first_argmax(const Eigen::VectorXd& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

Eigen::VectorXd mixture(SequenceView seq, const TransitionMatrix& P,
                        const LagSet& lags, const Eigen::VectorXd& weights) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(P.alphabet_size());
  for (int c = 0; c < lags.size(); ++c) {
    out += weights(c) * true_next_distribution(seq, P, lags[c]);
  }
  return out;
}

PredictionRecord select(Method method, SequenceView seq, const TransitionMatrix& P,
                        const LagSet& lags, const Eigen::VectorXd& scores) {
  const int best = first_argmax(scores);
  PredictionRecord r;
  r.method = method;
  r.lag_weights = Eigen::VectorXd::Zero(lags.size());
  r.lag_weights(best) = 1.0;
  r.selected_lag = lags[best];
  r.distribution = true_next_distribution(seq, P, lags[best]);
  return r;
}

}  // namespace

const char* method_name(Method method) {
  switch (method) {
    case Method::kBma: return "bma";
    case Method::kMle: return "mle";
    case Method::kConstruction: return "construction";
    case Method::kHardmax: return "hardmax";
  }
  return "unknown";
}

Eigen::VectorXd softmax(const Eigen::VectorXd& scores) {
  const double m = scores.maxCoeff();
  Eigen::VectorXd e = (scores.array() - m).exp().matrix();
  return e / e.sum();
}

Eigen::VectorXd lag_log_likelihoods(SequenceView seq, const TransitionMatrix& P,
                                    const LagSet& lags) {
  Eigen::VectorXd ll(lags.size());
  for (int c = 0; c < lags.size(); ++c) {
    ll(c) = sequence_log_likelihood(seq, P, lags[c], lags.k_hat());
  }
  return ll;
}

Eigen::VectorXd cumulative_normalized_scores(const NormalizedProbTable& table) {
  const LagSet& lags = table.lags();
  Eigen::VectorXd sums = Eigen::VectorXd::Zero(lags.size());
  for (int i = lags.k_hat(); i < table.length(); ++i) {
    for (int c = 0; c < lags.size(); ++c) sums(c) += table.value(i, c);
  }
  return sums;
}

PredictionRecord bma_predict(SequenceView seq, const TransitionMatrix& P,
                             const LagSet& lags) {
  require_long_enough(seq, lags);
  PredictionRecord r;
  r.method = Method::kBma;
  r.lag_weights = softmax(lag_log_likelihoods(seq, P, lags));
  r.distribution = mixture(seq, P, lags, r.lag_weights);
  return r;
}

PredictionRecord mle_predict(SequenceView seq, const TransitionMatrix& P,
                             const LagSet& lags) {
  require_long_enough(seq, lags);
  return select(Method::kMle, seq, P, lags, lag_log_likelihoods(seq, P, lags));
}

PredictionRecord construction_estimate(SequenceView seq, const TransitionMatrix& P,
                                       const LagSet& lags, double beta) {
  require_long_enough(seq, lags);
  if (!(beta >= 0.0)) throw Error(ErrorKind::kInvalidConfig, "beta must be nonnegative");
  const int T = static_cast<int>(seq.size());
  const Eigen::VectorXd sums =
      cumulative_normalized_scores(normalized_transition_probs(seq, P, lags));
  PredictionRecord r;
  r.method = Method::kConstruction;
  r.lag_weights = softmax(sums * (beta / (T - lags.k_hat())));
  r.distribution = mixture(seq, P, lags, r.lag_weights);
  return r;
}

PredictionRecord hardmax_predict(SequenceView seq, const TransitionMatrix& P,
                                 const LagSet& lags) {
  require_long_enough(seq, lags);
  return select(Method::kHardmax, seq, P, lags,
                cumulative_normalized_scores(normalized_transition_probs(seq, P, lags)));
}

double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  if (p.size() != q.size()) {
    throw Error(ErrorKind::kDimensionMismatch, "KL arguments differ in length");
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) <= 0.0) continue;
    if (q(i) <= 0.0) return std::numeric_limits<double>::infinity();
    total += p(i) * std::log(p(i) / q(i));
  }
  return total;
}

void to_json(nlohmann::json& j, const PredictionRecord& record) {
  j = nlohmann::json::object();
  j["method"] = method_name(record.method);
  j["selected_lag"] = record.selected_lag ? nlohmann::json(*record.selected_lag)
                                          : nlohmann::json(nullptr);
  j["lag_weights"] = std::vector<double>(
      record.lag_weights.data(), record.lag_weights.data() + record.lag_weights.size());
  j["distribution"] = std::vector<double>(
      record.distribution.data(), record.distribution.data() + record.distribution.size());
}

}  // namespace selind
