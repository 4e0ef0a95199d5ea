#ifndef SELIND_CHAINS_H_
#define SELIND_CHAINS_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "selind/rng.h"

namespace selind {

// Tokens are symbols in [0, S). Positions are 0-based in every API; file
// formats print them 1-based.
using Token = int;
using Sequence = std::vector<Token>;
using SequenceView = std::span<const Token>;

inline constexpr double kDefaultEntryFloor = 1e-3;

// Row-stochastic matrix with strictly positive entries and its stationary
// distribution, computed once on construction.
class TransitionMatrix {
 public:
  // Validates rows (sum to 1 within 1e-12) and positivity (every entry at
  // least `floor`, and strictly positive). Throws Error on violation.
  explicit TransitionMatrix(Eigen::MatrixXd entries, double floor = 0.0);

  // Uniform 1/S everywhere.
  static TransitionMatrix uniform(int alphabet_size);

  int alphabet_size() const { return static_cast<int>(entries_.rows()); }
  double operator()(Token from, Token to) const { return entries_(from, to); }
  const Eigen::MatrixXd& entries() const { return entries_; }
  const Eigen::MatrixXd& log_entries() const { return log_entries_; }
  Eigen::VectorXd row(Token from) const { return entries_.row(from).transpose(); }
  const Eigen::VectorXd& stationary() const { return stationary_; }

 private:
  Eigen::MatrixXd entries_;
  Eigen::MatrixXd log_entries_;
  Eigen::VectorXd stationary_;
};

// Strictly increasing set of positive lags.
class LagSet {
 public:
  explicit LagSet(std::vector<int> lags);

  // Parses "1,2,3".
  static LagSet parse(const std::string& text);
  // {lo, lo+1, ..., hi}.
  static LagSet range(int lo, int hi);

  const std::vector<int>& lags() const { return lags_; }
  int size() const { return static_cast<int>(lags_.size()); }
  int k_hat() const { return lags_.back(); }
  int k_bar() const { return lags_.front(); }
  int operator[](int index) const { return lags_[index]; }
  // Index of `lag` in the set, or -1.
  int index_of(int lag) const;
  bool contains(int lag) const { return index_of(lag) >= 0; }
  bool is_contiguous() const { return k_hat() - k_bar() + 1 == size(); }
  std::string to_string() const;

  bool operator==(const LagSet& other) const { return lags_ == other.lags_; }

 private:
  std::vector<int> lags_;
};

struct SequenceBatch {
  int num_sequences = 0;
  int length = 0;
  std::vector<Token> tokens;  // row-major N x T
  std::vector<int> true_lags;
  std::vector<std::uint64_t> sequence_seeds;
  std::uint64_t seed = 0;

  SequenceView sequence(int n) const {
    return SequenceView(tokens.data() + static_cast<std::size_t>(n) * length,
                        static_cast<std::size_t>(length));
  }
};

// p~_{i,k} for every position and lag. Undefined entries (lag not shorter
// than the 1-based position) hold NaN and are reported through defined().
class NormalizedProbTable {
 public:
  NormalizedProbTable(Eigen::MatrixXd values, LagSet lags);

  int length() const { return static_cast<int>(values_.rows()); }
  const LagSet& lags() const { return lags_; }
  // `position` is 0-based, `lag_index` indexes into lags().
  bool defined(int position, int lag_index) const;
  bool row_defined(int position) const { return position >= lags_.k_bar(); }
  std::optional<double> at(int position, int lag_index) const;
  // Throws Error when undefined.
  double value(int position, int lag_index) const;
  const Eigen::MatrixXd& raw() const { return values_; }

 private:
  Eigen::MatrixXd values_;
  LagSet lags_;
};

// Power iteration from the uniform vector with the matrix squared after every
// step; stops when the L1 change drops below `tolerance`. Throws
// Error(kNonConvergence) after `max_iterations` steps.
Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& P,
                                        double tolerance = 1e-14,
                                        int max_iterations = 200);

// Rows drawn from Dirichlet(1, ..., 1), clamped to `floor`, renormalized.
TransitionMatrix sample_transition_matrix(Rng& rng, int alphabet_size,
                                          double floor = kDefaultEntryFloor);
TransitionMatrix sample_transition_matrix(std::uint64_t seed, int alphabet_size,
                                          double floor = kDefaultEntryFloor);

// Draws one sequence of the given lag: the first k_hat tokens i.i.d. from the
// stationary distribution, then token t from row P[s_{t-lag}].
Sequence sample_sequence(const TransitionMatrix& P, int lag, int k_hat,
                         int length, Rng& rng);

// Each sequence gets a uniform lag from `lags` and its own derived generator.
SequenceBatch sample_batch(const TransitionMatrix& P, const LagSet& lags,
                           int num_sequences, int length, std::uint64_t seed,
                           int threads = 1);

double sequence_log_likelihood(SequenceView seq, const TransitionMatrix& P,
                               int lag, int k_hat);

NormalizedProbTable normalized_transition_probs(SequenceView seq,
                                                const TransitionMatrix& P,
                                                const LagSet& lags);

// Row P[s_{T-lag+1}] in 1-based terms, i.e. the last token's lag-parent.
Eigen::VectorXd true_next_distribution(SequenceView seq,
                                       const TransitionMatrix& P, int lag);

void to_json(nlohmann::json& j, const LagSet& lags);
void from_json(const nlohmann::json& j, LagSet& lags);
nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);

// Batch header: P, lags, T, N, S, seed and the stationary distribution.
nlohmann::json batch_header(const SequenceBatch& batch, const TransitionMatrix& P,
                            const LagSet& lags);
// Header row "seed,true_lag,x1,...,xT" then one row per sequence.
std::string batch_to_csv(const SequenceBatch& batch);
SequenceBatch batch_from_csv(const std::string& text);

}  // namespace selind

#endif  // SELIND_CHAINS_H_
