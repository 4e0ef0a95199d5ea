#include "selind/chains.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "selind/error.h"
#include "selind/parallel.h"

namespace selind {
namespace {

constexpr double kRowSumTolerance = 1e-12;

Error invalid(const std::string& message) {
  return Error(ErrorKind::kInvalidConfig, message);
}

// Clamps entries below `floor` to it and rescales the rest so the row sums to
// one. Repeats because rescaling can push further entries under the floor.
Eigen::VectorXd floor_row(const Eigen::VectorXd& row, double floor) {
  const int n = static_cast<int>(row.size());
  std::vector<bool> pinned(n, false);
  Eigen::VectorXd out = row;
  for (int pass = 0; pass <= n; ++pass) {
    double free_total = 0.0;
    int num_pinned = 0;
    for (int i = 0; i < n; ++i) {
      if (pinned[i]) {
        ++num_pinned;
      } else {
        free_total += row(i);
      }
    }
    const double free_mass = 1.0 - num_pinned * floor;
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      if (pinned[i]) {
        out(i) = floor;
        continue;
      }
      out(i) = free_total > 0.0 ? row(i) * free_mass / free_total
                                : free_mass / (n - num_pinned);
      if (out(i) < floor) {
        pinned[i] = true;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return out;
}

}  // namespace

TransitionMatrix::TransitionMatrix(Eigen::MatrixXd entries, double floor)
    : entries_(std::move(entries)) {
  const auto S = entries_.rows();
  if (S < 1 || entries_.cols() != S) {
    throw invalid("transition matrix must be square and nonempty");
  }
  for (Eigen::Index a = 0; a < S; ++a) {
    const double sum = entries_.row(a).sum();
    if (!std::isfinite(sum) || std::abs(sum - 1.0) > kRowSumTolerance) {
      std::ostringstream msg;
      msg << "transition matrix row " << a << " sums to " << sum;
      throw invalid(msg.str());
    }
    for (Eigen::Index b = 0; b < S; ++b) {
      const double v = entries_(a, b);
      if (!(v > 0.0) || v < floor) {
        std::ostringstream msg;
        msg << "transition matrix entry (" << a << "," << b << ") = " << v
            << " violates positivity floor " << floor;
        throw invalid(msg.str());
      }
    }
  }
  log_entries_ = entries_.array().log().matrix();
  stationary_ = stationary_distribution(entries_);
}

TransitionMatrix TransitionMatrix::uniform(int alphabet_size) {
  if (alphabet_size < 1) throw invalid("alphabet size must be positive");
  return TransitionMatrix(
      Eigen::MatrixXd::Constant(alphabet_size, alphabet_size, 1.0 / alphabet_size));
}

LagSet::LagSet(std::vector<int> lags) : lags_(std::move(lags)) {
  if (lags_.empty()) throw invalid("lag set must be nonempty");
  for (std::size_t i = 0; i < lags_.size(); ++i) {
    if (lags_[i] < 1) throw invalid("lags must be positive");
    if (i > 0 && lags_[i] <= lags_[i - 1]) {
      throw invalid("lags must be strictly increasing");
    }
  }
}

LagSet LagSet::parse(const std::string& text) {
  std::vector<int> lags;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    int value = 0;
    try {
      value = std::stoi(item, &used);
    } catch (const std::exception&) {
      throw invalid("cannot parse lag '" + item + "'");
    }
    if (used != item.size()) throw invalid("cannot parse lag '" + item + "'");
    lags.push_back(value);
  }
  return LagSet(std::move(lags));
}

LagSet LagSet::range(int lo, int hi) {
  std::vector<int> lags;
  for (int k = lo; k <= hi; ++k) lags.push_back(k);
  return LagSet(std::move(lags));
}

int LagSet::index_of(int lag) const {
  auto it = std::lower_bound(lags_.begin(), lags_.end(), lag);
  if (it == lags_.end() || *it != lag) return -1;
  return static_cast<int>(it - lags_.begin());
}

std::string LagSet::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < lags_.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(lags_[i]);
  }
  return out;
}

NormalizedProbTable::NormalizedProbTable(Eigen::MatrixXd values, LagSet lags)
    : values_(std::move(values)), lags_(std::move(lags)) {}

bool NormalizedProbTable::defined(int position, int lag_index) const {
  return position >= 0 && position < length() && lags_[lag_index] <= position;
}

std::optional<double> NormalizedProbTable::at(int position, int lag_index) const {
  if (!defined(position, lag_index)) return std::nullopt;
  return values_(position, lag_index);
}

double NormalizedProbTable::value(int position, int lag_index) const {
  if (!defined(position, lag_index)) {
    throw invalid("normalized transition probability undefined at position " +
                  std::to_string(position + 1) + " for lag " +
                  std::to_string(lags_[lag_index]));
  }
  return values_(position, lag_index);
}

Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& P,
                                        double tolerance, int max_iterations) {
  const auto S = P.rows();
  Eigen::RowVectorXd pi = Eigen::RowVectorXd::Constant(S, 1.0 / S);
  // Step t applies P^(2^t), so slowly mixing chains still converge in a few
  // dozen steps.
  Eigen::MatrixXd step = P;
  for (int it = 0; it < max_iterations; ++it) {
    Eigen::RowVectorXd next = pi * step;
    next /= next.sum();
    step = step * step;
    step.array().colwise() /= step.rowwise().sum().array();
    const double change = (next - pi).lpNorm<1>();
    pi = next;
    if (change < tolerance) return pi.transpose();
  }
  throw Error(ErrorKind::kNonConvergence,
              "stationary distribution did not converge; matrix may be "
              "reducible or periodic");
}

TransitionMatrix sample_transition_matrix(Rng& rng, int alphabet_size,
                                          double floor) {
  if (alphabet_size < 2) throw invalid("alphabet size must be at least 2");
  if (floor < 0.0 || floor * alphabet_size >= 1.0) {
    throw invalid("entry floor must lie in [0, 1/S)");
  }
  Eigen::MatrixXd m(alphabet_size, alphabet_size);
  for (int a = 0; a < alphabet_size; ++a) {
    m.row(a) = floor_row(rng.dirichlet_ones(alphabet_size), floor).transpose();
  }
  return TransitionMatrix(std::move(m), floor);
}

TransitionMatrix sample_transition_matrix(std::uint64_t seed, int alphabet_size,
                                          double floor) {
  Rng rng(derive_seed(seed, stream::kMatrix, 0));
  return sample_transition_matrix(rng, alphabet_size, floor);
}

Sequence sample_sequence(const TransitionMatrix& P, int lag, int k_hat,
                         int length, Rng& rng) {
  Sequence seq(length);
  const Eigen::VectorXd& pi = P.stationary();
  for (int t = 0; t < length; ++t) {
    if (t < k_hat) {
      seq[t] = rng.categorical(pi);
    } else {
      seq[t] = rng.categorical(P.entries().row(seq[t - lag]).transpose());
    }
  }
  return seq;
}

SequenceBatch sample_batch(const TransitionMatrix& P, const LagSet& lags,
                           int num_sequences, int length, std::uint64_t seed,
                           int threads) {
  if (num_sequences < 0) throw invalid("batch size must be nonnegative");
  if (length <= lags.k_hat()) {
    throw Error(ErrorKind::kSequenceTooShort,
                "sequence length " + std::to_string(length) +
                    " must exceed the largest lag " + std::to_string(lags.k_hat()));
  }
  SequenceBatch batch;
  batch.num_sequences = num_sequences;
  batch.length = length;
  batch.seed = seed;
  batch.tokens.resize(static_cast<std::size_t>(num_sequences) * length);
  batch.true_lags.resize(num_sequences);
  batch.sequence_seeds.resize(num_sequences);
  parallel_for(static_cast<std::size_t>(num_sequences), threads, [&](std::size_t n) {
    const std::uint64_t s = derive_seed(seed, stream::kSequence, n);
    Rng rng(s);
    const int lag = lags[static_cast<int>(rng.below(lags.size()))];
    Sequence seq = sample_sequence(P, lag, lags.k_hat(), length, rng);
    std::copy(seq.begin(), seq.end(), batch.tokens.begin() + n * length);
    batch.true_lags[n] = lag;
    batch.sequence_seeds[n] = s;
  });
  return batch;
}

double sequence_log_likelihood(SequenceView seq, const TransitionMatrix& P,
                               int lag, int k_hat) {
  const int T = static_cast<int>(seq.size());
  if (lag < 1 || lag > k_hat) throw invalid("lag must lie in [1, k_hat]");
  const Eigen::VectorXd& pi = P.stationary();
  double total = 0.0;
  for (int i = 0; i < std::min(k_hat, T); ++i) total += std::log(pi(seq[i]));
  for (int j = k_hat; j < T; ++j) total += P.log_entries()(seq[j - lag], seq[j]);
  return total;
}

NormalizedProbTable normalized_transition_probs(SequenceView seq,
                                                const TransitionMatrix& P,
                                                const LagSet& lags) {
  const int T = static_cast<int>(seq.size());
  const int K = lags.size();
  Eigen::MatrixXd values =
      Eigen::MatrixXd::Constant(T, K, std::numeric_limits<double>::quiet_NaN());
  for (int i = 0; i < T; ++i) {
    double total = 0.0;
    for (int c = 0; c < K && lags[c] <= i; ++c) total += P(seq[i - lags[c]], seq[i]);
    if (total <= 0.0) continue;
    for (int c = 0; c < K && lags[c] <= i; ++c) {
      values(i, c) = P(seq[i - lags[c]], seq[i]) / total;
    }
  }
  return NormalizedProbTable(std::move(values), lags);
}

Eigen::VectorXd true_next_distribution(SequenceView seq, const TransitionMatrix& P,
                                       int lag) {
  const int T = static_cast<int>(seq.size());
  if (lag < 1 || lag > T) throw invalid("lag must lie in [1, T]");
  return P.row(seq[T - lag]);
}

void to_json(nlohmann::json& j, const LagSet& lags) { j = lags.lags(); }

void from_json(const nlohmann::json& j, LagSet& lags) {
  lags = LagSet(j.get<std::vector<int>>());
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? 0 : static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols) {
      throw invalid("ragged matrix in JSON");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

nlohmann::json batch_header(const SequenceBatch& batch, const TransitionMatrix& P,
                            const LagSet& lags) {
  nlohmann::json j;
  j["alphabet_size"] = P.alphabet_size();
  j["lags"] = lags;
  j["length"] = batch.length;
  j["num_sequences"] = batch.num_sequences;
  j["seed"] = batch.seed;
  j["transition_matrix"] = matrix_to_json(P.entries());
  j["stationary"] = std::vector<double>(P.stationary().data(),
                                        P.stationary().data() + P.alphabet_size());
  return j;
}

std::string batch_to_csv(const SequenceBatch& batch) {
  std::ostringstream out;
  out << "seed,true_lag";
  for (int t = 1; t <= batch.length; ++t) out << ",x" << t;
  out << '\n';
  for (int n = 0; n < batch.num_sequences; ++n) {
    out << batch.sequence_seeds[n] << ',' << batch.true_lags[n];
    for (Token tok : batch.sequence(n)) out << ',' << tok;
    out << '\n';
  }
  return out.str();
}

SequenceBatch batch_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw invalid("empty batch CSV");
  SequenceBatch batch;
  batch.length = static_cast<int>(std::count(line.begin(), line.end(), ',')) - 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (static_cast<int>(cells.size()) != batch.length + 2) {
      throw invalid("batch CSV row has the wrong number of fields");
    }
    batch.sequence_seeds.push_back(std::stoull(cells[0]));
    batch.true_lags.push_back(std::stoi(cells[1]));
    for (int t = 0; t < batch.length; ++t) batch.tokens.push_back(std::stoi(cells[t + 2]));
    ++batch.num_sequences;
  }
  return batch;
}

}  // namespace selind
