#include "selind/experiments.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "selind/error.h"
#include "selind/estimators.h"
#include "selind/io.h"
#include "selind/parallel.h"

namespace selind {
namespace {

Error invalid(const std::string& message) {
  return Error(ErrorKind::kInvalidConfig, message);
}

// Normalized transition probabilities at the last position only.
Eigen::VectorXd final_normalized(SequenceView seq, const TransitionMatrix& P,
                                 const LagSet& lags) {
  const int i = static_cast<int>(seq.size()) - 1;
  Eigen::VectorXd v(lags.size());
  for (int c = 0; c < lags.size(); ++c) v(c) = P(seq[i - lags[c]], seq[i]);
  return v / v.sum();
}

int best_competitor(const std::vector<double>& means, int exclude) {
  int best = -1;
  for (int r = 0; r < static_cast<int>(means.size()); ++r) {
    if (r == exclude) continue;
    if (best < 0 || means[r] > means[best]) best = r;
  }
  return best;
}

Eigen::MatrixXd matrix_power(const Eigen::MatrixXd& P, int m) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Identity(P.rows(), P.cols());
  for (int i = 0; i < m; ++i) out = out * P;
  return out;
}

std::vector<int> sample_lags(int count, int max_lag, std::uint64_t seed) {
  if (count < 2 || count > max_lag) {
    throw invalid("need 2 <= number of lags <= max lag");
  }
  Rng rng(derive_seed(seed, stream::kLagSet, 0));
  std::vector<int> pool(max_lag);
  std::iota(pool.begin(), pool.end(), 1);
  for (int i = 0; i < count; ++i) {
    const int j = i + static_cast<int>(rng.below(max_lag - i));
    std::swap(pool[i], pool[j]);
  }
  std::vector<int> lags(pool.begin(), pool.begin() + count);
  std::sort(lags.begin(), lags.end());
  return lags;
}

}  // namespace

std::pair<double, double> mean_and_stderr(const std::vector<double>& values) {
  const std::size_t n = values.size();
  if (n == 0) return {0.0, 0.0};
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / n;
  if (n == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1) / n)};
}

std::vector<KlCurve> kl_curve(const TransitionMatrix& P, const LagSet& lags,
                              const SequenceBatch& batch, const KlCurveOptions& options) {
  const int T = batch.length;
  const int k_hat = lags.k_hat();
  if (batch.num_sequences < 1) throw invalid("KL curve needs at least one sequence");
  if (T <= k_hat) {
    throw Error(ErrorKind::kSequenceTooShort, "sequence length must exceed the largest lag");
  }

  std::vector<std::string> names;
  if (options.bma) names.push_back("bma");
  if (options.mle) names.push_back("mle");
  if (options.oracle) names.push_back("oracle");
  if (options.hardmax) names.push_back("hardmax");
  for (double b : options.beta_sweep) names.push_back("oracle_beta=" + format_double(b));
  std::vector<ConstructedModel> models;
  for (const auto& [label, cfg] : options.constructed) {
    ConstructionConfig c = cfg;
    c.lags = lags;
    c.length = T;
    models.push_back(build_construction(P, c));
    names.push_back(label);
  }

  const int M = static_cast<int>(names.size());
  const int L = T - k_hat;
  std::vector<Eigen::MatrixXd> per_seq(batch.num_sequences);
  parallel_for(batch.num_sequences, options.threads, [&](std::size_t n) {
    const SequenceView seq = batch.sequence(static_cast<int>(n));
    const int lag = batch.true_lags[n];
    Eigen::MatrixXd kl(M, L);
    std::vector<std::vector<Eigen::VectorXd>> constructed;
    for (const ConstructedModel& cm : models) {
      constructed.push_back(predict_prefixes(cm, seq, k_hat + 1));
    }
    for (int t = k_hat + 1; t <= T; ++t) {
      const SequenceView prefix = seq.first(t);
      const Eigen::VectorXd truth = true_next_distribution(prefix, P, lag);
      const int col = t - k_hat - 1;
      int row = 0;
      if (options.bma) kl(row++, col) = kl_divergence(truth, bma_predict(prefix, P, lags).distribution);
      if (options.mle) kl(row++, col) = kl_divergence(truth, mle_predict(prefix, P, lags).distribution);
      if (options.oracle) {
        kl(row++, col) = kl_divergence(
            truth, construction_estimate(prefix, P, lags, options.beta).distribution);
      }
      if (options.hardmax) {
        kl(row++, col) = kl_divergence(truth, hardmax_predict(prefix, P, lags).distribution);
      }
      for (double b : options.beta_sweep) {
        kl(row++, col) =
            kl_divergence(truth, construction_estimate(prefix, P, lags, b).distribution);
      }
      for (const auto& preds : constructed) kl(row++, col) = kl_divergence(truth, preds[col]);
    }
    per_seq[n] = std::move(kl);
  });

  std::vector<KlCurve> curves;
  std::vector<double> column(batch.num_sequences);
  for (int m = 0; m < M; ++m) {
    KlCurve curve;
    curve.method = names[m];
    curve.first_position = k_hat + 1;
    for (int c = 0; c < L; ++c) {
      for (int n = 0; n < batch.num_sequences; ++n) column[n] = per_seq[n](m, c);
      const auto [mean, se] = mean_and_stderr(column);
      curve.mean_kl.push_back(mean);
      curve.stderr_kl.push_back(se);
    }
    curves.push_back(std::move(curve));
  }
  return curves;
}

std::vector<KlCurve> kl_curve(const TransitionMatrix& P, const LagSet& lags,
                              int num_sequences, int length, std::uint64_t seed,
                              const KlCurveOptions& options) {
  const SequenceBatch batch =
      sample_batch(P, lags, num_sequences, length, seed, options.threads);
  return kl_curve(P, lags, batch, options);
}

std::string kl_curves_to_csv(const std::vector<KlCurve>& curves) {
  std::ostringstream out;
  out << "position,method,mean_kl,stderr\n";
  for (const KlCurve& c : curves) {
    for (std::size_t i = 0; i < c.mean_kl.size(); ++i) {
      out << c.first_position + static_cast<int>(i) << ',' << c.method << ','
          << format_double(c.mean_kl[i]) << ',' << format_double(c.stderr_kl[i]) << '\n';
    }
  }
  return out.str();
}

std::vector<ClaimGapSample> claim_gaps_monte_carlo(const TransitionMatrix& P,
                                                   const LagSet& lags, int num_sequences,
                                                   int length, std::uint64_t seed,
                                                   int threads) {
  const int K = lags.size();
  if (K < 2) throw invalid("the gap needs at least two lags");
  if (num_sequences < 2) throw invalid("need at least two sequences per lag");
  if (length <= lags.k_hat()) {
    throw Error(ErrorKind::kSequenceTooShort, "sequence length must exceed the largest lag");
  }
  std::vector<ClaimGapSample> samples(K);
  parallel_for(K, threads, [&](std::size_t c) {
    const int lag = lags[static_cast<int>(c)];
    Eigen::MatrixXd scores(K, num_sequences);
    for (int n = 0; n < num_sequences; ++n) {
      Rng rng(derive_seed(seed, stream::kSequence, c * num_sequences + n));
      const Sequence seq = sample_sequence(P, lag, lags.k_hat(), length, rng);
      scores.col(n) = final_normalized(seq, P, lags);
    }
    std::vector<double> means(K);
    for (int r = 0; r < K; ++r) {
      double sum = 0.0;
      for (int n = 0; n < num_sequences; ++n) sum += scores(r, n);
      means[r] = sum / num_sequences;
    }
    const int other = best_competitor(means, static_cast<int>(c));
    std::vector<double> diffs(num_sequences);
    for (int n = 0; n < num_sequences; ++n) {
      diffs[n] = scores(static_cast<int>(c), n) - scores(other, n);
    }
    const auto [gap, se] = mean_and_stderr(diffs);
    ClaimGapSample& s = samples[c];
    s.true_lag = lag;
    s.runner_up_lag = lags[other];
    s.gap = gap;
    s.stderr_gap = se;
    s.mean_scores = means;
  });
  return samples;
}

Eigen::VectorXd exact_normalized_expectations(const TransitionMatrix& P,
                                              const LagSet& lags, int true_lag) {
  const int S = P.alphabet_size();
  const int K = lags.size();
  if (!lags.contains(true_lag)) throw invalid("true lag must belong to the lag set");
  // Variable 0 is x_i; variable c+1 is x_{i - lags[c]}.
  std::vector<int> offsets{0};
  for (int l : lags.lags()) offsets.push_back(l);
  const int V = K + 1;
  double states = std::pow(static_cast<double>(S), V);
  if (states > 5e7) throw invalid("exact enumeration too large");

  // Chain links within each residue class of the true lag, ordered in time.
  struct Link {
    int from;
    int to;
    int power;
  };
  std::vector<int> roots;
  std::vector<Link> links;
  std::map<int, std::vector<int>> groups;
  for (int v = 0; v < V; ++v) groups[offsets[v] % true_lag].push_back(v);
  for (auto& [residue, members] : groups) {
    std::sort(members.begin(), members.end(),
              [&](int a, int b) { return offsets[a] > offsets[b]; });
    roots.push_back(members.front());
    for (std::size_t m = 1; m < members.size(); ++m) {
      const int gap = offsets[members[m - 1]] - offsets[members[m]];
      links.push_back({members[m - 1], members[m], gap / true_lag});
    }
  }
  std::map<int, Eigen::MatrixXd> powers;
  for (const Link& link : links) {
    if (!powers.count(link.power)) powers[link.power] = matrix_power(P.entries(), link.power);
  }

  const Eigen::VectorXd& pi = P.stationary();
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(K);
  std::vector<int> x(V, 0);
  const long long total = static_cast<long long>(states);
  for (long long code = 0; code < total; ++code) {
    long long rest = code;
    for (int v = 0; v < V; ++v) {
      x[v] = static_cast<int>(rest % S);
      rest /= S;
    }
    double prob = 1.0;
    for (int r : roots) prob *= pi(x[r]);
    for (const Link& link : links) prob *= powers[link.power](x[link.from], x[link.to]);
    if (prob == 0.0) continue;
    double denom = 0.0;
    for (int c = 0; c < K; ++c) denom += P(x[c + 1], x[0]);
    for (int c = 0; c < K; ++c) expected(c) += prob * P(x[c + 1], x[0]) / denom;
  }
  return expected;
}

std::vector<ClaimGapSample> claim_gaps_exact(const TransitionMatrix& P, const LagSet& lags) {
  const int K = lags.size();
  if (K < 2) throw invalid("the gap needs at least two lags");
  std::vector<ClaimGapSample> samples;
  for (int c = 0; c < K; ++c) {
    const Eigen::VectorXd e = exact_normalized_expectations(P, lags, lags[c]);
    std::vector<double> means(e.data(), e.data() + K);
    const int other = best_competitor(means, c);
    ClaimGapSample s;
    s.true_lag = lags[c];
    s.runner_up_lag = lags[other];
    s.gap = means[c] - means[other];
    s.mean_scores = means;
    samples.push_back(std::move(s));
  }
  return samples;
}

ClaimCheckResult claim_check(const ClaimCheckOptions& options) {
  if (options.num_matrices < 1) throw invalid("need at least one matrix");
  ClaimCheckResult result;
  result.lags = LagSet(sample_lags(options.num_lags, options.max_lag, options.seed));
  std::vector<std::vector<ClaimGapSample>> per_matrix(options.num_matrices);
  parallel_for(options.num_matrices, options.threads, [&](std::size_t m) {
    const std::uint64_t matrix_seed = derive_seed(options.seed, stream::kMatrix, m);
    const TransitionMatrix P =
        sample_transition_matrix(matrix_seed, options.alphabet_size, options.floor);
    auto samples = options.exact
                       ? claim_gaps_exact(P, result.lags)
                       : claim_gaps_monte_carlo(P, result.lags, options.num_sequences,
                                                options.length, matrix_seed, 1);
    for (auto& s : samples) {
      s.matrix_index = static_cast<int>(m);
      s.matrix_seed = matrix_seed;
    }
    per_matrix[m] = std::move(samples);
  });
  for (auto& v : per_matrix) {
    for (auto& s : v) result.samples.push_back(std::move(s));
  }
  return result;
}

std::string claim_gaps_to_csv(const ClaimCheckResult& result) {
  std::ostringstream out;
  out << "matrix_index,matrix_seed,true_lag,runner_up_lag,gap,stderr\n";
  for (const ClaimGapSample& s : result.samples) {
    out << s.matrix_index << ',' << s.matrix_seed << ',' << s.true_lag << ','
        << s.runner_up_lag << ',' << format_double(s.gap) << ','
        << format_double(s.stderr_gap) << '\n';
  }
  return out.str();
}

double lemma_two_check(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  if (p.size() != q.size()) throw Error(ErrorKind::kDimensionMismatch, "p and q differ in length");
  double gap = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double s = p(i) + q(i);
    if (s > 0.0) gap += p(i) * (p(i) - q(i)) / s;
  }
  return gap;
}

LemmaGap lemma_uno_check(const TransitionMatrix& P, int k, int r, LemmaMode mode,
                         int num_samples, std::uint64_t seed) {
  if (k < 1 || r < 1 || k == r) throw invalid("lemma needs distinct positive lags");
  if (mode == LemmaMode::kExact) {
    const Eigen::MatrixXd& A = P.entries();
    const Eigen::VectorXd& pi = P.stationary();
    // Under a lag-k chain, x_{i-r} and x_i are linked through P^(r/k) when k
    // divides r and are independent otherwise.
    const Eigen::MatrixXd joint_other =
        r % k == 0 ? Eigen::MatrixXd(pi.asDiagonal() * matrix_power(A, r / k))
                   : Eigen::MatrixXd(pi * pi.transpose());
    const Eigen::MatrixXd joint_true = pi.asDiagonal() * A;
    return {joint_true.cwiseProduct(A).sum() - joint_other.cwiseProduct(A).sum(), 0.0};
  }
  if (num_samples < 2) throw invalid("Monte-Carlo mode needs at least two samples");
  const int length = std::max(k, r) + 1;
  std::vector<double> diffs(num_samples);
  for (int n = 0; n < num_samples; ++n) {
    Rng rng(derive_seed(seed, stream::kSequence, n));
    const Sequence x = sample_sequence(P, k, k, length, rng);
    const int i = length - 1;
    diffs[n] = P(x[i - k], x[i]) - P(x[i - r], x[i]);
  }
  const auto [gap, se] = mean_and_stderr(diffs);
  return {gap, se};
}

std::vector<LemmaRow> lemma_suite(const LemmaSuiteOptions& options) {
  std::vector<LemmaRow> two(options.num_pairs);
  parallel_for(options.num_pairs, options.threads, [&](std::size_t n) {
    Rng rng(derive_seed(options.seed, stream::kPair, n));
    const Eigen::VectorXd p = rng.dirichlet_ones(options.alphabet_size);
    const Eigen::VectorXd q = rng.dirichlet_ones(options.alphabet_size);
    two[n] = LemmaRow{"two", static_cast<int>(n), "exact", 0, 0, lemma_two_check(p, q), 0.0};
  });

  const auto& lags = options.lags.lags();
  std::vector<std::vector<LemmaRow>> uno(options.num_matrices);
  parallel_for(options.num_matrices, options.threads, [&](std::size_t m) {
    const std::uint64_t matrix_seed = derive_seed(options.seed, stream::kMatrix, m);
    const TransitionMatrix P = sample_transition_matrix(matrix_seed, options.alphabet_size);
    int pair = 0;
    for (int k : lags) {
      for (int r : lags) {
        if (k == r) continue;
        const LemmaGap exact = lemma_uno_check(P, k, r, LemmaMode::kExact);
        const LemmaGap mc = lemma_uno_check(P, k, r, LemmaMode::kMonteCarlo,
                                            options.num_samples,
                                            derive_seed(matrix_seed, stream::kPair, pair++));
        uno[m].push_back({"uno", static_cast<int>(m), "exact", k, r, exact.gap, 0.0});
        uno[m].push_back({"uno", static_cast<int>(m), "monte_carlo", k, r, mc.gap, mc.stderr_gap});
      }
    }
  });

  std::vector<LemmaRow> rows = std::move(two);
  for (auto& v : uno) rows.insert(rows.end(), v.begin(), v.end());
  return rows;
}

std::string lemma_rows_to_csv(const std::vector<LemmaRow>& rows) {
  std::ostringstream out;
  out << "lemma,instance,method,true_lag,other_lag,gap,stderr\n";
  for (const LemmaRow& r : rows) {
    out << r.lemma << ',' << r.instance << ',' << r.mode << ',' << r.true_lag << ','
        << r.other_lag << ',' << format_double(r.gap) << ',' << format_double(r.stderr_gap)
        << '\n';
  }
  return out.str();
}

std::string attention_map_to_csv(const Eigen::MatrixXd& weights) {
  std::ostringstream out;
  out << "row";
  for (Eigen::Index j = 1; j <= weights.cols(); ++j) out << ',' << j;
  out << '\n';
  for (Eigen::Index i = 0; i < weights.rows(); ++i) {
    out << i + 1;
    for (Eigen::Index j = 0; j < weights.cols(); ++j) out << ',' << format_double(weights(i, j));
    out << '\n';
  }
  return out.str();
}

std::vector<std::filesystem::path> export_attention_maps(
    const DisentangledModel& model, SequenceView seq, const std::filesystem::path& dir,
    const nlohmann::json& manifest_extra) {
  const ForwardResult r = model_forward(model, seq);
  ensure_directory(dir);
  std::vector<std::filesystem::path> written;
  nlohmann::json maps = nlohmann::json::array();
  for (const AttentionMap& m : r.maps) {
    const std::string name =
        "attn_l" + std::to_string(m.layer) + "_h" + std::to_string(m.head) + ".csv";
    write_text_file(dir / name, attention_map_to_csv(m.weights));
    written.push_back(dir / name);
    maps.push_back({{"layer", m.layer}, {"head", m.head}, {"file", name}});
  }
  nlohmann::json manifest = manifest_extra.is_object() ? manifest_extra : nlohmann::json::object();
  manifest["length"] = model.length();
  manifest["total_heads"] = model.total_heads();
  manifest["sequence"] = std::vector<Token>(seq.begin(), seq.end());
  manifest["maps"] = std::move(maps);
  write_text_file(dir / "manifest.json", dump_json(manifest));
  written.push_back(dir / "manifest.json");
  return written;
}

}  // namespace selind
