#include "selind/constructions.h"

#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "selind/error.h"

namespace selind {
namespace {

using Triplets = std::vector<Eigen::Triplet<double>>;

int pos_mod(int a, int m) {
  const int r = a % m;
  return r < 0 ? r + m : r;
}

SparseMatrix from_triplets(int rows, int cols, const Triplets& triplets) {
  SparseMatrix m(rows, cols);
  m.setFromTriplets(triplets.begin(), triplets.end());
  m.makeCompressed();
  return m;
}

Error invalid(const std::string& message) {
  return Error(ErrorKind::kInvalidConfig, message);
}

void validate_common(const TransitionMatrix& P, const ConstructionConfig& config) {
  if (config.length <= config.lags.k_hat()) {
    throw Error(ErrorKind::kSequenceTooShort,
                "T = " + std::to_string(config.length) +
                    " must exceed the largest lag " + std::to_string(config.lags.k_hat()));
  }
  if (!std::isfinite(config.lambda) || config.lambda < 0.0) {
    throw invalid("lambda must be finite and nonnegative");
  }
  if (!std::isfinite(config.beta) || config.beta < 0.0) {
    throw invalid("beta must be finite and nonnegative");
  }
  if (P.alphabet_size() < 1) throw invalid("empty alphabet");
}

void require_contiguous(const ConstructionConfig& config) {
  if (!config.lags.is_contiguous()) {
    throw Error(ErrorKind::kNonContiguousLags,
                "lag set {" + config.lags.to_string() +
                    "} is not contiguous; use variant noncontig-13, noncontig-134 "
                    "or two-lag-single-head");
  }
}

int resolve_heads(const ConstructionConfig& config, int fixed) {
  if (config.heads_layer2 != 0 && config.heads_layer2 != fixed) {
    throw invalid(std::string("variant ") + variant_name(config.variant) + " uses exactly " +
                  std::to_string(fixed) + " second-layer heads");
  }
  return fixed;
}

std::vector<AggregationPattern> strided_patterns(int period, int heads) {
  std::vector<AggregationPattern> patterns;
  for (int h = 0; h < heads; ++h) patterns.push_back(AggregationPattern{period, {h}});
  return patterns;
}

std::vector<AggregationPattern> contiguous_patterns(const ConstructionConfig& config) {
  require_contiguous(config);
  const int K = config.lags.size();
  int heads = config.heads_layer2 == 0 ? K : config.heads_layer2;
  if (heads < 1 || heads > K) {
    throw invalid("second-layer head count must lie in [1, " + std::to_string(K) + "]");
  }
  return strided_patterns(K, heads);
}

// The positional readout is exact when every (residue, lag) pair lands on a
// distinct residue class, so that lag k's weights are read back only at the
// column of lag k.
void check_separable(const std::vector<AggregationPattern>& patterns, const LagSet& lags) {
  for (const AggregationPattern& p : patterns) {
    std::set<int> seen;
    for (int rho : p.residues) {
      for (int lag : lags.lags()) {
        if (!seen.insert(pos_mod(rho + lag, p.period)).second) {
          throw Error(ErrorKind::kUnsupportedLagSet,
                      "second-layer pattern mixes lags {" + lags.to_string() + "}");
        }
      }
    }
  }
}

SparseMatrix first_layer(const TransitionMatrix& P, const StreamLayout& layout,
                         const LagSet& lags, double lambda) {
  const int S = layout.alphabet_size;
  const int T = layout.length;
  Triplets t;
  t.reserve(static_cast<std::size_t>(S) * S + static_cast<std::size_t>(T) * T);
  for (int a = 0; a < S; ++a) {
    for (int b = 0; b < S; ++b) t.emplace_back(a, b, P.log_entries()(b, a));
  }
  for (int i = 1; i <= T; ++i) {
    for (int j = 1; j <= T; ++j) {
      const double v = lags.contains(i - j) ? lambda : -lambda;
      t.emplace_back(S + i - 1, S + j - 1, v);
    }
  }
  return from_triplets(layout.d0, layout.d0, t);
}

SparseMatrix second_layer(const StreamLayout& layout, const AggregationPattern& pattern,
                          int k_hat, double lambda) {
  const int S = layout.alphabet_size;
  const int T = layout.length;
  Triplets t;
  t.reserve(static_cast<std::size_t>(T) * T);
  for (int i = 1; i <= T; ++i) {
    for (int j = 1; j <= T; ++j) {
      const double v = pattern.attends(i, j, k_hat) ? lambda : -lambda;
      t.emplace_back(S + i - 1, S + j - 1, v);
    }
  }
  return from_triplets(layout.d1, layout.d1, t);
}

SparseMatrix third_layer_base(const StreamLayout& layout, const LagSet& lags,
                              double lambda) {
  const int S = layout.alphabet_size;
  const int T = layout.length;
  Triplets t;
  t.reserve(static_cast<std::size_t>(T) * T);
  for (int i = 1; i <= T; ++i) {
    for (int j = 1; j <= T; ++j) {
      const double v = lags.contains(i - j + 1) ? lambda : -lambda;
      t.emplace_back(S + i - 1, S + j - 1, v);
    }
  }
  return from_triplets(layout.d2, layout.d2, t);
}

SparseMatrix masked_copy_unit(const StreamLayout& layout, int head, int period) {
  const int T = layout.length;
  const int row0 = layout.head_transition_offset(head);
  const int col0 = layout.head_position_offset(head);
  Triplets t;
  for (int q = 1; q <= T; ++q) {
    for (int r = 1; r <= T; ++r) {
      if (pos_mod(q - r, period) == period - 1) t.emplace_back(row0 + q - 1, col0 + r - 1, 1.0);
    }
  }
  return from_triplets(layout.d2, layout.d2, t);
}

SparseMatrix positional_unit(const StreamLayout& layout, int head,
                             const AggregationPattern& pattern) {
  const int T = layout.length;
  const int M = pattern.period;
  std::vector<bool> selected(M, false);
  for (int rho : pattern.residues) selected[pos_mod(-rho - 1, M)] = true;
  const int row0 = layout.head_transition_offset(head);
  const int col0 = layout.position_offset();
  Triplets t;
  for (int q = 1; q <= T; ++q) {
    for (int r = 1; r <= T; ++r) {
      if (selected[pos_mod(q - r, M)]) t.emplace_back(row0 + q - 1, col0 + r - 1, 1.0);
    }
  }
  return from_triplets(layout.d2, layout.d2, t);
}

// Row position i, column p-hat coordinate q. The offset aligns the sign
// pattern so that both lags' own weights enter positively.
SparseMatrix contrast_unit(const StreamLayout& layout, const LagSet& lags) {
  const int T = layout.length;
  const int delta = lags.k_hat() - lags.k_bar();
  const int offset = 2 * (lags.k_bar() - 1);
  const int row0 = layout.position_offset();
  const int col0 = layout.head_transition_offset(0);
  Triplets t;
  for (int i = 1; i <= T; ++i) {
    for (int q = 1; q < i; ++q) {
      const double v = pos_mod(i - q - 1 - offset, 2 * delta) < delta ? 1.0 : -1.0;
      t.emplace_back(row0 + i - 1, col0 + q - 1, v);
    }
  }
  return from_triplets(layout.d2, layout.d2, t);
}

SparseMatrix output_layer(const TransitionMatrix& P, const StreamLayout& layout) {
  const int S = layout.alphabet_size;
  Triplets t;
  for (int b = 0; b < S; ++b) {
    for (int a = 0; a < S; ++a) t.emplace_back(b, layout.selected_token_offset() + a, P(a, b));
  }
  return from_triplets(S, layout.d3, t);
}

std::vector<double> gains_for(const ConstructionConfig& config,
                              const std::vector<AggregationPattern>& patterns,
                              SelectionKind kind, int length) {
  std::vector<double> gains(patterns.size(), config.beta);
  if (kind == SelectionKind::kContrast || config.beta_scaling == BetaScaling::kRaw) {
    return gains;
  }
  int total = 0;
  std::vector<int> counts;
  for (const AggregationPattern& p : patterns) {
    counts.push_back(p.coverage(length, config.lags.k_hat()));
    total += counts.back();
  }
  if (total == 0) {
    throw Error(ErrorKind::kSequenceTooShort, "no second-layer head covers the final row");
  }
  for (std::size_t h = 0; h < patterns.size(); ++h) {
    gains[h] = config.beta * counts[h] / total;
  }
  return gains;
}

ConstructedModel assemble(const TransitionMatrix& P, ConstructionConfig config,
                          std::vector<AggregationPattern> patterns, SelectionKind kind) {
  const int H = static_cast<int>(patterns.size());
  config.heads_layer2 = H;
  const StreamLayout layout(P.alphabet_size(), config.length, H);
  const int k_hat = config.lags.k_hat();

  std::vector<SparseMatrix> units;
  for (int h = 0; h < H; ++h) {
    switch (kind) {
      case SelectionKind::kMaskedCopy:
        units.push_back(masked_copy_unit(layout, h, patterns[h].period));
        break;
      case SelectionKind::kPositional:
        units.push_back(positional_unit(layout, h, patterns[h]));
        break;
      case SelectionKind::kContrast:
        units.push_back(contrast_unit(layout, config.lags));
        break;
    }
  }
  SparseMatrix base = third_layer_base(layout, config.lags, config.lambda);
  std::vector<double> gains = gains_for(config, patterns, kind, config.length);
  SparseMatrix third = base;
  for (int h = 0; h < H; ++h) third += gains[h] * units[h];

  std::vector<std::vector<SparseMatrix>> layers(3);
  layers[0].push_back(first_layer(P, layout, config.lags, config.lambda));
  for (const AggregationPattern& p : patterns) {
    layers[1].push_back(second_layer(layout, p, k_hat, config.lambda));
  }
  layers[2].push_back(std::move(third));

  DisentangledModel model(P.alphabet_size(), config.length, std::move(layers),
                          output_layer(P, layout), 1.0);
  return ConstructedModel{std::move(model), std::move(config), layout, std::move(patterns),
                          kind, std::move(gains), std::move(base), std::move(units)};
}

}  // namespace

const char* variant_name(Variant variant) {
  switch (variant) {
    case Variant::kContiguous: return "contiguous";
    case Variant::kAltThird: return "alt-third";
    case Variant::kNoncontig13: return "noncontig-13";
    case Variant::kNoncontig134: return "noncontig-134";
    case Variant::kTwoLagSingleHead: return "two-lag-single-head";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::kContiguous, Variant::kAltThird, Variant::kNoncontig13,
                    Variant::kNoncontig134, Variant::kTwoLagSingleHead}) {
    if (name == variant_name(v)) return v;
  }
  throw invalid("unknown variant '" + name + "'");
}

StreamLayout::StreamLayout(int alphabet_size, int length, int heads_layer2)
    : alphabet_size(alphabet_size), length(length), heads_layer2(heads_layer2) {
  d0 = alphabet_size + length;
  d1 = 2 * d0;
  d2 = (1 + heads_layer2) * d1;
  d3 = 2 * d2;
}

bool AggregationPattern::attends(int i, int j, int k_hat) const {
  if (j > i || j <= k_hat) return false;
  const int r = pos_mod(i - j, period);
  for (int rho : residues) {
    if (rho == r) return true;
  }
  return false;
}

int AggregationPattern::coverage(int i, int k_hat) const {
  int count = 0;
  for (int j = k_hat + 1; j <= i; ++j) count += attends(i, j, k_hat) ? 1 : 0;
  return count;
}

ConstructedModel build_contiguous(const TransitionMatrix& P,
                                  const ConstructionConfig& config) {
  validate_common(P, config);
  return assemble(P, config, contiguous_patterns(config), SelectionKind::kMaskedCopy);
}

ConstructedModel build_third_layer_positional(const TransitionMatrix& P,
                                              const ConstructionConfig& config) {
  validate_common(P, config);
  auto patterns = contiguous_patterns(config);
  check_separable(patterns, config.lags);
  return assemble(P, config, std::move(patterns), SelectionKind::kPositional);
}

ConstructedModel build_noncontiguous(const TransitionMatrix& P,
                                     const ConstructionConfig& config) {
  validate_common(P, config);
  std::vector<AggregationPattern> patterns;
  if (config.variant == Variant::kNoncontig13) {
    if (config.lags.lags() != std::vector<int>{1, 3}) {
      throw Error(ErrorKind::kUnsupportedLagSet, "noncontig-13 requires lags {1,3}");
    }
    resolve_heads(config, 2);
    patterns = {AggregationPattern{4, {0, 1}}, AggregationPattern{4, {2, 3}}};
  } else if (config.variant == Variant::kNoncontig134) {
    if (config.lags.lags() != std::vector<int>{1, 3, 4}) {
      throw Error(ErrorKind::kUnsupportedLagSet, "noncontig-134 requires lags {1,3,4}");
    }
    resolve_heads(config, 4);
    patterns = strided_patterns(4, 4);
  } else {
    throw invalid("build_noncontiguous needs variant noncontig-13 or noncontig-134");
  }
  check_separable(patterns, config.lags);
  return assemble(P, config, std::move(patterns), SelectionKind::kPositional);
}

ConstructedModel build_two_lag_single_head(const TransitionMatrix& P,
                                           const ConstructionConfig& config) {
  validate_common(P, config);
  if (config.lags.size() != 2) {
    throw Error(ErrorKind::kUnsupportedLagSet,
                "two-lag-single-head requires exactly two lags");
  }
  resolve_heads(config, 1);
  const int delta = config.lags.k_hat() - config.lags.k_bar();
  std::vector<int> residues;
  for (int r = 0; r < delta; ++r) residues.push_back(r);
  return assemble(P, config, {AggregationPattern{2 * delta, residues}},
                  SelectionKind::kContrast);
}

ConstructedModel build_construction(const TransitionMatrix& P,
                                    const ConstructionConfig& config) {
  switch (config.variant) {
    case Variant::kContiguous: return build_contiguous(P, config);
    case Variant::kAltThird: return build_third_layer_positional(P, config);
    case Variant::kNoncontig13:
    case Variant::kNoncontig134: return build_noncontiguous(P, config);
    case Variant::kTwoLagSingleHead: return build_two_lag_single_head(P, config);
  }
  throw invalid("unknown variant");
}

std::vector<double> selection_gains(const ConstructedModel& cm, int length) {
  return gains_for(cm.config, cm.patterns, cm.selection, length);
}

std::vector<Eigen::VectorXd> predict_prefixes(const ConstructedModel& cm,
                                              SequenceView seq, int first_length) {
  const int T = cm.config.length;
  if (first_length <= cm.config.lags.k_hat() || first_length > T) {
    throw Error(ErrorKind::kSequenceTooShort, "prefix lengths must lie in (k_hat, T]");
  }
  const std::vector<Eigen::MatrixXd> hidden = hidden_states(cm.model, seq, 2);
  // Third-layer scores split into the fixed part and one unit-gain part per
  // head, so each prefix only rescales the head parts.
  const Eigen::SparseMatrix<double> h2 = hidden[2].sparseView();
  const Eigen::SparseMatrix<double> h2t = h2.transpose();
  const Eigen::MatrixXd base_scores = Eigen::MatrixXd(h2t * (cm.selection_base * h2));
  std::vector<Eigen::MatrixXd> unit_scores;
  for (const SparseMatrix& u : cm.selection_units) {
    unit_scores.emplace_back(h2t * (u * h2));
  }
  const int d2 = cm.layout.d2;
  const SparseMatrix& out = cm.model.output();
  const Eigen::MatrixXd direct = out.leftCols(d2) * hidden[2];
  const Eigen::MatrixXd selected = out.rightCols(d2) * hidden[2];

  std::vector<Eigen::VectorXd> predictions;
  predictions.reserve(T - first_length + 1);
  for (int t = first_length; t <= T; ++t) {
    const std::vector<double> gains = selection_gains(cm, t);
    Eigen::RowVectorXd scores = base_scores.row(t - 1).head(t);
    for (std::size_t h = 0; h < gains.size(); ++h) {
      scores += gains[h] * unit_scores[h].row(t - 1).head(t);
    }
    Eigen::VectorXd w = (scores.array() - scores.maxCoeff()).exp().matrix().transpose();
    w /= w.sum();
    const Eigen::VectorXd logits = direct.col(t - 1) + selected.leftCols(t) * w;
    predictions.push_back(normalize_output_column(logits));
  }
  return predictions;
}

void to_json(nlohmann::json& j, const ConstructionConfig& config) {
  j = nlohmann::json::object();
  j["lags"] = config.lags;
  j["length"] = config.length;
  j["lambda"] = config.lambda;
  j["beta"] = config.beta;
  j["heads_layer2"] = config.heads_layer2;
  j["variant"] = variant_name(config.variant);
  j["beta_scaling"] = config.beta_scaling == BetaScaling::kCalibrated ? "calibrated" : "raw";
}

void from_json(const nlohmann::json& j, ConstructionConfig& config) {
  config.lags = LagSet(j.at("lags").get<std::vector<int>>());
  config.length = j.at("length").get<int>();
  config.lambda = j.at("lambda").get<double>();
  config.beta = j.at("beta").get<double>();
  config.heads_layer2 = j.at("heads_layer2").get<int>();
  config.variant = parse_variant(j.at("variant").get<std::string>());
  const std::string scaling = j.at("beta_scaling").get<std::string>();
  if (scaling == "calibrated") {
    config.beta_scaling = BetaScaling::kCalibrated;
  } else if (scaling == "raw") {
    config.beta_scaling = BetaScaling::kRaw;
  } else {
    throw invalid("unknown beta scaling '" + scaling + "'");
  }
}

nlohmann::json layout_table(const StreamLayout& layout) {
  const int S = layout.alphabet_size;
  const int T = layout.length;
  nlohmann::json blocks = nlohmann::json::array();
  auto add = [&](const std::string& name, int layer, int start, int size) {
    blocks.push_back({{"block", name}, {"layer", layer}, {"start", start}, {"size", size}});
  };
  add("token", 0, layout.token_offset(), S);
  add("position", 0, layout.position_offset(), T);
  add("layer1.token", 1, layout.layer1_token_offset(), S);
  add("layer1.transition", 1, layout.transition_offset(), T);
  for (int g = 0; g < layout.heads_layer2; ++g) {
    const std::string prefix = "layer2.head" + std::to_string(g + 1);
    add(prefix, 2, layout.head_offset(g), layout.d1);
    add(prefix + ".position", 2, layout.head_position_offset(g), T);
    add(prefix + ".transition", 2, layout.head_transition_offset(g), T);
  }
  add("layer3.token", 3, layout.selected_token_offset(), S);
  nlohmann::json j;
  j["dims"] = {layout.d0, layout.d1, layout.d2, layout.d3};
  j["blocks"] = std::move(blocks);
  return j;
}

nlohmann::json weight_dump(const ConstructedModel& cm) {
  nlohmann::json j;
  j["config"] = cm.config;
  j["alphabet_size"] = cm.model.alphabet_size();
  j["alpha"] = cm.model.alpha();
  j["layout"] = layout_table(cm.layout);
  j["head_gains"] = cm.head_gains;
  nlohmann::json layers = nlohmann::json::array();
  for (int l = 0; l < cm.model.num_layers(); ++l) {
    nlohmann::json heads = nlohmann::json::array();
    for (int h = 0; h < cm.model.num_heads(l); ++h) {
      heads.push_back({{"head", h + 1},
                       {"matrix", matrix_to_json(Eigen::MatrixXd(cm.model.layer(l)[h]))}});
    }
    layers.push_back({{"layer", l + 1}, {"num_heads", cm.model.num_heads(l)},
                      {"heads", std::move(heads)}});
  }
  j["layers"] = std::move(layers);
  j["output"] = matrix_to_json(Eigen::MatrixXd(cm.model.output()));
  return j;
}

}  // namespace selind
