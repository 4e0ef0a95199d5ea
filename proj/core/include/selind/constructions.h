#ifndef SELIND_CONSTRUCTIONS_H_
#define SELIND_CONSTRUCTIONS_H_

#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "selind/chains.h"
#include "selind/dtransformer.h"

namespace selind {

enum class Variant {
  kContiguous,
  kAltThird,
  kNoncontig13,
  kNoncontig134,
  kTwoLagSingleHead,
};

const char* variant_name(Variant variant);
Variant parse_variant(const std::string& name);

// How the third-layer gain beta is split across second-layer heads.
//
// kCalibrated sets head h's gain to beta * c_h / sum(c), where c_h counts the
// positions head h averages over at the model length. The final row then
// scores each lag by exactly beta / (T - k_hat) times its summed normalized
// transition probabilities, even when the heads cover unequal position counts.
// kRaw gives every head the same gain beta.
enum class BetaScaling { kCalibrated, kRaw };

struct ConstructionConfig {
  LagSet lags{std::vector<int>{1}};
  int length = 0;
  double lambda = 500.0;
  double beta = 100.0;
  int heads_layer2 = 0;  // 0 selects the variant's default
  Variant variant = Variant::kContiguous;
  BetaScaling beta_scaling = BetaScaling::kCalibrated;
};

// Where each block lives in the concatenated residual stream. Offsets are
// 0-based row indices into h^(l).
struct StreamLayout {
  int alphabet_size = 0;
  int length = 0;
  int heads_layer2 = 0;
  int d0 = 0, d1 = 0, d2 = 0, d3 = 0;

  StreamLayout() = default;
  StreamLayout(int alphabet_size, int length, int heads_layer2);

  int token_offset() const { return 0; }
  int position_offset() const { return alphabet_size; }
  // Layer-1 head output: token mixture, then normalized transition weights
  // indexed by parent position.
  int layer1_token_offset() const { return d0; }
  int transition_offset() const { return d0 + alphabet_size; }
  // Layer-2 head g (0-based) copies h^(1); inside the copy sit the averaged
  // positions (m-hat) and averaged transition weights (p-hat).
  int head_offset(int g) const { return d1 * (1 + g); }
  int head_position_offset(int g) const { return head_offset(g) + alphabet_size; }
  int head_transition_offset(int g) const { return head_offset(g) + d0 + alphabet_size; }
  // Layer-3 token mixture read by the output layer.
  int selected_token_offset() const { return d2; }
};

// Second-layer head that attends positions j > k_hat with (i - j) mod period
// in `residues`.
struct AggregationPattern {
  int period = 1;
  std::vector<int> residues;

  bool attends(int i, int j, int k_hat) const;  // 1-based positions
  // Number of attended positions in row i.
  int coverage(int i, int k_hat) const;
};

// Third-layer wiring.
//  kMaskedCopy: row-side p-hat against column-side m-hat of the same head.
//  kPositional: row-side p-hat against the column's positional one-hot.
//  kContrast:   row-side positional one-hot against column-side p-hat, with
//               signed entries.
enum class SelectionKind { kMaskedCopy, kPositional, kContrast };

struct ConstructedModel {
  DisentangledModel model;
  ConstructionConfig config;
  StreamLayout layout;
  std::vector<AggregationPattern> patterns;
  SelectionKind selection = SelectionKind::kMaskedCopy;
  std::vector<double> head_gains;
  // Third layer equals selection_base + sum_h head_gains[h] * selection_units[h].
  SparseMatrix selection_base;
  std::vector<SparseMatrix> selection_units;
};

// Third layer reads p-hat blocks through m-hat blocks. Requires contiguous
// lags; needs T >= 2 k_hat + H2 - 1 for every selected column to see a
// well-formed m-hat.
ConstructedModel build_contiguous(const TransitionMatrix& P,
                                  const ConstructionConfig& config);
// Same first two layers; third layer reads p-hat against positions.
ConstructedModel build_third_layer_positional(const TransitionMatrix& P,
                                              const ConstructionConfig& config);
// Presets for {1,3} (two heads, paired residues mod 4) and {1,3,4} (four
// heads, one residue mod 4 each).
ConstructedModel build_noncontiguous(const TransitionMatrix& P,
                                     const ConstructionConfig& config);
// One second-layer head with period 2(k_hat - k_bar) and a signed third layer.
ConstructedModel build_two_lag_single_head(const TransitionMatrix& P,
                                           const ConstructionConfig& config);
// Dispatches on config.variant.
ConstructedModel build_construction(const TransitionMatrix& P,
                                    const ConstructionConfig& config);

// Per-head gains for a model evaluated at `length`.
std::vector<double> selection_gains(const ConstructedModel& cm, int length);

// Final-position distribution for every prefix s_{1..t}, t = first_length..T,
// as if the model had been built at length t. Shares one full-length pass
// through the first two layers, whose weights do not depend on T.
std::vector<Eigen::VectorXd> predict_prefixes(const ConstructedModel& cm,
                                              SequenceView seq, int first_length);

void to_json(nlohmann::json& j, const ConstructionConfig& config);
void from_json(const nlohmann::json& j, ConstructionConfig& config);
nlohmann::json layout_table(const StreamLayout& layout);
// Dense matrices per layer and head, the output matrix, layout and config.
nlohmann::json weight_dump(const ConstructedModel& cm);

}  // namespace selind

#endif  // SELIND_CONSTRUCTIONS_H_
