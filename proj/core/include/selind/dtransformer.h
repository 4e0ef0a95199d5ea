#ifndef SELIND_DTRANSFORMER_H_
#define SELIND_DTRANSFORMER_H_

#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "selind/chains.h"

namespace selind {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Attention-only transformer whose layers append their head outputs to the
// residual stream. Layer l has H_l square matrices of side d_{l-1}, and
// d_l = (1 + H_l) d_{l-1} with d_0 = S + T.
class DisentangledModel {
 public:
  DisentangledModel(int alphabet_size, int length,
                    std::vector<std::vector<SparseMatrix>> layers,
                    SparseMatrix output, double alpha = 1.0);

  int alphabet_size() const { return alphabet_size_; }
  int length() const { return length_; }
  int num_layers() const { return static_cast<int>(layers_.size()); }
  // `layer` is 0-based here.
  int num_heads(int layer) const { return static_cast<int>(layers_[layer].size()); }
  int total_heads() const;
  // d_l for l in [0, num_layers].
  int dim(int l) const { return dims_[l]; }
  double alpha() const { return alpha_; }
  const std::vector<SparseMatrix>& layer(int layer) const { return layers_[layer]; }
  const SparseMatrix& output() const { return output_; }

 private:
  int alphabet_size_;
  int length_;
  std::vector<std::vector<SparseMatrix>> layers_;
  SparseMatrix output_;
  double alpha_;
  std::vector<int> dims_;
};

struct AttentionMap {
  int layer = 0;  // 1-based
  int head = 0;   // 1-based
  Eigen::MatrixXd weights;  // T x T, causal and row-stochastic
};

struct AttentionResult {
  Eigen::MatrixXd output;   // d x T
  Eigen::MatrixXd weights;  // T x T
};

struct ForwardResult {
  Eigen::MatrixXd logits;             // S x T
  std::vector<AttentionMap> maps;     // layer-major, head-minor
  std::vector<Eigen::MatrixXd> hidden;  // h^(0) .. h^(L)
};

// Column i holds [e_{s_i}; e_i].
Eigen::MatrixXd embed(SequenceView seq, int alphabet_size, int length);

// Unmasked bilinear scores h_i^T A h_j.
Eigen::MatrixXd attention_scores(const Eigen::MatrixXd& h, const SparseMatrix& a);

// Causal softmax attention with temperature alpha.
AttentionResult attention_forward(const Eigen::MatrixXd& h, const SparseMatrix& a,
                                  double alpha = 1.0);

// Row-wise causal softmax of score / alpha.
Eigen::MatrixXd causal_softmax(const Eigen::MatrixXd& scores, double alpha = 1.0);

ForwardResult model_forward(const DisentangledModel& model, SequenceView seq);

// Residual streams h^(0)..h^(num_layers) without the output projection.
std::vector<Eigen::MatrixXd> hidden_states(const DisentangledModel& model,
                                           SequenceView seq, int num_layers);

// Final-position output clipped at zero and renormalized.
Eigen::VectorXd predict_distribution(const DisentangledModel& model, SequenceView seq);
Eigen::VectorXd normalize_output_column(const Eigen::VectorXd& column);

}  // namespace selind

#endif  // SELIND_DTRANSFORMER_H_
