#include "selind/dtransformer.h"

#include <cmath>
#include <string>

#include "selind/error.h"

namespace selind {
namespace {

Error mismatch(const std::string& message) {
  return Error(ErrorKind::kDimensionMismatch, message);
}

}  // namespace

DisentangledModel::DisentangledModel(int alphabet_size, int length,
                                     std::vector<std::vector<SparseMatrix>> layers,
                                     SparseMatrix output, double alpha)
    : alphabet_size_(alphabet_size),
      length_(length),
      layers_(std::move(layers)),
      output_(std::move(output)),
      alpha_(alpha) {
  if (alphabet_size_ < 1 || length_ < 1) {
    throw Error(ErrorKind::kInvalidConfig, "alphabet size and length must be positive");
  }
  if (!(alpha_ > 0.0)) throw Error(ErrorKind::kInvalidConfig, "alpha must be positive");
  dims_.push_back(alphabet_size_ + length_);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const int d = dims_.back();
    for (std::size_t h = 0; h < layers_[l].size(); ++h) {
      const SparseMatrix& a = layers_[l][h];
      if (a.rows() != d || a.cols() != d) {
        throw mismatch("layer " + std::to_string(l + 1) + " head " +
                       std::to_string(h + 1) + " must be " + std::to_string(d) +
                       "x" + std::to_string(d));
      }
    }
    dims_.push_back(d * (1 + static_cast<int>(layers_[l].size())));
  }
  if (output_.rows() != alphabet_size_ || output_.cols() != dims_.back()) {
    throw mismatch("output matrix must be " + std::to_string(alphabet_size_) + "x" +
                   std::to_string(dims_.back()));
  }
}

int DisentangledModel::total_heads() const {
  int total = 0;
  for (const auto& layer : layers_) total += static_cast<int>(layer.size());
  return total;
}

Eigen::MatrixXd embed(SequenceView seq, int alphabet_size, int length) {
  if (static_cast<int>(seq.size()) != length) {
    throw mismatch("sequence length " + std::to_string(seq.size()) +
                   " does not match model length " + std::to_string(length));
  }
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(alphabet_size + length, length);
  for (int i = 0; i < length; ++i) {
    if (seq[i] < 0 || seq[i] >= alphabet_size) {
      throw Error(ErrorKind::kInvalidConfig, "token out of range at position " +
                                                 std::to_string(i + 1));
    }
    h(seq[i], i) = 1.0;
    h(alphabet_size + i, i) = 1.0;
  }
  return h;
}

Eigen::MatrixXd attention_scores(const Eigen::MatrixXd& h, const SparseMatrix& a) {
  if (a.rows() != h.rows() || a.cols() != h.rows()) {
    throw mismatch("attention matrix does not match the residual width");
  }
  const Eigen::MatrixXd ah = a * h;
  return h.transpose() * ah;
}

Eigen::MatrixXd causal_softmax(const Eigen::MatrixXd& scores, double alpha) {
  const Eigen::Index T = scores.rows();
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(T, T);
  for (Eigen::Index i = 0; i < T; ++i) {
    double m = scores(i, 0) / alpha;
    for (Eigen::Index j = 1; j <= i; ++j) m = std::max(m, scores(i, j) / alpha);
    double total = 0.0;
    for (Eigen::Index j = 0; j <= i; ++j) {
      w(i, j) = std::exp(scores(i, j) / alpha - m);
      total += w(i, j);
    }
    for (Eigen::Index j = 0; j <= i; ++j) w(i, j) /= total;
  }
  return w;
}

AttentionResult attention_forward(const Eigen::MatrixXd& h, const SparseMatrix& a,
                                  double alpha) {
  if (!(alpha > 0.0)) throw Error(ErrorKind::kInvalidConfig, "alpha must be positive");
  AttentionResult r;
  r.weights = causal_softmax(attention_scores(h, a), alpha);
  r.output = h * r.weights.transpose();
  return r;
}

namespace {

std::vector<Eigen::MatrixXd> run_layers(const DisentangledModel& model, SequenceView seq,
                                        int num_layers, std::vector<AttentionMap>* maps) {
  std::vector<Eigen::MatrixXd> hidden;
  hidden.push_back(embed(seq, model.alphabet_size(), model.length()));
  for (int l = 0; l < num_layers; ++l) {
    const Eigen::MatrixXd& prev = hidden.back();
    const int d = model.dim(l);
    const int heads = model.num_heads(l);
    Eigen::MatrixXd next(model.dim(l + 1), model.length());
    next.topRows(d) = prev;
    for (int h = 0; h < heads; ++h) {
      AttentionResult r = attention_forward(prev, model.layer(l)[h], model.alpha());
      next.middleRows(static_cast<Eigen::Index>(d) * (1 + h), d) = r.output;
      if (maps != nullptr) maps->push_back(AttentionMap{l + 1, h + 1, std::move(r.weights)});
    }
    hidden.push_back(std::move(next));
  }
  return hidden;
}

}  // namespace

std::vector<Eigen::MatrixXd> hidden_states(const DisentangledModel& model,
                                           SequenceView seq, int num_layers) {
  if (num_layers < 0 || num_layers > model.num_layers()) {
    throw Error(ErrorKind::kInvalidConfig, "layer count out of range");
  }
  return run_layers(model, seq, num_layers, nullptr);
}

ForwardResult model_forward(const DisentangledModel& model, SequenceView seq) {
  ForwardResult r;
  r.hidden = run_layers(model, seq, model.num_layers(), &r.maps);
  r.logits = model.output() * r.hidden.back();
  return r;
}

Eigen::VectorXd normalize_output_column(const Eigen::VectorXd& column) {
  Eigen::VectorXd p = column.cwiseMax(0.0);
  const double total = p.sum();
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw Error(ErrorKind::kBrokenConstruction,
                "final output column has no positive mass");
  }
  return p / total;
}

Eigen::VectorXd predict_distribution(const DisentangledModel& model, SequenceView seq) {
  const ForwardResult r = model_forward(model, seq);
  return normalize_output_column(r.logits.col(r.logits.cols() - 1));
}

}  // namespace selind
