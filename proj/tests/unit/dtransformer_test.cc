#include "selind/dtransformer.h"

#include <cmath>

#include <gtest/gtest.h>

#include "oracles.h"
#include "selind/error.h"

namespace selind {
namespace {

using testing::Gen;

SparseMatrix random_matrix(Gen& gen, int d, double scale) {
  Eigen::MatrixXd m(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) m(i, j) = scale * (2 * gen.uniform() - 1);
  }
  return m.sparseView();
}

// Plain-loop forward pass used as the reference.
Eigen::MatrixXd reference_attention(const Eigen::MatrixXd& h, const Eigen::MatrixXd& a,
                                    double alpha) {
  const int T = static_cast<int>(h.cols());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(h.rows(), T);
  for (int i = 0; i < T; ++i) {
    std::vector<double> s(i + 1);
    double m = -1e300;
    for (int j = 0; j <= i; ++j) {
      s[j] = h.col(i).dot(a * h.col(j)) / alpha;
      m = std::max(m, s[j]);
    }
    double z = 0.0;
    for (int j = 0; j <= i; ++j) z += std::exp(s[j] - m);
    for (int j = 0; j <= i; ++j) out.col(i) += std::exp(s[j] - m) / z * h.col(j);
  }
  return out;
}

TEST(EmbedTest, OneHotColumns) {
  const Sequence seq{1, 0};
  const Eigen::MatrixXd h = embed(seq, 2, 2);
  Eigen::MatrixXd expected(4, 2);
  expected << 0, 1, 1, 0, 1, 0, 0, 1;
  EXPECT_EQ(h, expected);
  Gen gen(1);
  const Sequence s2 = gen.tokens(9, 4);
  const Eigen::MatrixXd h2 = embed(s2, 4, 9);
  for (int i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(h2.col(i).sum(), 2.0);
  Sequence s3 = s2;
  s3[4] = (s3[4] + 1) % 4;
  EXPECT_NE(embed(s3, 4, 9), h2);
}

TEST(EmbedTest, RejectsMismatch) {
  try {
    embed(std::vector<int>{0, 1, 0}, 2, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimensionMismatch);
  }
  EXPECT_THROW(embed(std::vector<int>{0, 5}, 2, 2), Error);
}

TEST(AttentionTest, ZeroMatrixAveragesPrefix) {
  Gen gen(2);
  const Eigen::MatrixXd h = embed(gen.tokens(6, 3), 3, 6);
  const AttentionResult r = attention_forward(h, SparseMatrix(9, 9));
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) EXPECT_NEAR(r.weights(i, j), j <= i ? 1.0 / (i + 1) : 0.0, 1e-15);
    const Eigen::VectorXd mean = h.leftCols(i + 1).rowwise().mean();
    EXPECT_LT((r.output.col(i) - mean).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(AttentionTest, CausalRowStochasticAndMatchesReference) {
  Gen gen(3);
  for (int trial = 0; trial < 30; ++trial) {
    const int S = 2 + gen.below(3), T = 2 + gen.below(8);
    const Eigen::MatrixXd h = embed(gen.tokens(T, S), S, T);
    const SparseMatrix a = random_matrix(gen, S + T, 5.0);
    const double alpha = 0.5 + gen.uniform();
    const AttentionResult r = attention_forward(h, a, alpha);
    for (int i = 0; i < T; ++i) {
      EXPECT_NEAR(r.weights.row(i).sum(), 1.0, 1e-10);
      for (int j = i + 1; j < T; ++j) EXPECT_EQ(r.weights(i, j), 0.0);
    }
    const Eigen::MatrixXd ref = reference_attention(h, Eigen::MatrixXd(a), alpha);
    EXPECT_LT((r.output - ref).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(AttentionTest, RowShiftInvarianceAndLargeScores) {
  Gen gen(4);
  Eigen::MatrixXd scores(5, 5);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) scores(i, j) = 10 * gen.uniform();
  }
  Eigen::MatrixXd shifted = scores;
  for (int i = 0; i < 5; ++i) shifted.row(i).array() += 700.0 * (i + 1);
  EXPECT_LT((causal_softmax(scores) - causal_softmax(shifted)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE(causal_softmax(shifted).allFinite());
}

TEST(AttentionTest, DoublingAlphaEqualsHalvingMatrix) {
  Gen gen(5);
  const Eigen::MatrixXd h = embed(gen.tokens(7, 3), 3, 7);
  const SparseMatrix a = random_matrix(gen, 10, 20.0);
  const SparseMatrix half = 0.5 * a;
  const AttentionResult r1 = attention_forward(h, a, 2.0);
  const AttentionResult r2 = attention_forward(h, half, 1.0);
  EXPECT_LT((r1.weights - r2.weights).cwiseAbs().maxCoeff(), 1e-12);
}

DisentangledModel random_model(Gen& gen, int S, int T, const std::vector<int>& heads) {
  std::vector<std::vector<SparseMatrix>> layers;
  int d = S + T;
  for (int H : heads) {
    std::vector<SparseMatrix> layer;
    for (int h = 0; h < H; ++h) layer.push_back(random_matrix(gen, d, 1.0));
    layers.push_back(std::move(layer));
    d *= 1 + H;
  }
  Eigen::MatrixXd out(S, d);
  for (int i = 0; i < S; ++i) {
    for (int j = 0; j < d; ++j) out(i, j) = gen.uniform();
  }
  return DisentangledModel(S, T, std::move(layers), out.sparseView());
}

TEST(ModelTest, DimsMapsAndReference) {
  Gen gen(6);
  const int S = 3, T = 6;
  const DisentangledModel model = random_model(gen, S, T, {1, 2, 1});
  EXPECT_EQ(model.dim(0), 9);
  EXPECT_EQ(model.dim(1), 18);
  EXPECT_EQ(model.dim(2), 54);
  EXPECT_EQ(model.dim(3), 108);
  EXPECT_EQ(model.total_heads(), 4);
  const Sequence seq = gen.tokens(T, S);
  const ForwardResult r = model_forward(model, seq);
  ASSERT_EQ(r.maps.size(), 4u);
  EXPECT_EQ(r.maps[2].layer, 2);
  EXPECT_EQ(r.maps[2].head, 2);
  for (int l = 0; l <= 3; ++l) EXPECT_EQ(r.hidden[l].rows(), model.dim(l));

  // Rebuild the stream by hand.
  Eigen::MatrixXd h = embed(seq, S, T);
  for (int l = 0; l < 3; ++l) {
    Eigen::MatrixXd next(model.dim(l + 1), T);
    next.topRows(h.rows()) = h;
    for (int k = 0; k < model.num_heads(l); ++k) {
      next.middleRows(h.rows() * (1 + k), h.rows()) =
          reference_attention(h, Eigen::MatrixXd(model.layer(l)[k]), 1.0);
    }
    h = next;
  }
  EXPECT_LT((r.logits - Eigen::MatrixXd(model.output()) * h).cwiseAbs().maxCoeff(), 1e-10);
  for (const AttentionMap& m : r.maps) {
    for (int i = 0; i < T; ++i) EXPECT_NEAR(m.weights.row(i).sum(), 1.0, 1e-10);
  }
  EXPECT_EQ(model_forward(model, seq).logits, r.logits);
}

TEST(ModelTest, ZeroOutputGivesZeroLogitsAndBrokenPrediction) {
  const int S = 2, T = 3;
  std::vector<std::vector<SparseMatrix>> layers{{SparseMatrix(5, 5)}};
  const DisentangledModel model(S, T, layers, SparseMatrix(S, 10));
  const Sequence seq{0, 1, 1};
  EXPECT_EQ(model_forward(model, seq).logits, Eigen::MatrixXd::Zero(S, T));
  try {
    predict_distribution(model, seq);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kBrokenConstruction);
  }
}

TEST(ModelTest, PredictionIsNormalized) {
  Gen gen(7);
  const DisentangledModel model = random_model(gen, 4, 5, {2});
  const Eigen::VectorXd p = predict_distribution(model, gen.tokens(5, 4));
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  EXPECT_GE(p.minCoeff(), 0.0);
  const Eigen::VectorXd clipped = normalize_output_column(Eigen::Vector3d(-0.1, 0.3, 0.1));
  EXPECT_DOUBLE_EQ(clipped(0), 0.0);
  EXPECT_NEAR(clipped(1), 0.75, 1e-15);
}

TEST(ModelTest, RejectsWrongShapes) {
  std::vector<std::vector<SparseMatrix>> bad{{SparseMatrix(4, 4)}};
  EXPECT_THROW(DisentangledModel(2, 3, bad, SparseMatrix(2, 10)), Error);
  std::vector<std::vector<SparseMatrix>> good{{SparseMatrix(5, 5)}};
  EXPECT_THROW(DisentangledModel(2, 3, good, SparseMatrix(2, 9)), Error);
  EXPECT_THROW(DisentangledModel(2, 3, good, SparseMatrix(2, 10), 0.0), Error);
}

}  // namespace
}  // namespace selind
