#include <gtest/gtest.h>

#include <cmath>

#include "stacktune.hpp"

using namespace stacktune;
using D = BasicTensor<double>;

namespace {

D random(Rng& rng, Shape shape) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-2.0, 2.0);
  return D::from(std::move(shape), std::move(v));
}

std::vector<double> values(const D& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Tensor, FromRejectsWrongCount) {
  EXPECT_THROW(D::from({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_EQ(D::zeros({2, 3}).numel(), 6u);
  EXPECT_EQ(D::scalar(4.0).item(), 4.0);
  EXPECT_THROW(D::zeros({2}).item(), ShapeError);
}

TEST(Tensor, NegativeAxes) {
  const auto t = D::zeros({2, 3, 4});
  EXPECT_EQ(t.dim(-1), 4u);
  EXPECT_EQ(t.dim(-3), 2u);
  EXPECT_THROW(t.dim(3), ShapeError);
}

TEST(Broadcast, ShapesFollowNumpyRules) {
  EXPECT_EQ(detail::broadcast_shapes("t", {2, 1, 4}, {3, 1}), (Shape{2, 3, 4}));
  EXPECT_EQ(detail::broadcast_shapes("t", {4}, {2, 3, 4}), (Shape{2, 3, 4}));
  EXPECT_THROW(detail::broadcast_shapes("t", {2, 3}, {4, 3}), ShapeError);
}

TEST(Broadcast, AddMatchesExplicitLoops) {
  Rng rng(1);
  const auto a = random(rng, {2, 1, 4});
  const auto b = random(rng, {3, 1});
  const auto y = add(a, b);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 4}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(y[(i * 3 + j) * 4 + k], a[i * 4 + k] + b[j]);
}

TEST(Broadcast, MulAndDivAgainstLoops) {
  Rng rng(2);
  const auto a = random(rng, {3, 4});
  const auto b = random(rng, {4});
  const auto m = mul(a, b);
  const auto d = div(a, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_EQ(m[i * 4 + k], a[i * 4 + k] * b[k]);
      EXPECT_EQ(d[i * 4 + k], a[i * 4 + k] / b[k]);
    }
}

TEST(Ops, MatmulMatchesNaiveTripleLoop) {
  Rng rng(3);
  const auto a = random(rng, {2, 3, 5});
  const auto b = random(rng, {5, 4});
  const auto y = matmul(a, b);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 4}));
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < 5; ++p) s += a[r * 5 + p] * b[p * 4 + j];
      EXPECT_NEAR(y[r * 4 + j], s, 1e-12);
    }
  EXPECT_THROW(matmul(a, random(rng, {4, 4})), ShapeError);
}

TEST(Ops, BmmMatchesPerBatchProducts) {
  Rng rng(4);
  const auto a = random(rng, {3, 2, 4});
  const auto b = random(rng, {3, 4, 5});
  const auto y = bmm(a, b);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < 4; ++p) s += a[(n * 2 + i) * 4 + p] * b[(n * 4 + p) * 5 + j];
        EXPECT_NEAR(y[(n * 2 + i) * 5 + j], s, 1e-12);
      }
}

TEST(Ops, TransposeSwapsIndices) {
  Rng rng(5);
  const auto x = random(rng, {2, 3, 4});
  const auto y = transpose(x, 0, 2);
  ASSERT_EQ(y.shape(), (Shape{4, 3, 2}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(y[(k * 3 + j) * 2 + i], x[(i * 3 + j) * 4 + k]);
}

TEST(Ops, ConcatThenSliceRecoversParts) {
  Rng rng(6);
  const auto a = random(rng, {2, 3});
  const auto b = random(rng, {2, 5});
  const auto c = concat<double>({a, b}, 1);
  ASSERT_EQ(c.shape(), (Shape{2, 8}));
  EXPECT_EQ(values(slice(c, 1, 0, 3)), values(a));
  EXPECT_EQ(values(slice(c, 1, 3, 5)), values(b));
  EXPECT_THROW(slice(c, 1, 6, 3), Error);
}

TEST(Ops, ReshapeKeepsOrder) {
  Rng rng(7);
  const auto x = random(rng, {2, 6});
  EXPECT_EQ(values(reshape(x, {3, 4})), values(x));
  EXPECT_THROW(reshape(x, {5}), ShapeError);
}

TEST(Ops, SoftmaxRowsAreDistributions) {
  Rng rng(8);
  const auto x = random(rng, {3, 5});
  const auto y = softmax(x, -1);
  for (std::size_t r = 0; r < 3; ++r) {
    double z = 0.0;
    for (std::size_t j = 0; j < 5; ++j) z += std::exp(x[r * 5 + j]);
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(y[r * 5 + j], std::exp(x[r * 5 + j]) / z, 1e-14);
  }
  const auto ls = log_softmax(x, -1);
  for (std::size_t i = 0; i < 15; ++i) EXPECT_NEAR(ls[i], std::log(y[i]), 1e-12);
}

TEST(Ops, SoftmaxIsShiftStableForLargeLogits) {
  const auto x = D::from({1, 3}, {1000.0, 1001.0, 1002.0});
  const auto y = softmax(x, -1);
  for (double v : y.data()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(y[2], 1.0 / (1.0 + std::exp(-1.0) + std::exp(-2.0)), 1e-14);
}

TEST(Ops, CrossEntropySkipsIgnoredRows) {
  const auto logits = D::from({3, 2}, {0.0, 0.0, 2.0, 0.0, 5.0, -5.0});
  const std::vector<int> targets{0, kIgnoreIndex, 1};
  const double row0 = std::log(2.0);
  const double row2 = std::log(std::exp(5.0) + std::exp(-5.0)) + 5.0;
  EXPECT_NEAR(cross_entropy(logits, std::span<const int>(targets)).item(), (row0 + row2) / 2.0, 1e-12);
  const std::vector<int> none{kIgnoreIndex, kIgnoreIndex, kIgnoreIndex};
  EXPECT_EQ(cross_entropy(logits, std::span<const int>(none)).item(), 0.0);
}

TEST(Ops, LayerNormHasZeroMeanUnitVariance) {
  Rng rng(9);
  const auto x = random(rng, {4, 6});
  const auto y = layer_norm(x, D::full({6}, 1.0), D::zeros({6}));
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t j = 0; j < 6; ++j) m += y[r * 6 + j];
    m /= 6.0;
    for (std::size_t j = 0; j < 6; ++j) v += (y[r * 6 + j] - m) * (y[r * 6 + j] - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 6.0, 1.0, 1e-4);
  }
}

TEST(Ops, ReductionsAgainstLoops) {
  Rng rng(10);
  const auto x = random(rng, {3, 4});
  const auto s = sum(x, 0);
  const auto m = max(x, 1);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(s[j], x[j] + x[4 + j] + x[8 + j], 1e-14);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(m[i], *std::max_element(x.data().begin() + 4 * i, x.data().begin() + 4 * i + 4));
  }
  EXPECT_NEAR(mean_all(x).item(), sum_all(x).item() / 12.0, 1e-14);
}

TEST(Ops, EmbeddingGathersRows) {
  Rng rng(11);
  const auto table = random(rng, {5, 3});
  const std::vector<int> ids{4, 0, 4};
  const auto y = embedding(table, std::span<const int>(ids), {3});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(y[i * 3 + j], table[std::size_t(ids[i]) * 3 + j]);
  const std::vector<int> bad{5};
  EXPECT_THROW(embedding(table, std::span<const int>(bad), {1}), Error);
}

TEST(Ops, CosineSimilarityMatchesFormula) {
  Rng rng(12);
  const auto a = random(rng, {2, 4});
  const auto b = random(rng, {2, 4});
  const auto c = cosine_similarity(a, b, -1);
  for (std::size_t r = 0; r < 2; ++r) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      dot += a[r * 4 + j] * b[r * 4 + j];
      na += a[r * 4 + j] * a[r * 4 + j];
      nb += b[r * 4 + j] * b[r * 4 + j];
    }
    EXPECT_NEAR(c[r], dot / std::sqrt(na * nb), 1e-12);
  }
  const auto p = pairwise_cosine(reshape(a, {1, 2, 4}), reshape(b, {1, 2, 4}));
  EXPECT_NEAR(p[0], c[0], 1e-12);
  EXPECT_NEAR(p[3], c[1], 1e-12);
}

TEST(Ops, CosineOfZeroVectorIsFinite) {
  const auto a = D::zeros({1, 3});
  const auto b = D::from({1, 3}, {1.0, 2.0, 3.0});
  EXPECT_EQ(cosine_similarity(a, b, -1).item(), 0.0);
}

TEST(Ops, DropoutIsIdentityInEvalAndScalesInTrain) {
  Rng rng(13);
  const auto x = D::full({1000}, 1.0);
  EXPECT_EQ(values(dropout(x, 0.5, nullptr, false)), values(x));
  const auto y = dropout(x, 0.5, &rng, true);
  std::size_t kept = 0;
  for (double v : y.data()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    kept += v != 0.0;
  }
  EXPECT_NEAR(double(kept) / 1000.0, 0.5, 0.06);
  EXPECT_THROW(dropout(x, 1.0, &rng, true), Error);
}

TEST(Ops, MaskedFillReplacesMarkedEntries) {
  const auto x = D::from({4}, {1, 2, 3, 4});
  const std::vector<std::uint8_t> mask{0, 1, 0, 1};
  EXPECT_EQ(values(masked_fill(x, std::span<const std::uint8_t>(mask), -9.0)), (std::vector<double>{1, -9, 3, -9}));
}

TEST(Ops, AbsFloorKeepsSign) {
  const auto x = D::from({4}, {-1e-9, 0.0, 1e-9, -0.5});
  const auto y = abs_floor(x, 1e-6);
  EXPECT_EQ(values(y), (std::vector<double>{-1e-6, 1e-6, 1e-6, -0.5}));
}
