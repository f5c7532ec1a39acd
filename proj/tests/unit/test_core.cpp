#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "bodhi/core.hpp"
#include "bodhi/error.hpp"

using namespace bodhi;

namespace {

LayeredFeatureBundle make_bundle(std::size_t layers, std::size_t n, std::size_t d) {
  LayeredFeatureBundle b;
  for (std::size_t k = 0; k < layers; ++k) {
    Layer layer;
    layer.index = static_cast<int>(k) + 1;
    layer.vectors = Matrix(n, d);
    for (std::size_t i = 0; i < n * d; ++i) layer.vectors.data()[i] = static_cast<double>(i % 7) - 3.0;
    b.layers.push_back(layer);
  }
  return b;
}

GroupingResult every_nth(const LayeredFeatureBundle& b, std::size_t step) {
  GroupingResult g;
  for (const auto& layer : b.layers) {
    std::vector<double> scores(layer.size(), 0.0);
    for (std::size_t j = 0; j < layer.size(); j += step) scores[j] = 1.0;
    g.partitions.push_back(make_partition(layer.index, scores, 0.5));
  }
  return g;
}

}  // namespace

TEST(ValidateBundle, WellFormedSyntheticShape) {
  EXPECT_TRUE(validate_bundle(make_bundle(4, 200, 8)).ok());
}

TEST(ValidateBundle, ReportsNonFiniteWithLayer) {
  auto b = make_bundle(4, 20, 8);
  b.layers[1].vectors(3, 2) = std::numeric_limits<double>::quiet_NaN();
  const auto v = validate_bundle(b);
  ASSERT_EQ(v.violations.size(), 1u);
  EXPECT_EQ(v.violations[0].message, "non-finite value, layer 2");
  EXPECT_EQ(v.violations[0].layer_index, 2);
}

TEST(ValidateBundle, ReportsNonContiguousIndices) {
  auto b = make_bundle(2, 5, 3);
  b.layers[1].index = 3;
  const auto v = validate_bundle(b);
  ASSERT_FALSE(v.ok());
  EXPECT_EQ(v.violations[0].message, "non-contiguous layer indices");
}

TEST(ValidateBundle, EmptyBundleAndZeroDim) {
  EXPECT_FALSE(validate_bundle(LayeredFeatureBundle{}).ok());
  auto b = make_bundle(1, 4, 0);
  EXPECT_FALSE(validate_bundle(b).ok());
}

TEST(ValidateBundle, ScoreAndFlagCounts) {
  auto b = make_bundle(1, 4, 2);
  b.layers[0].scores = {0.1, 0.2};
  b.layers[0].flags = {1, 0, 0};
  EXPECT_EQ(validate_bundle(b).violations.size(), 2u);
}

TEST(ConceptSetTest, RejectsEmptyAndDuplicates) {
  EXPECT_THROW(ConceptSet("s", {}), Error);
  EXPECT_THROW(ConceptSet("s", {"face", "face"}), Error);
  EXPECT_NO_THROW(ConceptSet("s", {"face", "plate"}));
}

TEST(ReferenceMechanismTest, ScaleAndValidation) {
  ReferenceMechanism m(NoiseFamily::laplace, 0.1);
  EXPECT_DOUBLE_EQ(m.scale(), 10.0);
  EXPECT_DOUBLE_EQ(ReferenceMechanism(NoiseFamily::gaussian, 0.5, 2.0).scale(), 4.0);
  EXPECT_THROW(ReferenceMechanism(NoiseFamily::laplace, 0.0), Error);
  EXPECT_THROW(ReferenceMechanism(NoiseFamily::laplace, -1.0), Error);
  EXPECT_THROW(ReferenceMechanism(NoiseFamily::laplace, 1.0, 0.0), Error);
}

TEST(Partition, ThresholdSplitsAndClamps) {
  const auto p = make_partition(1, {-0.4, 0.5, 0.49, 1.7}, 0.5);
  EXPECT_EQ(p.sensitive_ids, (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(p.nonsensitive_ids, (std::vector<std::size_t>{0, 2}));
  EXPECT_DOUBLE_EQ(p.scores[0], 0.0);
  EXPECT_DOUBLE_EQ(p.scores[3], 1.0);
  EXPECT_TRUE(partition_is_consistent(p));
}

TEST(Partition, InconsistentDetected) {
  auto p = make_partition(1, {0.2, 0.8}, 0.5);
  p.sensitive_ids.push_back(0);
  EXPECT_FALSE(partition_is_consistent(p));
}

TEST(PoolSensitive, CountsMatchSyntheticArithmetic) {
  const auto b = make_bundle(4, 200, 8);
  GroupingResult g;
  for (const auto& layer : b.layers) {
    std::vector<double> scores(200, 0.0);
    for (std::size_t j = 0; j < 60; ++j) scores[3 * j] = 1.0;
    g.partitions.push_back(make_partition(layer.index, scores, 0.5));
  }
  const Matrix pooled = pool_sensitive_features(b, g);
  EXPECT_EQ(pooled.rows(), 240u);
  EXPECT_EQ(pooled.cols(), 8u);
}

TEST(PoolSensitive, LayerOrderThenIdOrder) {
  const auto b = make_bundle(2, 6, 2);
  const auto g = every_nth(b, 3);
  const Matrix pooled = pool_sensitive_features(b, g);
  ASSERT_EQ(pooled.rows(), 4u);
  EXPECT_EQ(std::vector<double>(pooled.row(1).begin(), pooled.row(1).end()),
            std::vector<double>(b.layers[0].vectors.row(3).begin(), b.layers[0].vectors.row(3).end()));
  EXPECT_EQ(std::vector<double>(pooled.row(2).begin(), pooled.row(2).end()),
            std::vector<double>(b.layers[1].vectors.row(0).begin(), b.layers[1].vectors.row(0).end()));
}

TEST(PoolSensitive, EmptyGroupGivesEmptySequence) {
  const auto b = make_bundle(2, 5, 3);
  GroupingResult g;
  for (const auto& layer : b.layers) g.partitions.push_back(make_partition(layer.index, std::vector<double>(5, 0.0), 0.5));
  EXPECT_EQ(pool_sensitive_features(b, g, {1}).rows(), 0u);
}

TEST(PoolSensitive, MixedDimensionsRejected) {
  auto b = make_bundle(2, 4, 8);
  b.layers[1].vectors = Matrix(4, 16, 1.0);
  const auto g = every_nth(b, 2);
  try {
    pool_sensitive_features(b, g, {1, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dimension_mismatch);
  }
  EXPECT_EQ(pool_sensitive_features(b, g, {2}).cols(), 16u);
}

TEST(PoolSensitive, GroupingMismatchRejected) {
  const auto b = make_bundle(2, 4, 2);
  auto g = every_nth(b, 2);
  g.partitions.pop_back();
  EXPECT_THROW(pool_sensitive_features(b, g), Error);
}

TEST(PerturbationTripleTest, ReconstructionErrorZeroWhenExact) {
  PerturbationTriple t;
  t.t = Matrix(2, 2, std::vector<double>{1, 2, 3, 4});
  t.u = Matrix(2, 2, std::vector<double>{0.5, -1, 0, 2});
  t.v = Matrix(2, 2, std::vector<double>{1.5, 1, 3, 6});
  EXPECT_EQ(reconstruction_error(t), 0.0);
  t.v(0, 0) = 1.25;
  EXPECT_DOUBLE_EQ(reconstruction_error(t), 0.25);
  t.v = Matrix(1, 2);
  EXPECT_TRUE(std::isinf(reconstruction_error(t)));
}

TEST(MatrixTest, ShapeChecks) {
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), Error);
  Matrix m;
  m.append_row(std::vector<double>{1, 2});
  EXPECT_EQ(m.cols(), 2u);
  EXPECT_THROW(m.append_row(std::vector<double>{1, 2, 3}), Error);
  EXPECT_EQ(m.column(1), std::vector<double>{2});
}

TEST(EnumText, RoundTrip) {
  for (auto s : {Strategy::bua, Strategy::tda, Strategy::random}) EXPECT_EQ(parse_strategy(to_string(s)), s);
  for (auto f : {NoiseFamily::laplace, NoiseFamily::gaussian}) EXPECT_EQ(parse_noise_family(to_string(f)), f);
  EXPECT_THROW(parse_strategy("greedy"), Error);
}
