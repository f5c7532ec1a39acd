#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "bodhi/error.hpp"
#include "bodhi/experiment.hpp"
#include "bodhi/grouping.hpp"

using namespace bodhi;

namespace {

const ConceptSet kConcepts("test", {"face"});

MdavConfig no_mdav() {
  MdavConfig m;
  m.enabled = false;
  return m;
}

LayeredFeatureBundle scored_bundle(const std::vector<std::vector<double>>& scores) {
  LayeredFeatureBundle b;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    Layer layer;
    layer.index = static_cast<int>(k) + 1;
    layer.vectors = Matrix(scores[k].size(), 2, 1.0);
    for (std::size_t j = 0; j < scores[k].size(); ++j) layer.vectors(j, 0) = static_cast<double>(j);
    layer.scores = scores[k];
    b.layers.push_back(layer);
  }
  return b;
}

bool subset_of(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

}  // namespace

TEST(ScoreLayer, PrototypeCosine) {
  Layer layer;
  layer.vectors = Matrix(3, 2, std::vector<double>{2, 0, 0, 5, 1, 0});
  SensitivityScorer scorer;
  scorer.kind = ScorerKind::prototype;
  scorer.prototypes["a"] = {0.3, std::sqrt(1.0 - 0.09)};
  scorer.prototypes["b"] = {0.7, std::sqrt(1.0 - 0.49)};
  scorer.prototypes["same"] = {4.0, 0.0};
  const auto s_two = score_layer(layer, scorer, ConceptSet("c", {"a", "b"}));
  EXPECT_NEAR(s_two[0], 0.7, 1e-12);
  const auto s_same = score_layer(layer, scorer, ConceptSet("c", {"same"}));
  EXPECT_NEAR(s_same[0], 1.0, 1e-12);
  EXPECT_NEAR(s_same[1], 0.0, 1e-12);
}

TEST(ScoreLayer, NegativeCosineClampedToZero) {
  Layer layer;
  layer.vectors = Matrix(1, 2, std::vector<double>{-1, 0});
  SensitivityScorer scorer;
  scorer.kind = ScorerKind::prototype;
  scorer.prototypes["a"] = {1.0, 0.0};
  EXPECT_EQ(score_layer(layer, scorer, ConceptSet("c", {"a"}))[0], 0.0);
}

TEST(ScoreLayer, MissingPrototypeAndDimension) {
  Layer layer;
  layer.vectors = Matrix(1, 2, 1.0);
  SensitivityScorer scorer;
  scorer.kind = ScorerKind::prototype;
  scorer.prototypes["a"] = {1.0, 0.0, 0.0};
  try {
    score_layer(layer, scorer, ConceptSet("c", {"b"}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::missing_prototype);
  }
  EXPECT_THROW(score_layer(layer, scorer, ConceptSet("c", {"a"})), Error);
}

TEST(ScoreLayer, ExternalAndGroundTruthNeedData) {
  Layer layer;
  layer.vectors = Matrix(2, 1, 1.0);
  EXPECT_THROW(score_layer(layer, SensitivityScorer{ScorerKind::external, {}, 0}, kConcepts), Error);
  EXPECT_THROW(score_layer(layer, SensitivityScorer{ScorerKind::ground_truth, {}, 0}, kConcepts), Error);
  layer.scores = {1.4, -0.2};
  EXPECT_EQ(score_layer(layer, SensitivityScorer{}, kConcepts), (std::vector<double>{1.0, 0.0}));
}

TEST(GroundTruthScores, SeparatedBands) {
  std::vector<std::uint8_t> flags(500);
  for (std::size_t j = 0; j < flags.size(); ++j) flags[j] = j % 3 == 0;
  const auto s = ground_truth_scores(flags, 3, 2);
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (flags[j]) {
      EXPECT_GE(s[j], 0.75);
      EXPECT_LT(s[j], 1.0);
    } else {
      EXPECT_GE(s[j], 0.0);
      EXPECT_LT(s[j], 0.25);
    }
  }
  EXPECT_EQ(s, ground_truth_scores(flags, 3, 2));
  EXPECT_NE(s, ground_truth_scores(flags, 3, 1));
}

TEST(PartitionLayer, NinetiethPercentileOfTwoHundred) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> scores(200);
  for (auto& s : scores) s = u(rng);
  const auto p = partition_layer(scores, ThresholdPolicy::quantile_at(0.9));
  EXPECT_EQ(p.sensitive_ids.size(), 20u);
  auto sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  const auto brute = std::count_if(scores.begin(), scores.end(), [&](double s) { return s > sorted[179]; });
  EXPECT_EQ(brute, 20);
  EXPECT_TRUE(partition_is_consistent(p));
}

TEST(PartitionLayer, FixedAboveCodomainAndTies) {
  EXPECT_TRUE(partition_layer({0.2, 0.9, 1.0}, ThresholdPolicy::fixed_at(1.1)).sensitive_ids.empty());
  EXPECT_EQ(partition_layer({0.4, 0.4, 0.4}, ThresholdPolicy::quantile_at(0.9)).sensitive_ids.size(), 3u);
  EXPECT_THROW(partition_layer({}, ThresholdPolicy::fixed_at(0.5)), Error);
  EXPECT_THROW(partition_layer({0.1}, ThresholdPolicy::quantile_at(1.0)), Error);
}

TEST(Bua, SyntheticRecoversPlantedFlags) {
  for (std::uint64_t seed : {0u, 1u, 2u, 3u, 4u}) {
    SyntheticConfig cfg;
    cfg.seed = seed;
    const auto b = generate_synthetic(cfg);
    const auto g = bua(b, SensitivityScorer{ScorerKind::ground_truth, {}, seed}, kConcepts,
                       ThresholdPolicy::quantile_at(0.70), MdavConfig{});
    ASSERT_EQ(g.partitions.size(), 4u);
    ASSERT_EQ(g.diagnostics.size(), 4u);
    for (std::size_t k = 0; k < 4; ++k) {
      std::vector<std::size_t> flagged;
      for (std::size_t j = 0; j < 200; ++j) {
        if (b.layers[k].flags[j]) flagged.push_back(j);
      }
      EXPECT_EQ(g.partitions[k].sensitive_ids, flagged);
      EXPECT_GT(g.diagnostics[k].micro_clusters, 0u);
    }
  }
}

TEST(Bua, SingleLayerAndDeterminism) {
  const auto b = scored_bundle({{0.1, 0.9, 0.5, 0.7}});
  const auto g = bua(b, SensitivityScorer{}, kConcepts, ThresholdPolicy::fixed_at(0.6), no_mdav());
  ASSERT_EQ(g.partitions.size(), 1u);
  EXPECT_TRUE(g.diagnostics.empty());
  EXPECT_EQ(g.partitions[0].sensitive_ids, (std::vector<std::size_t>{1, 3}));
  const auto again = bua(b, SensitivityScorer{}, kConcepts, ThresholdPolicy::fixed_at(0.6), no_mdav());
  EXPECT_EQ(g.partitions, again.partitions);
}

TEST(Tda, IdenticalPartitionsLinkEverything) {
  const std::vector<double> s{0.9, 0.1, 0.8, 0.2, 0.95};
  const auto b = scored_bundle({s, s, s});
  const auto g = tda(b, SensitivityScorer{}, kConcepts, ThresholdPolicy::fixed_at(0.5),
                     CorrespondenceKind::identity, RefinementConfig{}, no_mdav());
  ASSERT_EQ(g.links.size(), 2u);
  for (const auto& link : g.links) {
    EXPECT_EQ(link.sensitive, (std::vector<std::size_t>{0, 2, 4}));
    EXPECT_EQ(link.nonsensitive, (std::vector<std::size_t>{1, 3}));
    EXPECT_TRUE(link.promoted.empty());
  }
}

TEST(Tda, DisjointPartitionsGiveEmptyLinks) {
  const auto b = scored_bundle({{0.9, 0.9, 0.0, 0.0}, {0.0, 0.0, 0.9, 0.9}});
  const auto g = tda(b, SensitivityScorer{}, kConcepts, ThresholdPolicy::fixed_at(0.5),
                     CorrespondenceKind::identity, RefinementConfig{}, no_mdav());
  ASSERT_EQ(g.links.size(), 1u);
  EXPECT_TRUE(g.links[0].sensitive.empty());
  EXPECT_TRUE(g.links[0].nonsensitive.empty());
  EXPECT_TRUE(g.links[0].promoted.empty());
  EXPECT_EQ(g.partitions[0].sensitive_ids, (std::vector<std::size_t>{0, 1}));
}

TEST(Tda, RefinementPromotionRule) {
  const auto b = scored_bundle({{0.85, 0.5, 0.2}, {0.95, 0.95, 0.95}});
  auto run = [&](double alpha) {
    return tda(b, SensitivityScorer{}, kConcepts, ThresholdPolicy::fixed_at(0.9), CorrespondenceKind::identity,
               RefinementConfig{alpha}, no_mdav());
  };
  EXPECT_EQ(run(0.9).partitions[0].sensitive_ids, (std::vector<std::size_t>{0}));
  EXPECT_EQ(run(0.9).links[0].promoted, (std::vector<std::size_t>{0}));
  EXPECT_TRUE(run(1.0).partitions[0].sensitive_ids.empty());
  EXPECT_EQ(run(0.0).partitions[0].sensitive_ids, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Tda, SyntheticEqualsBua) {
  for (std::uint64_t seed : {0u, 1u, 2u, 3u, 4u}) {
    SyntheticConfig cfg;
    cfg.seed = seed;
    const auto b = generate_synthetic(cfg);
    const SensitivityScorer scorer{ScorerKind::ground_truth, {}, seed};
    const auto up = bua(b, scorer, kConcepts, ThresholdPolicy::quantile_at(0.70), MdavConfig{});
    const auto down = tda(b, scorer, kConcepts, ThresholdPolicy::quantile_at(0.70), CorrespondenceKind::automatic,
                          RefinementConfig{}, MdavConfig{});
    EXPECT_EQ(up.partitions, down.partitions);
  }
}

TEST(Tda, LinkSoundnessAndMonotoneRefinement) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<double>> scores(4, std::vector<double>(30));
    for (auto& layer : scores)
      for (auto& s : layer) s = u(rng);
    const auto b = scored_bundle(scores);
    const double alpha = u(rng);
    const auto policy = ThresholdPolicy::quantile_at(0.6);
    const auto g = tda(b, SensitivityScorer{}, kConcepts, policy, CorrespondenceKind::identity,
                       RefinementConfig{alpha}, no_mdav());
    for (std::size_t step = 0; step < g.links.size(); ++step) {
      const std::size_t lower = 2 - step;
      const auto& part = g.partitions[lower];
      EXPECT_TRUE(subset_of(g.links[step].sensitive, part.sensitive_ids));
      EXPECT_TRUE(subset_of(g.links[step].nonsensitive, part.nonsensitive_ids));
      const auto prelim = partition_layer(scores[lower], policy, static_cast<int>(lower) + 1);
      EXPECT_TRUE(subset_of(prelim.sensitive_ids, part.sensitive_ids));
      EXPECT_TRUE(partition_is_consistent(part));
    }
  }
}

TEST(Correspondence, NearestSpatialGrid) {
  LayeredFeatureBundle b;
  for (int k = 1; k <= 2; ++k) {
    Layer layer;
    layer.index = k;
    layer.vectors = Matrix(k == 1 ? 16 : 4, 2, 0.5);
    b.layers.push_back(layer);
  }
  b.metadata["layer.1.grid"] = "4,4";
  b.metadata["layer.2.grid"] = "2,2";
  const auto map = build_correspondence(b, 1, CorrespondenceKind::automatic);
  EXPECT_EQ(map.kind, CorrespondenceKind::nearest_spatial);
  EXPECT_EQ(map.target, (std::vector<std::size_t>{0, 2, 8, 10}));
  b.metadata.erase("layer.1.grid");
  EXPECT_THROW(build_correspondence(b, 1, CorrespondenceKind::automatic), Error);
}

TEST(Correspondence, IdentityNeedsEqualSizes) {
  const auto b = scored_bundle({{0.1, 0.2}, {0.3}});
  EXPECT_THROW(build_correspondence(b, 1, CorrespondenceKind::identity), Error);
}

TEST(RandomPartition, SizesAndDeterminism) {
  SyntheticConfig cfg;
  const auto b = generate_synthetic(cfg);
  const auto g = random_partition(b, {60, 60, 60, 0}, 5);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(g.partitions[k].sensitive_ids.size(), 60u);
  EXPECT_TRUE(g.partitions[3].sensitive_ids.empty());
  EXPECT_EQ(g.partitions, random_partition(b, {60, 60, 60, 0}, 5).partitions);
  EXPECT_NE(g.partitions, random_partition(b, {60, 60, 60, 0}, 6).partitions);
  try {
    random_partition(b, {201, 0, 0, 0}, 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::size_overflow);
  }
}

TEST(Prototypes, FromMetadata) {
  const auto p = prototypes_from_metadata({{"prototype.face", "[1, 0.5]"}, {"model", "x"}});
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p.at("face"), (std::vector<double>{1.0, 0.5}));
  EXPECT_THROW(prototypes_from_metadata({{"prototype.face", "oops"}}), Error);
}
