#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "bodhi/empa.hpp"
#include "bodhi/error.hpp"
#include "bodhi/experiment.hpp"
#include "bodhi/noise.hpp"

using namespace bodhi;

namespace {

MixtureParams make_theta(std::vector<double> lambda, std::vector<double> mu, std::vector<double> sigma2,
                         std::size_t d) {
  MixtureParams t;
  t.K = lambda.size();
  t.lambda = std::move(lambda);
  t.mu = Matrix(t.K, d, std::move(mu));
  t.sigma2 = Matrix(t.K, d, std::move(sigma2));
  return t;
}

Matrix mixed_sample(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::normal_distribution<double> g;
  std::uniform_int_distribution<int> c(0, 3);
  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const double shift = 3.0 * c(rng);
    for (std::size_t a = 0; a < d; ++a) x(i, a) = shift + g(rng) * (1.0 + a);
  }
  return x;
}

double log_normal_pdf(double x, double mu, double var) {
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + (x - mu) * (x - mu) / var);
}

}  // namespace

TEST(EmFit, SingleComponentIsSampleMoments) {
  const Matrix x(4, 2, std::vector<double>{1, 10, 2, 20, 3, 30, 6, 40});
  EMConfig cfg;
  cfg.K = 1;
  const auto t = em_fit(x, cfg);
  EXPECT_DOUBLE_EQ(t.lambda[0], 1.0);
  EXPECT_DOUBLE_EQ(t.mu(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(t.mu(0, 1), 25.0);
  EXPECT_NEAR(t.sigma2(0, 0), (4.0 + 1.0 + 0.0 + 9.0) / 4.0, 1e-12);
  EXPECT_NEAR(t.sigma2(0, 1), (225.0 + 25.0 + 25.0 + 225.0) / 4.0, 1e-12);
  EXPECT_TRUE(t.converged);
}

TEST(EmFit, TwoSeparatedClustersAgreeWithGridSearch) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0.0, 0.1);
  Matrix x(200, 1);
  for (std::size_t i = 0; i < 200; ++i) x(i, 0) = (i < 100 ? 0.0 : 10.0) + g(rng);
  EMConfig cfg;
  cfg.K = 2;
  const auto t = canonicalize(em_fit(x, cfg));
  EXPECT_NEAR(t.lambda[0], 0.5, 0.02);
  std::vector<double> means{t.mu(0, 0), t.mu(1, 0)};
  std::sort(means.begin(), means.end());
  EXPECT_NEAR(means[0], 0.0, 0.1);
  EXPECT_NEAR(means[1], 10.0, 0.1);

  // Brute-force grid over the two means with weights 1/2 and the fitted variances.
  double best = -1e300, best_lo = 0.0, best_hi = 0.0;
  for (double lo = -0.5; lo <= 0.5; lo += 0.01) {
    for (double hi = 9.5; hi <= 10.5; hi += 0.01) {
      double ll = 0.0;
      for (std::size_t i = 0; i < 200; ++i) {
        const double a = std::log(0.5) + log_normal_pdf(x(i, 0), lo, 0.01);
        const double b = std::log(0.5) + log_normal_pdf(x(i, 0), hi, 0.01);
        const double m = std::max(a, b);
        ll += m + std::log(std::exp(a - m) + std::exp(b - m));
      }
      if (ll > best) {
        best = ll;
        best_lo = lo;
        best_hi = hi;
      }
    }
  }
  EXPECT_NEAR(means[0], best_lo, 0.02);
  EXPECT_NEAR(means[1], best_hi, 0.02);
}

TEST(EmFit, ConvergesBeforeIterationCap) {
  std::mt19937_64 rng(5);
  const auto t = em_fit(mixed_sample(rng, 300, 2), EMConfig{});
  EXPECT_TRUE(t.converged);
  EXPECT_LT(t.iterations, 100);
  const std::size_t n = t.ll_trace.size();
  const double last = t.ll_trace[n - 1], prev = t.ll_trace[n - 2];
  EXPECT_LT((last - prev) / std::abs(prev), 1e-5);
}

TEST(EmFit, MonotoneLikelihoodAcrossRandomFits) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> dims(1, 6), ks(1, 5), ns(20, 200);
  for (int fit = 0; fit < 100; ++fit) {
    EMConfig cfg;
    cfg.K = ks(rng);
    const Matrix x = mixed_sample(rng, ns(rng), dims(rng));
    const auto t = em_fit(x, cfg);
    for (std::size_t i = 1; i < t.ll_trace.size(); ++i) {
      ASSERT_GE(t.ll_trace[i], t.ll_trace[i - 1] - 1e-8) << "fit " << fit << " iteration " << i;
    }
    double total = 0.0;
    for (double l : t.lambda) {
      ASSERT_GE(l, 0.0);
      total += l;
    }
    ASSERT_NEAR(total, 1.0, 1e-12);
    for (double v : t.sigma2.data()) ASSERT_GE(v, cfg.variance_floor);
  }
}

TEST(EmFit, ResponsibilitiesNormalized) {
  std::mt19937_64 rng(3);
  const Matrix x = mixed_sample(rng, 150, 3);
  EMState state;
  const auto t = em_fit(x, EMConfig{}, &state);
  ASSERT_EQ(state.gamma.rows(), 150u);
  double counts = 0.0;
  for (std::size_t j = 0; j < 150; ++j) {
    double row = 0.0;
    for (std::size_t k = 0; k < t.K; ++k) row += state.gamma(j, k);
    EXPECT_NEAR(row, 1.0, 1e-10);
  }
  for (double nk : state.counts) counts += nk;
  EXPECT_NEAR(counts, 150.0, 1e-6);
}

TEST(EmFit, DegenerateInputStillReturns) {
  const auto t = em_fit(Matrix(10, 2, 4.0), EMConfig{});
  EXPECT_TRUE(t.degenerate);
  for (double v : t.sigma2.data()) EXPECT_GE(v, 1e-6);
  EXPECT_TRUE(std::isfinite(t.log_likelihood));
}

TEST(EmFit, TooFewVectors) {
  try {
    em_fit(Matrix(3, 2, 1.0), EMConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::insufficient_data);
  }
}

TEST(Canonicalize, SortsByWeightThenFirstMean) {
  const auto t = canonicalize(make_theta({0.2, 0.8}, {1, 2}, {3, 4}, 1));
  EXPECT_EQ(t.lambda, (std::vector<double>{0.8, 0.2}));
  EXPECT_EQ(t.mu(0, 0), 2.0);
  EXPECT_EQ(t.sigma2(0, 0), 4.0);
  const auto tie = canonicalize(make_theta({0.5, 0.5}, {3, 1}, {7, 9}, 1));
  EXPECT_EQ(tie.mu(0, 0), 1.0);
  EXPECT_EQ(tie.sigma2(0, 0), 9.0);
  EXPECT_EQ(psi(canonicalize(tie)), psi(tie));
}

TEST(Psi, LayoutAndLength) {
  EXPECT_EQ(psi(make_theta({1}, {2}, {3}, 1)), (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(psi(make_theta({0.5, 0.5}, {1, 2, 3, 4}, {1, 1, 1, 1}, 2)).size(), 10u);
}

TEST(Psi, PermutationInvariantAfterCanonicalize) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t K = 4, d = 3;
    std::vector<double> lambda(K), mu(K * d), s2(K * d);
    double sum = 0.0;
    for (auto& l : lambda) sum += (l = u(rng));
    for (auto& l : lambda) l /= sum;
    for (auto& m : mu) m = u(rng);
    for (auto& s : s2) s = u(rng);
    const auto base = make_theta(lambda, mu, s2, d);
    std::vector<std::size_t> perm{0, 1, 2, 3};
    std::shuffle(perm.begin(), perm.end(), rng);
    auto shuffled = base;
    for (std::size_t k = 0; k < K; ++k) {
      shuffled.lambda[k] = base.lambda[perm[k]];
      for (std::size_t a = 0; a < d; ++a) {
        shuffled.mu(k, a) = base.mu(perm[k], a);
        shuffled.sigma2(k, a) = base.sigma2(perm[k], a);
      }
    }
    EXPECT_EQ(psi(canonicalize(base)), psi(canonicalize(shuffled)));
    EXPECT_EQ(bas(canonicalize(base), canonicalize(shuffled)), 0.0);
    EXPECT_DOUBLE_EQ(bias_uniform(base.lambda), bias_uniform(shuffled.lambda));
  }
}

TEST(Scores, HandValues) {
  const auto a = make_theta({1}, {0}, {1}, 1), b = make_theta({1}, {0}, {2}, 1);
  EXPECT_DOUBLE_EQ(bas(a, b), 1.0);
  EXPECT_DOUBLE_EQ(bas(b, a), bas(a, b));
  EXPECT_EQ(bas(a, a), 0.0);
  EXPECT_THROW(bas(a, make_theta({0.5, 0.5}, {0, 1}, {1, 1}, 1)), Error);

  const std::vector<double> one_hot4{1, 0, 0, 0}, uniform4(4, 0.25), one_hot5{1, 0, 0, 0, 0};
  EXPECT_NEAR(bias_ref(one_hot4, uniform4), std::sqrt(0.75), 1e-12);
  EXPECT_NEAR(bias_uniform(one_hot4), 0.8660254, 1e-7);
  EXPECT_NEAR(bias_uniform(one_hot5), 0.8944272, 1e-7);
  EXPECT_EQ(bias_uniform(uniform4), 0.0);
  EXPECT_THROW(bias_ref(one_hot4, one_hot5), Error);
}

TEST(Scores, BiasRefBoundedBySimplexDiameter) {
  std::mt19937_64 rng(6);
  std::gamma_distribution<double> g(0.3);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> a(4), b(4);
    double sa = 0.0, sb = 0.0;
    for (auto& v : a) sa += (v = g(rng) + 1e-12);
    for (auto& v : b) sb += (v = g(rng) + 1e-12);
    for (auto& v : a) v /= sa;
    for (auto& v : b) v /= sb;
    EXPECT_LE(bias_ref(a, b), std::sqrt(2.0) + 1e-12);
  }
}

class EmpaSynthetic : public ::testing::Test {
 protected:
  void SetUp() override {
    original = generate_synthetic(SyntheticConfig{});
    planted = planted_grouping(original);
  }
  LayeredFeatureBundle original;
  GroupingResult planted;
};

TEST_F(EmpaSynthetic, SameSeedSameMechanismGivesZero) {
  const ReferenceMechanism m(NoiseFamily::laplace, 0.1);
  const auto observed = perturb_sensitive(original, planted, {m, 17});
  const auto a = empa_assess(original, observed.bundle, planted, m, EMConfig{}, 17);
  EXPECT_EQ(a.bas, 0.0);
  EXPECT_EQ(a.bias_ref, 0.0);
  EXPECT_TRUE(a.pooled);
}

TEST_F(EmpaSynthetic, CrossFamilyPositive) {
  const auto observed = perturb_sensitive(original, planted, {ReferenceMechanism(NoiseFamily::gaussian, 0.1), 17});
  const auto a = empa_assess(original, observed.bundle, planted, ReferenceMechanism(NoiseFamily::laplace, 0.1),
                             EMConfig{}, 17);
  EXPECT_GT(a.bas, 0.0);
}

TEST_F(EmpaSynthetic, ReferenceVarianceGrowsWithSmallerBudget) {
  const auto loose = fit_reference(original, planted, ReferenceMechanism(NoiseFamily::laplace, 0.1), EMConfig{}, 1);
  const auto tight = fit_reference(original, planted, ReferenceMechanism(NoiseFamily::laplace, 0.01), EMConfig{}, 1);
  double v_loose = 0.0, v_tight = 0.0;
  for (double v : loose.sigma2.data()) v_loose += v;
  for (double v : tight.sigma2.data()) v_tight += v;
  EXPECT_GT(v_tight, 50.0 * v_loose);
}

TEST_F(EmpaSynthetic, EmptySensitiveSetRejected) {
  GroupingResult empty;
  for (const auto& layer : original.layers) {
    empty.partitions.push_back(make_partition(layer.index, std::vector<double>(layer.size(), 0.0), 0.5));
  }
  try {
    empa_assess(original, original, empty, ReferenceMechanism(NoiseFamily::laplace, 0.1), EMConfig{}, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::no_sensitive_features);
    EXPECT_STREQ(e.what(), "no sensitive features to assess");
  }
}

TEST_F(EmpaSynthetic, PerLayerModeAverages) {
  const ReferenceMechanism m(NoiseFamily::laplace, 0.1);
  const auto observed = perturb_sensitive(original, planted, {ReferenceMechanism(NoiseFamily::gaussian, 0.1), 2});
  const auto a = empa_assess(original, observed.bundle, planted, m, EMConfig{}, 3, PoolingMode::per_layer);
  ASSERT_EQ(a.fits.size(), 4u);
  double mean = 0.0;
  for (const auto& f : a.fits) mean += f.bas / 4.0;
  EXPECT_NEAR(a.bas, mean, 1e-9 * mean);
  EXPECT_FALSE(a.pooled);
}

TEST_F(EmpaSynthetic, MixedDimensionsFallBackToPerLayer) {
  auto bundle = original;
  bundle.layers[3].vectors = Matrix(200, 4, 0.0);
  for (std::size_t i = 0; i < 800; ++i) bundle.layers[3].vectors.data()[i] = std::sin(static_cast<double>(i));
  const auto observed = perturb_sensitive(bundle, planted, {ReferenceMechanism(NoiseFamily::gaussian, 0.1), 2});
  const auto a = empa_assess(bundle, observed.bundle, planted, ReferenceMechanism(NoiseFamily::laplace, 0.1),
                             EMConfig{}, 3);
  EXPECT_FALSE(a.pooled);
  EXPECT_EQ(a.fits.size(), 4u);
}
