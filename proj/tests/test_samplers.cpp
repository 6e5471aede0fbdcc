#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "priorswap/samplers.hpp"
#include "test_util.hpp"

using namespace priorswap;

namespace {

TargetDensity gaussian_target(const Vector& mean, const Matrix& cov) {
  const Matrix prec = cov.inverse();
  TargetDensity t;
  t.dimension = mean.size();
  t.with_gradient = [mean, prec](const Vector& x) {
    const Vector pd = prec * (x - mean);
    return LogDensity{-0.5 * (x - mean).dot(pd), -pd};
  };
  auto g = t.with_gradient;
  t.log_density = [g](const Vector& x) { return g(x).value; };
  return t;
}

TargetDensity standard_normal(Eigen::Index d = 1) {
  return gaussian_target(Vector::Zero(d), Matrix::Identity(d, d));
}

/// Piecewise-constant density over unit cells centred at 0..K-1.
TargetDensity cell_target(std::vector<double> probs) {
  TargetDensity t;
  t.dimension = 1;
  t.log_density = [probs](const Vector& x) {
    const double c = std::round(x[0]);
    if (c < 0 || c >= static_cast<double>(probs.size())) return kNegInf;
    return std::log(probs[static_cast<std::size_t>(c)]);
  };
  return t;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

TEST(MhSample, StandardNormalMoments) {
  const Chain c = mh_sample(standard_normal(), {Vector::Constant(1, 2.4), 100000, Vector::Zero(1), 1});
  ASSERT_EQ(c.length(), 100000);
  const ChainSummary s = chain_summary(c.samples, 0.0);
  EXPECT_NEAR(s.mean[0], 0.0, 0.03);
  EXPECT_NEAR(s.variance[0], 1.0, 0.05);
  EXPECT_GT(c.acceptance_rate(), 0.0);
  EXPECT_LE(c.acceptance_rate(), 1.0);
}

TEST(MhSample, ZeroProposalStaysAtInit) {
  Vector init(2);
  init << 0.3, -0.7;
  const Chain c = mh_sample(standard_normal(2), {Vector::Zero(1), 500, init, 2});
  EXPECT_EQ(c.acceptance_rate(), 1.0);
  for (Eigen::Index t = 0; t < c.length(); ++t) EXPECT_TRUE((c.samples.row(t).transpose().array() == init.array()).all());
}

TEST(MhSample, TwoCellOccupancyMatchesTransitionMatrix) {
  const std::vector<double> p = {0.3, 0.7};
  const double sigma = 0.8;
  const Chain c = mh_sample(cell_target(p), {Vector::Constant(1, sigma), 400000, Vector::Zero(1), 3});

  // Lumped 2x2 transition probabilities: within a cell the stationary density
  // is flat, so P(a -> b) averages the proposal mass landing in b over a.
  auto move = [&](int from, int to) {
    const int N = 2000;
    double acc = 0;
    for (int i = 0; i < N; ++i) {
      const double x = from - 0.5 + (i + 0.5) / N;
      acc += normal_cdf((to + 0.5 - x) / sigma) - normal_cdf((to - 0.5 - x) / sigma);
    }
    return acc / N * std::min(1.0, p[static_cast<std::size_t>(to)] / p[static_cast<std::size_t>(from)]);
  };
  const double p01 = move(0, 1), p10 = move(1, 0);
  const double stationary0 = p10 / (p01 + p10);

  double occ0 = 0;
  for (Eigen::Index t = 0; t < c.length(); ++t) occ0 += std::round(c.samples(t, 0)) == 0.0;
  EXPECT_NEAR(occ0 / static_cast<double>(c.length()), stationary0, 1e-2);
}

TEST(MhSample, ThreeCellDetailedBalance) {
  const Chain c = mh_sample(cell_target({0.2, 0.5, 0.3}), {Vector::Constant(1, 1.0), 1000000, Vector::Ones(1), 4});
  double flow[3][3] = {};
  for (Eigen::Index t = 1; t < c.length(); ++t)
    flow[static_cast<int>(std::round(c.samples(t - 1, 0)))][static_cast<int>(std::round(c.samples(t, 0)))] += 1;
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b) {
      const double se = std::sqrt(flow[a][b] + flow[b][a]);
      EXPECT_LT(std::abs(flow[a][b] - flow[b][a]), 3.0 * se) << a << " <-> " << b;
    }
}

TEST(MhSample, InvalidStartAndNonFiniteProposals) {
  TargetDensity t;
  t.dimension = 1;
  t.log_density = [](const Vector& x) { return x[0] > 0 ? -x[0] : (x[0] > -1 ? std::nan("") : kNegInf); };
  EXPECT_THROW(mh_sample(t, {Vector::Ones(1), 10, Vector::Constant(1, -2.0), 1}), InvalidInput);
  const Chain c = mh_sample(t, {Vector::Constant(1, 3.0), 20000, Vector::Ones(1), 5});
  EXPECT_TRUE(c.samples.allFinite());
  EXPECT_GT(c.samples.minCoeff(), 0.0);
}

TEST(MhSample, DeterministicGivenSeed) {
  const TargetDensity t = standard_normal(3);
  const Chain a = mh_sample(t, {Vector::Constant(1, 1.0), 2000, Vector::Zero(3), 77});
  const Chain b = mh_sample(t, {Vector::Constant(1, 1.0), 2000, Vector::Zero(3), 77});
  EXPECT_TRUE((a.samples.array() == b.samples.array()).all());
  EXPECT_EQ(a.accepted, b.accepted);
}

TEST(HmcSample, SmallStepConservesEnergy) {
  const TargetDensity t = standard_normal(2);
  std::mt19937_64 rng(8);
  double total = 0;
  const int trials = 200;
  for (int i = 0; i < trials; ++i) {
    Vector q = test::random_vector(2, rng), r = test::random_vector(2, rng);
    const double h0 = -t.log_density(q) + 0.5 * r.squaredNorm();
    LogDensity end;
    ASSERT_TRUE(leapfrog(t.with_gradient, q, r, 1e-3, 20, &end));
    total += std::abs(-end.value + 0.5 * r.squaredNorm() - h0);
  }
  EXPECT_LT(total / trials, 1e-4);
  const Chain c = hmc_sample(t, {1e-3, 20, 5000, Vector::Zero(2), 9});
  EXPECT_GT(c.acceptance_rate(), 0.99);
}

TEST(HmcSample, LeapfrogIsReversible) {
  Matrix cov(3, 3);
  cov << 1.0, 0.5, 0.0, 0.5, 2.0, 0.3, 0.0, 0.3, 0.5;
  const TargetDensity t = gaussian_target(Vector::LinSpaced(3, -1, 1), cov);
  std::mt19937_64 rng(10);
  const Vector q0 = test::random_vector(3, rng), r0 = test::random_vector(3, rng);
  Vector q = q0, r = r0;
  ASSERT_TRUE(leapfrog(t.with_gradient, q, r, 0.05, 25));
  r = -r;
  ASSERT_TRUE(leapfrog(t.with_gradient, q, r, 0.05, 25));
  EXPECT_LT((q - q0).norm(), 1e-10);
  EXPECT_LT((-r - r0).norm(), 1e-10);
}

TEST(HmcSample, CorrelatedGaussianCovariance) {
  Matrix cov(2, 2);
  cov << 1.0, 0.9, 0.9, 1.0;
  const Chain c = hmc_sample(gaussian_target(Vector::Zero(2), cov), {0.15, 10, 100000, Vector::Zero(2), 11});
  const Matrix& s = c.samples;
  const Vector mean = s.colwise().mean().transpose();
  const Matrix centered = s.rowwise() - mean.transpose();
  const Matrix est = centered.transpose() * centered / static_cast<double>(s.rows() - 1);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(est(i, j), cov(i, j), 0.05 * std::abs(cov(i, j)));
}

TEST(HmcSample, AcceptanceIncreasesAsStepShrinks) {
  const TargetDensity t = gaussian_target(Vector::Zero(1), Matrix::Constant(1, 1, 0.01));
  double prev = -1.0;
  for (double eps : {1e-1, 1e-2, 1e-3}) {
    const double acc = hmc_sample(t, {eps, 10, 20000, Vector::Zero(1), 12}).acceptance_rate();
    EXPECT_GE(acc, prev) << "eps = " << eps;
    prev = acc;
  }
  EXPECT_GT(prev, 0.999);
}

TEST(HmcSample, LangevinIsSingleStepHmc) {
  const TargetDensity t = standard_normal(1);
  const Chain c = hmc_sample(t, {0.9, 1, 100000, Vector::Zero(1), 13});
  const ChainSummary s = chain_summary(c.samples, 0.0);
  EXPECT_NEAR(s.mean[0], 0.0, 0.03);
  EXPECT_NEAR(s.variance[0], 1.0, 0.05);
}

TEST(HmcSample, NonFiniteGradientCountsDivergence) {
  TargetDensity t;
  t.dimension = 1;
  t.with_gradient = [](const Vector& x) {
    if (x[0] > 1.0) return LogDensity{-0.5 * x[0] * x[0], Vector::Constant(1, std::nan(""))};
    return LogDensity{-0.5 * x[0] * x[0], -x};
  };
  t.log_density = [g = t.with_gradient](const Vector& x) { return g(x).value; };
  const Chain c = hmc_sample(t, {0.5, 10, 2000, Vector::Zero(1), 14});
  EXPECT_GT(c.divergences, 0u);
  EXPECT_TRUE(c.samples.allFinite());
  EXPECT_LE(c.samples.maxCoeff(), 1.0);
}

TEST(HmcSample, RequiresGradientAndFiniteStart) {
  TargetDensity t;
  t.dimension = 1;
  t.log_density = [](const Vector& x) { return -x.squaredNorm(); };
  EXPECT_THROW(hmc_sample(t, {0.1, 5, 10, Vector::Zero(1), 1}), InvalidInput);
  EXPECT_THROW(hmc_sample(standard_normal(), {0.1, 5, 10, Vector::Constant(1, std::nan("")), 1}), InvalidInput);
}

TEST(HmcSample, DeterministicGivenSeed) {
  const TargetDensity t = standard_normal(2);
  const Chain a = hmc_sample(t, {0.3, 7, 1000, Vector::Zero(2), 5});
  const Chain b = hmc_sample(t, {0.3, 7, 1000, Vector::Zero(2), 5});
  EXPECT_TRUE((a.samples.array() == b.samples.array()).all());
}

TEST(Tuning, MhScalesToTarget) {
  const TargetDensity wide = gaussian_target(Vector::Zero(1), Matrix::Constant(1, 1, 1e4));
  const MhTuning tu = tune_mh(wide, Vector::Zero(1), 3);
  EXPECT_GT(tu.stddev[0], 0.4 * 2.4 * 100);
  EXPECT_LT(tu.stddev[0], 2.5 * 2.4 * 100);
}

TEST(Tuning, HmcStepLandsInAcceptanceBand) {
  const TargetDensity narrow = gaussian_target(Vector::Zero(2), Matrix::Identity(2, 2) * 1e-4);
  const HmcTuning tu = tune_hmc(narrow, Vector::Zero(2), 10, 4);
  const double acc = hmc_sample(narrow, {tu.step_size, 10, 5000, tu.state, 5}).acceptance_rate();
  EXPECT_GT(acc, 0.5);
  EXPECT_LT(acc, 0.99);
}

TEST(ChainSummary, ConstantChain) {
  const Matrix s = Matrix::Constant(40, 2, 3.5);
  const ChainSummary c = chain_summary(s);
  EXPECT_EQ(c.mean[0], 3.5);
  EXPECT_EQ(c.variance[1], 0.0);
  EXPECT_EQ(c.retained, 30);
}

TEST(ChainSummary, BurnInDropsFirstQuarter) {
  std::mt19937_64 rng(1);
  Matrix s(100, 2);
  for (Eigen::Index t = 0; t < 100; ++t) s.row(t) = test::random_vector(2, rng).transpose();
  const ChainSummary c = chain_summary(s, 0.25);
  EXPECT_EQ(c.retained, 75);
  const Vector direct = s.bottomRows(75).colwise().mean().transpose();
  EXPECT_NEAR(c.mean[0], direct[0], 1e-15);
  EXPECT_NEAR(c.mean[1], direct[1], 1e-15);
  EXPECT_THROW(chain_summary(s, 1.0), InvalidInput);
  EXPECT_THROW(chain_summary(s, -0.1), InvalidInput);
  EXPECT_THROW(chain_summary(Matrix(0, 2)), InvalidInput);
}
