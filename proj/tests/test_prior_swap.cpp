#include <chrono>
#include <cmath>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "priorswap/prior_swap.hpp"
#include "test_util.hpp"

using namespace priorswap;

namespace {

const double kLaplaceScale = 1.0 / std::sqrt(2.0);

LikelihoodModel running_example() {
  SyntheticOptions opts;
  opts.forced_sum = Vector::Constant(1, 4.0);
  return generate_synthetic(ModelTag::NormalMean, 3, 1, Vector::Zero(1), 7, opts);
}

ExactGaussianPosterior running_false_posterior() {
  return ExactGaussianPosterior(Vector::Constant(1, 1.0), Matrix::Constant(1, 1, 0.25));
}

double log_normal_1d(double x, double m, double v) {
  return -0.5 * std::log(2 * std::numbers::pi * v) - 0.5 * (x - m) * (x - m) / v;
}

/// Integral of h(x) exp(f(x) - shift) over the real line, split at the given points.
double integrate_exp(const std::function<double(double)>& f, std::vector<double> splits, double shift = 0.0,
                     const std::function<double(double)>& h = [](double) { return 1.0; }) {
  const double inf = std::numeric_limits<double>::infinity();
  splits.insert(splits.begin(), -inf);
  splits.push_back(inf);
  double total = 0;
  for (std::size_t i = 0; i + 1 < splits.size(); ++i)
    total += boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        [&](double x) { return h(x) * std::exp(f(x) - shift); }, splits[i], splits[i + 1], 15, 1e-12);
  return total;
}

void expect_gradient_matches(const SwapTarget& s, const Vector& theta, double tol = 1e-4) {
  const Vector g = s.with_gradient(theta).gradient;
  const Vector fd = test::central_difference([&](const Vector& x) { return s.log_density(x); }, theta);
  for (Eigen::Index i = 0; i < theta.size(); ++i)
    EXPECT_NEAR(g[i], fd[i], tol * std::max(1.0, std::abs(g[i]))) << "coordinate " << i << " at "
                                                                    << format_vector(theta);
}

}  // namespace

TEST(MakePriorSwap, SamePriorLeavesFalsePosteriorUnchanged) {
  const auto fp = running_false_posterior();
  const PriorSpec pf = NormalPrior::isotropic(1, 0.0, 1.0);
  const SwapTarget s = make_prior_swap(fp, pf, pf);
  for (double t : {-2.0, 0.3, 1.0, 4.0}) {
    const Vector th = Vector::Constant(1, t);
    EXPECT_EQ(s.log_density(th), fp.log_density(th).value);
  }
}

TEST(MakePriorSwap, ExactFalsePosteriorGivesTargetPosterior) {
  const LikelihoodModel m = running_example();
  const PriorSpec pf = NormalPrior::isotropic(1, 0.0, 1.0);
  const PriorSpec pi = LaplacePrior::iid(1, 10.0, kLaplaceScale);
  const auto fp = conjugate_linear_posterior(m, std::get<NormalPrior>(pf));
  const SwapTarget s = make_prior_swap(fp, pi, pf);
  const TargetDensity direct = posterior_target(m, pi);
  const double offset = s.log_density(Vector::Zero(1)) - direct.log_density(Vector::Zero(1));
  for (double t : {-1.0, 0.5, 1.7, 3.0, 9.0, 12.0})
    EXPECT_NEAR(s.log_density(Vector::Constant(1, t)) - direct.log_density(Vector::Constant(1, t)), offset, 1e-11);
}

TEST(MakePriorSwap, RunningExampleByHand) {
  const PriorSpec pf = NormalPrior::isotropic(1, 0.0, 1.0);
  const PriorSpec pi = LaplacePrior::iid(1, 10.0, kLaplaceScale);
  const SwapTarget s = make_prior_swap(running_false_posterior(), pi, pf);
  const double b = kLaplaceScale;
  const double laplace = -std::log(2 * b) - 9.0 / b;
  const double expected = log_normal_1d(1.0, 1.0, 0.25) + laplace - log_normal_1d(1.0, 0.0, 1.0);
  EXPECT_NEAR(s.log_density(Vector::Constant(1, 1.0)), expected, 1e-13);
  EXPECT_NE(s.provenance.find("laplace"), std::string::npos) << s.provenance;
}

TEST(MakePriorSwap, SupportMismatchNamesTheta) {
  const PriorSpec pf = NormalPrior::isotropic(1, 0.0, 1.0);
  const PriorSpec pi = LaplacePrior::iid(1, 0.0, 1.0);
  const SwapTarget s = make_prior_swap(running_false_posterior(), pi, pf);
  // (1e200)^2 overflows: the Normal false prior is exactly zero there while the Laplace is not.
  try {
    s.log_density(Vector::Constant(1, 1e200));
    FAIL() << "expected SupportMismatch";
  } catch (const SupportMismatch& e) {
    EXPECT_NE(std::string(e.what()).find("theta = (9.99"), std::string::npos) << e.what();
    EXPECT_EQ(e.kind(), "support_mismatch");
  }
}

TEST(MakePriorSwap, RejectsMismatchedDimensionsAndHierarchicalTargets) {
  const auto fp = running_false_posterior();
  EXPECT_THROW(make_prior_swap(fp, NormalPrior::isotropic(2, 0.0, 1.0), NormalPrior::isotropic(1, 0.0, 1.0)),
               InvalidInput);
  EXPECT_THROW(make_prior_swap(fp, HierarchicalNormalGammaPrior(1, 2.0), NormalPrior::isotropic(1, 0.0, 1.0)),
               InvalidInput);
}

TEST(MakePriorSwap, ExactSwapChainReproducesQuadratureMean) {
  const PriorSpec pf = NormalPrior::isotropic(1, 0.0, 1.0);
  const PriorSpec pi = LaplacePrior::iid(1, 10.0, kLaplaceScale);
  const SwapTarget s = make_prior_swap(running_false_posterior(), pi, pf);
  auto f = [&](double x) { return s.log_density(Vector::Constant(1, x)); };
  const double shift = f(1.5);
  const double z = integrate_exp(f, {1.0, 10.0}, shift);
  const double mu = integrate_exp(f, {1.0, 10.0}, shift, [](double x) { return x; }) / z;
  const Chain c = mh_sample(s.target, {Vector::Constant(1, 1.2), 100000, Vector::Ones(1), 21});
  EXPECT_NEAR(chain_summary(c).mean[0], mu, 0.02);
}

TEST(MakeSemiparametricSwap, SingleSampleFactorizes) {
  const PriorSpec pf = NormalPrior::isotropic(1, 0.0, 1.0);
  const PriorSpec pi = StudentTPrior::iid(1, 2.0, 1.0, 3.0);
  const ParametricAlpha base(Matrix::Constant(1, 1, 1.3), 3.0, pf, {ModelTag::NormalMean, 1, 1.0});
  const double b = 0.4, anchor = 0.9;
  const SemiparametricRep rep(Matrix::Constant(1, 1, anchor), b, base);
  const SwapTarget sp = make_semiparametric_swap(rep, pi, pf);
  const SwapTarget alpha_swap = make_prior_swap(base, pi, pf);
  auto log_kernel = [&](double x) { return -0.5 * (x - anchor) * (x - anchor) / (b * b); };
  const double offset = sp.log_density(Vector::Zero(1)) - alpha_swap.log_density(Vector::Zero(1)) - log_kernel(0.0);
  for (double t : {-1.0, 0.2, 0.9, 2.5}) {
    const Vector th = Vector::Constant(1, t);
    EXPECT_NEAR(sp.log_density(th) - alpha_swap.log_density(th) - log_kernel(t), offset, 1e-12);
  }
}

TEST(MakeSemiparametricSwap, FactorizationAndNormalization) {
  const PriorSpec pf = NormalPrior::isotropic(1, 0.0, 1.0);
  const PriorSpec pi = LaplacePrior::iid(1, 1.5, 0.5);
  const ModelFamily fam{ModelTag::NormalMean, 1, 1.0};
  const ParametricAlpha base(Matrix::Constant(1, 1, 1.0), 8.0, pf, fam);
  std::mt19937_64 rng(3);
  const Matrix samples = (test::random_vector(200, rng, 0.33).array() + 0.9).matrix();
  const SemiparametricRep rep(samples, select_bandwidth(200, 1), base);
  const SwapTarget sp = make_semiparametric_swap(rep, pi, pf);
  const SwapTarget alpha_swap = make_prior_swap(base, pi, pf);
  for (int i = 0; i < 20; ++i) {
    const Vector th = Vector::Constant(1, -1.0 + 0.17 * i);
    EXPECT_NEAR(sp.log_density(th) - alpha_swap.log_density(th), rep.log_correction(th).value, 1e-12);
  }
  auto f = [&](double x) { return sp.log_density(Vector::Constant(1, x)); };
  const double shift = f(1.0);
  const double logz = shift + std::log(integrate_exp(f, {1.5}, shift));
  EXPECT_NEAR(integrate_exp([&](double x) { return f(x) - logz; }, {1.5}), 1.0, 1e-3);
}

TEST(MakeHierarchicalSwap, HandEvaluationAtShape) {
  const Eigen::Index d = 2;
  const double gamma = 2.5;
  const PriorSpec pf = NormalPrior::isotropic(d, 0.0, 1.0);
  Matrix cov = Matrix::Identity(d, d) * 0.3;
  const ExactGaussianPosterior fp(Vector::LinSpaced(d, 0.5, 1.0), cov);
  const SwapTarget s = make_hierarchical_swap(fp, gamma, pf);
  ASSERT_EQ(s.dimension(), d + 1);
  Vector z = Vector::Zero(d + 1);
  z[d] = std::log(gamma);
  const double normal = -0.5 * d * std::log(2 * std::numbers::pi) + 0.5 * d * std::log(gamma);
  const double gamma_pdf = (gamma - 1) * std::log(gamma) - gamma - std::lgamma(gamma);
  const double expected = fp.log_density(Vector::Zero(d)).value + normal + gamma_pdf -
                          (-0.5 * d * std::log(2 * std::numbers::pi)) + std::log(gamma);
  EXPECT_NEAR(s.log_density(z), expected, 1e-12);
}

TEST(MakeHierarchicalSwap, ThetaMarginalMatchesDirectJointChain) {
  const Eigen::Index d = 2;
  Vector truth(d);
  truth << 0.8, -0.4;
  const LikelihoodModel m = generate_synthetic(ModelTag::NormalMean, 5, d, truth, 19);
  const PriorSpec pf = NormalPrior::isotropic(d, 0.0, 1.0);
  const double gamma = 1.5;
  const auto fp = conjugate_linear_posterior(m, std::get<NormalPrior>(pf));
  const SwapTarget s = make_hierarchical_swap(fp, gamma, pf);
  const TargetDensity direct = posterior_target(m, HierarchicalNormalGammaPrior(d, gamma));
  const Chain a = hmc_sample(s.target, {0.2, 10, 60000, Vector::Zero(d + 1), 1});
  const Chain b = hmc_sample(direct, {0.2, 10, 60000, Vector::Zero(d + 1), 2});
  const ChainSummary sa = chain_summary(a), sb = chain_summary(b);
  const Vector sea = batch_means_standard_error(a.samples.bottomRows(sa.retained));
  const Vector seb = batch_means_standard_error(b.samples.bottomRows(sb.retained));
  for (Eigen::Index i = 0; i < d; ++i)
    EXPECT_LT(std::abs(sa.mean[i] - sb.mean[i]), 3.0 * std::hypot(sea[i], seb[i])) << "theta_" << i;
}

TEST(MakeHierarchicalSwap, LargeShapeApproachesFixedPrecision) {
  Matrix obs = Matrix::Constant(100, 1, 1.0);
  const LikelihoodModel m = NormalMean(obs, 1);
  const PriorSpec pf = NormalPrior::isotropic(1, 0.0, 1.0);
  const auto fp = conjugate_linear_posterior(m, std::get<NormalPrior>(pf));
  const double gamma = 400.0;
  const SwapTarget hier = make_hierarchical_swap(fp, gamma, pf);
  const SwapTarget fixed = make_prior_swap(fp, NormalPrior::isotropic(1, 0.0, 1.0 / gamma), pf);
  Vector z0(2);
  z0 << 0.2, std::log(gamma);
  const Chain a = hmc_sample(hier.target, {0.02, 10, 40000, z0, 3});
  const Chain b = mh_sample(fixed.target, {Vector::Constant(1, 0.1), 100000, Vector::Constant(1, 0.2), 4});
  EXPECT_NEAR(chain_summary(a).mean[0], chain_summary(b).mean[0], 0.01);
  EXPECT_NEAR(chain_summary(b).mean[0], 100.0 / 500.0, 0.01);
}

TEST(SwapTargetProperties, GradientsMatchFiniteDifferences) {
  const Eigen::Index d = 3;
  Vector truth(d);
  truth << 0.7, -0.3, 1.1;
  const LikelihoodModel lin = generate_synthetic(ModelTag::LinearRegression, 30, d, truth, 4);
  const LikelihoodModel logi = generate_synthetic(ModelTag::LogisticRegression, 30, d, truth, 5);
  const PriorSpec pf = NormalPrior::isotropic(d, 0.0, 2.0);
  const auto exact = conjugate_linear_posterior(lin, std::get<NormalPrior>(pf));
  Matrix pts(3, d + 1);
  for (Eigen::Index j = 0; j < 3; ++j) pts.row(j) = data_point(logi, j).transpose();
  const ParametricAlpha alpha(pts, 30.0, pf, model_family(logi));
  std::mt19937_64 rng(6);
  Matrix fsamples(50, d);
  for (Eigen::Index t = 0; t < 50; ++t) fsamples.row(t) = (0.3 * test::random_vector(d, rng)).transpose();
  const SemiparametricRep rep(fsamples, 0.5, alpha);

  const std::vector<PriorSpec> targets = {LaplacePrior::iid(d, 0.0, 0.5), StudentTPrior::iid(d, 0.1, 1.0, 3.0),
                                          VerySparsePrior(d, 0.5), NormalPrior::isotropic(d, 1.0, 0.5)};
  std::vector<SwapTarget> swaps;
  for (const auto& pi : targets) {
    swaps.push_back(make_prior_swap(exact, pi, pf));
    swaps.push_back(make_prior_swap(alpha, pi, pf));
    swaps.push_back(make_semiparametric_swap(rep, pi, pf));
  }
  swaps.push_back(make_hierarchical_swap(exact, 2.0, pf));
  swaps.push_back(make_hierarchical_swap(alpha, 2.0, pf));
  for (const auto& s : swaps) {
    int checked = 0;
    while (checked < 100) {
      Vector t = test::random_vector(s.dimension(), rng);
      if ((t.head(d).array().abs() < 0.05).any() || ((t.head(d).array() - 0.1).abs() < 0.05).any()) continue;
      expect_gradient_matches(s, t);
      ++checked;
    }
  }
}

TEST(SwapTargetProperties, EvaluationCostIndependentOfDataSize) {
  const Eigen::Index d = 5;
  const PriorSpec pf = NormalPrior::isotropic(d, 0.0, 1.0);
  const PriorSpec pi = LaplacePrior::iid(d, 0.0, 1.0);
  std::vector<double> per_eval;
  for (Eigen::Index n : {1000, 10000, 100000}) {
    const LikelihoodModel m = generate_synthetic(ModelTag::LogisticRegression, n, d, Vector::Ones(d), 8);
    Matrix pts(10, d + 1);
    for (Eigen::Index j = 0; j < 10; ++j) pts.row(j) = data_point(m, j).transpose();
    const SwapTarget s = make_prior_swap(ParametricAlpha(pts, static_cast<double>(n), pf, model_family(m)), pi, pf);
    double best = 1e300;
    for (int rep = 0; rep < 5; ++rep) {
      const auto start = std::chrono::steady_clock::now();
      double sink = 0;
      for (int i = 0; i < 20000; ++i) sink += s.with_gradient(Vector::Constant(d, 0.001 * i)).value;
      const double ns = std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - start).count();
      best = std::min(best, ns / 20000);
      EXPECT_TRUE(std::isfinite(sink));
    }
    per_eval.push_back(best);
  }
  const double hi = *std::max_element(per_eval.begin(), per_eval.end());
  const double lo = *std::min_element(per_eval.begin(), per_eval.end());
  EXPECT_LT(hi / lo, 2.0);
}
