#include <cmath>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "priorswap/false_posterior.hpp"
#include "test_util.hpp"

using namespace priorswap;

namespace {

double integrate(const std::function<double(double)>& f, double a, double b) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 15, 1e-12);
}

}  // namespace

TEST(PriorLogDensity, StandardNormalAtMode) {
  const PriorSpec p = NormalPrior::isotropic(1, 0.0, 1.0);
  const LogDensity ld = prior_log_density(p, Vector::Zero(1));
  EXPECT_NEAR(ld.value, -0.5 * std::log(2 * std::numbers::pi), 1e-15);
  EXPECT_EQ(ld.gradient[0], 0.0);
}

TEST(PriorLogDensity, LaplaceAtLocationUsesZeroSubgradient) {
  const double b = 1.0 / std::sqrt(2.0);
  const PriorSpec p = LaplacePrior::iid(1, 10.0, b);
  const LogDensity ld = prior_log_density(p, Vector::Constant(1, 10.0));
  EXPECT_NEAR(ld.value, std::log(std::sqrt(2.0) / 2.0), 1e-15);
  EXPECT_EQ(ld.gradient[0], 0.0);
}

TEST(PriorLogDensity, VerySparseAtZero) {
  const PriorSpec p = VerySparsePrior(2, 1.0);
  const LogDensity ld = prior_log_density(p, Vector::Zero(2));
  // Normalized: each coordinate contributes -log(2 Gamma(3.5)) at zero.
  EXPECT_NEAR(ld.value, -2.0 * std::log(2.0 * std::tgamma(3.5)), 1e-13);
  EXPECT_EQ(ld.gradient.norm(), 0.0);
}

TEST(PriorLogDensity, VerySparseMatchesUnnormalizedFormUpToConstant) {
  // prod_i 1/(2 sigma) exp(-|theta_i|^0.4 / sigma), which is -2 ln 2 at zero for sigma = 1.
  const double sigma = 1.0;
  const PriorSpec p = VerySparsePrior(2, sigma);
  auto unnormalized = [sigma](const Vector& t) {
    double v = 0.0;
    for (Eigen::Index i = 0; i < t.size(); ++i) v += -std::log(2 * sigma) - std::pow(std::abs(t[i]), 0.4) / sigma;
    return v;
  };
  EXPECT_NEAR(unnormalized(Vector::Zero(2)), -2.0 * std::log(2.0), 1e-15);
  const double offset = prior_log_density(p, Vector::Zero(2)).value - unnormalized(Vector::Zero(2));
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const Vector t = test::random_vector(2, rng, 3.0);
    EXPECT_NEAR(prior_log_density(p, t).value - unnormalized(t), offset, 1e-12);
  }
}

TEST(PriorLogDensity, RejectsNonFiniteTheta) {
  const PriorSpec p = NormalPrior::isotropic(2, 0.0, 1.0);
  Vector t(2);
  t << 0.0, std::nan("");
  EXPECT_THROW(prior_log_density(p, t), InvalidInput);
  t << 0.0, std::numeric_limits<double>::infinity();
  EXPECT_THROW(prior_log_density(p, t), InvalidInput);
}

TEST(PriorLogDensity, RejectsInvalidHyperparameters) {
  EXPECT_THROW(LaplacePrior::iid(1, 0.0, 0.0), InvalidInput);
  EXPECT_THROW(StudentTPrior::iid(1, 0.0, 1.0, -1.0), InvalidInput);
  EXPECT_THROW(VerySparsePrior(1, -2.0), InvalidInput);
  EXPECT_THROW(HierarchicalNormalGammaPrior(2, 0.0), InvalidInput);
  EXPECT_THROW(NormalPrior::isotropic(1, 0.0, 0.0), InvalidInput);
}

class PriorGradient : public ::testing::TestWithParam<int> {};

TEST_P(PriorGradient, MatchesFiniteDifferencesAwayFromKinks) {
  const Eigen::Index d = 3;
  Matrix cov(d, d);
  cov << 2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5;
  const std::vector<PriorSpec> priors = {
      NormalPrior(Vector::LinSpaced(d, -1, 1), cov),
      LaplacePrior::iid(d, 0.5, 0.7),
      StudentTPrior::iid(d, -0.3, 1.5, 3.0),
      VerySparsePrior(d, 0.8),
      HierarchicalNormalGammaPrior(d, 1.5),
  };
  const PriorSpec& prior = priors[static_cast<std::size_t>(GetParam())];
  std::mt19937_64 rng(100 + GetParam());
  int checked = 0;
  while (checked < 100) {
    Vector t = test::random_vector(is_hierarchical(prior) ? d + 1 : d, rng, 3.0);
    if (is_hierarchical(prior)) t[d] = 0.2 + std::abs(t[d]);
    if ((t.array().abs() < 0.05).any() || ((t.array() - 0.5).abs() < 0.05).any()) continue;
    auto f = [&](const Vector& x) { return prior_log_density(prior, x).value; };
    const Vector g = prior_log_density(prior, t).gradient;
    const Vector fd = test::central_difference(f, t);
    for (Eigen::Index i = 0; i < t.size(); ++i) EXPECT_NEAR(g[i], fd[i], 1e-5 * std::max(1.0, std::abs(g[i])));
    // Hessian diagonal against differences of the gradient.
    const Vector h = prior_hessian_diagonal(prior, t);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      auto gi = [&](const Vector& x) { return prior_log_density(prior, x).gradient[i]; };
      const double fdh = test::central_difference(gi, t)[i];
      EXPECT_NEAR(h[i], fdh, 1e-4 * std::max(1.0, std::abs(h[i])));
    }
    ++checked;
  }
}

INSTANTIATE_TEST_SUITE_P(AllFamilies, PriorGradient, ::testing::Range(0, 5));

TEST(PriorNormalization, OneDimensionalFamiliesIntegrateToOne) {
  const double inf = std::numeric_limits<double>::infinity();
  auto density = [](const PriorSpec& p) {
    return [&p](double x) { return std::exp(prior_log_density(p, Vector::Constant(1, x)).value); };
  };
  const PriorSpec normal = NormalPrior::isotropic(1, 0.7, 2.5);
  EXPECT_NEAR(integrate(density(normal), -inf, inf), 1.0, 1e-3);
  const PriorSpec laplace = LaplacePrior::iid(1, 10.0, 1.0 / std::sqrt(2.0));
  EXPECT_NEAR(integrate(density(laplace), -inf, 10.0) + integrate(density(laplace), 10.0, inf), 1.0, 1e-3);
  const PriorSpec student = StudentTPrior::iid(1, 0.0, 1.0, 3.0);
  EXPECT_NEAR(integrate(density(student), -inf, inf), 1.0, 1e-3);
  const PriorSpec sparse = VerySparsePrior(1, 0.5);
  EXPECT_NEAR(integrate(density(sparse), -inf, 0.0) + integrate(density(sparse), 0.0, inf), 1.0, 1e-3);
}

TEST(PriorNormalization, HierarchicalJointMarginalizesToClosedForm) {
  const HierarchicalNormalGammaPrior hp(1, 1.7);
  const PriorSpec p = hp;
  const double inf = std::numeric_limits<double>::infinity();
  for (double theta : {-2.0, 0.0, 0.4, 3.0}) {
    auto joint = [&](double a) {
      Vector x(2);
      x << theta, a;
      return std::exp(prior_log_density(p, x).value);
    };
    const double marginal = integrate(joint, 0.0, inf);
    EXPECT_NEAR(std::log(marginal), hierarchical_marginal_log_density(hp, Vector::Constant(1, theta)).value, 1e-8);
  }
  auto marg = [&](double t) { return std::exp(hierarchical_marginal_log_density(hp, Vector::Constant(1, t)).value); };
  EXPECT_NEAR(integrate(marg, -inf, inf), 1.0, 1e-3);
}

TEST(LikelihoodLogDensity, LinearZeroResidualRow) {
  Matrix X(1, 2);
  X << 0.5, -1.5;
  Vector theta(2);
  theta << 2.0, 1.0;
  const LikelihoodModel m = LinearRegression(X, X * theta, 1.0);
  const LogDensity ld = likelihood_log_density(m, theta);
  EXPECT_NEAR(ld.value, -0.5 * std::log(2 * std::numbers::pi), 1e-15);
  EXPECT_NEAR(ld.gradient.norm(), 0.0, 1e-15);
}

TEST(LikelihoodLogDensity, LogisticAtZero) {
  std::mt19937_64 rng(5);
  const Eigen::Index n = 37;
  const LikelihoodModel m = generate_synthetic(ModelTag::LogisticRegression, n, 3, Vector::Ones(3), 11);
  EXPECT_NEAR(likelihood_log_density(m, Vector::Zero(3)).value, static_cast<double>(n) * std::log(0.5), 1e-12);
}

TEST(LikelihoodLogDensity, NormalMeanStationaryAtSampleMean) {
  Matrix obs(3, 1);
  obs << 2.0, 1.0, 1.0;
  const LikelihoodModel m = NormalMean(obs, 1);
  const Vector theta = Vector::Constant(1, 4.0 / 3.0);
  const LogDensity ld = likelihood_log_density(m, theta);
  EXPECT_NEAR(ld.gradient[0], 0.0, 1e-14);
  auto f = [&](const Vector& x) { return likelihood_log_density(m, x).value; };
  EXPECT_NEAR(test::central_difference(f, theta)[0], 0.0, 1e-7);
}

TEST(LikelihoodLogDensity, DimensionMismatchIsInvalidInput) {
  const LikelihoodModel m = generate_synthetic(ModelTag::LinearRegression, 5, 3, Vector::Zero(3), 1);
  EXPECT_THROW(likelihood_log_density(m, Vector::Zero(2)), InvalidInput);
}

TEST(LikelihoodLogDensity, GradientsMatchFiniteDifferences) {
  const Eigen::Index d = 4;
  Vector truth(d);
  truth << 1.0, -0.5, 0.0, 2.0;
  const std::vector<LikelihoodModel> models = {
      generate_synthetic(ModelTag::LinearRegression, 50, d, truth, 1, {0.5, std::nullopt}),
      generate_synthetic(ModelTag::LogisticRegression, 50, d, truth, 2),
      generate_synthetic(ModelTag::NormalMean, 50, d, truth, 3),
  };
  std::mt19937_64 rng(17);
  for (const auto& m : models) {
    for (int i = 0; i < 100; ++i) {
      const Vector t = test::random_vector(d, rng, 2.0);
      auto f = [&](const Vector& x) { return likelihood_log_density(m, x).value; };
      const Vector g = likelihood_log_density(m, t).gradient;
      const Vector fd = test::central_difference(f, t);
      for (Eigen::Index j = 0; j < d; ++j) EXPECT_NEAR(g[j], fd[j], 1e-5 * std::max(1.0, std::abs(g[j])));
    }
  }
}

TEST(LikelihoodLogDensity, AdditiveOverConcatenatedData) {
  const Eigen::Index d = 3;
  const Vector truth = Vector::LinSpaced(d, -1, 1);
  const auto a = std::get<LogisticRegression>(generate_synthetic(ModelTag::LogisticRegression, 20, d, truth, 1));
  const auto b = std::get<LogisticRegression>(generate_synthetic(ModelTag::LogisticRegression, 30, d, truth, 2));
  Matrix X(50, d);
  X << a.X, b.X;
  Vector y(50);
  y << a.y, b.y;
  const LikelihoodModel joined = LogisticRegression(X, y);
  const Vector t = Vector::Constant(d, 0.3);
  const double parts = likelihood_log_density(a, t).value + likelihood_log_density(b, t).value;
  EXPECT_NEAR(likelihood_log_density(joined, t).value, parts, 1e-10 * std::abs(parts));
}

TEST(LikelihoodLogDensity, PointTermsSumToDatasetLikelihood) {
  const Eigen::Index d = 2;
  const LikelihoodModel m = generate_synthetic(ModelTag::LinearRegression, 25, d, Vector::Ones(d), 9, {2.0, std::nullopt});
  const ModelFamily f = model_family(m);
  const Vector t = Vector::Constant(d, 0.4);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < model_size(m); ++i) sum += point_log_density(f, data_point(m, i), t).value;
  EXPECT_NEAR(sum, likelihood_log_density(m, t).value, 1e-10);
}

TEST(GenerateSynthetic, ForcedSumGivesRunningExampleFalsePosterior) {
  SyntheticOptions opts;
  opts.forced_sum = Vector::Constant(1, 4.0);
  const LikelihoodModel m = generate_synthetic(ModelTag::NormalMean, 3, 1, Vector::Zero(1), 42, opts);
  const auto& obs = std::get<NormalMean>(m).observations;
  EXPECT_NEAR(obs.sum(), 4.0, 1e-14);
  const auto post = conjugate_linear_posterior(m, NormalPrior::isotropic(1, 0.0, 1.0));
  EXPECT_NEAR(post.mean()[0], 1.0, 1e-14);
  EXPECT_NEAR(post.covariance()(0, 0), 0.25, 1e-15);
}

TEST(GenerateSynthetic, EmptyLinearModel) {
  const LikelihoodModel m = generate_synthetic(ModelTag::LinearRegression, 0, 3, Vector::Zero(3), 1);
  EXPECT_EQ(model_size(m), 0);
  EXPECT_EQ(likelihood_log_density(m, Vector::Ones(3)).value, 0.0);
}

TEST(GenerateSynthetic, SameSeedIsBitIdentical) {
  const Vector truth = Vector::LinSpaced(4, -2, 2);
  for (auto tag : {ModelTag::LinearRegression, ModelTag::LogisticRegression, ModelTag::NormalMean}) {
    const auto a = generate_synthetic(tag, 40, 4, truth, 1234);
    const auto b = generate_synthetic(tag, 40, 4, truth, 1234);
    const auto c = generate_synthetic(tag, 40, 4, truth, 1235);
    for (Eigen::Index i = 0; i < 40; ++i) EXPECT_TRUE((data_point(a, i).array() == data_point(b, i).array()).all());
    EXPECT_FALSE((data_point(a, 0).array() == data_point(c, 0).array()).all());
  }
}

TEST(GenerateSynthetic, RejectsInvalidSizes) {
  EXPECT_THROW(generate_synthetic(ModelTag::LinearRegression, -1, 2, Vector::Zero(2), 1), InvalidInput);
  EXPECT_THROW(generate_synthetic(ModelTag::LinearRegression, 3, 0, Vector::Zero(0), 1), InvalidInput);
  EXPECT_THROW(generate_synthetic(ModelTag::LinearRegression, 3, 2, Vector::Zero(3), 1), InvalidInput);
}
