#ifndef PRIORSWAP_FALSE_POSTERIOR_HPP
#define PRIORSWAP_FALSE_POSTERIOR_HPP

// Representations of the false posterior: the exact conjugate Gaussian, raw
// sample sets, the score-matched pseudo-data family, and the kernel-corrected
// semiparametric estimate built on top of it.

#include "priorswap/densities.hpp"
#include "priorswap/samplers.hpp"

#include <memory>
#include <numeric>
#include <optional>
#include <variant>

namespace priorswap {

// ---------------------------------------------------------------------------
// Exact Gaussian posterior

class ExactGaussianPosterior {
public:
  ExactGaussianPosterior(Vector mean, Matrix covariance) : mean_(std::move(mean)), covariance_(std::move(covariance)) {
    if (covariance_.rows() != mean_.size() || covariance_.cols() != mean_.size())
      throw InvalidInput("posterior covariance shape does not match mean");
    require_finite(mean_, "posterior mean");
    const double scale = std::max(1.0, covariance_.cwiseAbs().maxCoeff());
    if ((covariance_ - covariance_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
      throw InvalidInput("posterior covariance is not symmetric");
    covariance_ = 0.5 * (covariance_ + covariance_.transpose());
    Eigen::LLT<Matrix> llt(covariance_);
    if (llt.info() != Eigen::Success) throw NumericError("posterior covariance is not positive-definite");
    chol_ = llt.matrixL();
    precision_ = llt.solve(Matrix::Identity(mean_.size(), mean_.size()));
    precision_ = 0.5 * (precision_ + precision_.transpose());
    log_normalizer_ = -0.5 * static_cast<double>(mean_.size()) * kLogTwoPi - chol_.diagonal().array().log().sum();
  }

  const Vector& mean() const { return mean_; }
  const Matrix& covariance() const { return covariance_; }
  const Matrix& precision() const { return precision_; }
  Eigen::Index dimension() const { return mean_.size(); }

  /// Normalized log N(theta | mean, covariance) and gradient.
  LogDensity log_density(const Vector& theta) const {
    const Vector diff = theta - mean_;
    const Vector pd = precision_ * diff;
    return {log_normalizer_ - 0.5 * diff.dot(pd), -pd};
  }

  /// T independent draws, one per row.
  Matrix sample(std::size_t T, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix out(static_cast<Eigen::Index>(T), dimension());
    Vector z(dimension());
    for (Eigen::Index t = 0; t < out.rows(); ++t) {
      for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
      out.row(t) = (mean_ + chol_ * z).transpose();
    }
    return out;
  }

private:
  Vector mean_;
  Matrix covariance_;
  Matrix chol_;
  Matrix precision_;
  double log_normalizer_ = 0.0;
};

/// Exact posterior for Gaussian-noise models under a Normal prior:
/// covariance = (S0^{-1} + X^T X / s2)^{-1}, mean = covariance (S0^{-1} m0 + X^T y / s2).
inline ExactGaussianPosterior conjugate_linear_posterior(const LikelihoodModel& model, const NormalPrior& prior) {
  if (prior.dimension() != model_dimension(model)) throw InvalidInput("prior and model dimensions differ");
  Matrix precision = prior.precision;
  Vector shift = prior.precision * prior.mean;
  if (auto* lin = std::get_if<LinearRegression>(&model)) {
    precision += lin->X.transpose() * lin->X / lin->noise_variance;
    shift += lin->X.transpose() * lin->y / lin->noise_variance;
  } else if (auto* nm = std::get_if<NormalMean>(&model)) {
    precision += Matrix::Identity(nm->d, nm->d) * static_cast<double>(nm->observations.rows());
    shift += nm->observations.colwise().sum().transpose();
  } else {
    throw InvalidInput("conjugate posterior requires a Gaussian-noise model");
  }
  precision = 0.5 * (precision + precision.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(precision, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff(), hi = eig.eigenvalues().maxCoeff();
  const double cond = lo > 0 ? hi / lo : std::numeric_limits<double>::infinity();
  if (!(lo > 0) || cond > 1e14) {
    std::ostringstream os;
    os << "posterior precision is singular or ill-conditioned (condition number " << cond << ")";
    throw NumericError(os.str());
  }
  Eigen::LLT<Matrix> llt(precision);
  Matrix cov = llt.solve(Matrix::Identity(precision.rows(), precision.cols()));
  cov = 0.5 * (cov + cov.transpose());
  Vector mean = llt.solve(shift);
  return ExactGaussianPosterior(std::move(mean), std::move(cov));
}

// ---------------------------------------------------------------------------
// Posterior targets (data-dependent; used for false-posterior inference and
// direct MCMC baselines)

/// Maps the hierarchical augmented state (theta, log precision) to
/// (theta, precision) and returns log|Jacobian| = log precision.
inline Vector hierarchical_natural_state(const Vector& z, Eigen::Index d) {
  Vector x = z;
  x[d] = std::exp(z[d]);
  return x;
}

/// log pi(theta) + log L(theta | data). For a hierarchical prior the state is
/// (theta, log precision) and the log-Jacobian term is included.
inline TargetDensity posterior_target(LikelihoodModel model, PriorSpec prior) {
  const Eigen::Index d = model_dimension(model);
  if (prior_dimension(prior) != d) throw InvalidInput("prior and model dimensions differ");
  auto m = std::make_shared<const LikelihoodModel>(std::move(model));
  auto p = std::make_shared<const PriorSpec>(std::move(prior));
  TargetDensity t;
  if (!is_hierarchical(*p)) {
    t.dimension = d;
    t.with_gradient = [m, p](const Vector& theta) {
      LogDensity a = prior_log_density(*p, theta);
      if (a.value == kNegInf) return a;
      const LogDensity b = likelihood_log_density(*m, theta);
      return LogDensity{a.value + b.value, a.gradient + b.gradient};
    };
  } else {
    t.dimension = d + 1;
    t.with_gradient = [m, p, d](const Vector& z) {
      const Vector x = hierarchical_natural_state(z, d);
      LogDensity a = prior_log_density(*p, x);
      if (a.value == kNegInf) return a;
      const LogDensity b = likelihood_log_density(*m, z.head(d));
      LogDensity out{a.value + b.value + z[d], Vector(d + 1)};
      out.gradient.head(d) = a.gradient.head(d) + b.gradient;
      out.gradient[d] = a.gradient[d] * x[d] + 1.0;
      return out;
    };
  }
  auto g = t.with_gradient;
  t.log_density = [g](const Vector& x) { return g(x).value; };
  return t;
}

// ---------------------------------------------------------------------------
// Sample sets

struct SampleSet {
  Matrix samples;                     // T_f x d
  std::vector<std::int64_t> wall_ns;  // optional, per row
};

struct SamplerSettings {
  enum class Kind { Auto, Exact, Mh, Hmc };
  Kind kind = Kind::Auto;
  std::size_t samples = 1000;  // rows returned after burn-in
  double burn_in = 0.25;
  double mh_stddev = 0.0;      // 0: tune
  double hmc_step = 0.0;       // 0: tune
  int leapfrog_steps = 10;
  std::uint64_t seed = 0;
  std::optional<Vector> init;
};

inline std::size_t total_steps_for(std::size_t retained, double burn_in) {
  return static_cast<std::size_t>(std::ceil(static_cast<double>(retained) / (1.0 - burn_in)));
}

/// Runs the configured MCMC kernel on `target` and returns the post-burn-in
/// rows. Tuning warmup is excluded from the returned chain.
inline Chain run_tuned_chain(const TargetDensity& target, const SamplerSettings& s, const Vector& init) {
  const std::size_t steps = total_steps_for(s.samples, s.burn_in);
  if (s.kind == SamplerSettings::Kind::Hmc) {
    double eps = s.hmc_step;
    Vector start = init;
    if (eps <= 0) {
      HmcTuning tu = tune_hmc(target, init, s.leapfrog_steps, s.seed ^ 0x9e3779b97f4a7c15ULL);
      eps = tu.step_size;
      start = tu.state;
    }
    return hmc_sample(target, {eps, s.leapfrog_steps, steps, start, s.seed});
  }
  Vector stddev = Vector::Constant(target.dimension, s.mh_stddev);
  Vector start = init;
  if (s.mh_stddev <= 0) {
    MhTuning tu = tune_mh(target, init, s.seed ^ 0x9e3779b97f4a7c15ULL);
    stddev = tu.stddev;
    start = tu.state;
  }
  return mh_sample(target, {stddev, steps, start, s.seed});
}

inline SampleSet drop_burn_in(const Chain& c, double burn_in) {
  const auto drop = static_cast<Eigen::Index>(std::floor(burn_in * static_cast<double>(c.length())));
  SampleSet out;
  out.samples = c.samples.bottomRows(c.length() - drop);
  out.wall_ns.assign(c.wall_ns.begin() + drop, c.wall_ns.end());
  return out;
}

/// Draws from p_f. Exact Gaussian draws when the model is conjugate to a
/// Normal false prior (Kind::Auto or Kind::Exact), MCMC otherwise.
inline SampleSet sample_false_posterior(const LikelihoodModel& model, const PriorSpec& false_prior,
                                        const SamplerSettings& s) {
  const bool conjugate = std::holds_alternative<NormalPrior>(false_prior) &&
                         model_tag(model) != ModelTag::LogisticRegression;
  if (s.kind == SamplerSettings::Kind::Exact || (s.kind == SamplerSettings::Kind::Auto && conjugate)) {
    if (!conjugate) throw InvalidInput("exact false-posterior sampling requires a conjugate model and Normal prior");
    const auto post = conjugate_linear_posterior(model, std::get<NormalPrior>(false_prior));
    const auto start = detail::Clock::now();
    SampleSet out;
    out.samples = post.sample(s.samples, s.seed);
    const auto total = detail::elapsed_ns(start);
    out.wall_ns.resize(s.samples);
    for (std::size_t t = 0; t < s.samples; ++t)
      out.wall_ns[t] = static_cast<std::int64_t>(static_cast<double>(total) * static_cast<double>(t + 1) /
                                                 static_cast<double>(s.samples));
    return out;
  }
  const TargetDensity target = posterior_target(model, false_prior);
  Vector init = s.init.value_or(Vector::Zero(target.dimension));
  return drop_burn_in(run_tuned_chain(target, s, init), s.burn_in);
}

// ---------------------------------------------------------------------------
// Parametric pseudo-data family:  pi_f(theta) prod_j p(alpha_j | theta)^{n/k}

class ParametricAlpha {
public:
  ParametricAlpha(Matrix points, double n, PriorSpec false_prior, ModelFamily family)
      : points_(std::move(points)), n_(n), false_prior_(std::move(false_prior)), family_(family) {
    if (points_.rows() < 1) throw InvalidInput("pseudo-point count k must be >= 1");
    if (points_.cols() != family_.data_dimension())
      throw InvalidInput("pseudo-point width " + std::to_string(points_.cols()) + " does not match data dimension " +
                         std::to_string(family_.data_dimension()));
    if (!points_.allFinite()) throw InvalidInput("pseudo-points must be finite");
    if (!(n_ >= 0) || !std::isfinite(n_)) throw InvalidInput("data size n must be >= 0");
    if (is_hierarchical(false_prior_)) throw InvalidInput("false prior cannot be hierarchical");
    if (prior_dimension(false_prior_) != family_.d) throw InvalidInput("false prior dimension does not match model");
  }

  const Matrix& points() const { return points_; }
  Eigen::Index k() const { return points_.rows(); }
  double n() const { return n_; }
  double exponent() const { return n_ / static_cast<double>(points_.rows()); }
  const PriorSpec& false_prior() const { return false_prior_; }
  const ModelFamily& family() const { return family_; }
  Eigen::Index dimension() const { return family_.d; }

  /// Unnormalized log density and gradient. Theta(k d), independent of n.
  LogDensity log_density(const Vector& theta) const {
    LogDensity out = prior_log_density(false_prior_, theta);
    const double w = exponent();
    for (Eigen::Index j = 0; j < k(); ++j) {
      const PointTerms pt = point_log_density(family_, points_.row(j).transpose(), theta, false);
      out.value += w * pt.value;
      out.gradient += w * pt.gradient;
    }
    return out;
  }

  /// Diagonal of the theta-Hessian of the log density.
  Vector hessian_diagonal(const Vector& theta) const {
    Vector h = prior_hessian_diagonal(false_prior_, theta);
    const double w = exponent();
    for (Eigen::Index j = 0; j < k(); ++j)
      h += w * point_log_density(family_, points_.row(j).transpose(), theta, true).hessian_diag;
    return h;
  }

private:
  Matrix points_;
  double n_;
  PriorSpec false_prior_;
  ModelFamily family_;
};

inline LogDensity parametric_log_density(const ParametricAlpha& alpha, const Vector& theta) {
  require_dimension(theta, alpha.dimension(), "theta");
  require_finite(theta, "theta");
  return alpha.log_density(theta);
}

/// Score-matching objective
///   J = (1/T) sum_t sum_i [ d2_i log p(theta_t) + 0.5 (d_i log p(theta_t))^2 ].
inline double score_matching_objective(const ParametricAlpha& alpha, const Matrix& samples) {
  if (samples.rows() < 1) throw InvalidInput("score matching needs at least one sample");
  if (samples.cols() != alpha.dimension()) throw InvalidInput("sample width does not match the model dimension");
  std::vector<double> terms(static_cast<std::size_t>(samples.rows()));
  for (Eigen::Index t = 0; t < samples.rows(); ++t) {
    const Vector theta = samples.row(t).transpose();
    const LogDensity ld = alpha.log_density(theta);
    const Vector h = alpha.hessian_diagonal(theta);
    const double v = h.sum() + 0.5 * ld.gradient.squaredNorm();
    if (!std::isfinite(v))
      throw NumericError("non-finite score-matching term at sample " + std::to_string(t) + " " +
                         format_vector(theta));
    terms[static_cast<std::size_t>(t)] = v;
  }
  return pairwise_sum(terms) / static_cast<double>(samples.rows());
}

namespace detail {

/// J for Gaussian-family models (NormalMean, LinearRegression) under a
/// Normal false prior. The score is affine in theta, grad = A theta + c, so
/// J = tr(A) + 0.5 [tr(A S A) + 2 c^T A m + c^T c] with m and S the first two
/// sample moments. Cost is independent of the sample count.
class MomentScoreObjective {
public:
  MomentScoreObjective(const Matrix& samples, const NormalPrior& prior, const ModelFamily& family, double n,
                       Eigen::Index k)
      : prior_(prior), family_(family), weight_(n / static_cast<double>(k)), k_(k) {
    const double T = static_cast<double>(samples.rows());
    mean_ = samples.colwise().sum().transpose() / T;
    second_ = samples.transpose() * samples / T;
  }

  double operator()(const Vector& flat) const {
    const Eigen::Index d = family_.d, p = family_.data_dimension();
    Matrix A = -prior_.precision;
    Vector c = prior_.precision * prior_.mean;
    for (Eigen::Index j = 0; j < k_; ++j) {
      const auto pt = flat.segment(j * p, p);
      if (family_.tag == ModelTag::NormalMean) {
        A.diagonal().array() -= weight_;
        c += weight_ * pt;
      } else {
        const auto x = pt.head(d);
        A -= (weight_ / family_.noise_variance) * (x * x.transpose());
        c += (weight_ * pt[d] / family_.noise_variance) * x;
      }
    }
    return A.trace() + 0.5 * ((A * second_ * A).trace() + 2.0 * c.dot(A * mean_) + c.squaredNorm());
  }

private:
  const NormalPrior& prior_;
  ModelFamily family_;
  double weight_;
  Eigen::Index k_;
  Vector mean_;
  Matrix second_;
};

/// Per-sample J with its analytic gradient in the pseudo-points. Each
/// pseudo-point's terms are vectorized over the samples: Theta(T k d).
class SampleScoreObjective {
public:
  SampleScoreObjective(const Matrix& samples, const PriorSpec& prior, const ModelFamily& family, double n,
                       Eigen::Index k)
      : samples_(samples), family_(family), weight_(n / static_cast<double>(k)), k_(k) {
    const Eigen::Index T = samples.rows();
    prior_grad_.resize(T, family.d);
    prior_hess_.resize(T);
    for (Eigen::Index t = 0; t < T; ++t) {
      const Vector th = samples.row(t).transpose();
      prior_grad_.row(t) = prior_log_density(prior, th).gradient.transpose();
      prior_hess_[t] = prior_hessian_diagonal(prior, th).sum();
    }
  }

  double operator()(const Vector& flat) const {
    refresh(flat);
    return total(grad_, hess_);
  }

  /// dJ/d(alpha), chain rule through the summed score G_t and Laplacian H_t:
  /// dJ = mean_t [dH_t + G_t . dG_t].
  Vector gradient(const Vector& flat) const {
    refresh(flat);
    const Eigen::Index p = family_.data_dimension(), d = family_.d;
    const double T = static_cast<double>(samples_.rows()), w = weight_;
    Vector g(flat.size());
    for (Eigen::Index j = 0; j < k_; ++j) {
      const auto pt = flat.segment(j * p, p);
      auto gj = g.segment(j * p, p);
      switch (family_.tag) {
        case ModelTag::NormalMean:
          gj = w * grad_.colwise().sum().transpose() / T;
          break;
        case ModelTag::LinearRegression: {
          const double nv = family_.noise_variance;
          const Vector x = pt.head(d);
          const Vector r = (pt[d] - (samples_ * x).array()).matrix();
          const Vector gx = grad_ * x;
          gj.head(d) = w / nv * (grad_.transpose() * r - samples_.transpose() * gx) / T - 2.0 * w / nv * x;
          gj[d] = w / nv * gx.sum() / T;
          break;
        }
        case ModelTag::LogisticRegression: {
          const Vector x = pt.head(d);
          const Eigen::ArrayXd s = 1.0 / (1.0 + (-(samples_ * x).array()).exp());
          const Eigen::ArrayXd s1 = s * (1.0 - s), s2 = s1 * (1.0 - 2.0 * s);
          const Vector gx = grad_ * x;
          const Vector a = (pt[d] - s).matrix(), b = (s1 * gx.array()).matrix(), c = s2.matrix();
          gj.head(d) = w * (grad_.transpose() * a - samples_.transpose() * b - x.squaredNorm() * (samples_.transpose() * c)) / T -
                       2.0 * w * s1.mean() * x;
          gj[d] = w * gx.sum() / T;
          break;
        }
      }
    }
    return g;
  }

private:
  /// Score and Laplacian of one pseudo-point's log density at every sample.
  void point_terms(const Eigen::Ref<const Vector>& pt, Matrix& g, Vector& h) const {
    const Eigen::Index d = family_.d;
    switch (family_.tag) {
      case ModelTag::NormalMean:
        g = (-samples_).rowwise() + pt.transpose();
        h.setConstant(samples_.rows(), -static_cast<double>(d));
        break;
      case ModelTag::LinearRegression: {
        const double nv = family_.noise_variance;
        const Vector r = (pt[d] - (samples_ * pt.head(d)).array()).matrix();
        g = r * pt.head(d).transpose() / nv;
        h.setConstant(samples_.rows(), -pt.head(d).squaredNorm() / nv);
        break;
      }
      case ModelTag::LogisticRegression: {
        const Eigen::ArrayXd s = 1.0 / (1.0 + (-(samples_ * pt.head(d)).array()).exp());
        g = (pt[d] - s).matrix() * pt.head(d).transpose();
        h = (-(s * (1.0 - s)) * pt.head(d).squaredNorm()).matrix();
        break;
      }
    }
  }

  void refresh(const Vector& flat) const {
    if (cached_ && flat == cached_flat_) return;
    const Eigen::Index p = family_.data_dimension();
    Matrix g;
    Vector h;
    grad_ = prior_grad_;
    hess_ = prior_hess_;
    for (Eigen::Index j = 0; j < k_; ++j) {
      point_terms(flat.segment(j * p, p), g, h);
      grad_ += weight_ * g;
      hess_ += weight_ * h;
    }
    cached_flat_ = flat;
    cached_ = true;
  }

  double total(const Matrix& G, const Vector& H) const {
    const Vector per = H + 0.5 * G.rowwise().squaredNorm();
    if (!per.allFinite()) {
      for (Eigen::Index t = 0; t < per.size(); ++t)
        if (!std::isfinite(per[t]))
          throw NumericError("non-finite score-matching term at sample " + std::to_string(t));
    }
    return pairwise_sum(per) / static_cast<double>(per.size());
  }

  const Matrix& samples_;
  ModelFamily family_;
  double weight_;
  Eigen::Index k_;
  Matrix prior_grad_;
  Vector prior_hess_;
  mutable bool cached_ = false;
  mutable Vector cached_flat_;
  mutable Matrix grad_;
  mutable Vector hess_;
};

struct DescentResult {
  Vector x;
  double value;
  int iterations;
  bool converged;
};

/// Gradient descent with Barzilai-Borwein step lengths and Armijo backtracking.
template <class F, class G>
DescentResult gradient_descent(const F& f, const G& grad, Vector x, int max_iterations, double tolerance) {
  double fx = f(x);
  Vector g = grad(x);
  double step = 1.0 / std::max(1.0, g.norm());
  for (int it = 1; it <= max_iterations; ++it) {
    const double gg = g.squaredNorm();
    if (gg == 0.0 || std::sqrt(gg) <= 1e-12 * std::max(1.0, std::abs(fx))) return {x, fx, it, true};
    double t = step;
    Vector xn;
    double fn = 0.0;
    bool found = false;
    for (int bt = 0; bt < 60; ++bt) {
      xn = x - t * g;
      fn = f(xn);
      if (std::isfinite(fn) && fn <= fx - 1e-4 * t * gg) {
        found = true;
        break;
      }
      t *= 0.5;
    }
    if (!found) return {x, fx, it, true};  // no descent direction left at this resolution
    const Vector gn = grad(xn);
    const Vector s = xn - x, y = gn - g;
    const double sy = s.dot(y);
    step = sy > 0 ? s.squaredNorm() / sy : 2.0 * t;
    const double change = fx - fn;
    x = std::move(xn);
    g = gn;
    fx = fn;
    if (change <= tolerance * std::max(1.0, std::abs(fx))) return {x, fx, it, true};
  }
  return {x, fx, max_iterations, false};
}

/// Rows sorted lexicographically so results do not depend on sample order.
inline Matrix sorted_rows(const Matrix& m) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(m.rows()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::sort(idx.begin(), idx.end(), [&m](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (m(a, c) < m(b, c)) return true;
      if (m(a, c) > m(b, c)) return false;
    }
    return false;
  });
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

/// k-means++ seeding followed by Lloyd iterations.
inline Matrix kmeans_centroids(const Matrix& samples, Eigen::Index k, std::mt19937_64& rng, int iterations) {
  const Eigen::Index T = samples.rows();
  Matrix centers(k, samples.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, T - 1);
  centers.row(0) = samples.row(pick(rng));
  Vector dist = (samples.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (Eigen::Index c = 1; c < k; ++c) {
    const double total = dist.sum();
    Eigen::Index chosen = pick(rng);
    if (total > 0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      for (Eigen::Index t = 0; t < T; ++t) {
        r -= dist[t];
        if (r <= 0) {
          chosen = t;
          break;
        }
      }
    }
    centers.row(c) = samples.row(chosen);
    dist = dist.cwiseMin((samples.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }
  std::vector<Eigen::Index> label(static_cast<std::size_t>(T));
  for (int it = 0; it < iterations; ++it) {
    for (Eigen::Index t = 0; t < T; ++t) {
      Eigen::Index best = 0;
      (centers.rowwise() - samples.row(t)).rowwise().squaredNorm().minCoeff(&best);
      label[static_cast<std::size_t>(t)] = best;
    }
    Matrix sums = Matrix::Zero(k, samples.cols());
    Vector counts = Vector::Zero(k);
    for (Eigen::Index t = 0; t < T; ++t) {
      sums.row(label[static_cast<std::size_t>(t)]) += samples.row(t);
      counts[label[static_cast<std::size_t>(t)]] += 1;
    }
    for (Eigen::Index c = 0; c < k; ++c)
      if (counts[c] > 0) centers.row(c) = sums.row(c) / counts[c];
  }
  return centers;
}

/// Maps parameter-space centroids into data space to seed the pseudo-points.
inline Matrix initial_pseudo_points(const Matrix& centroids, const ModelFamily& family, const PriorSpec& prior,
                                    double n, std::mt19937_64& rng) {
  const Eigen::Index k = centroids.rows(), d = family.d;
  Matrix pts(k, family.data_dimension());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index j = 0; j < k; ++j) {
    const Vector c = centroids.row(j).transpose();
    switch (family.tag) {
      case ModelTag::NormalMean: {
        // Invert the conjugate mean map m = (P0 + n I)^{-1} (P0 m0 + n abar).
        if (const auto* np = std::get_if<NormalPrior>(&prior); np && n > 0) {
          const Vector v = (np->precision * c + n * c - np->precision * np->mean) / n;
          pts.row(j) = v.transpose();
        } else {
          pts.row(j) = c.transpose();
        }
        break;
      }
      case ModelTag::LinearRegression:
      case ModelTag::LogisticRegression: {
        Vector x(d);
        for (Eigen::Index i = 0; i < d; ++i) x[i] = normal(rng);
        const double eta = x.dot(c);
        pts.row(j).head(d) = x.transpose();
        pts(j, d) = family.tag == ModelTag::LinearRegression ? eta : logistic(eta);
        break;
      }
    }
  }
  return pts;
}

inline Vector flatten(const Matrix& m) {
  Vector v(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r) v.segment(r * m.cols(), m.cols()) = m.row(r).transpose();
  return v;
}

inline Matrix unflatten(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) m.row(r) = v.segment(r * cols, cols).transpose();
  return m;
}

}  // namespace detail

struct FitOptions {
  int restarts = 5;
  int max_iterations = 500;
  double tolerance = 1e-12;
  double fd_step = 1e-5;
  int kmeans_iterations = 10;
  std::uint64_t seed = 0;
};

struct FitResult {
  ParametricAlpha alpha;
  double objective;
  int iterations;
  bool converged;
  std::string warning;  // empty when every restart converged
};

/// Score-matching estimate of the pseudo-points: multi-restart gradient
/// descent (analytic gradients; central differences for the moment-reduced
/// objective). Deterministic given the seed and invariant to the order of the
/// samples.
inline FitResult fit_parametric_alpha(const Matrix& samples, Eigen::Index k, const ModelFamily& family,
                                      const PriorSpec& false_prior, double n, const FitOptions& opts = {}) {
  if (k < 1) throw InvalidInput("k must be >= 1");
  if (samples.rows() < k) throw InvalidInput("need at least k false-posterior samples");
  if (samples.cols() != family.d) throw InvalidInput("sample width does not match the model dimension");
  if (!samples.allFinite()) throw InvalidInput("false-posterior samples must be finite");
  const Matrix sorted = detail::sorted_rows(samples);
  const Eigen::Index p = family.data_dimension();

  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
  std::optional<detail::MomentScoreObjective> moment;
  std::optional<detail::SampleScoreObjective> per_sample;
  const auto* normal_prior = std::get_if<NormalPrior>(&false_prior);
  if (normal_prior && family.tag != ModelTag::LogisticRegression) {
    moment.emplace(sorted, *normal_prior, family, n, k);
    value = [&moment](const Vector& x) { return (*moment)(x); };
    gradient = [&moment, &opts](const Vector& x) {
      Vector g(x.size());
      Vector xp = x;
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = opts.fd_step * (1.0 + std::abs(x[i]));
        xp[i] = x[i] + h;
        const double fp = (*moment)(xp);
        xp[i] = x[i] - h;
        const double fm = (*moment)(xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2 * h);
      }
      return g;
    };
  } else {
    per_sample.emplace(sorted, false_prior, family, n, k);
    value = [&per_sample](const Vector& x) { return (*per_sample)(x); };
    gradient = [&per_sample](const Vector& x) { return per_sample->gradient(x); };
  }

  std::optional<detail::DescentResult> best;
  int unconverged = 0;
  int iterations = 0;
  for (int r = 0; r < std::max(1, opts.restarts); ++r) {
    std::mt19937_64 rng(opts.seed + 1000003ULL * static_cast<std::uint64_t>(r));
    const Matrix centers = detail::kmeans_centroids(sorted, k, rng, opts.kmeans_iterations);
    const Vector x0 = detail::flatten(detail::initial_pseudo_points(centers, family, false_prior, n, rng));
    detail::DescentResult res = detail::gradient_descent(value, gradient, x0, opts.max_iterations, opts.tolerance);
    iterations += res.iterations;
    if (!res.converged) ++unconverged;
    if (!best || res.value < best->value) best = std::move(res);
  }
  std::string warning;
  if (!best->converged)
    warning = "score matching did not converge within " + std::to_string(opts.max_iterations) +
              " iterations; returning best alpha found (objective " + std::to_string(best->value) + ")";
  return {ParametricAlpha(detail::unflatten(best->x, k, p), n, false_prior, family), best->value, iterations,
          best->converged, warning};
}

// ---------------------------------------------------------------------------
// Semiparametric estimate

/// c_b * T_f^{-1/(4+d)}, clamped to (0, 1].
inline double select_bandwidth(std::size_t T_f, Eigen::Index d, double constant = 1.0) {
  if (T_f < 1) throw InvalidInput("T_f must be >= 1");
  if (d < 1) throw InvalidInput("d must be >= 1");
  if (!(constant > 0)) throw InvalidInput("bandwidth constant must be > 0");
  const double b = constant * std::pow(static_cast<double>(T_f), -1.0 / (4.0 + static_cast<double>(d)));
  return std::min(b, 1.0);
}

class SemiparametricRep {
public:
  SemiparametricRep(Matrix samples, double bandwidth, ParametricAlpha base)
      : samples_(std::move(samples)), bandwidth_(bandwidth), base_(std::move(base)) {
    if (samples_.rows() < 1) throw InvalidInput("semiparametric estimate needs at least one sample");
    if (samples_.cols() != base_.dimension()) throw InvalidInput("sample width does not match base dimension");
    if (!(bandwidth_ > 0 && bandwidth_ <= 1.0)) throw InvalidInput("bandwidth must be in (0, 1]");
    base_log_density_.resize(samples_.rows());
    for (Eigen::Index t = 0; t < samples_.rows(); ++t) {
      const double v = base_.log_density(samples_.row(t).transpose()).value;
      if (!std::isfinite(v))
        throw NumericError("base density is not finite and positive at sample " + std::to_string(t));
      base_log_density_[t] = v;
    }
  }

  const Matrix& samples() const { return samples_; }
  double bandwidth() const { return bandwidth_; }
  const ParametricAlpha& base() const { return base_; }
  const Vector& base_log_density() const { return base_log_density_; }
  Eigen::Index dimension() const { return samples_.cols(); }

  /// log[(1/T_f) sum_t K(|theta - theta_t| / b) / p_alpha(theta_t)] and its
  /// gradient, with K the standard Gaussian kernel. -inf when every term
  /// underflows.
  LogDensity log_correction(const Vector& theta) const {
    const Eigen::Index T = samples_.rows(), d = dimension();
    Vector terms(T);
    const double b2 = bandwidth_ * bandwidth_;
    const double kconst = -0.5 * static_cast<double>(d) * kLogTwoPi;
    for (Eigen::Index t = 0; t < T; ++t)
      terms[t] = kconst - 0.5 * (theta - samples_.row(t).transpose()).squaredNorm() / b2 - base_log_density_[t];
    const double lse = log_sum_exp(terms);
    LogDensity out{lse - std::log(static_cast<double>(T)), Vector::Zero(d)};
    if (lse == kNegInf) return out;
    for (Eigen::Index t = 0; t < T; ++t) {
      const double w = std::exp(terms[t] - lse);
      if (w > 0) out.gradient -= w * (theta - samples_.row(t).transpose()) / b2;
    }
    return out;
  }

  /// log p_sp(theta) = log p_alpha(theta) + log correction - d log b.
  double log_density(const Vector& theta) const {
    const double corr = log_correction(theta).value;
    if (corr == kNegInf) return kNegInf;
    return base_.log_density(theta).value + corr - static_cast<double>(dimension()) * std::log(bandwidth_);
  }

private:
  Matrix samples_;
  double bandwidth_;
  ParametricAlpha base_;
  Vector base_log_density_;
};

inline double semiparametric_log_density(const SemiparametricRep& rep, const Vector& theta) {
  require_dimension(theta, rep.dimension(), "theta");
  require_finite(theta, "theta");
  return rep.log_density(theta);
}

using FalsePosteriorRep = std::variant<ExactGaussianPosterior, SampleSet, ParametricAlpha, SemiparametricRep>;

}  // namespace priorswap

#endif  // PRIORSWAP_FALSE_POSTERIOR_HPP
