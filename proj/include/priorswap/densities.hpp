#ifndef PRIORSWAP_DENSITIES_HPP
#define PRIORSWAP_DENSITIES_HPP

// Priors, likelihood models, and synthetic data.
//
// Every prior returns a normalized log-density and its gradient. Points where
// the density has a kink (Laplace at its location, VerySparse at zero) use
// a zero subgradient.

#include "priorswap/core.hpp"

#include <optional>
#include <random>
#include <string>
#include <variant>

namespace priorswap {

struct NormalPrior {
  Vector mean;
  Matrix covariance;

  NormalPrior(Vector mean_, Matrix covariance_) : mean(std::move(mean_)), covariance(std::move(covariance_)) {
    if (covariance.rows() != mean.size() || covariance.cols() != mean.size())
      throw InvalidInput("normal prior covariance shape does not match mean");
    require_finite(mean, "normal prior mean");
    Eigen::LLT<Matrix> llt(covariance);
    if (llt.info() != Eigen::Success || !(covariance - covariance.transpose()).isZero(1e-12))
      throw InvalidInput("normal prior covariance must be symmetric positive-definite");
    precision = llt.solve(Matrix::Identity(mean.size(), mean.size()));
    precision = 0.5 * (precision + precision.transpose());
    const Matrix l = llt.matrixL();
    log_normalizer = -0.5 * static_cast<double>(mean.size()) * kLogTwoPi - l.diagonal().array().log().sum();
  }

  static NormalPrior isotropic(Eigen::Index d, double mean, double variance) {
    if (!(variance > 0)) throw InvalidInput("normal prior variance must be > 0");
    return NormalPrior(Vector::Constant(d, mean), Matrix::Identity(d, d) * variance);
  }

  Eigen::Index dimension() const { return mean.size(); }

  Matrix precision;
  double log_normalizer = 0.0;
};

struct LaplacePrior {
  Vector location;
  double scale;

  LaplacePrior(Vector location_, double scale_) : location(std::move(location_)), scale(scale_) {
    if (!(scale > 0) || !std::isfinite(scale)) throw InvalidInput("laplace scale must be > 0");
    require_finite(location, "laplace location");
  }
  static LaplacePrior iid(Eigen::Index d, double location, double scale) {
    return LaplacePrior(Vector::Constant(d, location), scale);
  }
  Eigen::Index dimension() const { return location.size(); }
};

struct StudentTPrior {
  Vector location;
  double scale = 1.0;
  double dof = 3.0;

  StudentTPrior(Vector location_, double scale_ = 1.0, double dof_ = 3.0)
      : location(std::move(location_)), scale(scale_), dof(dof_) {
    if (!(scale > 0) || !std::isfinite(scale)) throw InvalidInput("student-t scale must be > 0");
    if (!(dof > 0) || !std::isfinite(dof)) throw InvalidInput("student-t dof must be > 0");
    require_finite(location, "student-t location");
  }
  static StudentTPrior iid(Eigen::Index d, double location, double scale = 1.0, double dof = 3.0) {
    return StudentTPrior(Vector::Constant(d, location), scale, dof);
  }
  Eigen::Index dimension() const { return location.size(); }
};

/// prod_i exp(-|theta_i|^0.4 / scale), normalized.
struct VerySparsePrior {
  static constexpr double kPower = 0.4;
  Eigen::Index d;
  double scale;

  VerySparsePrior(Eigen::Index d_, double scale_) : d(d_), scale(scale_) {
    if (d < 1) throw InvalidInput("very-sparse prior dimension must be >= 1");
    if (!(scale > 0) || !std::isfinite(scale)) throw InvalidInput("very-sparse scale must be > 0");
  }
  Eigen::Index dimension() const { return d; }

  /// log of the per-coordinate normalizer 2 * scale^{1/p} * Gamma(1 + 1/p).
  double log_normalizer_1d() const {
    return std::log(2.0) + std::log(scale) / kPower + std::lgamma(1.0 + 1.0 / kPower);
  }
};

/// Prior over the augmented state (theta, precision):
/// theta | precision ~ N(0, precision^{-1} I), precision ~ Gamma(shape, rate 1).
/// The last coordinate of the evaluated vector is the precision itself.
struct HierarchicalNormalGammaPrior {
  Eigen::Index d;
  double shape;

  HierarchicalNormalGammaPrior(Eigen::Index d_, double shape_) : d(d_), shape(shape_) {
    if (d < 1) throw InvalidInput("hierarchical prior dimension must be >= 1");
    if (!(shape > 0) || !std::isfinite(shape)) throw InvalidInput("gamma shape must be > 0");
  }
  /// Dimension of theta (the augmented state has one more coordinate).
  Eigen::Index dimension() const { return d; }
};

using PriorSpec = std::variant<NormalPrior, LaplacePrior, StudentTPrior, VerySparsePrior, HierarchicalNormalGammaPrior>;

inline Eigen::Index prior_dimension(const PriorSpec& p) {
  return std::visit([](const auto& q) { return q.dimension(); }, p);
}

inline bool is_hierarchical(const PriorSpec& p) { return std::holds_alternative<HierarchicalNormalGammaPrior>(p); }

inline std::string prior_name(const PriorSpec& p) {
  struct V {
    std::string operator()(const NormalPrior&) const { return "normal"; }
    std::string operator()(const LaplacePrior&) const { return "laplace"; }
    std::string operator()(const StudentTPrior&) const { return "student_t"; }
    std::string operator()(const VerySparsePrior&) const { return "very_sparse"; }
    std::string operator()(const HierarchicalNormalGammaPrior&) const { return "hierarchical"; }
  };
  return std::visit(V{}, p);
}

namespace detail {

inline Eigen::Index evaluated_dimension(const PriorSpec& p) {
  return is_hierarchical(p) ? prior_dimension(p) + 1 : prior_dimension(p);
}

struct PriorEval {
  const Vector& theta;
  bool want_hessian;
  Vector* hessian_diag;

  LogDensity operator()(const NormalPrior& p) const {
    const Vector diff = theta - p.mean;
    const Vector pd = p.precision * diff;
    if (want_hessian) *hessian_diag = -p.precision.diagonal();
    return {p.log_normalizer - 0.5 * diff.dot(pd), -pd};
  }

  LogDensity operator()(const LaplacePrior& p) const {
    LogDensity out{0.0, Vector(theta.size())};
    const double lognorm = -std::log(2.0 * p.scale);
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      const double z = theta[i] - p.location[i];
      out.value += lognorm - std::abs(z) / p.scale;
      out.gradient[i] = -sign_or_zero(z) / p.scale;
    }
    if (want_hessian) *hessian_diag = Vector::Zero(theta.size());
    return out;
  }

  LogDensity operator()(const StudentTPrior& p) const {
    const double nu = p.dof, s = p.scale;
    const double lognorm =
        std::lgamma(0.5 * (nu + 1)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * std::numbers::pi) - std::log(s);
    LogDensity out{0.0, Vector(theta.size())};
    if (want_hessian) hessian_diag->resize(theta.size());
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      const double z = (theta[i] - p.location[i]) / s;
      const double q = nu + z * z;
      out.value += lognorm - 0.5 * (nu + 1) * std::log1p(z * z / nu);
      out.gradient[i] = -(nu + 1) * z / (s * q);
      if (want_hessian) (*hessian_diag)[i] = -(nu + 1) * (nu - z * z) / (s * s * q * q);
    }
    return out;
  }

  LogDensity operator()(const VerySparsePrior& p) const {
    constexpr double a = VerySparsePrior::kPower;
    LogDensity out{-static_cast<double>(theta.size()) * p.log_normalizer_1d(), Vector(theta.size())};
    if (want_hessian) hessian_diag->resize(theta.size());
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      const double x = std::abs(theta[i]);
      out.value -= std::pow(x, a) / p.scale;
      if (x == 0.0) {
        out.gradient[i] = 0.0;
        if (want_hessian) (*hessian_diag)[i] = 0.0;
      } else {
        out.gradient[i] = -a * std::pow(x, a - 1) * sign_or_zero(theta[i]) / p.scale;
        if (want_hessian) (*hessian_diag)[i] = a * (1 - a) * std::pow(x, a - 2) / p.scale;
      }
    }
    return out;
  }

  LogDensity operator()(const HierarchicalNormalGammaPrior& p) const {
    const Eigen::Index d = p.d;
    const double prec = theta[d];
    LogDensity out{0.0, Vector::Zero(d + 1)};
    if (want_hessian) hessian_diag->setZero(d + 1);
    if (!(prec > 0)) {
      out.value = kNegInf;
      return out;
    }
    const auto th = theta.head(d);
    const double sq = th.squaredNorm();
    const double dd = static_cast<double>(d);
    out.value = 0.5 * dd * (std::log(prec) - kLogTwoPi) - 0.5 * prec * sq + (p.shape - 1) * std::log(prec) - prec -
                std::lgamma(p.shape);
    out.gradient.head(d) = -prec * th;
    out.gradient[d] = 0.5 * dd / prec - 0.5 * sq + (p.shape - 1) / prec - 1.0;
    if (want_hessian) {
      hessian_diag->head(d).setConstant(-prec);
      (*hessian_diag)[d] = -(0.5 * dd + p.shape - 1) / (prec * prec);
    }
    return out;
  }
};

}  // namespace detail

/// Normalized log pi(theta) and its gradient. For the hierarchical prior the
/// input is the augmented state (theta, precision).
inline LogDensity prior_log_density(const PriorSpec& prior, const Vector& theta) {
  require_dimension(theta, detail::evaluated_dimension(prior), "theta");
  require_finite(theta, "theta");
  return std::visit(detail::PriorEval{theta, false, nullptr}, prior);
}

/// Diagonal of the Hessian of log pi, same conventions as prior_log_density.
inline Vector prior_hessian_diagonal(const PriorSpec& prior, const Vector& theta) {
  require_dimension(theta, detail::evaluated_dimension(prior), "theta");
  require_finite(theta, "theta");
  Vector h;
  std::visit(detail::PriorEval{theta, true, &h}, prior);
  return h;
}

/// Marginal of the hierarchical prior over theta with the precision
/// integrated out (a multivariate Student-type density).
inline LogDensity hierarchical_marginal_log_density(const HierarchicalNormalGammaPrior& p, const Vector& theta) {
  require_dimension(theta, p.d, "theta");
  require_finite(theta, "theta");
  const double dd = static_cast<double>(p.d);
  const double a = 0.5 * dd + p.shape;
  const double base = 1.0 + 0.5 * theta.squaredNorm();
  return {std::lgamma(a) - std::lgamma(p.shape) - 0.5 * dd * kLogTwoPi - a * std::log(base), -a * theta / base};
}

// ---------------------------------------------------------------------------
// Likelihood models

enum class ModelTag { LinearRegression, LogisticRegression, NormalMean };

inline std::string model_tag_name(ModelTag t) {
  switch (t) {
    case ModelTag::LinearRegression: return "linear";
    case ModelTag::LogisticRegression: return "logistic";
    case ModelTag::NormalMean: return "normal_mean";
  }
  return "unknown";
}

inline ModelTag parse_model_tag(const std::string& s) {
  if (s == "linear" || s == "linear_regression") return ModelTag::LinearRegression;
  if (s == "logistic" || s == "logistic_regression") return ModelTag::LogisticRegression;
  if (s == "normal_mean") return ModelTag::NormalMean;
  throw InvalidInput("unknown model tag '" + s + "'");
}

struct LinearRegression {
  Matrix X;
  Vector y;
  double noise_variance = 1.0;

  LinearRegression(Matrix X_, Vector y_, double noise_variance_)
      : X(std::move(X_)), y(std::move(y_)), noise_variance(noise_variance_) {
    if (X.rows() != y.size()) throw InvalidInput("design matrix row count does not match response length");
    if (!(noise_variance > 0)) throw InvalidInput("noise variance must be > 0");
  }
};

struct LogisticRegression {
  Matrix X;
  Vector y;

  LogisticRegression(Matrix X_, Vector y_) : X(std::move(X_)), y(std::move(y_)) {
    if (X.rows() != y.size()) throw InvalidInput("design matrix row count does not match label length");
    for (Eigen::Index i = 0; i < y.size(); ++i)
      if (y[i] != 0.0 && y[i] != 1.0) throw InvalidInput("logistic labels must be 0 or 1");
  }
};

/// Observations x_i ~ N(theta, I); rows of `observations` are the x_i.
struct NormalMean {
  Matrix observations;
  Eigen::Index d;

  NormalMean(Matrix obs, Eigen::Index d_) : observations(std::move(obs)), d(d_) {
    if (d < 1) throw InvalidInput("normal-mean dimension must be >= 1");
    if (observations.rows() > 0 && observations.cols() != d)
      throw InvalidInput("normal-mean observation width does not match dimension");
    if (observations.rows() == 0) observations.resize(0, d);
  }
};

using LikelihoodModel = std::variant<LinearRegression, LogisticRegression, NormalMean>;

inline ModelTag model_tag(const LikelihoodModel& m) {
  struct V {
    ModelTag operator()(const LinearRegression&) const { return ModelTag::LinearRegression; }
    ModelTag operator()(const LogisticRegression&) const { return ModelTag::LogisticRegression; }
    ModelTag operator()(const NormalMean&) const { return ModelTag::NormalMean; }
  };
  return std::visit(V{}, m);
}

inline Eigen::Index model_size(const LikelihoodModel& m) {
  struct V {
    Eigen::Index operator()(const LinearRegression& x) const { return x.X.rows(); }
    Eigen::Index operator()(const LogisticRegression& x) const { return x.X.rows(); }
    Eigen::Index operator()(const NormalMean& x) const { return x.observations.rows(); }
  };
  return std::visit(V{}, m);
}

inline Eigen::Index model_dimension(const LikelihoodModel& m) {
  struct V {
    Eigen::Index operator()(const LinearRegression& x) const { return x.X.cols(); }
    Eigen::Index operator()(const LogisticRegression& x) const { return x.X.cols(); }
    Eigen::Index operator()(const NormalMean& x) const { return x.d; }
  };
  return std::visit(V{}, m);
}

/// The per-point conditional family p(x | theta), without any data attached.
struct ModelFamily {
  ModelTag tag = ModelTag::NormalMean;
  Eigen::Index d = 1;
  double noise_variance = 1.0;

  /// Width p of a data point: features plus response for regressions.
  Eigen::Index data_dimension() const { return tag == ModelTag::NormalMean ? d : d + 1; }
};

inline ModelFamily model_family(const LikelihoodModel& m) {
  ModelFamily f{model_tag(m), model_dimension(m), 1.0};
  if (auto* lin = std::get_if<LinearRegression>(&m)) f.noise_variance = lin->noise_variance;
  return f;
}

/// Value, theta-gradient, and theta-Hessian diagonal of log p(point | theta).
struct PointTerms {
  double value = 0.0;
  Vector gradient;
  Vector hessian_diag;
};

/// log p(point | theta) for one data-space point. Regression points are
/// (features..., response). For logistic regression the response may be any
/// real number: y*eta - log(1 + e^eta) is used, which reduces to the
/// Bernoulli log-likelihood for y in {0,1}.
inline PointTerms point_log_density(const ModelFamily& f, const Eigen::Ref<const Vector>& point, const Vector& theta,
                                    bool with_hessian = true) {
  PointTerms t;
  switch (f.tag) {
    case ModelTag::NormalMean: {
      const Vector r = point - theta;
      t.value = -0.5 * static_cast<double>(f.d) * kLogTwoPi - 0.5 * r.squaredNorm();
      t.gradient = r;
      if (with_hessian) t.hessian_diag = Vector::Constant(f.d, -1.0);
      break;
    }
    case ModelTag::LinearRegression: {
      const auto x = point.head(f.d);
      const double resid = point[f.d] - x.dot(theta);
      t.value = -0.5 * (kLogTwoPi + std::log(f.noise_variance)) - 0.5 * resid * resid / f.noise_variance;
      t.gradient = x * (resid / f.noise_variance);
      if (with_hessian) t.hessian_diag = -x.array().square().matrix() / f.noise_variance;
      break;
    }
    case ModelTag::LogisticRegression: {
      const auto x = point.head(f.d);
      const double y = point[f.d];
      const double eta = x.dot(theta);
      const double p = logistic(eta);
      t.value = y * eta + log_logistic(-eta);
      t.gradient = x * (y - p);
      if (with_hessian) t.hessian_diag = -(p * (1 - p)) * x.array().square().matrix();
      break;
    }
  }
  return t;
}

/// Sum over the dataset of log p(x_i | theta) and its gradient. Theta(n d).
inline LogDensity likelihood_log_density(const LikelihoodModel& model, const Vector& theta) {
  require_dimension(theta, model_dimension(model), "theta");
  require_finite(theta, "theta");
  struct V {
    const Vector& theta;
    LogDensity operator()(const LinearRegression& m) const {
      const Vector resid = m.y - m.X * theta;
      const double n = static_cast<double>(m.y.size());
      return {-0.5 * n * (kLogTwoPi + std::log(m.noise_variance)) - 0.5 * resid.squaredNorm() / m.noise_variance,
              m.X.transpose() * resid / m.noise_variance};
    }
    LogDensity operator()(const LogisticRegression& m) const {
      const Vector eta = m.X * theta;
      Vector resid(eta.size());
      double value = 0.0;
      for (Eigen::Index i = 0; i < eta.size(); ++i) {
        value += m.y[i] * eta[i] + log_logistic(-eta[i]);
        resid[i] = m.y[i] - logistic(eta[i]);
      }
      return {value, m.X.transpose() * resid};
    }
    LogDensity operator()(const NormalMean& m) const {
      const double n = static_cast<double>(m.observations.rows());
      const double dd = static_cast<double>(m.d);
      Vector grad = Vector::Zero(m.d);
      double sq = 0.0;
      for (Eigen::Index i = 0; i < m.observations.rows(); ++i) {
        const Vector r = m.observations.row(i).transpose() - theta;
        grad += r;
        sq += r.squaredNorm();
      }
      return {-0.5 * n * dd * kLogTwoPi - 0.5 * sq, grad};
    }
  };
  return std::visit(V{theta}, model);
}

/// Row i of the model as a data-space point (features..., response).
inline Vector data_point(const LikelihoodModel& model, Eigen::Index i) {
  struct V {
    Eigen::Index i;
    Vector operator()(const LinearRegression& m) const {
      Vector p(m.X.cols() + 1);
      p << m.X.row(i).transpose(), m.y[i];
      return p;
    }
    Vector operator()(const LogisticRegression& m) const {
      Vector p(m.X.cols() + 1);
      p << m.X.row(i).transpose(), m.y[i];
      return p;
    }
    Vector operator()(const NormalMean& m) const { return m.observations.row(i).transpose(); }
  };
  return std::visit(V{i}, model);
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticOptions {
  double noise_variance = 1.0;
  /// NormalMean only: shift the draws so the observations sum to exactly this.
  std::optional<Vector> forced_sum;
};

inline LikelihoodModel generate_synthetic(ModelTag tag, Eigen::Index n, Eigen::Index d, const Vector& theta_true,
                                          std::uint64_t seed, const SyntheticOptions& opts = {}) {
  if (n < 0) throw InvalidInput("n must be >= 0");
  if (d < 1) throw InvalidInput("d must be >= 1");
  require_dimension(theta_true, d, "theta_true");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  switch (tag) {
    case ModelTag::LinearRegression: {
      Matrix X(n, d);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) X(i, j) = normal(rng);
      Vector y = X * theta_true;
      const double sd = std::sqrt(opts.noise_variance);
      for (Eigen::Index i = 0; i < n; ++i) y[i] += sd * normal(rng);
      return LinearRegression(std::move(X), std::move(y), opts.noise_variance);
    }
    case ModelTag::LogisticRegression: {
      Matrix X(n, d);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) X(i, j) = normal(rng);
      Vector y(n);
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      for (Eigen::Index i = 0; i < n; ++i) y[i] = unif(rng) < logistic(X.row(i).dot(theta_true)) ? 1.0 : 0.0;
      return LogisticRegression(std::move(X), std::move(y));
    }
    case ModelTag::NormalMean: {
      Matrix obs(n, d);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) obs(i, j) = theta_true[j] + normal(rng);
      if (opts.forced_sum) {
        require_dimension(*opts.forced_sum, d, "forced sum");
        if (n == 0) throw InvalidInput("cannot force the sum of an empty dataset");
        const Vector shift = (*opts.forced_sum - obs.colwise().sum().transpose()) / static_cast<double>(n);
        obs.rowwise() += shift.transpose();
      }
      return NormalMean(std::move(obs), d);
    }
  }
  throw InvalidInput("unknown model tag");
}

}  // namespace priorswap

#endif  // PRIORSWAP_DENSITIES_HPP
