#ifndef PRIORSWAP_ESTIMATORS_HPP
#define PRIORSWAP_ESTIMATORS_HPP

// Self-normalized importance-sampling estimators, diagnostics, and
// ground-truth oracles (quadrature in low dimension, long chains otherwise).

#include "priorswap/prior_swap.hpp"

#include <functional>

namespace priorswap {

using TestFunction = std::function<Vector(const Vector&)>;

inline TestFunction identity_test_function() {
  return [](const Vector& x) { return x; };
}

/// First `d` coordinates; turns an augmented (theta, log a) state into theta.
inline TestFunction head_test_function(Eigen::Index d) {
  return [d](const Vector& x) -> Vector { return x.head(d); };
}

struct WeightedEstimate {
  Vector estimate;
  Vector weights;      // normalized, sum to one
  Vector log_weights;  // unnormalized, as computed
  double ess = 0.0;
  double max_weight_fraction = 0.0;
  std::string method;
  std::int64_t wall_ns = 0;
};

/// 1 / sum w^2 for normalized weights.
inline double effective_sample_size(const Vector& weights) {
  const Vector sq = weights.array().square();
  const double s = pairwise_sum(sq);
  return s > 0 ? 1.0 / s : 0.0;
}

/// Self-normalized estimate from unnormalized log-weights, max-shifted
/// before exponentiation.
inline WeightedEstimate estimate_from_log_weights(const Matrix& samples, const Vector& log_weights,
                                                  const TestFunction& h, std::string method) {
  const auto start = detail::Clock::now();
  if (samples.rows() == 0) throw InvalidInput("no samples to estimate from");
  if (log_weights.size() != samples.rows()) throw InvalidInput("one log-weight per sample required");
  for (Eigen::Index t = 0; t < log_weights.size(); ++t)
    if (std::isnan(log_weights[t]) || log_weights[t] == std::numeric_limits<double>::infinity())
      throw DegenerateWeights("log-weight " + std::to_string(t) + " is not a number or +inf");
  const double m = log_weights.maxCoeff();
  if (m == kNegInf) throw DegenerateWeights("all importance weights are zero");
  Vector w = (log_weights.array() - m).exp();
  const double total = pairwise_sum(w);
  if (!(total > 0) || !std::isfinite(total)) throw DegenerateWeights("importance weights sum to zero or overflow");
  w /= total;

  Matrix hv;
  for (Eigen::Index t = 0; t < samples.rows(); ++t) {
    const Vector v = h(samples.row(t).transpose());
    if (t == 0) hv.resize(samples.rows(), v.size());
    hv.row(t) = v.transpose();
  }
  WeightedEstimate out;
  out.estimate.resize(hv.cols());
  std::vector<double> buf(static_cast<std::size_t>(samples.rows()));
  for (Eigen::Index c = 0; c < hv.cols(); ++c) {
    for (Eigen::Index t = 0; t < hv.rows(); ++t) buf[static_cast<std::size_t>(t)] = w[t] * hv(t, c);
    out.estimate[c] = pairwise_sum(buf);
  }
  out.ess = effective_sample_size(w);
  out.max_weight_fraction = w.maxCoeff();
  out.weights = std::move(w);
  out.log_weights = log_weights;
  out.method = std::move(method);
  out.wall_ns = detail::elapsed_ns(start);
  return out;
}

/// exp(max - median) of unnormalized log-weights.
inline double max_to_median_weight_ratio(const Vector& log_weights) {
  if (log_weights.size() == 0) throw InvalidInput("empty weights");
  std::vector<double> v(log_weights.data(), log_weights.data() + log_weights.size());
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double median = *mid;
  if (v.size() % 2 == 0) median = 0.5 * (median + *std::max_element(v.begin(), mid));
  return std::exp(log_weights.maxCoeff() - median);
}

namespace detail {

inline double target_prior_log_density(const PriorSpec& p, const Vector& theta) {
  if (const auto* h = std::get_if<HierarchicalNormalGammaPrior>(&p)) return hierarchical_marginal_log_density(*h, theta).value;
  return prior_log_density(p, theta).value;
}

template <class Fn>
WeightedEstimate timed(Fn&& fn) {
  const auto start = Clock::now();
  WeightedEstimate e = fn();
  e.wall_ns = elapsed_ns(start);
  return e;
}

}  // namespace detail

/// IS with false-posterior samples: w ∝ pi / pi_f. A hierarchical target
/// prior is evaluated through its closed-form theta-marginal.
inline WeightedEstimate naive_is_estimate(const Matrix& samples, const PriorSpec& target, const PriorSpec& false_prior,
                                          const TestFunction& h = identity_test_function()) {
  return detail::timed([&] {
    Vector lw(samples.rows());
    for (Eigen::Index t = 0; t < samples.rows(); ++t) {
      const Vector theta = samples.row(t).transpose();
      const double den = prior_log_density(false_prior, theta).value;
      if (den == kNegInf) throw SupportMismatch("false prior is zero at sample " + std::to_string(t));
      lw[t] = detail::target_prior_log_density(target, theta) - den;
    }
    return estimate_from_log_weights(samples, lw, h, "naive-is");
  });
}

/// Prior swap IS: w ∝ [pi_f(theta) L(theta)] / p_alpha(theta). Each weight
/// touches the full dataset. Columns beyond the model dimension (an
/// augmented precision coordinate) are ignored by the weights.
inline WeightedEstimate prior_swap_is_estimate(const Matrix& swap_samples, const LikelihoodModel& model,
                                               const PriorSpec& false_prior, const ParametricAlpha& alpha,
                                               const TestFunction& h = identity_test_function()) {
  return detail::timed([&] {
    const Eigen::Index d = alpha.dimension();
    if (swap_samples.cols() < d) throw InvalidInput("swap samples narrower than the model dimension");
    Vector lw(swap_samples.rows());
    for (Eigen::Index t = 0; t < swap_samples.rows(); ++t) {
      const Vector theta = swap_samples.row(t).head(d).transpose();
      lw[t] = prior_log_density(false_prior, theta).value + likelihood_log_density(model, theta).value -
              alpha.log_density(theta).value;
    }
    return estimate_from_log_weights(swap_samples, lw, h, "prior-swap-is");
  });
}

/// Semiparametric correction: w ∝ (1/T_f) sum_t K(|theta - theta_t|/b) / p_alpha(theta_t).
/// No data access.
inline WeightedEstimate semiparametric_is_estimate(const Matrix& swap_samples, const SemiparametricRep& rep,
                                                   const TestFunction& h = identity_test_function()) {
  return detail::timed([&] {
    const Eigen::Index d = rep.dimension();
    if (swap_samples.cols() < d) throw InvalidInput("swap samples narrower than the model dimension");
    Vector lw(swap_samples.rows());
    for (Eigen::Index t = 0; t < swap_samples.rows(); ++t)
      lw[t] = rep.log_correction(swap_samples.row(t).head(d).transpose()).value;
    return estimate_from_log_weights(swap_samples, lw, h, "prior-swap-semiparametric");
  });
}

/// Euclidean distance between an estimate and a reference expectation.
inline double posterior_error(const Vector& estimate, const Vector& reference) {
  if (estimate.size() != reference.size())
    throw InvalidInput("posterior error: dimension mismatch (" + std::to_string(estimate.size()) + " vs " +
                       std::to_string(reference.size()) + ")");
  return (estimate - reference).norm();
}

struct SampleBound {
  double value;
  double log_value;
  bool vacuous;
};

/// Lower bound on the false-posterior sample count for naive IS to get
/// within delta of mu_h when p_f = N(m, s2):  exp{(|mu_h - m| - delta)^2 / (2 s2)}.
inline SampleBound is_sample_lower_bound(double m, double s2, double mu_h, double delta) {
  if (!(s2 > 0)) throw InvalidInput("s2 must be > 0");
  const double gap = std::abs(mu_h - m);
  if (delta >= gap) return {1.0, 0.0, true};
  const double lv = (gap - delta) * (gap - delta) / (2.0 * s2);
  return {std::exp(lv), lv, false};
}

// ---------------------------------------------------------------------------
// Quadrature oracle

struct QuadratureOptions {
  Eigen::Index initial_intervals = 256;
  Eigen::Index max_intervals_1d = Eigen::Index{1} << 22;
  Eigen::Index max_intervals_2d = 4096;
  double tolerance = 1e-6;
  double boundary_tolerance = 1e-8;
};

struct QuadratureResult {
  Vector expectation;
  double log_normalizer = 0.0;  // log of the integral of exp(log_density)
  Eigen::Index intervals = 0;
  bool converged = false;
};

namespace detail {

inline double simpson_weight(Eigen::Index i, Eigen::Index n) {
  if (i == 0 || i == n) return 1.0;
  return (i % 2) ? 4.0 : 2.0;
}

struct QuadPass {
  Vector moments;  // integral of f h (shifted)
  double mass;     // integral of f (shifted)
  double shift;
  double boundary;  // max shifted density on the boundary times the domain measure
};

inline QuadPass quadrature_pass(const std::function<double(const Vector&)>& log_density, const TestFunction& h,
                                const Vector& lo, const Vector& hi, Eigen::Index n) {
  const Eigen::Index dim = lo.size();
  const Eigen::Index pts = n + 1;
  const Eigen::Index total = dim == 1 ? pts : pts * pts;
  Vector lv(total);
  const Vector step = (hi - lo) / static_cast<double>(n);
  Vector x(dim);
  auto node = [&](Eigen::Index idx) {
    if (dim == 1) {
      x[0] = lo[0] + step[0] * static_cast<double>(idx);
    } else {
      x[0] = lo[0] + step[0] * static_cast<double>(idx / pts);
      x[1] = lo[1] + step[1] * static_cast<double>(idx % pts);
    }
    return x;
  };
  for (Eigen::Index idx = 0; idx < total; ++idx) {
    const double v = log_density(node(idx));
    lv[idx] = std::isnan(v) ? kNegInf : v;
  }
  const double m = lv.maxCoeff();
  if (!std::isfinite(m)) throw NumericError("quadrature: density is zero or infinite on the whole grid");
  QuadPass out{Vector(), 0.0, m, 0.0};
  const double cell = step.prod() / std::pow(3.0, static_cast<double>(dim));
  std::vector<double> mass_terms(static_cast<std::size_t>(total));
  std::vector<std::vector<double>> moment_terms;
  double boundary_max = 0.0;
  for (Eigen::Index idx = 0; idx < total; ++idx) {
    const double f = std::exp(lv[idx] - m);
    double w;
    bool on_boundary;
    if (dim == 1) {
      w = simpson_weight(idx, n);
      on_boundary = idx == 0 || idx == n;
    } else {
      const Eigen::Index i = idx / pts, j = idx % pts;
      w = simpson_weight(i, n) * simpson_weight(j, n);
      on_boundary = i == 0 || i == n || j == 0 || j == n;
    }
    if (on_boundary) boundary_max = std::max(boundary_max, f);
    mass_terms[static_cast<std::size_t>(idx)] = w * f * cell;
    if (f > 0) {
      const Vector hv = h(node(idx));
      if (moment_terms.empty()) moment_terms.assign(static_cast<std::size_t>(hv.size()), std::vector<double>(static_cast<std::size_t>(total), 0.0));
      for (Eigen::Index c = 0; c < hv.size(); ++c)
        moment_terms[static_cast<std::size_t>(c)][static_cast<std::size_t>(idx)] = w * f * cell * hv[c];
    }
  }
  out.mass = pairwise_sum(mass_terms);
  out.moments.resize(static_cast<Eigen::Index>(moment_terms.size()));
  for (std::size_t c = 0; c < moment_terms.size(); ++c) out.moments[static_cast<Eigen::Index>(c)] = pairwise_sum(moment_terms[c]);
  out.boundary = boundary_max * (hi - lo).prod();
  return out;
}

}  // namespace detail

/// Normalized expectation of h under exp(log_density) on a 1-d or 2-d box,
/// by composite Simpson refinement (interval count doubles) until successive
/// passes agree to `tolerance` (relative, floored at 1).
inline QuadratureResult quadrature_oracle(const std::function<double(const Vector&)>& log_density,
                                          const TestFunction& h, const Vector& lower, const Vector& upper,
                                          const QuadratureOptions& opts = {}) {
  const Eigen::Index dim = lower.size();
  if (dim < 1 || dim > 2) throw InvalidInput("quadrature oracle supports d = 1 or 2");
  require_dimension(upper, dim, "upper bound");
  if (!((upper - lower).array() > 0).all()) throw InvalidInput("quadrature bounds must satisfy lower < upper");
  const Eigen::Index cap = dim == 1 ? opts.max_intervals_1d : opts.max_intervals_2d;
  Eigen::Index n = std::max<Eigen::Index>(2, opts.initial_intervals + (opts.initial_intervals % 2));
  QuadratureResult res;
  std::optional<Vector> prev;
  double prev_logz = 0.0;
  for (;;) {
    const detail::QuadPass pass = detail::quadrature_pass(log_density, h, lower, upper, n);
    if (!(pass.mass > 0)) throw NumericError("quadrature: zero mass");
    if (pass.boundary > opts.boundary_tolerance * pass.mass)
      throw BoundsTooTight("quadrature: density at the boundary is not negligible (ratio " +
                           std::to_string(pass.boundary / pass.mass) + ")");
    const Vector e = pass.moments / pass.mass;
    const double logz = pass.shift + std::log(pass.mass);
    res.expectation = e;
    res.log_normalizer = logz;
    res.intervals = n;
    if (prev) {
      bool ok = std::abs(logz - prev_logz) <= opts.tolerance * std::max(1.0, std::abs(logz));
      for (Eigen::Index c = 0; c < e.size(); ++c)
        ok = ok && std::abs(e[c] - (*prev)[c]) <= opts.tolerance * std::max(1.0, std::abs(e[c]));
      if (ok) {
        res.converged = true;
        return res;
      }
    }
    if (2 * n > cap) return res;
    prev = e;
    prev_logz = logz;
    n *= 2;
  }
}

// ---------------------------------------------------------------------------
// Long-chain ground truth

struct GroundTruthConfig {
  std::size_t steps = 1000000;
  double burn_in = 0.25;
  SamplerSettings::Kind kind = SamplerSettings::Kind::Mh;
  int leapfrog_steps = 10;
  std::uint64_t seed = 0;
  std::optional<Vector> init;
};

struct GroundTruth {
  Vector mean;
  Vector standard_error;
  std::string settings;
  double acceptance = 0.0;
};

/// One long tuned chain on the target posterior pi(theta) L(theta). For a
/// hierarchical prior the last coordinate is log precision.
inline GroundTruth long_chain_ground_truth(const LikelihoodModel& model, const PriorSpec& prior,
                                           const GroundTruthConfig& cfg = {}) {
  const TargetDensity target = posterior_target(model, prior);
  Vector init = cfg.init.value_or(Vector::Zero(target.dimension));
  SamplerSettings s;
  s.kind = cfg.kind == SamplerSettings::Kind::Hmc ? SamplerSettings::Kind::Hmc : SamplerSettings::Kind::Mh;
  s.samples = static_cast<std::size_t>(std::llround(static_cast<double>(cfg.steps) * (1.0 - cfg.burn_in)));
  s.burn_in = cfg.burn_in;
  s.leapfrog_steps = cfg.leapfrog_steps;
  s.seed = cfg.seed;
  const Chain chain = run_tuned_chain(target, s, init);
  const ChainSummary sum = chain_summary(chain, cfg.burn_in);
  const Matrix kept = chain.samples.bottomRows(sum.retained);
  return {sum.mean, batch_means_standard_error(kept), chain.config, chain.acceptance_rate()};
}

}  // namespace priorswap

#endif  // PRIORSWAP_ESTIMATORS_HPP
