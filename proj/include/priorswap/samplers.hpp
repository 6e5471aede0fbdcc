#ifndef PRIORSWAP_SAMPLERS_HPP
#define PRIORSWAP_SAMPLERS_HPP

// Metropolis-Hastings and Hamiltonian Monte Carlo over an arbitrary
// unnormalized log-density. Langevin dynamics is HMC with one leapfrog step.

#include "priorswap/core.hpp"

#include <chrono>
#include <functional>
#include <random>
#include <string>

namespace priorswap {

/// Unnormalized log-density with an optional gradient evaluator.
struct TargetDensity {
  Eigen::Index dimension = 0;
  std::function<double(const Vector&)> log_density;
  std::function<LogDensity(const Vector&)> with_gradient;

  bool has_gradient() const { return static_cast<bool>(with_gradient); }
};

struct Chain {
  Matrix samples;                     // T x d, one row per step
  std::vector<std::uint8_t> accepted;  // per step
  std::vector<std::int64_t> wall_ns;   // nanoseconds since the chain started, per step
  std::uint64_t seed = 0;
  std::string config;
  std::size_t divergences = 0;

  Eigen::Index length() const { return samples.rows(); }
  Eigen::Index dimension() const { return samples.cols(); }
  double acceptance_rate() const {
    if (accepted.empty()) return 0.0;
    std::size_t a = 0;
    for (auto v : accepted) a += v;
    return static_cast<double>(a) / static_cast<double>(accepted.size());
  }
};

struct MhConfig {
  Vector proposal_stddev;  // one entry per dimension, or a single entry broadcast
  std::size_t steps = 1000;
  Vector init;
  std::uint64_t seed = 0;
};

struct HmcConfig {
  double step_size = 0.1;
  int leapfrog_steps = 10;
  std::size_t steps = 1000;
  Vector init;
  std::uint64_t seed = 0;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline std::int64_t elapsed_ns(Clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - start).count();
}

inline double safe_log_density(const TargetDensity& target, const Vector& x) {
  if (!x.allFinite()) return kNegInf;
  const double v = target.log_density(x);
  return std::isnan(v) ? kNegInf : v;
}

}  // namespace detail

inline Chain mh_sample(const TargetDensity& target, const MhConfig& cfg) {
  const Eigen::Index d = target.dimension;
  require_dimension(cfg.init, d, "MH init");
  Vector stddev = cfg.proposal_stddev.size() == 1 ? Vector::Constant(d, cfg.proposal_stddev[0]) : cfg.proposal_stddev;
  require_dimension(stddev, d, "MH proposal stddev");
  if ((stddev.array() < 0).any() || !stddev.allFinite()) throw InvalidInput("MH proposal stddev must be >= 0");

  Vector current = cfg.init;
  double current_lp = detail::safe_log_density(target, current);
  if (!std::isfinite(current_lp))
    throw InvalidInput("invalid start: target is not finite at MH init " + format_vector(current));

  Chain chain;
  chain.seed = cfg.seed;
  chain.config = "mh steps=" + std::to_string(cfg.steps) + " stddev=" + format_vector(stddev);
  chain.samples.resize(static_cast<Eigen::Index>(cfg.steps), d);
  chain.accepted.resize(cfg.steps);
  chain.wall_ns.resize(cfg.steps);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vector proposal(d);
  const auto start = detail::Clock::now();
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    for (Eigen::Index i = 0; i < d; ++i) proposal[i] = current[i] + stddev[i] * normal(rng);
    const double lp = detail::safe_log_density(target, proposal);
    const double u = unif(rng);
    bool accept = false;
    if (std::isfinite(lp)) {
      const double log_ratio = lp - current_lp;
      accept = log_ratio >= 0 || std::log(u) < log_ratio;
    }
    if (accept) {
      current = proposal;
      current_lp = lp;
    }
    chain.samples.row(static_cast<Eigen::Index>(t)) = current.transpose();
    chain.accepted[t] = accept;
    chain.wall_ns[t] = detail::elapsed_ns(start);
  }
  return chain;
}

/// In-place leapfrog trajectory: half momentum step, L position steps with
/// full momentum steps between them, closing half momentum step. Returns
/// false if a non-finite gradient or position is met.
inline bool leapfrog(const std::function<LogDensity(const Vector&)>& grad_fn, Vector& position, Vector& momentum,
                     double step_size, int steps, LogDensity* final_eval = nullptr) {
  LogDensity g = grad_fn(position);
  if (!g.gradient.allFinite()) return false;
  momentum += 0.5 * step_size * g.gradient;
  for (int l = 1; l <= steps; ++l) {
    position += step_size * momentum;
    if (!position.allFinite()) return false;
    g = grad_fn(position);
    if (!g.gradient.allFinite() || std::isnan(g.value)) return false;
    momentum += (l == steps ? 0.5 : 1.0) * step_size * g.gradient;
  }
  if (final_eval) *final_eval = std::move(g);
  return true;
}

inline Chain hmc_sample(const TargetDensity& target, const HmcConfig& cfg) {
  if (!target.has_gradient()) throw InvalidInput("HMC requires a target with a gradient");
  if (!(cfg.step_size >= 0) || cfg.leapfrog_steps < 1) throw InvalidInput("HMC needs step size >= 0 and L >= 1");
  const Eigen::Index d = target.dimension;
  require_dimension(cfg.init, d, "HMC init");

  Vector current = cfg.init;
  LogDensity current_eval = target.with_gradient(current);
  if (!std::isfinite(current_eval.value) || !current_eval.gradient.allFinite())
    throw InvalidInput("invalid start: target is not finite at HMC init " + format_vector(current));

  Chain chain;
  chain.seed = cfg.seed;
  chain.config = "hmc steps=" + std::to_string(cfg.steps) + " eps=" + std::to_string(cfg.step_size) +
                 " L=" + std::to_string(cfg.leapfrog_steps);
  chain.samples.resize(static_cast<Eigen::Index>(cfg.steps), d);
  chain.accepted.resize(cfg.steps);
  chain.wall_ns.resize(cfg.steps);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vector momentum(d), position(d);
  const auto start = detail::Clock::now();
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    for (Eigen::Index i = 0; i < d; ++i) momentum[i] = normal(rng);
    const double h0 = -current_eval.value + 0.5 * momentum.squaredNorm();
    position = current;
    LogDensity end;
    const bool ok = leapfrog(target.with_gradient, position, momentum, cfg.step_size, cfg.leapfrog_steps, &end);
    const double u = unif(rng);
    bool accept = false;
    if (!ok || !std::isfinite(end.value)) {
      if (!ok) ++chain.divergences;
    } else {
      // Standard Hamiltonian ratio exp(-H(end) + H(start)).
      const double log_ratio = h0 - (-end.value + 0.5 * momentum.squaredNorm());
      accept = log_ratio >= 0 || std::log(u) < log_ratio;
    }
    if (accept) {
      current = position;
      current_eval = std::move(end);
    }
    chain.samples.row(static_cast<Eigen::Index>(t)) = current.transpose();
    chain.accepted[t] = accept;
    chain.wall_ns[t] = detail::elapsed_ns(start);
  }
  return chain;
}

// ---------------------------------------------------------------------------
// Tuning. Warmup draws are discarded; the returned state seeds the real run.

struct MhTuning {
  Vector stddev;
  Vector state;
};

/// Pilot runs that rescale a per-dimension proposal until acceptance is
/// moderate, then set stddev = 2.4 * s_hat / sqrt(d) from the last pilot.
inline MhTuning tune_mh(const TargetDensity& target, const Vector& init, std::uint64_t seed,
                        std::size_t pilot_steps = 2000, int rounds = 8, double initial_stddev = 0.1) {
  const Eigen::Index d = target.dimension;
  Vector stddev = Vector::Constant(d, initial_stddev);
  Vector state = init;
  const double dscale = 2.4 / std::sqrt(static_cast<double>(d));
  for (int r = 0; r < rounds; ++r) {
    Chain pilot = mh_sample(target, {stddev, pilot_steps, state, seed + 7919 * static_cast<std::uint64_t>(r + 1)});
    state = pilot.samples.row(pilot.length() - 1).transpose();
    const double acc = pilot.acceptance_rate();
    const Eigen::Index keep_from = pilot.length() / 2;
    const Matrix tail = pilot.samples.bottomRows(pilot.length() - keep_from);
    const Vector mean = tail.colwise().mean().transpose();
    Vector sd = ((tail.rowwise() - mean.transpose()).array().square().colwise().sum() /
                 std::max<double>(1.0, static_cast<double>(tail.rows() - 1)))
                    .sqrt()
                    .transpose();
    if (acc < 0.05) {
      stddev *= 0.25;
    } else if (acc > 0.7) {
      stddev *= 3.0;
    } else {
      for (Eigen::Index i = 0; i < d; ++i)
        stddev[i] = sd[i] > 0 ? dscale * sd[i] : stddev[i];
      if (acc > 0.15 && acc < 0.5 && r >= 2) break;
    }
  }
  return {stddev, state};
}

struct HmcTuning {
  double step_size;
  Vector state;
};

/// Doubles/halves the step size in 50-step blocks until block acceptance
/// lands in [0.6, 0.9]; 500 warmup steps in total.
inline HmcTuning tune_hmc(const TargetDensity& target, const Vector& init, int leapfrog_steps, std::uint64_t seed,
                          double initial_step = 0.1, std::size_t warmup = 500) {
  double eps = initial_step;
  Vector state = init;
  const std::size_t block = 50;
  for (std::size_t done = 0, b = 0; done < warmup; done += block, ++b) {
    Chain c = hmc_sample(target, {eps, leapfrog_steps, block, state, seed + 104729 * (b + 1)});
    state = c.samples.row(c.length() - 1).transpose();
    const double acc = c.acceptance_rate();
    if (acc < 0.6) eps *= 0.5;
    else if (acc > 0.9) eps *= 2.0;
  }
  return {eps, state};
}

struct ChainSummary {
  Vector mean;
  Vector variance;
  Eigen::Index retained = 0;
};

/// Moments over the rows left after dropping the first floor(burn_in * T).
inline ChainSummary chain_summary(const Matrix& samples, double burn_in_fraction = 0.25) {
  if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0)) throw InvalidInput("burn-in fraction must be in [0, 1)");
  const Eigen::Index T = samples.rows();
  const auto drop = static_cast<Eigen::Index>(std::floor(burn_in_fraction * static_cast<double>(T)));
  const Eigen::Index kept = T - drop;
  if (kept <= 0) throw InvalidInput("chain summary has no retained samples");
  const auto rows = samples.bottomRows(kept);
  ChainSummary s;
  s.retained = kept;
  s.mean = rows.colwise().mean().transpose();
  if (kept > 1)
    s.variance = ((rows.rowwise() - s.mean.transpose()).array().square().colwise().sum() /
                  static_cast<double>(kept - 1))
                     .transpose();
  else
    s.variance = Vector::Zero(samples.cols());
  return s;
}

inline ChainSummary chain_summary(const Chain& chain, double burn_in_fraction = 0.25) {
  return chain_summary(chain.samples, burn_in_fraction);
}

/// Batch-means Monte-Carlo standard error of each column mean.
inline Vector batch_means_standard_error(const Matrix& samples, Eigen::Index batches = 50) {
  const Eigen::Index T = samples.rows();
  if (T < 2) return Vector::Constant(samples.cols(), std::numeric_limits<double>::infinity());
  batches = std::min(batches, T);
  const Eigen::Index size = T / batches;
  Matrix means(batches, samples.cols());
  for (Eigen::Index b = 0; b < batches; ++b) means.row(b) = samples.middleRows(b * size, size).colwise().mean();
  const Vector grand = means.colwise().mean().transpose();
  const Vector var = (means.rowwise() - grand.transpose()).array().square().colwise().sum().transpose() /
                     static_cast<double>(batches - 1);
  return (var / static_cast<double>(batches)).array().sqrt();
}

}  // namespace priorswap

#endif  // PRIORSWAP_SAMPLERS_HPP
