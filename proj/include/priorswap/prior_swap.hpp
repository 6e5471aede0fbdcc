#ifndef PRIORSWAP_PRIOR_SWAP_HPP
#define PRIORSWAP_PRIOR_SWAP_HPP

// Prior swap densities  p_s(theta) ∝ p_f~(theta) pi(theta) / pi_f(theta).
//
// A SwapTarget closes over a false-posterior density and two priors only; it
// never holds the dataset, so each evaluation costs the same for any n.

#include "priorswap/false_posterior.hpp"

#include <memory>
#include <sstream>

namespace priorswap {

struct SwapTarget {
  TargetDensity target;
  std::string provenance;

  double log_density(const Vector& theta) const { return target.log_density(theta); }
  LogDensity with_gradient(const Vector& theta) const { return target.with_gradient(theta); }
  Eigen::Index dimension() const { return target.dimension; }
};

namespace detail {

inline std::string describe(const ExactGaussianPosterior&) { return "exact-gaussian"; }
inline std::string describe(const ParametricAlpha& a) {
  return "parametric(k=" + std::to_string(a.k()) + ", n=" + std::to_string(static_cast<long long>(a.n())) + ")";
}

/// pi - pi_f with the lazy support check: pi_f = -inf where pi is finite is
/// an error, pi = -inf gives -inf.
inline LogDensity prior_ratio(const PriorSpec& target, const PriorSpec& false_prior, const Vector& theta) {
  LogDensity num = prior_log_density(target, theta);
  if (num.value == kNegInf) return num;
  const LogDensity den = prior_log_density(false_prior, theta);
  if (den.value == kNegInf)
    throw SupportMismatch("false prior has zero density where the target prior does not, at theta = " +
                          format_vector(theta));
  return {num.value - den.value, num.gradient - den.gradient};
}

template <class Density>
TargetDensity swap_density(std::shared_ptr<const Density> fp, std::shared_ptr<const PriorSpec> target,
                           std::shared_ptr<const PriorSpec> false_prior, Eigen::Index d) {
  TargetDensity t;
  t.dimension = d;
  t.with_gradient = [fp, target, false_prior](const Vector& theta) {
    LogDensity r = prior_ratio(*target, *false_prior, theta);
    if (r.value == kNegInf) return r;
    const LogDensity f = fp->log_density(theta);
    return LogDensity{f.value + r.value, f.gradient + r.gradient};
  };
  auto g = t.with_gradient;
  t.log_density = [g](const Vector& theta) { return g(theta).value; };
  return t;
}

inline void check_priors(const PriorSpec& target, const PriorSpec& false_prior, Eigen::Index d) {
  if (is_hierarchical(target)) throw InvalidInput("use make_hierarchical_swap for hierarchical target priors");
  if (is_hierarchical(false_prior)) throw InvalidInput("false prior cannot be hierarchical");
  if (prior_dimension(target) != d || prior_dimension(false_prior) != d)
    throw InvalidInput("prior dimensions do not match the false posterior");
}

}  // namespace detail

/// Swap target built on an exact or parametric false-posterior density.
template <class Density>
SwapTarget make_prior_swap(const Density& false_posterior, const PriorSpec& target, const PriorSpec& false_prior) {
  const Eigen::Index d = false_posterior.dimension();
  detail::check_priors(target, false_prior, d);
  SwapTarget s;
  s.target = detail::swap_density(std::make_shared<const Density>(false_posterior),
                                  std::make_shared<const PriorSpec>(target),
                                  std::make_shared<const PriorSpec>(false_prior), d);
  s.provenance = "prior-swap[" + detail::describe(false_posterior) + "; target=" + prior_name(target) +
                 "; false=" + prior_name(false_prior) + "]";
  return s;
}

/// p_s^sp(theta) ∝ p_s^alpha(theta) * (1/T_f) sum_t K(|theta - theta_t|/b) / p_alpha(theta_t).
inline SwapTarget make_semiparametric_swap(const SemiparametricRep& rep, const PriorSpec& target,
                                           const PriorSpec& false_prior) {
  const Eigen::Index d = rep.dimension();
  detail::check_priors(target, false_prior, d);
  auto r = std::make_shared<const SemiparametricRep>(rep);
  auto tp = std::make_shared<const PriorSpec>(target);
  auto fp = std::make_shared<const PriorSpec>(false_prior);
  SwapTarget s;
  s.target.dimension = d;
  s.target.with_gradient = [r, tp, fp](const Vector& theta) {
    LogDensity ratio = detail::prior_ratio(*tp, *fp, theta);
    if (ratio.value == kNegInf) return ratio;
    const LogDensity corr = r->log_correction(theta);
    if (corr.value == kNegInf) return LogDensity{kNegInf, Vector::Zero(theta.size())};
    const LogDensity base = r->base().log_density(theta);
    return LogDensity{base.value + ratio.value + corr.value, base.gradient + ratio.gradient + corr.gradient};
  };
  auto g = s.target.with_gradient;
  s.target.log_density = [g](const Vector& theta) { return g(theta).value; };
  s.provenance = "semiparametric-swap[T_f=" + std::to_string(rep.samples().rows()) +
                 ", b=" + std::to_string(rep.bandwidth()) + "; target=" + prior_name(target) +
                 "; false=" + prior_name(false_prior) + "]";
  return s;
}

/// Swap to pi(theta, a) = N(theta | 0, a^{-1} I) Gamma(a | shape, 1) over the
/// augmented state z = (theta, log a):
///   log p_s(z) = log p_f~(theta) + log pi(theta, a) - log pi_f(theta) + log a.
template <class Density>
SwapTarget make_hierarchical_swap(const Density& false_posterior, double shape, const PriorSpec& false_prior) {
  const Eigen::Index d = false_posterior.dimension();
  if (is_hierarchical(false_prior)) throw InvalidInput("false prior cannot be hierarchical");
  if (prior_dimension(false_prior) != d) throw InvalidInput("false prior dimension does not match");
  auto fpost = std::make_shared<const Density>(false_posterior);
  auto hp = std::make_shared<const PriorSpec>(HierarchicalNormalGammaPrior(d, shape));
  auto fp = std::make_shared<const PriorSpec>(false_prior);
  SwapTarget s;
  s.target.dimension = d + 1;
  s.target.with_gradient = [fpost, hp, fp, d](const Vector& z) {
    require_dimension(z, d + 1, "augmented state");
    const Vector x = hierarchical_natural_state(z, d);
    const Vector theta = z.head(d);
    const LogDensity prior = prior_log_density(*hp, x);
    if (prior.value == kNegInf) return LogDensity{kNegInf, Vector::Zero(d + 1)};
    const LogDensity den = prior_log_density(*fp, theta);
    if (den.value == kNegInf)
      throw SupportMismatch("false prior has zero density where the target prior does not, at theta = " +
                            format_vector(theta));
    const LogDensity f = fpost->log_density(theta);
    LogDensity out{f.value + prior.value - den.value + z[d], Vector(d + 1)};
    out.gradient.head(d) = f.gradient + prior.gradient.head(d) - den.gradient;
    out.gradient[d] = prior.gradient[d] * x[d] + 1.0;
    return out;
  };
  auto g = s.target.with_gradient;
  s.target.log_density = [g](const Vector& z) { return g(z).value; };
  std::ostringstream os;
  os << "hierarchical-swap[" << detail::describe(false_posterior) << "; shape=" << shape
     << "; false=" << prior_name(false_prior) << "]";
  s.provenance = os.str();
  return s;
}

}  // namespace priorswap

#endif  // PRIORSWAP_PRIOR_SWAP_HPP
