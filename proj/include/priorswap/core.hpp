#ifndef PRIORSWAP_CORE_HPP
#define PRIORSWAP_CORE_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace priorswap {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

// Error hierarchy. Every error carries a short machine-readable kind.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

private:
  std::string kind_;
};

class InvalidInput : public Error {
public:
  explicit InvalidInput(const std::string& m) : Error("invalid_input", m) {}
};

class NumericError : public Error {
public:
  explicit NumericError(const std::string& m) : Error("numeric", m) {}
};

class SupportMismatch : public Error {
public:
  explicit SupportMismatch(const std::string& m) : Error("support_mismatch", m) {}
};

class DegenerateWeights : public Error {
public:
  explicit DegenerateWeights(const std::string& m) : Error("degenerate_weights", m) {}
};

class BoundsTooTight : public Error {
public:
  explicit BoundsTooTight(const std::string& m) : Error("bounds_too_tight", m) {}
};

/// Unnormalized or normalized log-density value with its gradient.
struct LogDensity {
  double value = 0.0;
  Vector gradient;
};

inline std::string format_vector(const Vector& v) {
  std::ostringstream os;
  os.precision(17);
  os << '(';
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) os << ", ";
    os << v[i];
  }
  os << ')';
  return os.str();
}

inline void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite())
    throw InvalidInput(std::string(what) + " has non-finite entries: " + format_vector(v));
}

inline void require_dimension(const Vector& v, Eigen::Index d, const char* what) {
  if (v.size() != d)
    throw InvalidInput(std::string(what) + " has dimension " + std::to_string(v.size()) +
                       ", expected " + std::to_string(d));
}

/// Fixed-order pairwise summation; reproducible regardless of threading.
inline double pairwise_sum(std::span<const double> x) {
  if (x.size() <= 16) {
    double s = 0.0;
    for (double v : x) s += v;
    return s;
  }
  const std::size_t half = x.size() / 2;
  return pairwise_sum(x.first(half)) + pairwise_sum(x.subspan(half));
}

inline double pairwise_sum(const Vector& x) {
  return pairwise_sum(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
}

/// log(sum(exp(x))). Returns -inf for empty input or when every term is -inf.
inline double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return kNegInf;
  const double m = *std::max_element(x.begin(), x.end());
  if (m == kNegInf) return kNegInf;
  if (!std::isfinite(m)) return m;
  std::vector<double> shifted(x.size());
  std::transform(x.begin(), x.end(), shifted.begin(), [m](double v) { return std::exp(v - m); });
  return m + std::log(pairwise_sum(shifted));
}

inline double log_sum_exp(const Vector& x) {
  return log_sum_exp(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
}

inline double log_logistic(double eta) {
  // log(1 / (1 + e^{-eta})) without overflow
  return eta >= 0 ? -std::log1p(std::exp(-eta)) : eta - std::log1p(std::exp(eta));
}

inline double logistic(double eta) {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

inline double sign_or_zero(double x) { return (x > 0) - (x < 0); }

}  // namespace priorswap

#endif  // PRIORSWAP_CORE_HPP
