#pragma once

// Special functions, Poisson tools and discrete convolution powers.
// Everything in this header is a pure function of its arguments.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace invdiff {

namespace detail {

inline void require_not_nan(double x, const char* what) {
  if (std::isnan(x)) {
    throw std::domain_error(std::string(what) + ": NaN argument");
  }
}

// Modified Lentz evaluation of
//   x + (1/2)/(x + (2/2)/(x + (3/2)/(x + ...)))
// whose reciprocal times 1/sqrt(pi) is erfcx(x).
inline double erfcx_continued_fraction(double x) {
  constexpr double tiny = 1e-300;
  double f = x;
  double c = x;
  double d = 0.0;
  for (int i = 1; i < 2000; ++i) {
    const double a = 0.5 * i;
    d = x + a * d;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    c = x + a / c;
    if (std::abs(c) < tiny) c = tiny;
    const double delta = c * d;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-17) break;
  }
  return f;
}

}  // namespace detail

/// Scaled complementary error function e^{x^2} erfc(x).
///
/// The literal product is only used for x < 4, where it cannot overflow and
/// the square is split exactly with an fma. Beyond that a continued fraction
/// is used, and for very large x the four-term asymptotic series.
inline double erfcx(double x) {
  detail::require_not_nan(x, "erfcx");
  if (x < 4.0) {
    const double xx = x * x;
    const double lo = std::fma(x, x, -xx);
    return std::exp(xx) * std::erfc(x) * (1.0 + lo);
  }
  if (x < 1e4) {
    return 1.0 / (std::sqrt(std::numbers::pi) * detail::erfcx_continued_fraction(x));
  }
  const double r = 1.0 / (2.0 * x * x);
  return (1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r))) / (x * std::sqrt(std::numbers::pi));
}

/// 1 - sqrt(pi) x erfcx(x) for x >= 0, without cancellation for large x.
/// Lies in (0, 1]; behaves like 1/(2x^2) as x grows.
inline double one_minus_sqrtpi_x_erfcx(double x) {
  detail::require_not_nan(x, "one_minus_sqrtpi_x_erfcx");
  if (x < 8.0) {
    return 1.0 - std::sqrt(std::numbers::pi) * x * erfcx(x);
  }
  // Asymptotic: sum_{n>=1} (-1)^{n+1} (2n-1)!! / (2x^2)^n.
  const double r = 1.0 / (2.0 * x * x);
  double term = r;
  double sum = r;
  for (int n = 2; n < 40; ++n) {
    term *= -(2.0 * n - 1.0) * r;
    sum += term;
    if (std::abs(term) < 1e-18 * sum) break;
  }
  return sum;
}

/// Standard normal density.
inline double normal_pdf(double x) {
  detail::require_not_nan(x, "normal_pdf");
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

/// Standard normal cumulative distribution function.
inline double normal_cdf(double x) {
  detail::require_not_nan(x, "normal_cdf");
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

/// Psi(-u) = phi(u) - u (1 - Phi(u)) for u >= 0, the antiderivative of Phi
/// evaluated on the negative half line. Accurate in absolute terms; zero once
/// the Gaussian factor underflows.
inline double normal_cdf_antiderivative_neg(double u) {
  if (u > 38.0) return 0.0;
  const double y = u / std::numbers::sqrt2;
  return std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi) * one_minus_sqrtpi_x_erfcx(y);
}

/// Antiderivative of the standard normal CDF, Psi(x) = x Phi(x) + phi(x).
inline double normal_cdf_antiderivative(double x) {
  detail::require_not_nan(x, "normal_cdf_antiderivative");
  if (x <= 0.0) return normal_cdf_antiderivative_neg(-x);
  // Psi(x) = Psi(-x) + x
  return normal_cdf_antiderivative_neg(x) + x;
}

/// Weight of pixel offset m in the 1D box * Gaussian(sigma) * box kernel:
///   omega_sigma(m) = int_{-1/2}^{1/2} [Phi((m+rho+1/2)/sigma) - Phi((m+rho-1/2)/sigma)] drho
///                  = sigma [Psi((m+1)/sigma) - 2 Psi(m/sigma) + Psi((m-1)/sigma)].
/// The second difference is taken on the negative half line (it annihilates
/// the linear part of Psi), so the result is exactly even in m.
inline double omega(double sigma, long m) {
  detail::require_not_nan(sigma, "omega");
  if (sigma < 0.0) throw std::domain_error("omega: sigma must be non-negative");
  const long am = m < 0 ? -m : m;
  if (sigma == 0.0) return am == 0 ? 1.0 : 0.0;
  const double inv = 1.0 / sigma;
  double value = 0.0;
  if (am == 0) {
    value = 1.0 + 2.0 * sigma * (normal_cdf_antiderivative_neg(inv) - normal_pdf(0.0));
  } else {
    const double d = static_cast<double>(am);
    value = sigma * (normal_cdf_antiderivative_neg((d + 1.0) * inv) -
                     2.0 * normal_cdf_antiderivative_neg(d * inv) +
                     normal_cdf_antiderivative_neg((d - 1.0) * inv));
  }
  return std::max(value, 0.0);
}

/// Poisson probability mass lambda^j e^{-lambda} / j!, evaluated in log space.
inline double poisson_pmf(long j, double lambda) {
  detail::require_not_nan(lambda, "poisson_pmf");
  if (lambda < 0.0) throw std::domain_error("poisson_pmf: negative mean");
  if (j < 0) return 0.0;
  if (lambda == 0.0) return j == 0 ? 1.0 : 0.0;
  if (j == 0) return std::exp(-lambda);
  const double jd = static_cast<double>(j);
  return std::exp(jd * std::log(lambda) - lambda - boost::math::lgamma(jd + 1.0));
}

namespace detail {

// Above this mean the CDF is taken from the regularized incomplete gamma
// function and the quantile search starts from a normal approximation.
inline constexpr double kPoissonDirectLimit = 1e4;

// Lower sums and upper tails of the Poisson pmf, accumulated in the
// direction that keeps each of them accurate.
struct PoissonSums {
  std::vector<double> lower;  // P(N <= j)
  std::vector<double> upper;  // P(N > j)

  explicit PoissonSums(double lambda) {
    const auto hi = static_cast<std::size_t>(std::ceil(lambda + 40.0 * std::sqrt(lambda) + 40.0));
    std::vector<double> pmf(hi + 1);
    for (std::size_t j = 0; j <= hi; ++j) pmf[j] = poisson_pmf(static_cast<long>(j), lambda);
    lower.resize(hi + 1);
    upper.resize(hi + 1);
    double acc = 0.0;
    for (std::size_t j = 0; j <= hi; ++j) {
      acc += pmf[j];
      lower[j] = acc;
    }
    acc = 0.0;
    for (std::size_t j = hi + 1; j-- > 0;) {
      upper[j] = acc;
      acc += pmf[j];
    }
  }

  [[nodiscard]] double cdf(std::size_t j) const {
    if (j >= lower.size()) return 1.0;
    return lower[j] <= 0.5 ? lower[j] : 1.0 - upper[j];
  }
};

inline double poisson_cdf_gamma(long j, double lambda) {
  const double lower = boost::math::gamma_q(static_cast<double>(j) + 1.0, lambda);
  if (lower <= 0.5) return lower;
  return 1.0 - boost::math::gamma_p(static_cast<double>(j) + 1.0, lambda);
}

}  // namespace detail

/// Poisson cumulative distribution P(N <= j), by cumulative pmf summation
/// (lower sum below the median, one minus the upper tail above it).
inline double poisson_cdf(long j, double lambda) {
  detail::require_not_nan(lambda, "poisson_cdf");
  if (lambda < 0.0) throw std::domain_error("poisson_cdf: negative mean");
  if (j < 0) return 0.0;
  if (lambda == 0.0) return 1.0;
  if (lambda > detail::kPoissonDirectLimit) return detail::poisson_cdf_gamma(j, lambda);
  return detail::PoissonSums(lambda).cdf(static_cast<std::size_t>(j));
}

/// Smallest j with P(N <= j) >= p, for N ~ Poisson(lambda).
inline long poisson_quantile(double p, double lambda) {
  detail::require_not_nan(p, "poisson_quantile");
  detail::require_not_nan(lambda, "poisson_quantile");
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("poisson_quantile: p must lie in (0,1)");
  if (lambda < 0.0) throw std::domain_error("poisson_quantile: negative mean");
  if (lambda == 0.0) return 0;
  if (lambda <= detail::kPoissonDirectLimit) {
    const detail::PoissonSums sums(lambda);
    for (std::size_t j = 0; j < sums.lower.size(); ++j) {
      if (sums.cdf(j) >= p) return static_cast<long>(j);
    }
    return static_cast<long>(sums.lower.size());
  }
  const double z = -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
  long j = std::max(0L, static_cast<long>(std::floor(lambda + z * std::sqrt(lambda))));
  while (detail::poisson_cdf_gamma(j, lambda) < p) ++j;
  while (j > 0 && detail::poisson_cdf_gamma(j - 1, lambda) >= p) --j;
  return j;
}

/// Gauss-Legendre nodes and weights on [-1, 1].
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline QuadratureRule gauss_legendre(int order) {
  if (order < 1) throw std::invalid_argument("gauss_legendre: order must be positive");
  const auto n = static_cast<std::size_t>(order);
  QuadratureRule rule{std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0;
      double p1 = x;
      for (std::size_t k = 2; k <= n; ++k) {
        const double kd = static_cast<double>(k);
        const double p2 = ((2.0 * kd - 1.0) * x * p1 - (kd - 1.0) * p0) / kd;
        p0 = p1;
        p1 = p2;
      }
      dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

/// A function sampled on a uniform grid: sample i sits at origin_offset + i * step.
struct Tabulated1D {
  std::vector<double> values;
  double step = 1.0;
  double origin_offset = 0.0;

  void validate() const {
    if (values.empty()) throw std::invalid_argument("Tabulated1D: empty");
    if (!(step > 0.0) || !std::isfinite(step)) throw std::invalid_argument("Tabulated1D: step must be positive");
    for (double v : values) {
      if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("Tabulated1D: values must be finite and non-negative");
    }
  }

  [[nodiscard]] double position(std::size_t i) const { return origin_offset + static_cast<double>(i) * step; }

  /// Riemann mass sum(values) * step.
  [[nodiscard]] double mass() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s * step;
  }
};

/// Step-scaled discrete convolution, approximating the continuous convolution
/// of the two sampled functions. Origins add. A non-zero max_length truncates
/// the result (the leading samples are exact, the sum is causal).
inline Tabulated1D convolve(const Tabulated1D& a, const Tabulated1D& b, std::size_t max_length = 0) {
  a.validate();
  b.validate();
  if (std::abs(a.step - b.step) > 1e-12 * a.step) throw std::invalid_argument("convolve: grid steps differ");
  std::size_t len = a.values.size() + b.values.size() - 1;
  if (max_length != 0) len = std::min(len, max_length);
  Tabulated1D out{std::vector<double>(len, 0.0), a.step, a.origin_offset + b.origin_offset};
  for (std::size_t n = 0; n < len; ++n) {
    const std::size_t i_lo = n >= b.values.size() ? n - b.values.size() + 1 : 0;
    const std::size_t i_hi = std::min(n, a.values.size() - 1);
    double s = 0.0;
    for (std::size_t i = i_lo; i <= i_hi; ++i) s += a.values[i] * b.values[n - i];
    out.values[n] = s * a.step;
  }
  return out;
}

/// j-th convolutional power phi * phi * ... * phi (j factors) by recursive
/// discrete convolution. Untruncated length is j (len - 1) + 1.
inline Tabulated1D conv_power(const Tabulated1D& phi, int j, std::size_t max_length = 0) {
  if (j < 1) throw std::invalid_argument("conv_power: power must be at least 1");
  phi.validate();
  Tabulated1D out = phi;
  if (max_length != 0 && out.values.size() > max_length) out.values.resize(max_length);
  for (int i = 1; i < j; ++i) out = convolve(out, phi, max_length);
  return out;
}

}  // namespace invdiff
