#pragma once

// Free-motion time density phi(tau, t) from the physical constants, the
// point-source PSDR synthesis, the sensor model, and a 1D finite-difference
// solver of the reaction-diffusion-adsorption-desorption system used as an
// independent oracle for the bound fraction.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "invdiff/grid.hpp"
#include "invdiff/mathcore.hpp"

namespace invdiff {

struct PhysicalParams {
  double kappa_a = 0.0;      // adsorption constant [m/s]
  double kappa_d = 0.0;      // desorption constant [1/s]
  double diffusion = 0.0;    // D [m^2/s]
  double horizon = 0.0;      // T [s]
  double pixel_pitch = 0.0;  // [m]
  double psf_sigma = 0.0;    // optical blur [pixels]

  void validate() const {
    auto finite = [](double v) { return std::isfinite(v); };
    if (!finite(kappa_a) || kappa_a < 0.0) throw std::invalid_argument("PhysicalParams: kappa_a must be >= 0");
    if (!finite(kappa_d) || kappa_d < 0.0) throw std::invalid_argument("PhysicalParams: kappa_d must be >= 0");
    if (!finite(diffusion) || diffusion <= 0.0) throw std::invalid_argument("PhysicalParams: diffusion must be > 0");
    if (!finite(horizon) || horizon <= 0.0) throw std::invalid_argument("PhysicalParams: horizon must be > 0");
    if (!finite(pixel_pitch) || pixel_pitch <= 0.0) throw std::invalid_argument("PhysicalParams: pixel_pitch must be > 0");
    if (!finite(psf_sigma) || psf_sigma < 0.0) throw std::invalid_argument("PhysicalParams: psf_sigma must be >= 0");
  }

  /// sqrt(2 D T) in metres.
  [[nodiscard]] double sigma_max() const { return std::sqrt(2.0 * diffusion * horizon); }
  /// sqrt(2 D T) in pixels.
  [[nodiscard]] double sigma_max_pixels() const { return sigma_max() / pixel_pitch; }
};

// ---------------------------------------------------------------------------
// First adsorption (no desorption)
// ---------------------------------------------------------------------------

/// Probability that a particle released at time 0 is still free after a
/// total free time tau when it can never leave the surface again:
/// erfcx(kappa_a sqrt(tau / D)). Its negative derivative is phi(tau).
inline double first_adsorption_survival(double tau, const PhysicalParams& p) {
  if (tau < 0.0) throw std::domain_error("first_adsorption_survival: tau must be >= 0");
  return erfcx(p.kappa_a * std::sqrt(tau / p.diffusion));
}

/// Density of the free time before the first adsorption,
///   kappa_a / sqrt(pi D tau) - (kappa_a^2 / D) erfcx(kappa_a sqrt(tau / D)),
/// evaluated as kappa_a / sqrt(pi D tau) * (1 - sqrt(pi) x erfcx(x)) so it
/// stays non-negative and accurate for large tau.
inline double phi_no_desorption(double tau, const PhysicalParams& p) {
  detail::require_not_nan(tau, "phi_no_desorption");
  if (!(tau > 0.0)) throw std::domain_error("phi_no_desorption: tau must be > 0");
  if (p.kappa_a == 0.0) return 0.0;
  const double x = p.kappa_a * std::sqrt(tau / p.diffusion);
  return p.kappa_a / std::sqrt(std::numbers::pi * p.diffusion * tau) * one_minus_sqrtpi_x_erfcx(x);
}

/// Squared L2 norm of phi over (tau_floor, inf). The raw density has a
/// non-integrable 1/tau square at the origin, so a positive floor is required.
inline double phi_l2_norm_sq(const PhysicalParams& p, double tau_floor) {
  if (!(tau_floor > 0.0)) throw std::domain_error("phi_l2_norm_sq: tau_floor must be > 0");
  if (p.kappa_a == 0.0) return 0.0;
  // Integrate in u = log(tau / tau_floor) so the 1/tau decade structure is flat.
  boost::math::quadrature::exp_sinh<double> integrator;
  auto f = [&](double u) {
    const double tau = tau_floor * std::exp(u);
    if (!std::isfinite(tau)) return 0.0;
    const double v = phi_no_desorption(tau, p);
    return v * v * tau;
  };
  return integrator.integrate(f, 0.0, std::numeric_limits<double>::infinity());
}

/// Number of convolution powers kept in the desorption series:
/// the Poisson(kappa_d T) quantile at 1 - eps / ||phi||^2, at least 1.
/// Returns 1 when eps >= ||phi||^2 (nothing beyond the first term is needed).
inline long truncation_order(double eps, const PhysicalParams& p, double phi_norm_sq) {
  detail::require_not_nan(eps, "truncation_order");
  if (!(eps > 0.0)) throw std::domain_error("truncation_order: eps must be > 0");
  if (!(phi_norm_sq > eps)) return 1;
  const long j = poisson_quantile(1.0 - eps / phi_norm_sq, p.kappa_d * p.horizon);
  return std::max(1L, j);
}

// ---------------------------------------------------------------------------
// General case: sum over adsorption-desorption cycles
// ---------------------------------------------------------------------------

/// phi(tau, t) tabulated on the midpoint grid tau_i = (i + 1/2) dtau of (0, T].
///
/// powers[j-1] holds the j-th convolutional power of the first-adsorption
/// density: point samples for j = 1, cell averages for j >= 2 (those are
/// bounded, so the two agree to second order). cells[j-1] holds the cell
/// averages for every j; the j = 1 averages come from the exact antiderivative
/// and every higher power preserves mass exactly.
struct PhiTable {
  PhysicalParams params;
  double step = 0.0;
  double eps = 0.0;
  long j_max = 1;
  std::vector<double> tau;
  std::vector<std::vector<double>> powers;
  std::vector<std::vector<double>> cells;
  std::vector<double> t_values;
  std::vector<std::vector<double>> values;  // values[ti][i] = phi(tau_i, t_values[ti])

  [[nodiscard]] std::size_t size() const { return tau.size(); }
  [[nodiscard]] long terms() const { return static_cast<long>(powers.size()); }

  /// phi(tau_i, t) summed over the first terms() powers.
  [[nodiscard]] double at(std::size_t i, double t) const {
    if (!(tau[i] < t)) return 0.0;
    const double lambda = params.kappa_d * (t - tau[i]);
    double s = 0.0;
    for (std::size_t j = 0; j < powers.size(); ++j) s += powers[j][i] * poisson_pmf(static_cast<long>(j), lambda);
    return s;
  }

  /// Probability that a particle released at time 0 is bound at time t,
  /// integral of phi(tau, t) over tau < t using the mass-exact cell averages.
  [[nodiscard]] double bound_fraction(double t) const {
    double total = 0.0;
    for (std::size_t i = 0; i < tau.size(); ++i) {
      const double left = static_cast<double>(i) * step;
      if (left >= t) break;
      const double width = std::min(step, t - left);
      const double mid = left + 0.5 * width;
      const double lambda = params.kappa_d * (t - mid);
      double s = 0.0;
      for (std::size_t j = 0; j < cells.size(); ++j) s += cells[j][i] * poisson_pmf(static_cast<long>(j), lambda);
      total += s * width;
    }
    return total;
  }

  /// j-th power (1-based) at an arbitrary tau in (0, T]: closed form for j = 1,
  /// linear interpolation of the cell averages otherwise.
  [[nodiscard]] double power_at(std::size_t j, double t) const {
    if (j == 1) return phi_no_desorption(t, params);
    const auto& row = powers[j - 1];
    const double x = t / step - 0.5;
    if (x <= 0.0) return row.front();
    const auto i = static_cast<std::size_t>(x);
    if (i + 1 >= row.size()) return row.back();
    const double f = x - static_cast<double>(i);
    return row[i] * (1.0 - f) + row[i + 1] * f;
  }
};

/// Tabulates the first `count` convolutional powers of the first-adsorption
/// density on a midpoint grid with `tau_steps` cells covering (0, T].
/// Higher powers are built recursively: the piecewise-constant cell averages
/// are convolved exactly (giving a piecewise-linear result) and averaged back
/// onto the cells.
inline PhiTable phi_powers(const PhysicalParams& p, std::size_t tau_steps, long count) {
  p.validate();
  if (tau_steps < 16) throw std::invalid_argument("phi_powers: tau_steps must be >= 16");
  if (count < 1) throw std::invalid_argument("phi_powers: count must be >= 1");
  PhiTable table;
  table.params = p;
  table.step = p.horizon / static_cast<double>(tau_steps);
  table.tau.resize(tau_steps);
  for (std::size_t i = 0; i < tau_steps; ++i) table.tau[i] = (static_cast<double>(i) + 0.5) * table.step;

  std::vector<double> first_points(tau_steps);
  std::vector<double> first_cells(tau_steps);
  double survival_left = 1.0;
  for (std::size_t i = 0; i < tau_steps; ++i) {
    const double survival_right = first_adsorption_survival(static_cast<double>(i + 1) * table.step, p);
    first_cells[i] = std::max(0.0, survival_left - survival_right) / table.step;
    first_points[i] = phi_no_desorption(table.tau[i], p);
    survival_left = survival_right;
  }
  table.powers.push_back(first_points);
  table.cells.push_back(first_cells);

  const Tabulated1D base{first_cells, table.step, 0.5 * table.step};
  for (long j = 2; j <= count; ++j) {
    const Tabulated1D prev{table.cells.back(), table.step, 0.5 * table.step};
    // node values at tau = (n + 1) dtau
    const Tabulated1D nodes = convolve(prev, base, tau_steps);
    std::vector<double> averaged(tau_steps);
    for (std::size_t i = 0; i < tau_steps; ++i) {
      const double left = i == 0 ? 0.0 : nodes.values[i - 1];
      averaged[i] = 0.5 * (left + nodes.values[i]);
    }
    table.powers.push_back(averaged);
    table.cells.push_back(std::move(averaged));
  }
  table.j_max = count;
  return table;
}

/// phi(tau, t) = sum_{j=1}^{J} phi^{j*}(tau) Poisson(j-1; kappa_d (t - tau)),
/// with J the truncation order for `eps`. ||phi||^2 is evaluated above
/// tau_floor = dtau / 2. `t_values` defaults to {T}.
inline PhiTable phi_general(const PhysicalParams& p, std::size_t tau_steps, double eps,
                            std::vector<double> t_values = {}) {
  detail::require_not_nan(eps, "phi_general");
  if (!(eps > 0.0)) throw std::domain_error("phi_general: eps must be > 0");
  p.validate();
  if (tau_steps < 16) throw std::invalid_argument("phi_general: tau_steps must be >= 16");
  const double step = p.horizon / static_cast<double>(tau_steps);
  const double norm_sq = phi_l2_norm_sq(p, 0.5 * step);
  const long j = truncation_order(eps, p, norm_sq);
  PhiTable table = phi_powers(p, tau_steps, j);
  table.eps = eps;
  table.j_max = j;
  if (t_values.empty()) t_values.push_back(p.horizon);
  table.t_values = std::move(t_values);
  table.values.resize(table.t_values.size());
  for (std::size_t ti = 0; ti < table.t_values.size(); ++ti) {
    const double t = table.t_values[ti];
    if (!(t > 0.0) || t > p.horizon) throw std::invalid_argument("phi_general: observation times must lie in (0, T]");
    auto& row = table.values[ti];
    row.resize(tau_steps);
    for (std::size_t i = 0; i < tau_steps; ++i) row[i] = table.at(i, t);
  }
  return table;
}

/// Series remainder sum_{j=first}^{last} phi^{j*}(tau_i) Poisson(j-1; kappa_d (t - tau_i))
/// on the table grid. `table` must hold at least `last` powers.
inline std::vector<double> series_remainder(const PhiTable& table, long first, long last, double t) {
  if (first < 1 || last < first || last > table.terms()) throw std::invalid_argument("series_remainder: bad term range");
  std::vector<double> out(table.size(), 0.0);
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (!(table.tau[i] < t)) continue;
    const double lambda = table.params.kappa_d * (t - table.tau[i]);
    double s = 0.0;
    for (long j = first; j <= last; ++j) {
      s += table.powers[static_cast<std::size_t>(j - 1)][i] * poisson_pmf(j - 1, lambda);
    }
    out[i] = s;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

struct PdeCurve {
  std::vector<double> times;
  std::vector<double> bound;      // probability of being adsorbed at each time
  std::vector<double> free_mass;  // probability of being in the medium
};

/// Explicit Euler / central difference solution of the z-reduction of the
/// diffusion equation with the adsorption-desorption surface ODE and the
/// flux condition at z = 0 (ghost node), Dirichlet zero at z_max, for a unit
/// release at the surface at t = 0.
inline PdeCurve pde_oracle(const PhysicalParams& p, double z_max, std::size_t n_z, std::size_t n_t) {
  p.validate();
  if (n_z < 2 || n_t < 1) throw std::invalid_argument("pde_oracle: need n_z >= 2 and n_t >= 1");
  const double min_depth = 6.0 * p.sigma_max();
  if (z_max < min_depth * (1.0 - 1e-12)) {
    throw std::invalid_argument("pde_oracle: z_max must be at least 6 sqrt(2 D T) = " + std::to_string(min_depth));
  }
  const double dz = z_max / static_cast<double>(n_z);
  const double dt = p.horizon / static_cast<double>(n_t);
  const double r = p.diffusion * dt / (dz * dz);
  const double surface_rate = 2.0 * p.diffusion / (dz * dz) + 2.0 * p.kappa_a / dz;
  const double dt_max = std::min(1.0 / surface_rate, p.kappa_d > 0.0 ? 1.0 / p.kappa_d : 1e300);
  if (r > 0.5 || dt > dt_max * (1.0 + 1e-12)) {
    const auto required = static_cast<std::size_t>(std::ceil(p.horizon / dt_max));
    throw std::invalid_argument("pde_oracle: unstable time step, n_t must be at least " + std::to_string(required));
  }

  std::vector<double> c(n_z + 1, 0.0);
  std::vector<double> next(n_z + 1, 0.0);
  c[0] = 2.0 / dz;  // unit mass under the trapezoid rule
  double bound = 0.0;

  PdeCurve curve;
  curve.times.reserve(n_t + 1);
  curve.bound.reserve(n_t + 1);
  curve.free_mass.reserve(n_t + 1);
  auto record = [&](double t) {
    double mass = 0.5 * c[0];
    for (std::size_t i = 1; i < n_z; ++i) mass += c[i];
    curve.times.push_back(t);
    curve.bound.push_back(bound);
    curve.free_mass.push_back(mass * dz);
  };
  record(0.0);
  for (std::size_t step = 1; step <= n_t; ++step) {
    const double exchange = p.kappa_d * bound - p.kappa_a * c[0];
    next[0] = c[0] + dt * (2.0 * p.diffusion * (c[1] - c[0]) / (dz * dz) + 2.0 * exchange / dz);
    for (std::size_t i = 1; i < n_z; ++i) next[i] = c[i] + r * (c[i - 1] - 2.0 * c[i] + c[i + 1]);
    next[n_z] = 0.0;
    bound -= dt * exchange;
    c.swap(next);
    record(static_cast<double>(step) * dt);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Point sources and PSDR synthesis
// ---------------------------------------------------------------------------

/// Point source at pixel (m, n) (0-based) emitting `rate` particles per
/// second on [t_start, t_stop].
struct PointSource {
  std::size_t m = 0;
  std::size_t n = 0;
  double rate = 0.0;
  double t_start = 0.0;
  double t_stop = 0.0;
};

struct SourceSpec {
  std::vector<PointSource> sources;

  void validate(const PhysicalParams& p, std::size_t rows, std::size_t cols) const {
    for (const auto& s : sources) {
      if (s.m >= rows || s.n >= cols) throw std::invalid_argument("SourceSpec: source outside the image");
      if (!std::isfinite(s.rate) || s.rate < 0.0) throw std::invalid_argument("SourceSpec: rates must be >= 0");
      if (!(s.t_start >= 0.0 && s.t_start <= s.t_stop && s.t_stop <= p.horizon)) {
        throw std::invalid_argument("SourceSpec: need 0 <= t_start <= t_stop <= T");
      }
    }
  }
};

namespace detail {

// Integral over eta in [eta_lo, eta_hi] of Poisson(j-1; kappa_d (eta - tau)),
// for j = 1..terms.
inline void poisson_time_integrals(double kappa_d, double tau, double eta_lo, double eta_hi,
                                   std::vector<double>& out) {
  const std::size_t terms = out.size();
  std::fill(out.begin(), out.end(), 0.0);
  if (!(eta_hi > eta_lo)) return;
  const double lam_lo = kappa_d * (eta_lo - tau);
  const double lam_hi = kappa_d * (eta_hi - tau);
  if (lam_hi < 1e-9) {
    // kappa_d effectively zero over this window: only the first term survives
    out[0] = eta_hi - eta_lo;
    return;
  }
  for (std::size_t j = 1; j <= terms; ++j) {
    const double a = static_cast<double>(j);
    // d/dlambda P(N >= j) = Poisson(j-1; lambda)
    const double hi = boost::math::gamma_p(a, lam_hi);
    const double lo = lam_lo > 0.0 ? boost::math::gamma_p(a, lam_lo) : 0.0;
    out[j - 1] = (hi - lo) / kappa_d;
  }
}

}  // namespace detail

/// Bound-particle count per scale bin for a single constant-rate source,
/// before the 1/sqrt(Delta_k) normalization:
///   rate * int_{bin} (sigma / D) int_{max(tau, T - t_stop)}^{T - t_start} phi(tau, eta) deta dsigma,
/// with tau = sigma^2 / (2 D) and sigma in metres.
inline std::vector<double> source_bin_counts(const PointSource& source, const PhysicalParams& p,
                                             const SigmaGrid& grid, const PhiTable& phi) {
  const std::size_t bins = grid.bins();
  std::vector<double> counts(bins, 0.0);
  if (source.rate == 0.0 || source.t_stop <= source.t_start || p.kappa_a == 0.0) return counts;
  static const QuadratureRule rule = gauss_legendre(32);
  const double eta_hi = p.horizon - source.t_start;
  const double eta_lo0 = p.horizon - source.t_stop;
  auto sigma_of_tau = [&](double tau) { return std::sqrt(2.0 * p.diffusion * tau); };
  std::vector<double> time_weights(static_cast<std::size_t>(phi.terms()));

  auto integrand = [&](double sigma) {
    const double tau = sigma * sigma / (2.0 * p.diffusion);
    if (!(tau > 0.0) || tau >= eta_hi) return 0.0;
    detail::poisson_time_integrals(p.kappa_d, tau, std::max(tau, eta_lo0), eta_hi, time_weights);
    double v = 0.0;
    for (std::size_t j = 0; j < time_weights.size(); ++j) {
      if (time_weights[j] != 0.0) v += phi.power_at(j + 1, tau) * time_weights[j];
    }
    return sigma / p.diffusion * v;
  };

  const std::vector<double> kinks = {sigma_of_tau(eta_lo0), sigma_of_tau(eta_hi)};
  for (std::size_t k = 0; k < bins; ++k) {
    const double lo = grid.lower(k) * p.pixel_pitch;
    const double hi = grid.upper(k) * p.pixel_pitch;
    std::vector<double> cuts{lo};
    for (int piece = 1; piece < 4; ++piece) cuts.push_back(lo + (hi - lo) * piece / 4.0);
    for (double kink : kinks) {
      if (kink > lo && kink < hi) cuts.push_back(kink);
    }
    cuts.push_back(hi);
    std::sort(cuts.begin(), cuts.end());
    double total = 0.0;
    for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
      const double a = cuts[c];
      const double b = cuts[c + 1];
      if (!(b > a)) continue;
      const double half = 0.5 * (b - a);
      const double mid = 0.5 * (a + b);
      for (std::size_t q = 0; q < rule.nodes.size(); ++q) total += rule.weights[q] * half * integrand(mid + half * rule.nodes[q]);
    }
    counts[k] = source.rate * total;
  }
  return counts;
}

/// Discretized PSDR of a set of point sources:
///   a[m, n, k] = (1 / sqrt(Delta_k)) * (bound particles of bin k released at (m, n)).
inline PsdrTensor synth_psdr(const SourceSpec& spec, const PhysicalParams& p, const SigmaGrid& grid,
                             const PhiTable& phi, std::size_t rows, std::size_t cols) {
  p.validate();
  spec.validate(p, rows, cols);
  if (grid.sigma_max() > p.sigma_max_pixels() * (1.0 + 1e-12)) {
    throw std::invalid_argument("synth_psdr: sigma grid exceeds sqrt(2 D T) / pixel_pitch = " +
                                std::to_string(p.sigma_max_pixels()));
  }
  PsdrTensor a(rows, cols, grid.bins());
  for (const auto& source : spec.sources) {
    const auto counts = source_bin_counts(source, p, grid, phi);
    for (std::size_t k = 0; k < grid.bins(); ++k) a(source.m, source.n, k) += counts[k] / std::sqrt(grid.width(k));
  }
  return a;
}

// ---------------------------------------------------------------------------
// Sensor
// ---------------------------------------------------------------------------

namespace detail {

inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Box-Muller with the (0, 1] variate in the logarithm.
inline double standard_normal(std::mt19937_64& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace detail

/// Additive white Gaussian noise with standard deviation noise_sigma * max,
/// clipping to [0, max], then a mid-rise uniform quantizer with 2^bits
/// levels over [0, max] (bits = 0 disables quantization).
inline Image sensor_model(const Image& image, double noise_sigma, int bits, std::uint64_t seed) {
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("sensor_model: noise_sigma must be >= 0");
  if (bits != 0 && bits != 8 && bits != 12 && bits != 16) throw std::invalid_argument("sensor_model: bits must be 0, 8, 12 or 16");
  for (double v : image.values()) {
    if (!(v >= 0.0)) throw std::invalid_argument("sensor_model: image must be non-negative");
  }
  Image out = image;
  const double peak = image.max();
  if (peak <= 0.0) return out;
  const double stddev = noise_sigma * peak;
  std::mt19937_64 rng(seed);
  const double levels = bits == 0 ? 0.0 : std::ldexp(1.0, bits);
  const double level_step = bits == 0 ? 0.0 : peak / levels;
  for (double& v : out.values()) {
    if (stddev > 0.0) v += stddev * detail::standard_normal(rng);
    v = std::clamp(v, 0.0, peak);
    if (bits != 0) {
      const double idx = std::min(std::floor(v / level_step), levels - 1.0);
      v = (idx + 0.5) * level_step;
    }
  }
  return out;
}

}  // namespace invdiff
