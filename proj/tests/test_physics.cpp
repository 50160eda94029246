#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <gtest/gtest.h>

#include "invdiff/physics.hpp"
#include "oracles.hpp"

using namespace invdiff;

namespace {

PhysicalParams params(double ka, double kd, double D = 1e-10, double T = 3600.0) {
  PhysicalParams p;
  p.kappa_a = ka;
  p.kappa_d = kd;
  p.diffusion = D;
  p.horizon = T;
  p.pixel_pitch = std::sqrt(2.0 * D * T) / 14.0;
  p.psf_sigma = 0.5;
  return p;
}

// int_0^T phi(tau) dtau with tau = s^2, which removes the 1/sqrt(tau) singularity.
double integrate_phi(const PhysicalParams& p, double T) {
  boost::math::quadrature::tanh_sinh<double> q;
  return q.integrate([&](double s) { return s * s > 0.0 ? 2.0 * s * phi_no_desorption(s * s, p) : 0.0; }, 0.0,
                     std::sqrt(T));
}

// Bound fraction for kappa_d = 0 without the library's erfcx.
double bound_closed_form(const PhysicalParams& p, double t) {
  return 1.0 - oracle::erfcx(p.kappa_a * std::sqrt(t / p.diffusion));
}

}  // namespace

TEST(PhiNoDesorption, ZeroAdsorptionNeverBinds) {
  const auto p = params(0.0, 0.0);
  for (double tau : {1e-6, 1.0, 3600.0}) EXPECT_EQ(phi_no_desorption(tau, p), 0.0);
}

TEST(PhiNoDesorption, RejectsNonPositiveTau) {
  const auto p = params(1e-6, 0.0);
  EXPECT_THROW(phi_no_desorption(0.0, p), std::domain_error);
  EXPECT_THROW(phi_no_desorption(-1.0, p), std::domain_error);
}

TEST(PhiNoDesorption, IntegralMatchesClosedForm) {
  for (const auto& p : {params(1e-6, 0.0), params(3e-7, 0.0, 5e-11, 1800.0), params(5e-6, 0.0, 2e-10, 7200.0)}) {
    const double lhs = integrate_phi(p, p.horizon);
    const double rhs = bound_closed_form(p, p.horizon);
    EXPECT_NEAR(lhs, rhs, 1e-6) << "kappa_a " << p.kappa_a;
  }
}

TEST(PhiNoDesorption, SingularLeadingTerm) {
  const auto p = params(1e-6, 0.0);
  const double limit = p.kappa_a / std::sqrt(std::numbers::pi * p.diffusion);
  EXPECT_NEAR(phi_no_desorption(1e-12, p) * std::sqrt(1e-12), limit, 1e-6 * limit);
  EXPECT_NEAR(phi_no_desorption(1e-8, p) * std::sqrt(1e-8), limit, 1e-4 * limit);
}

TEST(PhiNoDesorption, NonNegativeForLargeArguments) {
  const auto p = params(1e-3, 0.0);
  for (double tau = 1e-9; tau < 1e6; tau *= 3.0) {
    const double v = phi_no_desorption(tau, p);
    EXPECT_GE(v, 0.0);
    EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(TruncationOrder, NoDesorptionKeepsOneTerm) {
  const auto p = params(1e-6, 0.0);
  EXPECT_EQ(truncation_order(1e-5, p, phi_l2_norm_sq(p, 1.0)), 1);
}

TEST(TruncationOrder, EpsLargerThanNormKeepsOneTerm) {
  const auto p = params(1e-6, 1e-2);
  EXPECT_EQ(truncation_order(10.0, p, 1.0), 1);
  EXPECT_THROW(truncation_order(0.0, p, 1.0), std::domain_error);
}

TEST(TruncationOrder, NonDecreasingAsEpsShrinks) {
  const auto p = params(1e-6, 1e-3);
  const double norm_sq = phi_l2_norm_sq(p, p.horizon / 4096.0);
  long prev = 0;
  for (double eps = 1e-1; eps >= 1e-12; eps /= 10.0) {
    const long j = truncation_order(eps, p, norm_sq);
    EXPECT_GE(j, prev);
    prev = j;
  }
  EXPECT_GT(prev, 1);
}

TEST(PhiL2Norm, MatchesDirectQuadrature) {
  const auto p = params(1e-6, 0.0);
  const double floor = 0.5;
  boost::math::quadrature::tanh_sinh<double> q;
  // split: (floor, T) finite part, then the exponentially weighted tail via s = tau - T
  const double head = q.integrate(
      [&](double tau) {
        const double v = phi_no_desorption(tau, p);
        return v * v;
      },
      floor, 1e7);
  const double tail = q.integrate(
      [&](double u) {
        const double tau = 1e7 / u;
        const double v = phi_no_desorption(tau, p);
        return v * v * 1e7 / (u * u);
      },
      1e-6, 1.0);
  EXPECT_NEAR(phi_l2_norm_sq(p, floor), head + tail, 1e-8 * (head + tail));
}

TEST(PhiGeneral, ReducesToFirstAdsorptionWithoutDesorption) {
  const auto p = params(1e-6, 0.0);
  const PhiTable table = phi_general(p, 512, 1e-5);
  EXPECT_EQ(table.j_max, 1);
  ASSERT_EQ(table.values.size(), 1u);
  for (std::size_t i = 0; i < table.size(); ++i) {
    EXPECT_EQ(table.values[0][i], phi_no_desorption(table.tau[i], p));
  }
}

TEST(PhiGeneral, NoDesorptionTableIsIndependentOfTime) {
  const auto p = params(1e-6, 0.0);
  const PhiTable table = phi_general(p, 256, 1e-5, {900.0, 1800.0, 3600.0});
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (table.tau[i] < 900.0) {
      EXPECT_EQ(table.values[0][i], table.values[2][i]);
      EXPECT_EQ(table.values[1][i], table.values[2][i]);
    }
  }
}

TEST(PhiGeneral, NonNegativeWithMassAtMostOne) {
  for (double kd : {0.0, 1e-4, 1e-3, 1e-2}) {
    const auto p = params(2e-6, kd);
    const PhiTable table = phi_general(p, 1024, 1e-5);
    for (double v : table.values[0]) ASSERT_GE(v, 0.0);
    const double mass = table.bound_fraction(p.horizon);
    EXPECT_GT(mass, 0.0);
    EXPECT_LE(mass, 1.0 + 1e-12) << "kappa_d " << kd;
  }
}

TEST(PhiGeneral, BoundFractionGrowsWithTimeWithoutDesorption) {
  const auto p = params(1e-6, 0.0);
  const PhiTable table = phi_general(p, 1024, 1e-5);
  double prev = 0.0;
  for (int i = 1; i <= 36; ++i) {
    const double b = table.bound_fraction(i * 100.0);
    EXPECT_GE(b, prev);
    prev = b;
  }
  EXPECT_NEAR(prev, bound_closed_form(p, p.horizon), 1e-12);
}

TEST(PhiGeneral, RejectsBadArguments) {
  const auto p = params(1e-6, 1e-3);
  EXPECT_THROW(phi_general(p, 1024, 0.0), std::domain_error);
  EXPECT_THROW(phi_general(p, 8, 1e-5), std::invalid_argument);
  EXPECT_THROW(phi_general(p, 64, 1e-5, {7200.0}), std::invalid_argument);
}

TEST(PhiPowers, CellMassesBoundedByProduct) {
  const auto p = params(1e-6, 0.0);
  const PhiTable table = phi_powers(p, 1024, 4);
  const double m1 = bound_closed_form(p, p.horizon);
  // restricted to (0, T] each power loses what spills beyond T
  for (std::size_t j = 0; j < 4; ++j) {
    double mass = 0.0;
    for (double v : table.cells[j]) mass += v * table.step;
    EXPECT_LE(mass, std::pow(m1, j + 1) + 1e-12);
  }
  double first = 0.0;
  for (double v : table.cells[0]) first += v * table.step;
  EXPECT_NEAR(first, m1, 1e-12);
}

// phi^{2*}(tau) = int_0^tau phi(s) phi(tau - s) ds, with s = tau sin^2(theta)
// removing both endpoint singularities.
TEST(PhiPowers, SecondPowerConvergesToQuadrature) {
  const auto p = params(1e-6, 0.0);
  boost::math::quadrature::gauss_kronrod<double, 61> gk;
  auto reference = [&](double tau) {
    return gk.integrate(
        [&](double th) {
          const double s = tau * std::sin(th) * std::sin(th);
          const double jac = 2.0 * tau * std::sin(th) * std::cos(th);
          if (s <= 0.0 || s >= tau) return 0.0;
          return phi_no_desorption(s, p) * phi_no_desorption(tau - s, p) * jac;
        },
        0.0, std::numbers::pi / 2.0, 15, 1e-13);
  };
  const PhiTable coarse = phi_powers(p, 1024, 2);
  const PhiTable fine = phi_powers(p, 4096, 2);
  for (double tau : {10.0, 100.0, 1000.0, 3000.0}) {
    const double ref = reference(tau);
    const double e_coarse = std::abs(coarse.power_at(2, tau) - ref);
    const double e_fine = std::abs(fine.power_at(2, tau) - ref);
    EXPECT_LT(e_fine, e_coarse / 6.0) << "tau " << tau;
    if (tau >= 100.0) {
      EXPECT_LT(e_fine, 1e-3 * ref) << "tau " << tau;
    }
  }
}

TEST(Truncation, MeasuredTailWithinEps) {
  const auto p = params(1e-6, 1e-3);
  for (double eps : {1e-3, 1e-5}) {
    const std::size_t steps = 1024;
    const double norm_sq = phi_l2_norm_sq(p, 0.5 * p.horizon / static_cast<double>(steps));
    const long J = truncation_order(eps, p, norm_sq);
    const PhiTable table = phi_powers(p, steps, 3 * J);
    for (double t : {p.horizon / 2.0, p.horizon}) {
      const auto tail = series_remainder(table, J + 1, 3 * J, t);
      EXPECT_LE(*std::max_element(tail.begin(), tail.end()), eps) << "eps " << eps << " J " << J;
    }
  }
}

TEST(PdeOracle, NoAdsorptionNoBinding) {
  const auto p = params(0.0, 0.0);
  const auto curve = pde_oracle(p, 6.0 * p.sigma_max(), 200, 4000);
  for (double b : curve.bound) EXPECT_EQ(b, 0.0);
}

TEST(PdeOracle, ConservesMass) {
  const auto p = params(1e-6, 1e-3);
  const auto curve = pde_oracle(p, 6.0 * p.sigma_max(), 400, 20000);
  for (std::size_t i = 0; i < curve.times.size(); ++i) {
    ASSERT_NEAR(curve.bound[i] + curve.free_mass[i], 1.0, 1e-3) << "step " << i;
  }
}

TEST(PdeOracle, ApproachesClosedFormAsGridRefines) {
  const auto p = params(1e-6, 0.0);
  const double exact = bound_closed_form(p, p.horizon);
  const auto curve = pde_oracle(p, 6.0 * p.sigma_max(), 2000, 200000);
  EXPECT_NEAR(curve.bound.back(), exact, 0.01 * exact);
}

TEST(PdeOracle, EnforcesStabilityAndDepth) {
  const auto p = params(1e-6, 0.0);
  try {
    pde_oracle(p, 6.0 * p.sigma_max(), 1000, 100);
    FAIL() << "expected a stability error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("n_t must be at least"), std::string::npos);
  }
  EXPECT_THROW(pde_oracle(p, p.sigma_max(), 100, 100000), std::invalid_argument);
}

TEST(SynthPsdr, EmptyAndNonAdsorbingAreZero) {
  const auto p = params(1e-6, 1e-3);
  const SigmaGrid grid({0.0, 2.0, 6.0, 14.0});
  const PhiTable phi = phi_general(p, 256, 1e-5);
  EXPECT_EQ(synth_psdr(SourceSpec{}, p, grid, phi, 16, 16), PsdrTensor(16, 16, 3));
  const auto p0 = params(0.0, 1e-3);
  const PhiTable phi0 = phi_general(p0, 256, 1e-5);
  SourceSpec one{{PointSource{3, 4, 1.0, 0.0, 3600.0}}};
  EXPECT_EQ(synth_psdr(one, p0, grid, phi0, 16, 16), PsdrTensor(16, 16, 3));
}

TEST(SynthPsdr, RejectsGridBeyondMaximumScale) {
  const auto p = params(1e-6, 0.0);
  const SigmaGrid grid({0.0, 15.0});
  const PhiTable phi = phi_general(p, 64, 1e-5);
  EXPECT_THROW(synth_psdr(SourceSpec{}, p, grid, phi, 8, 8), std::invalid_argument);
  SourceSpec outside{{PointSource{8, 0, 1.0, 0.0, 1.0}}};
  EXPECT_THROW(synth_psdr(outside, p, SigmaGrid({0.0, 14.0}), phi, 8, 8), std::invalid_argument);
}

TEST(SynthPsdr, SuperpositionAndLinearity) {
  const auto p = params(1e-6, 1e-3);
  const SigmaGrid grid({0.0, 0.4, 3.0, 8.0, 14.0});
  const PhiTable phi = phi_general(p, 512, 1e-5);
  SourceSpec a{{PointSource{2, 3, 1.5, 100.0, 3600.0}}};
  SourceSpec b{{PointSource{2, 3, 0.5, 0.0, 2000.0}, PointSource{7, 1, 2.0, 0.0, 3600.0}}};
  SourceSpec both{{a.sources[0], b.sources[0], b.sources[1]}};
  const auto ta = synth_psdr(a, p, grid, phi, 10, 10);
  const auto tb = synth_psdr(b, p, grid, phi, 10, 10);
  const auto tab = synth_psdr(both, p, grid, phi, 10, 10);
  for (std::size_t i = 0; i < tab.size(); ++i) {
    EXPECT_NEAR(tab.values()[i], ta.values()[i] + tb.values()[i], 1e-12 * (1.0 + tab.values()[i]));
  }
  SourceSpec a3 = a;
  a3.sources[0].rate *= 3.0;
  const auto t3 = synth_psdr(a3, p, grid, phi, 10, 10);
  for (std::size_t i = 0; i < t3.size(); ++i) EXPECT_NEAR(t3.values()[i], 3.0 * ta.values()[i], 1e-12 * (1.0 + t3.values()[i]));
  EXPECT_TRUE(tab.non_negative());
}

// Total bound count over a grid covering [0, sqrt(2DT)] equals
// rate * int_{t_start}^{t_stop} d(T - t) dt, with d the bound-fraction curve
// of the finite-difference oracle (or the closed form when kappa_d = 0).
TEST(SynthPsdr, TotalMassMatchesTimeIntegratedBoundFraction) {
  struct Case {
    double kd;
    double t_start;
    double t_stop;
  };
  for (const Case c : {Case{0.0, 0.0, 3600.0}, Case{1e-3, 600.0, 3000.0}}) {
    const auto p = params(1e-6, c.kd);
    const double smax = p.sigma_max_pixels();
    const SigmaGrid grid({0.0, 0.2 * smax, 0.5 * smax, smax});
    const PhiTable phi = phi_general(p, 2048, 1e-6);
    SourceSpec s{{PointSource{4, 4, 2.0, c.t_start, c.t_stop}}};
    const auto a = synth_psdr(s, p, grid, phi, 9, 9);
    double total = 0.0;
    for (std::size_t k = 0; k < grid.bins(); ++k) total += std::sqrt(grid.width(k)) * a(4, 4, k);

    double expected = 0.0;
    if (c.kd == 0.0) {
      boost::math::quadrature::gauss_kronrod<double, 61> gk;
      expected = 2.0 * gk.integrate([&](double t) { return bound_closed_form(p, p.horizon - t); }, c.t_start, c.t_stop,
                                    15, 1e-12);
    } else {
      const auto curve = pde_oracle(p, 6.0 * p.sigma_max(), 2000, 200000);
      const double dt = p.horizon / 200000.0;
      // d(T - t) for t in [t_start, t_stop] is d(s) for s in [T - t_stop, T - t_start]
      const auto lo = static_cast<std::size_t>(std::lround((p.horizon - c.t_stop) / dt));
      const auto hi = static_cast<std::size_t>(std::lround((p.horizon - c.t_start) / dt));
      for (std::size_t i = lo; i < hi; ++i) expected += 0.5 * (curve.bound[i] + curve.bound[i + 1]) * dt;
      expected *= 2.0;
    }
    EXPECT_NEAR(total, expected, 0.02 * expected) << "kappa_d " << c.kd;
  }
}

TEST(SensorModel, IdentityWithoutNoiseOrQuantization) {
  Image img(4, 5);
  for (std::size_t i = 0; i < img.size(); ++i) img.values()[i] = 0.1 * static_cast<double>(i);
  EXPECT_EQ(sensor_model(img, 0.0, 0, 9), img);
}

TEST(SensorModel, QuantizationErrorAtMostHalfALevel) {
  Image img(32, 32);
  std::mt19937_64 rng(2);
  for (auto& v : img.values()) v = std::uniform_real_distribution<double>(0.0, 7.0)(rng);
  for (int bits : {8, 12, 16}) {
    const auto q = sensor_model(img, 0.0, bits, 1);
    const double half = img.max() / std::ldexp(1.0, bits + 1);
    for (std::size_t i = 0; i < img.size(); ++i) {
      // a few ulps of the maximum absorb rounding in the difference itself
      ASSERT_LE(std::abs(q.values()[i] - img.values()[i]), half + 4.0 * std::numeric_limits<double>::epsilon() * img.max())
          << "bits " << bits;
    }
  }
}

TEST(SensorModel, NoiseStandardDeviation) {
  Image img(1000, 1000, 0.5);
  img(0, 0) = 1.0;
  const auto noisy = sensor_model(img, 0.01, 0, 1234);
  double sum = 0.0;
  double sum_sq = 0.0;
  const std::size_t n = img.size() - 1;
  for (std::size_t i = 1; i < img.size(); ++i) {
    const double d = noisy.values()[i] - 0.5;
    sum += d;
    sum_sq += d * d;
  }
  const double mean = sum / static_cast<double>(n);
  const double sd = std::sqrt(sum_sq / static_cast<double>(n) - mean * mean);
  EXPECT_NEAR(sd, 0.01, 0.01 * 0.01);
  EXPECT_NEAR(mean, 0.0, 5.0 * 0.01 / 1000.0);
}

TEST(SensorModel, DeterministicAndBounded) {
  Image img(64, 64);
  std::mt19937_64 rng(8);
  for (auto& v : img.values()) v = std::uniform_real_distribution<double>(0.0, 3.0)(rng);
  const auto a = sensor_model(img, 0.05, 12, 77);
  const auto b = sensor_model(img, 0.05, 12, 77);
  const auto c = sensor_model(img, 0.05, 12, 78);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_LE(a.max(), img.max());
  for (double v : a.values()) EXPECT_GE(v, 0.0);
}

TEST(SensorModel, RejectsBadArguments) {
  Image img(2, 2, 1.0);
  EXPECT_THROW(sensor_model(img, -0.1, 0, 1), std::invalid_argument);
  EXPECT_THROW(sensor_model(img, 0.0, 10, 1), std::invalid_argument);
  img(0, 0) = -1.0;
  EXPECT_THROW(sensor_model(img, 0.0, 0, 1), std::invalid_argument);
}
