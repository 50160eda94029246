#include <cmath>
#include <random>
#include <stdexcept>

#include <gtest/gtest.h>

#include "invdiff/operator.hpp"
#include "oracles.hpp"

using namespace invdiff;

namespace {

Image random_image(std::mt19937_64& rng, std::size_t M, std::size_t N, double lo, double hi) {
  Image img(M, N);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : img.values()) v = u(rng);
  return img;
}

PsdrTensor random_tensor(std::mt19937_64& rng, std::size_t M, std::size_t N, std::size_t K, double lo, double hi) {
  PsdrTensor a(M, N, K);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : a.values()) v = u(rng);
  return a;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

Observation random_observation(std::mt19937_64& rng, std::size_t M, std::size_t N) {
  Observation obs{random_image(rng, M, N, -1.0, 1.0), random_image(rng, M, N, 0.0, 2.0), Image(M, N)};
  std::bernoulli_distribution coin(0.8);
  for (auto& v : obs.mask.values()) v = coin(rng) ? 1.0 : 0.0;
  return obs;
}

}  // namespace

TEST(KernelBank, MassEqualsSqrtWidth) {
  const SigmaGrid grid({0.0, 2.0, 5.0, 10.0, 20.0});
  for (double psf : {0.0, 0.5, 1.5}) {
    const KernelBank bank = build_kernel_bank(grid, psf, 16);
    ASSERT_EQ(bank.bins(), 4u);
    for (std::size_t k = 0; k < bank.bins(); ++k) {
      EXPECT_NEAR(bank.kernels[k].mass(), std::sqrt(grid.width(k)), 1e-6) << "bin " << k << " psf " << psf;
    }
  }
}

TEST(KernelBank, SingleBinMass) {
  for (double s1 : {0.3, 1.0, 7.5}) {
    const KernelBank bank = build_kernel_bank(SigmaGrid({0.0, s1}), 0.0, 16);
    EXPECT_NEAR(bank.kernels[0].mass(), std::sqrt(s1), 1e-6);
  }
}

TEST(KernelBank, ExactSymmetryAndNonNegativity) {
  const KernelBank bank = build_kernel_bank(SigmaGrid({0.0, 0.7, 3.0, 9.0}), 0.4, 16);
  for (const auto& g : bank.kernels) {
    for (long m = -g.radius; m <= g.radius; ++m) {
      for (long n = -g.radius; n <= g.radius; ++n) {
        ASSERT_GE(g.at(m, n), 0.0);
        ASSERT_EQ(g.at(m, n), g.at(n, m));
        ASSERT_EQ(g.at(m, n), g.at(-m, n));
        ASSERT_EQ(g.at(m, n), g.at(m, -n));
      }
    }
  }
}

namespace {

double max_entry_change(const KernelBank& lo, const KernelBank& hi, std::size_t k) {
  double d = 0.0;
  for (std::size_t i = 0; i < lo.kernels[k].values.size(); ++i) {
    d = std::max(d, std::abs(lo.kernels[k].values[i] - hi.kernels[k].values[i]));
  }
  return d;
}

}  // namespace

TEST(KernelBank, QuadratureSelfConvergenceAwayFromOrigin) {
  const SigmaGrid grid({0.0, 2.0, 5.0, 10.0, 20.0});
  for (double psf : {0.0, 0.5}) {
    const KernelBank lo = build_kernel_bank(grid, psf, 8);
    const KernelBank hi = build_kernel_bank(grid, psf, 32);
    for (std::size_t k = 1; k < grid.bins(); ++k) {
      EXPECT_LT(max_entry_change(lo, hi, k), 1e-9) << "bin " << k << " psf " << psf;
    }
  }
}

// Bin [0, s_1] integrates terms like exp(-1 / (2 sigma^2)), which are not
// analytic at sigma = 0, so an 8-node rule converges slowly there.
TEST(KernelBank, QuadratureSelfConvergenceFirstBin) {
  const SigmaGrid grid({0.0, 2.0, 5.0, 10.0, 20.0});
  for (double psf : {0.0, 0.5}) {
    const KernelBank lo = build_kernel_bank(grid, psf, 8);
    const KernelBank hi = build_kernel_bank(grid, psf, 32);
    EXPECT_LT(max_entry_change(lo, hi, 0), 1e-9) << "psf " << psf;
  }
}

TEST(KernelBank, DefaultOrderIsConverged) {
  const SigmaGrid grid({0.0, 2.0, 5.0, 10.0, 20.0});
  const KernelBank lo = build_kernel_bank(grid, 0.5, 16);
  const KernelBank hi = build_kernel_bank(grid, 0.5, 64);
  for (std::size_t k = 0; k < grid.bins(); ++k) EXPECT_LT(max_entry_change(lo, hi, k), 1e-12) << "bin " << k;
}

TEST(KernelBank, MatchesDirectSigmaIntegral) {
  // one entry per bin against adaptive quadrature of omega(m) omega(n) over sigma
  const SigmaGrid grid({0.0, 1.0, 4.0});
  const double psf = 0.5;
  const KernelBank bank = build_kernel_bank(grid, psf, 16);
  boost::math::quadrature::gauss_kronrod<double, 61> gk;
  for (std::size_t k = 0; k < grid.bins(); ++k) {
    for (auto [m, n] : {std::pair{0L, 0L}, std::pair{1L, 2L}, std::pair{3L, 0L}}) {
      const double ref = gk.integrate([&](double s) { return oracle::omega(s + psf, m) * oracle::omega(s + psf, n); },
                                      grid.lower(k), grid.upper(k), 10, 1e-13) /
                         std::sqrt(grid.width(k));
      EXPECT_NEAR(bank.kernels[k].at(m, n), ref, 1e-10) << "bin " << k << " (" << m << "," << n << ")";
    }
  }
}

TEST(KernelBank, RejectsBadArguments) {
  const SigmaGrid grid({0.0, 1.0});
  EXPECT_THROW(build_kernel_bank(grid, 0.0, 3), std::invalid_argument);
  EXPECT_THROW(build_kernel_bank(grid, -1.0, 16), std::invalid_argument);
}

TEST(SigmaGridType, Validation) {
  EXPECT_THROW(SigmaGrid({0.0}), std::invalid_argument);
  EXPECT_THROW(SigmaGrid({0.5, 1.0}), std::invalid_argument);
  EXPECT_THROW(SigmaGrid({0.0, 2.0, 2.0}), std::invalid_argument);
  EXPECT_THROW(SigmaGrid({0.0, 1.0}, {false}), std::invalid_argument);
  EXPECT_THROW(SigmaGrid({0.0, 1.0}, {true, true}), std::invalid_argument);
  const SigmaGrid g({0.0, 1.0, 3.0}, {false, true});
  EXPECT_EQ(g.bins(), 2u);
  EXPECT_EQ(g.width(1), 2.0);
  EXPECT_FALSE(g.full_support());
}

TEST(ObservationType, Validation) {
  Observation obs = Observation::uniform(Image(3, 3));
  EXPECT_NO_THROW(obs.validate());
  obs.weights = Image(3, 3, 0.0);
  EXPECT_THROW(obs.validate(), std::invalid_argument);
  obs.weights = Image(3, 3, 1.0);
  obs.mask(1, 1) = 0.5;
  EXPECT_THROW(obs.validate(), std::invalid_argument);
  obs.mask = Image(2, 3, 1.0);
  EXPECT_THROW(obs.validate(), std::invalid_argument);
}

TEST(Forward, ZeroMapsToZero) {
  const KernelBank bank = build_kernel_bank(SigmaGrid({0.0, 1.0, 5.0}), 0.5);
  EXPECT_EQ(forward(PsdrTensor(20, 20, 2), bank), Image(20, 20));
}

TEST(Forward, ImpulseReproducesKernel) {
  const KernelBank bank = build_kernel_bank(SigmaGrid({0.0, 1.0, 5.0}), 0.5);
  for (auto strategy : {ConvolutionStrategy::Direct, ConvolutionStrategy::Transform}) {
    for (std::size_t k = 0; k < 2; ++k) {
      PsdrTensor a(80, 80, 2);
      a(40, 40, k) = 1.0;
      const Image out = forward(a, bank, strategy);
      const Kernel& g = bank.kernels[k];
      for (long m = 0; m < 80; ++m) {
        for (long n = 0; n < 80; ++n) {
          ASSERT_NEAR(out(m, n), g.at(m - 40, n - 40), 1e-15) << "k " << k;
        }
      }
    }
  }
}

TEST(Forward, DirectAndTransformAgree) {
  std::mt19937_64 rng(11);
  const KernelBank bank = build_kernel_bank(SigmaGrid({0.0, 1.0, 4.0, 12.0}), 0.5);
  const DiffusionOperator direct(bank, 32, 32, ConvolutionStrategy::Direct);
  const DiffusionOperator transform(bank, 32, 32, ConvolutionStrategy::Transform);
  for (int trial = 0; trial < 5; ++trial) {
    const PsdrTensor a = random_tensor(rng, 32, 32, 3, 0.0, 1.0);
    const Image x = direct.forward(a);
    const Image y = transform.forward(a);
    double diff = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) diff = std::max(diff, std::abs(x.values()[i] - y.values()[i]));
    EXPECT_LE(diff, 1e-10 * x.max());

    const Image d = random_image(rng, 32, 32, -1.0, 1.0);
    const PsdrTensor p = direct.spread(d);
    const PsdrTensor q = transform.spread(d);
    double pmax = 0.0;
    diff = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      pmax = std::max(pmax, std::abs(p.values()[i]));
      diff = std::max(diff, std::abs(p.values()[i] - q.values()[i]));
    }
    EXPECT_LE(diff, 1e-10 * pmax);
  }
}

TEST(Forward, KernelLargerThanImage) {
  // a radius well beyond the image size exercises the padded transform size
  std::mt19937_64 rng(12);
  const KernelBank bank = build_kernel_bank(SigmaGrid({0.0, 20.0}), 0.0);
  ASSERT_GT(bank.kernels[0].radius, 24);
  const PsdrTensor a = random_tensor(rng, 12, 9, 1, 0.0, 1.0);
  const Image x = forward(a, bank, ConvolutionStrategy::Direct);
  const Image y = forward(a, bank, ConvolutionStrategy::Transform);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x.values()[i], y.values()[i], 1e-12 * x.max());
}

TEST(Forward, Linear) {
  std::mt19937_64 rng(13);
  const KernelBank bank = build_kernel_bank(SigmaGrid({0.0, 1.0, 6.0, 20.0}), 0.5);
  const DiffusionOperator op(bank, 24, 24);
  const PsdrTensor x = random_tensor(rng, 24, 24, 3, -1.0, 1.0);
  const PsdrTensor y = random_tensor(rng, 24, 24, 3, -1.0, 1.0);
  PsdrTensor z(24, 24, 3);
  for (std::size_t i = 0; i < z.size(); ++i) z.values()[i] = 2.5 * x.values()[i] - 0.75 * y.values()[i];
  const Image fx = op.forward(x);
  const Image fy = op.forward(y);
  const Image fz = op.forward(z);
  for (std::size_t i = 0; i < fz.size(); ++i) {
    EXPECT_NEAR(fz.values()[i], 2.5 * fx.values()[i] - 0.75 * fy.values()[i], 1e-13);
  }

  const Observation obs = Observation::uniform(Image(24, 24));
  const Image u = random_image(rng, 24, 24, -1.0, 1.0);
  const Image v = random_image(rng, 24, 24, -1.0, 1.0);
  Image w(24, 24);
  for (std::size_t i = 0; i < w.size(); ++i) w.values()[i] = -1.5 * u.values()[i] + 3.0 * v.values()[i];
  const PsdrTensor au = op.adjoint(u, obs);
  const PsdrTensor av = op.adjoint(v, obs);
  const PsdrTensor aw = op.adjoint(w, obs);
  for (std::size_t i = 0; i < aw.size(); ++i) {
    EXPECT_NEAR(aw.values()[i], -1.5 * au.values()[i] + 3.0 * av.values()[i], 1e-13);
  }
}

TEST(Forward, NonNegativeForNonNegativeInput) {
  std::mt19937_64 rng(14);
  const KernelBank bank = build_kernel_bank(SigmaGrid({0.0, 0.5, 8.0, 25.0}), 0.5);
  const Image out = forward(random_tensor(rng, 40, 40, 3, 0.0, 1.0), bank);
  for (double v : out.values()) EXPECT_GE(v, 0.0);
}

TEST(Forward, DimensionMismatchThrows) {
  const KernelBank bank = build_kernel_bank(SigmaGrid({0.0, 1.0, 2.0}), 0.0);
  const DiffusionOperator op(bank, 8, 8);
  EXPECT_THROW(op.forward(PsdrTensor(8, 8, 3)), std::invalid_argument);
  EXPECT_THROW(op.forward(PsdrTensor(8, 7, 2)), std::invalid_argument);
  EXPECT_THROW(op.adjoint(Image(7, 8), Observation::uniform(Image(8, 8))), std::invalid_argument);
}

TEST(Adjoint, TrivialCases) {
  std::mt19937_64 rng(15);
  const KernelBank bank = build_kernel_bank(SigmaGrid({0.0, 1.0, 5.0}), 0.5);
  Observation obs = Observation::uniform(random_image(rng, 16, 16, 0.0, 1.0));
  EXPECT_EQ(adjoint(Image(16, 16), obs, bank), PsdrTensor(16, 16, 2));
  obs.mask = Image(16, 16, 0.0);
  EXPECT_EQ(adjoint(random_image(rng, 16, 16, -1.0, 1.0), obs, bank), PsdrTensor(16, 16, 2));
}

TEST(Adjoint, InnerProductIdentity) {
  std::mt19937_64 rng(16);
  const KernelBank bank = build_kernel_bank(SigmaGrid({0.0, 1.0, 3.0, 8.0, 20.0}), 0.5);
  const DiffusionOperator op(bank, 32, 32);
  for (int trial = 0; trial < 20; ++trial) {
    const Observation obs = random_observation(rng, 32, 32);
    PsdrTensor a = random_tensor(rng, 32, 32, 4, -1.0, 1.0);
    // the forward operator sees a only on the mask
    for (std::size_t k = 0; k < 4; ++k) {
      auto plane = a.plane(k);
      for (std::size_t i = 0; i < plane.size(); ++i) plane[i] *= obs.mask.values()[i];
    }
    const Image d = random_image(rng, 32, 32, -1.0, 1.0);
    const double lhs = weighted_inner(op.forward(a), d, obs.weights);
    const double rhs = dot(a.values(), op.adjoint(d, obs).values());
    EXPECT_LE(std::abs(lhs - rhs) / (norm(a.values()) * norm(d.values())), 1e-10);
  }
}

TEST(ResidualNorm, Cases) {
  std::mt19937_64 rng(17);
  const KernelBank bank = build_kernel_bank(SigmaGrid({0.0, 1.0, 5.0}), 0.5);
  const PsdrTensor a = random_tensor(rng, 20, 20, 2, 0.0, 1.0);
  Observation obs = Observation::uniform(forward(a, bank));
  EXPECT_EQ(weighted_residual_norm_sq(a, obs, bank), 0.0);

  obs.data = random_image(rng, 20, 20, 0.0, 1.0);
  obs.weights = random_image(rng, 20, 20, 0.0, 2.0);
  const Image pred = forward(a, bank);
  double expected = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = pred.values()[i] - obs.data.values()[i];
    expected += obs.weights.values()[i] * obs.weights.values()[i] * r * r;
  }
  EXPECT_NEAR(weighted_residual_norm_sq(a, obs, bank), expected, 1e-12 * expected);

  obs.weights = Image(20, 20);
  obs.weights(3, 4) = 1.5;
  const double r = pred(3, 4) - obs.data(3, 4);
  EXPECT_NEAR(weighted_residual_norm_sq(a, obs, bank), 2.25 * r * r, 1e-15);
}

TEST(NormEstimate, YoungBoundForSingleBin) {
  for (double s1 : {0.5, 3.0, 10.0}) {
    const KernelBank bank = build_kernel_bank(SigmaGrid({0.0, s1}), 0.0);
    const Observation obs = Observation::uniform(Image(32, 32));
    const double L = op_norm_estimate(obs, bank, 50);
    EXPECT_LE(L, std::sqrt(s1) * (1.0 + 1e-12));
    EXPECT_GT(L, 0.5 * std::sqrt(s1));
  }
}

TEST(NormEstimate, BoundedBySqrtSigmaMaxTimesMaxWeight) {
  std::mt19937_64 rng(18);
  const SigmaGrid grid({0.0, 0.4, 3.0, 4.0, 6.0, 8.0, 10.0, 14.0});
  const KernelBank bank = build_kernel_bank(grid, 0.5);
  for (int trial = 0; trial < 3; ++trial) {
    Observation obs = random_observation(rng, 32, 32);
    const double L = op_norm_estimate(obs, bank, 50);
    EXPECT_LE(L, std::sqrt(grid.sigma_max()) * obs.weights.max());
    EXPECT_GT(L, 0.0);
  }
}

TEST(NormEstimate, MonotoneAndConverged) {
  std::mt19937_64 rng(19);
  const KernelBank bank = build_kernel_bank(SigmaGrid({0.0, 1.0, 4.0, 9.0}), 0.5);
  const Observation obs = random_observation(rng, 32, 32);
  const DiffusionOperator op(bank, 32, 32);
  const auto history = op.norm_history(obs, 200);
  for (std::size_t i = 1; i < history.size(); ++i) EXPECT_GE(history[i], history[i - 1]);
  const double a = op.norm_estimate(obs, 100);
  const double b = op.norm_estimate(obs, 200);
  EXPECT_LE(std::abs(a - b), 1e-6 * b);
}

TEST(NormEstimate, ZeroOperatorAndArguments) {
  const KernelBank bank = build_kernel_bank(SigmaGrid({0.0, 1.0}), 0.0);
  Observation obs = Observation::uniform(Image(8, 8));
  obs.mask = Image(8, 8, 0.0);
  EXPECT_EQ(op_norm_estimate(obs, bank, 20), 0.0);
  EXPECT_THROW(op_norm_estimate(Observation::uniform(Image(8, 8)), bank, 19), std::invalid_argument);
}

TEST(Nullspace, InteriorMassIsConserved) {
  std::mt19937_64 rng(20);
  const SigmaGrid grid({0.0, 1.0, 3.0, 6.0});
  const KernelBank bank = build_kernel_bank(grid, 0.5);
  const long R = bank.max_radius();
  const std::size_t M = 2 * static_cast<std::size_t>(R) + 20;
  PsdrTensor a(M, M, 3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t m = R; m < M - R; ++m) {
      for (std::size_t n = R; n < M - R; ++n) a(m, n, k) = u(rng);
    }
  }
  const Image out = forward(a, bank);
  double lhs = 0.0;
  for (double v : out.values()) lhs += v;
  double rhs = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    double s = 0.0;
    for (double v : a.plane(k)) s += v;
    rhs += std::sqrt(grid.width(k)) * s;
  }
  EXPECT_NEAR(lhs, rhs, 1e-8 * rhs);
}
