#pragma once

// Discrete diffusion kernels, one per scale bin:
//   g_k[m, n] = (1 / sqrt(Delta_k)) int_{s_{k-1}}^{s_k} omega_{s + s_b}(m) omega_{s + s_b}(n) ds

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "invdiff/grid.hpp"
#include "invdiff/mathcore.hpp"
#include "invdiff/parallel.hpp"

namespace invdiff {

/// Square (2R + 1)^2 kernel centred on the origin, row-major.
struct Kernel {
  long radius = 0;
  std::vector<double> values;

  [[nodiscard]] std::size_t width() const { return static_cast<std::size_t>(2 * radius + 1); }
  [[nodiscard]] double at(long m, long n) const {
    if (m < -radius || m > radius || n < -radius || n > radius) return 0.0;
    return values[static_cast<std::size_t>(m + radius) * width() + static_cast<std::size_t>(n + radius)];
  }
  [[nodiscard]] double mass() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
};

struct KernelBank {
  SigmaGrid grid;
  double sigma_shift = 0.0;
  int quad_order = 16;
  std::vector<Kernel> kernels;

  [[nodiscard]] std::size_t bins() const { return kernels.size(); }
  [[nodiscard]] long max_radius() const {
    long r = 0;
    for (const auto& k : kernels) r = std::max(r, k.radius);
    return r;
  }
};

/// Truncation radius for a kernel whose widest Gaussian has standard deviation
/// `sigma` pixels; drops less than 1e-8 of the 1D mass.
inline long kernel_radius(double sigma) { return static_cast<long>(std::ceil(6.0 * sigma)) + 2; }

/// Builds g_k for every bin with a Gauss-Legendre rule of `quad_order`
/// nodes per bin, evaluating omega at sigma + psf_sigma.
inline KernelBank build_kernel_bank(const SigmaGrid& grid, double psf_sigma, int quad_order = 16) {
  if (!(psf_sigma >= 0.0) || !std::isfinite(psf_sigma)) throw std::invalid_argument("build_kernel_bank: psf_sigma must be >= 0");
  if (quad_order < 4) throw std::invalid_argument("build_kernel_bank: quad_order must be >= 4");
  if (grid.bins() == 0) throw std::invalid_argument("build_kernel_bank: empty sigma grid");
  KernelBank bank{grid, psf_sigma, quad_order, std::vector<Kernel>(grid.bins())};
  const QuadratureRule rule = gauss_legendre(quad_order);

  parallel_for(grid.bins(), [&](std::size_t k) {
    const double lo = grid.lower(k);
    const double hi = grid.upper(k);
    const double half = 0.5 * (hi - lo);
    const double mid = 0.5 * (hi + lo);
    Kernel& kernel = bank.kernels[k];
    kernel.radius = kernel_radius(hi + psf_sigma);
    const std::size_t w = kernel.width();
    kernel.values.assign(w * w, 0.0);
    std::vector<double> row(w);
    for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
      const double sigma = mid + half * rule.nodes[q] + psf_sigma;
      for (long m = 0; m <= kernel.radius; ++m) {
        const double v = omega(sigma, m);
        row[static_cast<std::size_t>(kernel.radius + m)] = v;
        row[static_cast<std::size_t>(kernel.radius - m)] = v;
      }
      const double weight = rule.weights[q] * half;
      // weight * (row[i] * row[j]) keeps g[m, n] == g[n, m] bit for bit
      for (std::size_t i = 0; i < w; ++i) {
        for (std::size_t j = 0; j < w; ++j) kernel.values[i * w + j] += weight * (row[i] * row[j]);
      }
    }
    const double norm = 1.0 / std::sqrt(grid.width(k));
    for (double& v : kernel.values) v *= norm;
  });
  return bank;
}

}  // namespace invdiff
