#pragma once

// Discretized diffusion operator  A a = sum_k g_k (*) a_k  and its adjoint
//   (A* d)_k = mask . (g_k (*) [w^2 . d])
// where (*) is linear 2D convolution with zero padding, cropped to M x N.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstring>
#include <optional>
#include <stdexcept>
#include <vector>

#include "invdiff/fft.hpp"
#include "invdiff/grid.hpp"
#include "invdiff/kernels.hpp"
#include "invdiff/parallel.hpp"

namespace invdiff {

enum class ConvolutionStrategy {
  Auto,       // direct for small kernels, transform domain otherwise
  Direct,     // spatial domain for every bin
  Transform,  // FFT for every bin
};

/// Kernels with radius above this use the transform domain under Auto.
inline constexpr long kDirectRadiusLimit = 16;

/// Zero-padded linear convolution of an M x N plane with a symmetric kernel,
/// cropped back to M x N. Adds into `out` when accumulate is set.
inline void convolve_direct(std::span<const double> in, std::size_t rows, std::size_t cols, const Kernel& g,
                            std::span<double> out, bool accumulate = false) {
  if (!accumulate) std::fill(out.begin(), out.end(), 0.0);
  const long R = g.radius;
  const auto M = static_cast<long>(rows);
  const auto N = static_cast<long>(cols);
  const auto w = static_cast<long>(g.width());
  for (long m = 0; m < M; ++m) {
    const long i_lo = std::max(-R, m - M + 1);
    const long i_hi = std::min(R, m);
    double* dst = out.data() + m * N;
    for (long i = i_lo; i <= i_hi; ++i) {
      const double* src = in.data() + (m - i) * N;
      const double* grow = g.values.data() + (i + R) * w + R;  // grow[j] = g(i, j)
      for (long n = 0; n < N; ++n) {
        const long j_lo = std::max(-R, n - N + 1);
        const long j_hi = std::min(R, n);
        double s = 0.0;
        for (long j = j_lo; j <= j_hi; ++j) s += grow[j] * src[n - j];
        dst[n] += s;
      }
    }
  }
}

class DiffusionOperator {
 public:
  DiffusionOperator(KernelBank bank, std::size_t rows, std::size_t cols,
                    ConvolutionStrategy strategy = ConvolutionStrategy::Auto)
      : bank_(std::move(bank)), rows_(rows), cols_(cols) {
    if (rows == 0 || cols == 0) throw std::invalid_argument("DiffusionOperator: empty image");
    if (bank_.bins() == 0) throw std::invalid_argument("DiffusionOperator: empty kernel bank");
    transform_.resize(bank_.bins());
    long max_radius = -1;
    for (std::size_t k = 0; k < bank_.bins(); ++k) {
      const long r = bank_.kernels[k].radius;
      transform_[k] = strategy == ConvolutionStrategy::Transform ||
                      (strategy == ConvolutionStrategy::Auto && r > kDirectRadiusLimit);
      if (transform_[k]) max_radius = std::max(max_radius, r);
    }
    if (max_radius >= 0) {
      const auto R = static_cast<std::size_t>(max_radius);
      pad_rows_ = fft::good_size(std::max(rows + R, 2 * R + 1));
      pad_cols_ = fft::good_size(std::max(cols + R, 2 * R + 1));
      plan_.emplace(pad_rows_, pad_cols_);
      spectra_.resize(bank_.bins());
      const double scale = 1.0 / static_cast<double>(pad_rows_ * pad_cols_);
      for (std::size_t k = 0; k < bank_.bins(); ++k) {
        if (!transform_[k]) continue;
        auto real = fft::alloc_real(plan_->real_size());
        std::fill(real.get(), real.get() + plan_->real_size(), 0.0);
        const Kernel& g = bank_.kernels[k];
        for (long i = -g.radius; i <= g.radius; ++i) {
          const auto pi = static_cast<std::size_t>((i + static_cast<long>(pad_rows_)) % static_cast<long>(pad_rows_));
          for (long j = -g.radius; j <= g.radius; ++j) {
            const auto pj = static_cast<std::size_t>((j + static_cast<long>(pad_cols_)) % static_cast<long>(pad_cols_));
            real[pi * pad_cols_ + pj] = g.at(i, j) * scale;
          }
        }
        spectra_[k] = fft::alloc_complex(plan_->complex_size());
        plan_->forward(real.get(), spectra_[k].get());
      }
    }
  }

  [[nodiscard]] std::size_t rows() const { return rows_; }
  [[nodiscard]] std::size_t cols() const { return cols_; }
  [[nodiscard]] std::size_t bins() const { return bank_.bins(); }
  [[nodiscard]] const KernelBank& bank() const { return bank_; }
  [[nodiscard]] bool uses_transform(std::size_t k) const { return transform_[k]; }

  /// sum_k g_k (*) a_k
  [[nodiscard]] Image forward(const PsdrTensor& a) const {
    check_tensor(a, "forward");
    const std::size_t K = bins();
    std::vector<std::vector<double>> direct(K);
    std::vector<fft::ComplexBuffer> spectral(K);
    parallel_for(K, [&](std::size_t k) {
      const auto plane = a.plane(k);
      if (std::all_of(plane.begin(), plane.end(), [](double v) { return v == 0.0; })) return;
      if (transform_[k]) {
        spectral[k] = fft::alloc_complex(plan_->complex_size());
        transform_plane(plane, spectral[k].get());
        multiply(spectral[k].get(), spectra_[k].get());
      } else {
        direct[k].assign(rows_ * cols_, 0.0);
        convolve_direct(plane, rows_, cols_, bank_.kernels[k], direct[k]);
      }
    });
    Image out(rows_, cols_);
    auto dst = out.values();
    fft::ComplexBuffer total;
    for (std::size_t k = 0; k < K; ++k) {
      if (!direct[k].empty()) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += direct[k][i];
      }
      if (spectral[k]) {
        if (!total) {
          total = std::move(spectral[k]);
        } else {
          const std::size_t n = plan_->complex_size();
          for (std::size_t i = 0; i < n; ++i) {
            total[i][0] += spectral[k][i][0];
            total[i][1] += spectral[k][i][1];
          }
        }
      }
    }
    if (total) {
      auto real = fft::alloc_real(plan_->real_size());
      plan_->inverse(total.get(), real.get());
      for (std::size_t m = 0; m < rows_; ++m) {
        for (std::size_t n = 0; n < cols_; ++n) dst[m * cols_ + n] += real[m * pad_cols_ + n];
      }
    }
    return out;
  }

  /// g_k (*) x for every bin (the kernels are even, so this is also the
  /// correlation, i.e. the unweighted adjoint of forward).
  [[nodiscard]] PsdrTensor spread(const Image& x) const {
    require_same_shape(x, rows_, cols_, "spread");
    const std::size_t K = bins();
    PsdrTensor out(rows_, cols_, K);
    fft::ComplexBuffer base;
    if (plan_ && std::any_of(transform_.begin(), transform_.end(), [](bool t) { return t; })) {
      base = fft::alloc_complex(plan_->complex_size());
      transform_plane(x.values(), base.get());
    }
    parallel_for(K, [&](std::size_t k) {
      auto plane = out.plane(k);
      if (transform_[k]) {
        const std::size_t n = plan_->complex_size();
        auto prod = fft::alloc_complex(n);
        std::memcpy(prod.get(), base.get(), n * sizeof(fftw_complex));
        multiply(prod.get(), spectra_[k].get());
        auto real = fft::alloc_real(plan_->real_size());
        plan_->inverse(prod.get(), real.get());
        for (std::size_t m = 0; m < rows_; ++m) {
          std::copy(real.get() + m * pad_cols_, real.get() + m * pad_cols_ + cols_, plane.data() + m * cols_);
        }
      } else {
        convolve_direct(x.values(), rows_, cols_, bank_.kernels[k], plane);
      }
    });
    return out;
  }

  /// mask . (g_k (*) [w^2 . d]) for every bin.
  [[nodiscard]] PsdrTensor adjoint(const Image& d, const Observation& obs) const {
    require_same_shape(d, rows_, cols_, "adjoint");
    check_observation(obs, "adjoint");
    Image weighted(rows_, cols_);
    auto wv = weighted.values();
    const auto dv = d.values();
    const auto w = obs.weights.values();
    for (std::size_t i = 0; i < wv.size(); ++i) wv[i] = w[i] * w[i] * dv[i];
    PsdrTensor out = spread(weighted);
    const auto mask = obs.mask.values();
    for (std::size_t k = 0; k < bins(); ++k) {
      auto plane = out.plane(k);
      for (std::size_t i = 0; i < plane.size(); ++i) plane[i] *= mask[i];
    }
    return out;
  }

  /// ||A a - d_obs||_w^2
  [[nodiscard]] double weighted_residual_norm_sq(const PsdrTensor& a, const Observation& obs) const {
    check_observation(obs, "weighted_residual_norm_sq");
    return residual_norm_sq(forward(a), obs);
  }

  /// sum w^2 (x - d_obs)^2 for an already computed prediction x.
  [[nodiscard]] static double residual_norm_sq(const Image& prediction, const Observation& obs) {
    const auto x = prediction.values();
    const auto d = obs.data.values();
    const auto w = obs.weights.values();
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double r = w[i] * (x[i] - d[i]);
      s += r * r;
    }
    return s;
  }

  /// Power iteration on a -> A*(A a), started from the mask. Entry i is the
  /// estimate of ||A|| (largest singular value, weighted norm on the image
  /// side) after i + 1 iterations; the Rayleigh quotients are non-decreasing.
  [[nodiscard]] std::vector<double> norm_history(const Observation& obs, int iters) const {
    check_observation(obs, "op_norm_estimate");
    if (iters < 1) throw std::invalid_argument("op_norm_estimate: iters must be positive");
    PsdrTensor x(rows_, cols_, bins());
    for (std::size_t k = 0; k < bins(); ++k) {
      auto plane = x.plane(k);
      std::copy(obs.mask.values().begin(), obs.mask.values().end(), plane.begin());
    }
    std::vector<double> history;
    history.reserve(static_cast<std::size_t>(iters));
    double best = 0.0;
    for (int it = 0; it < iters; ++it) {
      const double xnorm = norm(x.values());
      if (xnorm == 0.0) {
        history.push_back(best);
        continue;
      }
      for (double& v : x.values()) v /= xnorm;
      const Image y = forward(x);
      double yy = 0.0;
      const auto yv = y.values();
      const auto w = obs.weights.values();
      for (std::size_t i = 0; i < yv.size(); ++i) yy += w[i] * w[i] * yv[i] * yv[i];
      best = std::max(best, std::sqrt(yy));
      history.push_back(best);
      x = adjoint(y, obs);
    }
    return history;
  }

  [[nodiscard]] double norm_estimate(const Observation& obs, int iters) const { return norm_history(obs, iters).back(); }

 private:
  static double norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  }

  void check_tensor(const PsdrTensor& a, const char* what) const {
    if (a.rows() != rows_ || a.cols() != cols_ || a.bins() != bins()) {
      throw std::invalid_argument(std::string(what) + ": tensor dimensions do not match the operator");
    }
  }

  void check_observation(const Observation& obs, const char* what) const {
    require_same_shape(obs.data, rows_, cols_, what);
    require_same_shape(obs.weights, rows_, cols_, what);
    require_same_shape(obs.mask, rows_, cols_, what);
  }

  void transform_plane(std::span<const double> plane, fftw_complex* out) const {
    auto real = fft::alloc_real(plan_->real_size());
    std::fill(real.get(), real.get() + plan_->real_size(), 0.0);
    for (std::size_t m = 0; m < rows_; ++m) {
      std::copy(plane.data() + m * cols_, plane.data() + (m + 1) * cols_, real.get() + m * pad_cols_);
    }
    plan_->forward(real.get(), out);
  }

  void multiply(fftw_complex* x, const fftw_complex* g) const {
    const std::size_t n = plan_->complex_size();
    for (std::size_t i = 0; i < n; ++i) {
      const double re = x[i][0] * g[i][0] - x[i][1] * g[i][1];
      const double im = x[i][0] * g[i][1] + x[i][1] * g[i][0];
      x[i][0] = re;
      x[i][1] = im;
    }
  }

  KernelBank bank_;
  std::size_t rows_;
  std::size_t cols_;
  std::vector<bool> transform_;
  std::size_t pad_rows_ = 0;
  std::size_t pad_cols_ = 0;
  std::optional<fft::Plan2D> plan_;
  std::vector<fft::ComplexBuffer> spectra_;
};

// Convenience wrappers that build a one-off operator.

inline Image forward(const PsdrTensor& a, const KernelBank& bank,
                     ConvolutionStrategy strategy = ConvolutionStrategy::Auto) {
  return DiffusionOperator(bank, a.rows(), a.cols(), strategy).forward(a);
}

inline PsdrTensor adjoint(const Image& d, const Observation& obs, const KernelBank& bank,
                          ConvolutionStrategy strategy = ConvolutionStrategy::Auto) {
  return DiffusionOperator(bank, d.rows(), d.cols(), strategy).adjoint(d, obs);
}

inline double weighted_residual_norm_sq(const PsdrTensor& a, const Observation& obs, const KernelBank& bank) {
  return DiffusionOperator(bank, obs.rows(), obs.cols()).weighted_residual_norm_sq(a, obs);
}

inline double op_norm_estimate(const Observation& obs, const KernelBank& bank, int iters) {
  if (iters < 20) throw std::invalid_argument("op_norm_estimate: iters must be >= 20");
  return DiffusionOperator(bank, obs.rows(), obs.cols()).norm_estimate(obs, iters);
}

/// <x, y>_w = sum w^2 x y
inline double weighted_inner(const Image& x, const Image& y, const Image& weights) {
  double s = 0.0;
  const auto xv = x.values();
  const auto yv = y.values();
  const auto w = weights.values();
  for (std::size_t i = 0; i < xv.size(); ++i) s += w[i] * w[i] * xv[i] * yv[i];
  return s;
}

}  // namespace invdiff
