#pragma once

// Thin RAII layer over FFTW's 2D real-to-complex transforms.

#include <algorithm>
#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <stdexcept>

#include <fftw3.h>

namespace invdiff::fft {

// The FFTW planner is not re-entrant; plan execution on distinct arrays is.
inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

using RealBuffer = std::unique_ptr<double[], FftwFree>;
using ComplexBuffer = std::unique_ptr<fftw_complex[], FftwFree>;

inline RealBuffer alloc_real(std::size_t n) {
  auto* p = fftw_alloc_real(n);
  if (p == nullptr) throw std::bad_alloc();
  return RealBuffer(p);
}

inline ComplexBuffer alloc_complex(std::size_t n) {
  auto* p = fftw_alloc_complex(n);
  if (p == nullptr) throw std::bad_alloc();
  return ComplexBuffer(p);
}

/// Smallest n' >= n whose prime factors are all in {2, 3, 5, 7}.
inline std::size_t good_size(std::size_t n) {
  for (std::size_t m = std::max<std::size_t>(n, 1);; ++m) {
    std::size_t r = m;
    for (std::size_t f : {2, 3, 5, 7}) {
      while (r % f == 0) r /= f;
    }
    if (r == 1) return m;
  }
}

/// Forward and inverse plans for a rows x cols real array. Plans are made
/// with FFTW_ESTIMATE so results are reproducible run to run.
class Plan2D {
 public:
  Plan2D(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {
    auto real = alloc_real(real_size());
    auto spec = alloc_complex(complex_size());
    std::lock_guard lock(planner_mutex());
    forward_ = fftw_plan_dft_r2c_2d(static_cast<int>(rows), static_cast<int>(cols), real.get(), spec.get(),
                                    FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_2d(static_cast<int>(rows), static_cast<int>(cols), spec.get(), real.get(),
                                    FFTW_ESTIMATE);
    if (forward_ == nullptr || inverse_ == nullptr) throw std::runtime_error("fftw: planning failed");
  }

  Plan2D(const Plan2D&) = delete;
  Plan2D& operator=(const Plan2D&) = delete;

  ~Plan2D() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
  }

  [[nodiscard]] std::size_t rows() const { return rows_; }
  [[nodiscard]] std::size_t cols() const { return cols_; }
  [[nodiscard]] std::size_t real_size() const { return rows_ * cols_; }
  [[nodiscard]] std::size_t complex_size() const { return rows_ * (cols_ / 2 + 1); }

  void forward(double* in, fftw_complex* out) const { fftw_execute_dft_r2c(forward_, in, out); }
  /// Unnormalized: the result is scaled by rows * cols. Destroys `in`.
  void inverse(fftw_complex* in, double* out) const { fftw_execute_dft_c2r(inverse_, in, out); }

 private:
  std::size_t rows_;
  std::size_t cols_;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
};

}  // namespace invdiff::fft
