#pragma once

// Images, PSDR tensors, the sigma grid and weighted observations.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace invdiff {

/// Dense M x N matrix of doubles, row-major.
class Image {
 public:
  Image() = default;
  Image(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  [[nodiscard]] std::size_t rows() const { return rows_; }
  [[nodiscard]] std::size_t cols() const { return cols_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t m, std::size_t n) { return data_[m * cols_ + n]; }
  double operator()(std::size_t m, std::size_t n) const { return data_[m * cols_ + n]; }

  [[nodiscard]] std::span<double> values() { return data_; }
  [[nodiscard]] std::span<const double> values() const { return data_; }

  [[nodiscard]] double max() const { return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end()); }

  bool operator==(const Image&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// M x N x K tensor, stored as K contiguous M x N planes.
class PsdrTensor {
 public:
  PsdrTensor() = default;
  PsdrTensor(std::size_t rows, std::size_t cols, std::size_t bins, double fill = 0.0)
      : rows_(rows), cols_(cols), bins_(bins), data_(rows * cols * bins, fill) {}

  [[nodiscard]] std::size_t rows() const { return rows_; }
  [[nodiscard]] std::size_t cols() const { return cols_; }
  [[nodiscard]] std::size_t bins() const { return bins_; }
  [[nodiscard]] std::size_t plane_size() const { return rows_ * cols_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t m, std::size_t n, std::size_t k) { return data_[k * plane_size() + m * cols_ + n]; }
  double operator()(std::size_t m, std::size_t n, std::size_t k) const {
    return data_[k * plane_size() + m * cols_ + n];
  }

  [[nodiscard]] std::span<double> plane(std::size_t k) { return {data_.data() + k * plane_size(), plane_size()}; }
  [[nodiscard]] std::span<const double> plane(std::size_t k) const {
    return {data_.data() + k * plane_size(), plane_size()};
  }

  [[nodiscard]] std::span<double> values() { return data_; }
  [[nodiscard]] std::span<const double> values() const { return data_; }

  [[nodiscard]] bool non_negative() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return v >= 0.0; });
  }

  bool operator==(const PsdrTensor&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t bins_ = 0;
  std::vector<double> data_;
};

/// Scale-bin boundaries 0 = s_0 < s_1 < ... < s_K in pixel units, plus the
/// set of bins the group regularizer acts on.
class SigmaGrid {
 public:
  SigmaGrid() = default;

  /// support[k] selects bin k (0-based); empty means every bin.
  explicit SigmaGrid(std::vector<double> boundaries, std::vector<bool> support = {})
      : boundaries_(std::move(boundaries)), support_(std::move(support)) {
    if (boundaries_.size() < 2) throw std::invalid_argument("SigmaGrid: need at least one bin");
    if (boundaries_.front() != 0.0) throw std::invalid_argument("SigmaGrid: first boundary must be 0");
    for (std::size_t k = 1; k < boundaries_.size(); ++k) {
      if (!std::isfinite(boundaries_[k]) || !(boundaries_[k] > boundaries_[k - 1])) {
        throw std::invalid_argument("SigmaGrid: boundaries must be finite and strictly increasing");
      }
    }
    if (support_.empty()) support_.assign(bins(), true);
    if (support_.size() != bins()) throw std::invalid_argument("SigmaGrid: support size must equal the bin count");
    if (std::none_of(support_.begin(), support_.end(), [](bool b) { return b; })) {
      throw std::invalid_argument("SigmaGrid: regularizer support must not be empty");
    }
  }

  [[nodiscard]] std::size_t bins() const { return boundaries_.empty() ? 0 : boundaries_.size() - 1; }
  [[nodiscard]] double lower(std::size_t k) const { return boundaries_[k]; }
  [[nodiscard]] double upper(std::size_t k) const { return boundaries_[k + 1]; }
  [[nodiscard]] double width(std::size_t k) const { return boundaries_[k + 1] - boundaries_[k]; }
  [[nodiscard]] double sigma_max() const { return boundaries_.back(); }
  [[nodiscard]] bool in_support(std::size_t k) const { return support_[k]; }
  [[nodiscard]] const std::vector<double>& boundaries() const { return boundaries_; }
  [[nodiscard]] const std::vector<bool>& support() const { return support_; }
  [[nodiscard]] bool full_support() const {
    return std::all_of(support_.begin(), support_.end(), [](bool b) { return b; });
  }

  bool operator==(const SigmaGrid&) const = default;

 private:
  std::vector<double> boundaries_;
  std::vector<bool> support_;
};

/// Observed image with its weighting matrix and binary source mask.
struct Observation {
  Image data;
  Image weights;
  Image mask;

  /// Unit weights and an all-ones mask.
  static Observation uniform(Image data) {
    Observation obs{std::move(data), {}, {}};
    obs.weights = Image(obs.data.rows(), obs.data.cols(), 1.0);
    obs.mask = Image(obs.data.rows(), obs.data.cols(), 1.0);
    return obs;
  }

  [[nodiscard]] std::size_t rows() const { return data.rows(); }
  [[nodiscard]] std::size_t cols() const { return data.cols(); }

  void validate() const {
    if (weights.rows() != data.rows() || weights.cols() != data.cols() || mask.rows() != data.rows() ||
        mask.cols() != data.cols()) {
      throw std::invalid_argument("Observation: data, weights and mask dimensions disagree");
    }
    bool any_weight = false;
    for (double w : weights.values()) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("Observation: weights must be finite and >= 0");
      any_weight = any_weight || w > 0.0;
    }
    if (!any_weight) throw std::invalid_argument("Observation: weights must not all be zero");
    for (double v : mask.values()) {
      if (v != 0.0 && v != 1.0) throw std::invalid_argument("Observation: mask must be binary");
    }
  }
};

inline void require_same_shape(const Image& a, std::size_t rows, std::size_t cols, const char* what) {
  if (a.rows() != rows || a.cols() != cols) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch");
  }
}

}  // namespace invdiff
