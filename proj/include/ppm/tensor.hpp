#pragma once

/**
 * Dense row-major double tensors plus the handful of BLAS-like kernels the
 * rest of the library is built on. Everything is shape-checked; shape
 * mismatches throw std::invalid_argument.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ppm/errors.hpp"

namespace ppm {

using Shape = std::vector<std::size_t>;

inline std::string shape_to_string(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    data_.assign(count_(shape_), 0.0);
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count_(shape_)) {
      throw std::invalid_argument("Tensor: data size " +
                                  std::to_string(data_.size()) +
                                  " does not match shape " +
                                  shape_to_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return {data_.data(), data_.size()}; }
  std::span<const double> span() const { return {data_.data(), data_.size()}; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i) { return data_.at(i); }
  double& at(std::size_t i, std::size_t j) {
    check_rank_(2);
    return data_[i * shape_[1] + j];
  }
  double at(std::size_t i, std::size_t j) const {
    check_rank_(2);
    return data_[i * shape_[1] + j];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    check_rank_(3);
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    check_rank_(3);
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  static std::size_t count_(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }
  void check_rank_(std::size_t r) const {
    if (shape_.size() != r) {
      throw std::invalid_argument("Tensor: rank-" + std::to_string(r) +
                                  " access on shape " +
                                  shape_to_string(shape_));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

inline bool all_finite(const Tensor& t) {
  for (double v : t.span()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

inline void ensure_finite(const Tensor& t, const char* what) {
  if (!all_finite(t)) {
    throw NumericError(std::string("non-finite values in ") + what);
  }
}

inline double sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.span()) s += v;
  return s;
}

inline double mean(const Tensor& t) {
  if (t.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  return sum(t) / static_cast<double>(t.numel());
}

inline double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.span()) m = std::max(m, std::abs(v));
  return m;
}

// C[m x n] = A[m x k] * B[k x n], optionally accumulating into C.
inline void gemm_nn(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n,
                    bool accumulate = false) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] = A[m x k] * B^T, with B stored [n x k].
inline void gemm_nt(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n,
                    bool accumulate = false) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double dot = 0.0;
      for (std::size_t p = 0; p < k; ++p) dot += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + dot : dot;
    }
  }
}

// C[m x n] = A^T * B, with A stored [k x m], B stored [k x n].
inline void gemm_tn(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n,
                    bool accumulate = false) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// Matrix product of two rank-2 tensors.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) {
    throw std::invalid_argument("matmul: rank-2 tensors required, got " +
                                shape_to_string(a.shape()) + " x " +
                                shape_to_string(b.shape()));
  }
  if (a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: inner dimensions disagree: " +
                                shape_to_string(a.shape()) + " x " +
                                shape_to_string(b.shape()));
  }
  Tensor c({a.dim(0), b.dim(1)});
  gemm_nn(a.data(), b.data(), c.data(), a.dim(0), a.dim(1), b.dim(1));
  return c;
}

/// log(sum_i exp(v_i)) with the usual max shift; -inf for an empty input
/// is not a supported case and throws instead.
inline double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("log_sum_exp: empty input");
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) {
    // All entries -inf: the sum is zero. Propagate -inf rather than NaN.
    return m;
  }
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline double log_sum_exp(const Tensor& t) { return log_sum_exp(t.span()); }

}  // namespace ppm
