#pragma once

/**
 * The primitive differentiable layers: affine maps with [out x in] weights,
 * exact GeLU, and the softplus used to keep scale parameters positive.
 * Backward passes return analytic gradients; the test suite checks them
 * against central differences.
 */

#include <cmath>
#include <numbers>

#include "ppm/tensor.hpp"

namespace ppm {

/// y = x W^T + b for a batch of row vectors. x: [n x in], W: [out x in],
/// b: [out], result [n x out].
inline Tensor affine_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || b.ndim() != 1) {
    throw std::invalid_argument("affine_forward: expected x[n,in] w[out,in] b[out]");
  }
  const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (w.dim(1) != in || b.dim(0) != out) {
    throw std::invalid_argument("affine_forward: shape mismatch: x" +
                                shape_to_string(x.shape()) + " w" +
                                shape_to_string(w.shape()) + " b" +
                                shape_to_string(b.shape()));
  }
  Tensor y({n, out});
  gemm_nt(x.data(), w.data(), y.data(), n, in, out);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = y.data() + i * out;
    for (std::size_t j = 0; j < out; ++j) row[j] += b[j];
  }
  return y;
}

struct AffineGrads {
  Tensor x;  // [n x in]
  Tensor w;  // [out x in]
  Tensor b;  // [out]
};

/// Gradients of an affine_forward call given upstream grad_y [n x out] and
/// the forward inputs. grad_b is the column sum of grad_y.
inline AffineGrads affine_backward(const Tensor& grad_y, const Tensor& x,
                                   const Tensor& w) {
  const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (grad_y.ndim() != 2 || grad_y.dim(0) != n || grad_y.dim(1) != out) {
    throw std::invalid_argument("affine_backward: grad_y shape mismatch");
  }
  AffineGrads g{Tensor({n, in}), Tensor({out, in}), Tensor({out})};
  gemm_nn(grad_y.data(), w.data(), g.x.data(), n, out, in);
  gemm_tn(grad_y.data(), x.data(), g.w.data(), out, n, in);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = grad_y.data() + i * out;
    for (std::size_t j = 0; j < out; ++j) g.b[j] += row[j];
  }
  return g;
}

// In-place accumulation variant used on the training hot path: adds the
// parameter gradients into gw/gb and writes the input gradient to gx.
inline void affine_backward_acc(const double* grad_y, const double* x,
                                const double* w, std::size_t n, std::size_t in,
                                std::size_t out, double* gx, double* gw,
                                double* gb) {
  gemm_nn(grad_y, w, gx, n, out, in);
  gemm_tn(grad_y, x, gw, out, n, in, /*accumulate=*/true);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = grad_y + i * out;
    for (std::size_t j = 0; j < out; ++j) gb[j] += row[j];
  }
}

/// Exact GeLU: x * Phi(x) with the Gaussian CDF, not the tanh surrogate.
inline double gelu_scalar(double x) {
  return 0.5 * x * std::erfc(-x / std::numbers::sqrt2);
}

/// d/dx GeLU = Phi(x) + x phi(x).
inline double gelu_grad_scalar(double x) {
  const double phi_cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
  const double phi_pdf =
      std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return phi_cdf + x * phi_pdf;
}

inline Tensor gelu_forward(const Tensor& x) {
  Tensor y(x.shape());
  const double* xi = x.data();
  double* yi = y.data();
  for (std::size_t i = 0; i < x.numel(); ++i) yi[i] = gelu_scalar(xi[i]);
  return y;
}

/// grad_x = grad_y * GeLU'(x), elementwise against the pre-activation x.
inline Tensor gelu_backward(const Tensor& grad_y, const Tensor& x) {
  if (!grad_y.same_shape(x)) {
    throw std::invalid_argument("gelu_backward: shape mismatch");
  }
  Tensor gx(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    gx[i] = grad_y[i] * gelu_grad_scalar(x[i]);
  }
  return gx;
}

/// Overflow-safe softplus: log(1 + e^x).
inline double softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

/// d/dx softplus = sigmoid(x).
inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace ppm
