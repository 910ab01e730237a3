#pragma once

// Reference implementations that materialize every linear operator as an
// explicit double-precision matrix. Built from index formulas only; nothing
// here calls the production kernels.

#include <cstddef>
#include <span>
#include <vector>

#include "cleardr/tensor.hpp"

namespace cleardr::oracle {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::vector<double> apply(std::span<const double> x) const;
  std::vector<double> apply_transpose(std::span<const double> y) const;
  Matrix transpose() const;
  Matrix operator*(const Matrix& rhs) const;
};

std::vector<double> widen(std::span<const float> x);

// G such that vec(conv2d_linear(x)) = G * vec(x), x of shape (1, c, h, w).
Matrix conv_matrix(const KernelBank& kernels, const Shape& input, std::size_t stride, std::size_t padding);
Shape conv_output(const KernelBank& kernels, const Shape& input, std::size_t stride, std::size_t padding);

// Selection matrix of max pooling evaluated at `activation` (lowest index wins
// among maxima), shape (pooled size, input size).
Matrix pool_selection_matrix(const Tensor& activation, std::size_t window, std::size_t stride);

// diag(activation > 0).
Matrix relu_gate_matrix(const Tensor& pre_activation);

// Per-channel spatial mean, (c, c*h*w).
Matrix gap_matrix(const Shape& input);

// Sum over channels, (h*w, c*h*w).
Matrix channel_sum_matrix(const Shape& input);

// Softmax cross-entropy of one logit vector, in double.
double cross_entropy(std::span<const double> logits, std::size_t label);

// Central-difference gradient of f at x.
template <class F>
std::vector<double> central_difference(F&& f, std::vector<double> x, double eps) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = f(x);
    x[i] = keep - eps;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

// |a - b| / max(1, |a|, |b|), the elementwise gradient-check metric.
double relative_error(double a, double b);

}  // namespace cleardr::oracle
