#include "cleardr/oracle/dense.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cleardr::oracle {

std::vector<double> Matrix::apply(std::span<const double> x) const {
  if (x.size() != cols) throw std::invalid_argument("oracle: apply size mismatch");
  std::vector<double> y(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += (*this)(r, c) * x[c];
    y[r] = acc;
  }
  return y;
}

std::vector<double> Matrix::apply_transpose(std::span<const double> y) const {
  if (y.size() != rows) throw std::invalid_argument("oracle: apply_transpose size mismatch");
  std::vector<double> x(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) x[c] += (*this)(r, c) * y[r];
  }
  return x;
}

Matrix Matrix::transpose() const {
  Matrix t(cols, rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix Matrix::operator*(const Matrix& rhs) const {
  if (cols != rhs.rows) throw std::invalid_argument("oracle: matrix product size mismatch");
  Matrix out(rows, rhs.cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < cols; ++k) {
      const double a = (*this)(r, k);
      if (a == 0.0) continue;
      for (std::size_t c = 0; c < rhs.cols; ++c) out(r, c) += a * rhs(k, c);
    }
  return out;
}

std::vector<double> widen(std::span<const float> x) { return std::vector<double>(x.begin(), x.end()); }

Shape conv_output(const KernelBank& kb, const Shape& in, std::size_t stride, std::size_t padding) {
  const Shape& k = kb.weights.shape();
  return Shape{1, k.n, (in.h + 2 * padding - k.h) / stride + 1, (in.w + 2 * padding - k.w) / stride + 1};
}

Matrix conv_matrix(const KernelBank& kb, const Shape& in, std::size_t stride, std::size_t padding) {
  const Shape& k = kb.weights.shape();
  if (k.c != in.c) throw std::invalid_argument("oracle: channel mismatch");
  const Shape out = conv_output(kb, in, stride, padding);
  Matrix g(out.size(), in.c * in.h * in.w);
  for (std::size_t o = 0; o < k.n; ++o)
    for (std::size_t oy = 0; oy < out.h; ++oy)
      for (std::size_t ox = 0; ox < out.w; ++ox) {
        const std::size_t row = (o * out.h + oy) * out.w + ox;
        for (std::size_t c = 0; c < k.c; ++c)
          for (std::size_t i = 0; i < k.h; ++i)
            for (std::size_t j = 0; j < k.w; ++j) {
              const long y = static_cast<long>(oy * stride + i) - static_cast<long>(padding);
              const long x = static_cast<long>(ox * stride + j) - static_cast<long>(padding);
              if (y < 0 || x < 0 || y >= static_cast<long>(in.h) || x >= static_cast<long>(in.w)) continue;
              const std::size_t col = (c * in.h + static_cast<std::size_t>(y)) * in.w + static_cast<std::size_t>(x);
              g(row, col) += kb.weights.at(o, c, i, j);
            }
      }
  return g;
}

Matrix pool_selection_matrix(const Tensor& a, std::size_t window, std::size_t stride) {
  const Shape& s = a.shape();
  const std::size_t ph = (s.h - window) / stride + 1, pw = (s.w - window) / stride + 1;
  Matrix m(s.c * ph * pw, s.c * s.h * s.w);
  for (std::size_t c = 0; c < s.c; ++c)
    for (std::size_t oy = 0; oy < ph; ++oy)
      for (std::size_t ox = 0; ox < pw; ++ox) {
        std::size_t best = 0;
        bool have = false;
        float best_v = 0.0f;
        for (std::size_t i = 0; i < window; ++i)
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = (c * s.h + oy * stride + i) * s.w + ox * stride + j;
            const float v = a[idx];
            // Ties: smallest flat index.
            if (!have || v > best_v || (v == best_v && idx < best)) {
              best = idx;
              best_v = v;
              have = true;
            }
          }
        m((c * ph + oy) * pw + ox, best) = 1.0;
      }
  return m;
}

Matrix relu_gate_matrix(const Tensor& pre) {
  Matrix m(pre.size(), pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) m(i, i) = pre[i] > 0.0f ? 1.0 : 0.0;
  return m;
}

Matrix gap_matrix(const Shape& in) {
  Matrix m(in.c, in.c * in.h * in.w);
  const double inv = 1.0 / static_cast<double>(in.h * in.w);
  for (std::size_t c = 0; c < in.c; ++c)
    for (std::size_t p = 0; p < in.h * in.w; ++p) m(c, c * in.h * in.w + p) = inv;
  return m;
}

Matrix channel_sum_matrix(const Shape& in) {
  Matrix m(in.h * in.w, in.c * in.h * in.w);
  for (std::size_t c = 0; c < in.c; ++c)
    for (std::size_t p = 0; p < in.h * in.w; ++p) m(p, c * in.h * in.w + p) = 1.0;
  return m;
}

double cross_entropy(std::span<const double> z, std::size_t label) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s) - z[label];
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace cleardr::oracle
