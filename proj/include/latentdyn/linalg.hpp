#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace latentdyn {

using Vec = std::vector<double>;

// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const {
    return data[i * cols + j];
  }
  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * cols, cols};
  }
};

// y = A x
void matvec(const Matrix& a, std::span<const double> x, std::span<double> y);

// y = A^T x
void matvec_t(const Matrix& a, std::span<const double> x, std::span<double> y);

// A += scale * u v^T
void add_outer(Matrix& a, std::span<const double> u, std::span<const double> v,
               double scale = 1.0);

// y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y);

double dot(std::span<const double> a, std::span<const double> b);

double squared_distance(std::span<const double> a, std::span<const double> b);

bool all_finite(std::span<const double> v);

}  // namespace latentdyn
