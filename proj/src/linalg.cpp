#include "latentdyn/linalg.hpp"

#include <cmath>

#include "latentdyn/common.hpp"

namespace latentdyn {

void matvec(const Matrix& a, std::span<const double> x, std::span<double> y) {
  require(x.size() == a.cols && y.size() == a.rows, "matvec: shape mismatch");
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* w = a.data.data() + i * a.cols;
    double acc = 0.0;
    for (std::size_t j = 0; j < a.cols; ++j) acc += w[j] * x[j];
    y[i] = acc;
  }
}

void matvec_t(const Matrix& a, std::span<const double> x, std::span<double> y) {
  require(x.size() == a.rows && y.size() == a.cols, "matvec_t: shape mismatch");
  for (std::size_t j = 0; j < a.cols; ++j) y[j] = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* w = a.data.data() + i * a.cols;
    const double xi = x[i];
    for (std::size_t j = 0; j < a.cols; ++j) y[j] += w[j] * xi;
  }
}

void add_outer(Matrix& a, std::span<const double> u, std::span<const double> v,
               double scale) {
  require(u.size() == a.rows && v.size() == a.cols, "add_outer: shape mismatch");
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* w = a.data.data() + i * a.cols;
    const double ui = scale * u[i];
    for (std::size_t j = 0; j < a.cols; ++j) w[j] += ui * v[j];
  }
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  require(x.size() == y.size(), "axpy: shape mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "squared_distance: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace latentdyn
