#include "latentdyn/pca.hpp"

#include <cmath>

#include "latentdyn/common.hpp"

namespace latentdyn {

namespace {

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

// Remove projections onto the first `count` rows of `basis`.
void orthogonalize(Vec& v, const Matrix& basis, std::size_t count) {
  for (std::size_t r = 0; r < count; ++r) {
    const auto row = basis.row(r);
    const double proj = dot(v, row);
    axpy(-proj, row, v);
  }
}

// Deterministic unit vector orthogonal to the found components, for
// zero-variance directions where power iteration has nothing to chase.
Vec null_direction(const Matrix& basis, std::size_t count, std::size_t f) {
  for (std::size_t axis = 0; axis < f; ++axis) {
    Vec v(f, 0.0);
    v[axis] = 1.0;
    orthogonalize(v, basis, count);
    const double n = norm2(v);
    if (n > 1e-6) {
      for (double& x : v) x /= n;
      return v;
    }
  }
  fail("pca_fit: could not build an orthonormal basis");
}

}  // namespace

PcaModel pca_fit(const std::vector<Vec>& features, std::size_t k) {
  require(!features.empty(), "pca_fit: empty input");
  const std::size_t m = features.size();
  const std::size_t f = features[0].size();
  for (const Vec& v : features) {
    require(v.size() == f, "pca_fit: ragged feature rows");
  }
  require(k >= 1, "pca_fit: k must be >= 1");
  require(k <= f, "pca_fit: k exceeds feature dimension");
  require(m > k, "pca_fit: need more samples than components");

  PcaModel model;
  model.mean.assign(f, 0.0);
  for (const Vec& v : features) axpy(1.0, v, model.mean);
  for (double& x : model.mean) x /= static_cast<double>(m);

  Matrix cov(f, f);
  Vec centered(f);
  for (const Vec& v : features) {
    for (std::size_t i = 0; i < f; ++i) centered[i] = v[i] - model.mean[i];
    add_outer(cov, centered, centered);
  }
  for (double& x : cov.data) x /= static_cast<double>(m - 1);

  model.components = Matrix(k, f);
  model.explained.assign(k, 0.0);

  Vec v(f), w(f);
  for (std::size_t comp = 0; comp < k; ++comp) {
    // Slightly tilted start so it is never orthogonal to the target by
    // construction alone.
    for (std::size_t i = 0; i < f; ++i) {
      v[i] = 1.0 + 1e-3 * static_cast<double>(i);
    }
    orthogonalize(v, model.components, comp);
    double n = norm2(v);
    if (n < 1e-12) {
      v = null_direction(model.components, comp, f);
    } else {
      for (double& x : v) x /= n;
    }

    double lambda = 0.0;
    bool degenerate = false;
    for (int iter = 0; iter < 10000; ++iter) {
      matvec(cov, v, w);
      orthogonalize(w, model.components, comp);
      n = norm2(w);
      if (n < 1e-300) {
        degenerate = true;
        break;
      }
      for (double& x : w) x /= n;
      matvec(cov, w, v);  // reuse v as C*w for the Rayleigh quotient
      const double next = dot(w, v);
      v = w;
      if (std::abs(next - lambda) <= 1e-14 * std::max(1.0, std::abs(next))) {
        lambda = next;
        break;
      }
      lambda = next;
    }
    if (degenerate) {
      v = null_direction(model.components, comp, f);
      lambda = 0.0;
    }
    // Sign convention: largest-|entry| coordinate positive.
    std::size_t arg = 0;
    for (std::size_t i = 1; i < f; ++i) {
      if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
    }
    if (v[arg] < 0.0) {
      for (double& x : v) x = -x;
    }
    for (std::size_t i = 0; i < f; ++i) model.components(comp, i) = v[i];
    model.explained[comp] = std::max(0.0, lambda);
  }
  return model;
}

Vec pca_project(const PcaModel& m, std::span<const double> z) {
  require(z.size() == m.mean.size(), "pca_project: feature dim mismatch");
  Vec centered(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) centered[i] = z[i] - m.mean[i];
  Vec out(m.components.rows);
  matvec(m.components, centered, out);
  return out;
}

}  // namespace latentdyn
