#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <vector>

#include "doctest.h"
#include "latentdyn/common.hpp"
#include "latentdyn/evalrun.hpp"
#include "latentdyn/metrics.hpp"
#include "latentdyn/pca.hpp"
#include "latentdyn/rng.hpp"
#include "latentdyn/svm.hpp"

using namespace latentdyn;

namespace {

// Cyclic Jacobi eigensolver for small symmetric matrices; independent oracle
// for the power-iteration path.
Vec jacobi_eigenvalues(Matrix a) {
  const std::size_t n = a.rows;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  Vec eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
  std::sort(eig.begin(), eig.end(), std::greater<>());
  return eig;
}

Matrix covariance(const std::vector<Vec>& rows) {
  const std::size_t m = rows.size();
  const std::size_t f = rows[0].size();
  Vec mean(f, 0.0);
  for (const Vec& r : rows)
    for (std::size_t j = 0; j < f; ++j) mean[j] += r[j];
  for (double& v : mean) v /= static_cast<double>(m);
  Matrix cov(f, f);
  for (const Vec& r : rows)
    for (std::size_t i = 0; i < f; ++i)
      for (std::size_t j = 0; j < f; ++j)
        cov(i, j) += (r[i] - mean[i]) * (r[j] - mean[j]);
  for (double& v : cov.data) v /= static_cast<double>(m - 1);
  return cov;
}

std::vector<WindowSample> labeled_windows(std::size_t count, std::size_t dim,
                                          double offset, Rng& rng) {
  std::vector<WindowSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    WindowSample w;
    w.cutting = i % 2 == 0;
    w.x = rng.gaussian_vec(dim);
    if (w.cutting)
      for (double& v : w.x) v += offset;
    w.y_next = Vec(2, 0.0);
    w.material = i % 3 == 0 ? "synthetic-soft" : "synthetic-hard";
    w.thickness = "synthetic-thin";
    w.episode_id = "e" + std::to_string(i);
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace

TEST_CASE("fit_svm: separable pair gets both points right") {
  std::vector<Vec> x = {{1.0}, {-1.0}};
  std::vector<int> y = {1, 0};
  SvmModel m = fit_svm(x, y, {});
  CHECK(classify(m, x[0]) == 1);
  CHECK(classify(m, x[1]) == 0);
}

TEST_CASE("fit_svm: 10-sigma clusters reach training F1 >= 0.99") {
  Rng rng(61);
  std::vector<Vec> x;
  std::vector<int> y;
  for (int i = 0; i < 200; ++i) {
    Vec p = rng.gaussian_vec(3);
    const int label = i % 2;
    p[0] += label == 1 ? 5.0 : -5.0;  // 10 sigma apart
    x.push_back(p);
    y.push_back(label);
  }
  SvmModel m = fit_svm(x, y, {});
  std::vector<int> preds;
  for (const Vec& p : x) preds.push_back(classify(m, p));
  CHECK(f1_score(preds, y, Averaging::kBinary) >= 0.99);
}

TEST_CASE("fit_svm: deterministic across runs") {
  Rng rng(62);
  std::vector<Vec> x;
  std::vector<int> y;
  for (int i = 0; i < 40; ++i) {
    x.push_back(rng.gaussian_vec(4));
    y.push_back(i % 3 == 0 ? 2 : i % 2);
  }
  SvmOptions opt;
  opt.seed = 7;
  SvmModel a = fit_svm(x, y, opt);
  SvmModel b = fit_svm(x, y, opt);
  CHECK(a.weights.data == b.weights.data);
  CHECK(a.classes == b.classes);
}

TEST_CASE("fit_svm: degenerate inputs rejected") {
  CHECK_THROWS_AS(fit_svm({{1.0}}, {1}, {}), Error);
  CHECK_THROWS_AS(fit_svm({{1.0}, {2.0}}, {1, 1}, {}), Error);
  CHECK_THROWS_AS(fit_svm({{1.0}, {2.0, 3.0}}, {0, 1}, {}), Error);
}

TEST_CASE("classify: argmax with ties to the lowest class") {
  SvmModel m;
  m.classes = {3, 5};
  m.weights = Matrix(2, 2);  // feature dim 1 + bias
  m.weights(0, 1) = 2.0;     // bias-only scores: [2, -1]
  m.weights(1, 1) = -1.0;
  Vec z{0.0};
  CHECK(svm_scores(m, z) == Vec{2.0, -1.0});
  CHECK(classify(m, z) == 3);

  m.weights(1, 1) = 2.0;  // exact tie
  CHECK(classify(m, z) == 3);
}

TEST_CASE("classify: invariant to positive scaling of all score functions") {
  Rng rng(63);
  std::vector<Vec> x;
  std::vector<int> y;
  for (int i = 0; i < 30; ++i) {
    x.push_back(rng.gaussian_vec(3));
    y.push_back(i % 3);
  }
  SvmModel m = fit_svm(x, y, {});
  SvmModel scaled = m;
  for (double& v : scaled.weights.data) v *= 3.0;
  for (int trial = 0; trial < 50; ++trial) {
    Vec z = rng.gaussian_vec(3);
    CHECK(classify(m, z) == classify(scaled, z));
  }
}

TEST_CASE("classify: binary decision matches the sign rule") {
  Rng rng(64);
  std::vector<Vec> x;
  std::vector<int> y;
  for (int i = 0; i < 50; ++i) {
    Vec p = rng.gaussian_vec(2);
    p[0] += i % 2 == 0 ? 1.5 : -1.5;
    x.push_back(p);
    y.push_back(i % 2 == 0 ? 1 : 0);
  }
  SvmModel m = fit_svm(x, y, {});
  for (int trial = 0; trial < 50; ++trial) {
    Vec z = rng.gaussian_vec(2);
    Vec scores = svm_scores(m, z);
    CHECK(scores[0] == -scores[1]);  // shared pass order makes rows antisymmetric
    const int want = scores[1] > 0.0 ? 1 : 0;
    CHECK(classify(m, z) == want);
  }
}

TEST_CASE("f1_score: anchor values") {
  CHECK(f1_score({1, 0, 1}, {1, 0, 1}, Averaging::kBinary) == 1.0);
  // tp=1, fp=1, fn=0: precision 0.5, recall 1 -> 2/3.
  CHECK(f1_score({1, 1}, {1, 0}, Averaging::kBinary) ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(f1_score({0, 0}, {1, 1}, Averaging::kBinary) == 0.0);
  CHECK_THROWS_AS(f1_score({}, {}, Averaging::kBinary), Error);
}

TEST_CASE("f1_score: permutation of pairs leaves the score unchanged") {
  Rng rng(65);
  std::vector<int> preds, truth;
  for (int i = 0; i < 60; ++i) {
    preds.push_back(static_cast<int>(rng.below(3)));
    truth.push_back(static_cast<int>(rng.below(3)));
  }
  const double before = f1_score(preds, truth, Averaging::kMacro);
  std::vector<std::size_t> order(preds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<int> p2, t2;
  for (std::size_t i : order) {
    p2.push_back(preds[i]);
    t2.push_back(truth[i]);
  }
  CHECK(f1_score(p2, t2, Averaging::kMacro) == before);
}

TEST_CASE("f1_score: macro invariant under class relabeling") {
  Rng rng(66);
  std::vector<int> preds, truth;
  for (int i = 0; i < 90; ++i) {
    preds.push_back(static_cast<int>(rng.below(3)));
    truth.push_back(static_cast<int>(rng.below(3)));
  }
  const double before = f1_score(preds, truth, Averaging::kMacro);
  auto relabel = [](int v) { return (v + 1) % 3 + 10; };  // bijection
  std::vector<int> p2, t2;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    p2.push_back(relabel(preds[i]));
    t2.push_back(relabel(truth[i]));
  }
  CHECK(f1_score(p2, t2, Averaging::kMacro) == doctest::Approx(before).epsilon(1e-15));
}

TEST_CASE("rmse: anchors and independent accumulation") {
  std::vector<Vec> truth = {{1.0, 2.0}, {3.0, 4.0}};
  CHECK(rmse(truth, truth) == 0.0);

  std::vector<Vec> off = truth;
  for (Vec& row : off)
    for (double& v : row) v += 0.25;
  CHECK(rmse(off, truth) == doctest::Approx(0.25).epsilon(1e-15));

  Rng rng(67);
  std::vector<Vec> a, b;
  for (int i = 0; i < 50; ++i) {
    a.push_back(rng.gaussian_vec(6));
    b.push_back(rng.gaussian_vec(6));
  }
  const double got = rmse(a, b);
  // Two-pass oracle: mean of squares first, accumulated in reverse order.
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = a.size(); i-- > 0;)
    for (std::size_t j = a[i].size(); j-- > 0;) {
      const double d = a[i][j] - b[i][j];
      acc += d * d;
      ++count;
    }
  CHECK(std::abs(got - std::sqrt(acc / static_cast<double>(count))) < 1e-12);
}

TEST_CASE("confusion_matrix: counts by (truth, pred)") {
  Confusion c = confusion_matrix({1, 0, 1, 1}, {1, 0, 0, 1});
  REQUIRE(c.classes == std::vector<int>{0, 1});
  CHECK(c.counts(0, 0) == 1.0);  // truth 0 predicted 0
  CHECK(c.counts(0, 1) == 1.0);  // truth 0 predicted 1
  CHECK(c.counts(1, 0) == 0.0);
  CHECK(c.counts(1, 1) == 2.0);
}

TEST_CASE("pca_fit: rank-1 line gives the diagonal direction") {
  std::vector<Vec> pts;
  for (int i = -5; i <= 5; ++i)
    pts.push_back(Vec{static_cast<double>(i), static_cast<double>(i)});
  PcaModel m = pca_fit(pts, 1);
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  CHECK(std::abs(m.components(0, 0) - inv_sqrt2) < 1e-6);
  CHECK(std::abs(m.components(0, 1) - inv_sqrt2) < 1e-6);

  Vec at_mean = pca_project(m, m.mean);
  for (double v : at_mean) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("pca_fit: explained variances match a Jacobi eigensolver") {
  Rng rng(68);
  std::vector<Vec> pts;
  for (int i = 0; i < 50; ++i) {
    Vec p = rng.gaussian_vec(5);
    p[0] *= 3.0;  // anisotropic so the spectrum is spread
    p[1] *= 2.0;
    p[2] = 0.5 * p[0] + 0.1 * p[2];
    pts.push_back(p);
  }
  PcaModel m = pca_fit(pts, 5);
  Vec want = jacobi_eigenvalues(covariance(pts));
  REQUIRE(m.explained.size() == 5);
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(std::abs(m.explained[i] - want[i]) < 1e-8);

  // Rows orthonormal.
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      const double d = dot(m.components.row(i), m.components.row(j));
      CHECK(std::abs(d - (i == j ? 1.0 : 0.0)) < 1e-8);
    }
  // Non-increasing explained variance.
  for (std::size_t i = 1; i < 5; ++i) CHECK(m.explained[i] <= m.explained[i - 1] + 1e-12);
}

TEST_CASE("pca_fit: reconstruction error non-increasing in k") {
  Rng rng(69);
  std::vector<Vec> pts;
  for (int i = 0; i < 40; ++i) {
    Vec p = rng.gaussian_vec(4);
    p[0] *= 2.5;
    pts.push_back(p);
  }
  auto recon_error = [&](std::size_t k) {
    PcaModel m = pca_fit(pts, k);
    double acc = 0.0;
    for (const Vec& p : pts) {
      Vec proj = pca_project(m, p);
      Vec rec = m.mean;
      for (std::size_t c = 0; c < k; ++c)
        for (std::size_t j = 0; j < rec.size(); ++j)
          rec[j] += proj[c] * m.components(c, j);
      for (std::size_t j = 0; j < rec.size(); ++j)
        acc += (rec[j] - p[j]) * (rec[j] - p[j]);
    }
    return acc;
  };
  double prev = recon_error(1);
  for (std::size_t k = 2; k <= 4; ++k) {
    const double cur = recon_error(k);
    CHECK(cur <= prev + 1e-9);
    prev = cur;
  }
}

TEST_CASE("pca_fit: k larger than the feature dim rejected") {
  std::vector<Vec> pts = {{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}, {0.0, 1.0}};
  CHECK_THROWS_AS(pca_fit(pts, 3), Error);
}

TEST_CASE("run_task: separable cutting data scores high with state features") {
  Rng rng(70);
  auto train = labeled_windows(120, 12, 3.0, rng);
  auto test = labeled_windows(40, 12, 3.0, rng);
  EvalReport r = run_task(Task::kCutting, "state_space", "", state_space_features(),
                          train, test, {});
  CHECK(r.f1 >= 0.95);
  CHECK(r.task == "cutting");
  CHECK(r.feature_dim == 12);
  CHECK(r.n_train == 120);
  CHECK(r.n_test == 40);

  // Confusion row sums equal test-split class supports.
  std::map<int, std::size_t> support;
  for (const auto& w : test) support[w.cutting ? 1 : 0] += 1;
  for (std::size_t i = 0; i < r.confusion.classes.size(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < r.confusion.classes.size(); ++j)
      row += r.confusion.counts(i, j);
    CHECK(row == static_cast<double>(support[r.confusion.classes[i]]));
  }
}

TEST_CASE("run_task: config hash isolates the feature source") {
  Rng rng(71);
  auto train = labeled_windows(40, 8, 2.0, rng);
  auto test = labeled_windows(20, 8, 2.0, rng);
  FeatureFn half = [](const WindowSample& w) {
    Vec out(w.x.begin(), w.x.begin() + 4);
    return out;
  };
  EvalReport full = run_task(Task::kCutting, "state_space", "", state_space_features(),
                             train, test, {});
  EvalReport latent = run_task(Task::kCutting, "vae", "both", half, train, test, {});
  CHECK(full.config_hash == latent.config_hash);

  EvalReport material = run_task(Task::kMaterial, "state_space", "",
                                 state_space_features(), train, test, {});
  CHECK(material.config_hash != full.config_hash);

  SvmOptions other;
  other.epochs = 100;
  EvalReport different = run_task(Task::kCutting, "state_space", "",
                                  state_space_features(), train, test, other);
  CHECK(different.config_hash != full.config_hash);
}

TEST_CASE("run_task: missing labels for the task rejected") {
  Rng rng(72);
  auto train = labeled_windows(20, 6, 2.0, rng);
  auto test = labeled_windows(10, 6, 2.0, rng);
  for (auto& w : train) w.material.clear();
  CHECK_THROWS_AS(run_task(Task::kMaterial, "state_space", "",
                           state_space_features(), train, test, {}),
                  Error);
}

TEST_CASE("task_labels: cutting maps to {free, cutting}") {
  Rng rng(73);
  auto train = labeled_windows(10, 4, 1.0, rng);
  auto test = labeled_windows(6, 4, 1.0, rng);
  TaskLabels tl = task_labels(Task::kCutting, train, test);
  REQUIRE(tl.class_names.size() == 2);
  CHECK(tl.class_names[0] == "free");
  CHECK(tl.class_names[1] == "cutting");
  for (std::size_t i = 0; i < train.size(); ++i)
    CHECK(tl.train[i] == (train[i].cutting ? 1 : 0));
}
