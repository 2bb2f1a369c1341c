#include "latentdyn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "latentdyn/common.hpp"

namespace latentdyn {

namespace {

double f1_for_class(const std::vector<int>& preds,
                    const std::vector<int>& truth, int positive) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] == positive;
    const bool t = truth[i] == positive;
    if (p && t) ++tp;
    if (p && !t) ++fp;
    if (!p && t) ++fn;
  }
  const double denom = static_cast<double>(2 * tp + fp + fn);
  if (denom == 0.0) return 0.0;
  return 2.0 * static_cast<double>(tp) / denom;
}

}  // namespace

double f1_score(const std::vector<int>& preds, const std::vector<int>& truth,
                Averaging averaging) {
  require(preds.size() == truth.size(), "f1_score: size mismatch");
  require(!preds.empty(), "f1_score: empty input");
  if (averaging == Averaging::kBinary) {
    return f1_for_class(preds, truth, 1);
  }
  std::set<int> classes(truth.begin(), truth.end());
  classes.insert(preds.begin(), preds.end());
  double acc = 0.0;
  for (const int c : classes) acc += f1_for_class(preds, truth, c);
  return acc / static_cast<double>(classes.size());
}

double rmse(const std::vector<Vec>& preds, const std::vector<Vec>& truth) {
  require(preds.size() == truth.size() && !preds.empty(),
          "rmse: shape mismatch");
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    require(preds[i].size() == truth[i].size(), "rmse: ragged rows");
    for (std::size_t k = 0; k < preds[i].size(); ++k) {
      const double d = preds[i][k] - truth[i][k];
      acc += d * d;
    }
    count += preds[i].size();
  }
  require(count > 0, "rmse: no elements");
  return std::sqrt(acc / static_cast<double>(count));
}

Confusion confusion_matrix(const std::vector<int>& preds,
                           const std::vector<int>& truth) {
  require(preds.size() == truth.size() && !preds.empty(),
          "confusion_matrix: shape mismatch");
  std::set<int> classes(truth.begin(), truth.end());
  classes.insert(preds.begin(), preds.end());
  Confusion c;
  c.classes.assign(classes.begin(), classes.end());
  c.counts = Matrix(c.classes.size(), c.classes.size());
  auto index_of = [&](int label) {
    return static_cast<std::size_t>(
        std::lower_bound(c.classes.begin(), c.classes.end(), label) -
        c.classes.begin());
  };
  for (std::size_t i = 0; i < preds.size(); ++i) {
    c.counts(index_of(truth[i]), index_of(preds[i])) += 1.0;
  }
  return c;
}

}  // namespace latentdyn
