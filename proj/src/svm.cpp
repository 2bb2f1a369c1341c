#include "latentdyn/svm.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "latentdyn/common.hpp"
#include "latentdyn/rng.hpp"

namespace latentdyn {

SvmModel fit_svm(const std::vector<Vec>& features,
                 const std::vector<int>& labels, const SvmOptions& opt) {
  require(features.size() == labels.size(), "fit_svm: size mismatch");
  require(features.size() >= 2, "fit_svm: need at least 2 samples");
  require(opt.c > 0.0, "fit_svm: C must be positive");
  const std::size_t m = features.size();
  const std::size_t f = features[0].size();
  for (const Vec& v : features) {
    require(v.size() == f, "fit_svm: ragged feature rows");
  }

  const std::set<int> distinct(labels.begin(), labels.end());
  require(distinct.size() >= 2, "fit_svm: need at least 2 distinct labels");

  SvmModel model;
  model.classes.assign(distinct.begin(), distinct.end());
  model.c = opt.c;
  model.weights = Matrix(model.classes.size(), f + 1);

  // Same visit order for every class keeps binary one-vs-rest exactly
  // antisymmetric.
  Rng rng(opt.seed);
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<std::size_t>> epoch_orders(opt.epochs);
  for (auto& eo : epoch_orders) {
    rng.shuffle(order);
    eo = order;
  }

  const double lambda = 1.0 / (opt.c * static_cast<double>(m));
  for (std::size_t ci = 0; ci < model.classes.size(); ++ci) {
    const int positive = model.classes[ci];
    auto w = model.weights.row(ci);
    double t = 0.0;
    for (const auto& eo : epoch_orders) {
      for (const std::size_t idx : eo) {
        t += 1.0;
        const double eta = 1.0 / (lambda * t);
        const Vec& x = features[idx];
        const double y = labels[idx] == positive ? 1.0 : -1.0;
        double score = w[f];
        for (std::size_t k = 0; k < f; ++k) score += w[k] * x[k];
        const double shrink = 1.0 - eta * lambda;
        for (double& v : w) v *= shrink;
        if (y * score < 1.0) {
          const double step = eta * y;
          for (std::size_t k = 0; k < f; ++k) w[k] += step * x[k];
          w[f] += step;
        }
      }
    }
  }
  require(all_finite(model.weights.data), "fit_svm: non-finite weights");
  return model;
}

Vec svm_scores(const SvmModel& m, std::span<const double> z) {
  require(z.size() == m.feature_dim(), "svm_scores: feature dim mismatch");
  Vec scores(m.classes.size());
  for (std::size_t ci = 0; ci < m.classes.size(); ++ci) {
    const auto w = m.weights.row(ci);
    double s = w[z.size()];
    for (std::size_t k = 0; k < z.size(); ++k) s += w[k] * z[k];
    scores[ci] = s;
  }
  return scores;
}

int classify(const SvmModel& m, std::span<const double> z) {
  const Vec scores = svm_scores(m, z);
  std::size_t best = 0;
  for (std::size_t ci = 1; ci < scores.size(); ++ci) {
    if (scores[ci] > scores[best]) best = ci;
  }
  return m.classes[best];
}

}  // namespace latentdyn
