#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "latentdyn/linalg.hpp"
#include "latentdyn/nn.hpp"

namespace latentdyn {

// One-vs-rest linear SVM. Weights include a trailing regularized bias
// column; rows align with `classes` (sorted distinct labels).
struct SvmModel {
  Matrix weights;            // n_classes x (F+1)
  std::vector<int> classes;  // sorted ascending
  double c = 1.0;

  std::size_t feature_dim() const { return weights.cols - 1; }
};

struct SvmOptions {
  double c = 1.0;
  std::size_t epochs = 200;
  std::uint64_t seed = 0;
};

// Hinge-loss subgradient descent on (1/2C)||w||^2 + sum hinge, one shuffled
// pass order shared by every class so runs are reproducible.
SvmModel fit_svm(const std::vector<Vec>& features, const std::vector<int>& labels,
                 const SvmOptions& opt);

// Per-class scores w_c . [z; 1].
Vec svm_scores(const SvmModel& m, std::span<const double> z);

// Argmax over class scores; ties resolve to the lowest class index.
int classify(const SvmModel& m, std::span<const double> z);

}  // namespace latentdyn
