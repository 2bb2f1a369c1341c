#pragma once

#include <span>
#include <vector>

#include "latentdyn/linalg.hpp"

namespace latentdyn {

enum class Averaging { kBinary, kMacro };

// Binary: harmonic mean of precision and recall on the positive class
// (label 1), 0 when both are 0. Macro: unweighted mean of per-class F1 over
// the classes present in truth or predictions.
double f1_score(const std::vector<int>& preds, const std::vector<int>& truth,
                Averaging averaging);

// Root of the mean squared element-wise error over all rows.
double rmse(const std::vector<Vec>& preds, const std::vector<Vec>& truth);

// Counts[t][p] of truth class t predicted as p; classes sorted ascending.
struct Confusion {
  std::vector<int> classes;
  Matrix counts;
};

Confusion confusion_matrix(const std::vector<int>& preds,
                           const std::vector<int>& truth);

}  // namespace latentdyn
