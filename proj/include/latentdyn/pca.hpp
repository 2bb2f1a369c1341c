#pragma once

#include <span>
#include <vector>

#include "latentdyn/linalg.hpp"

namespace latentdyn {

struct PcaModel {
  Vec mean;            // F
  Matrix components;   // k x F, orthonormal rows
  Vec explained;       // per-component variance, non-increasing
};

// Top-k principal components of the centered covariance (1/(M-1) scaling),
// found by power iteration with deflation. Component signs are fixed by
// making the largest-magnitude entry positive.
PcaModel pca_fit(const std::vector<Vec>& features, std::size_t k);

Vec pca_project(const PcaModel& m, std::span<const double> z);

}  // namespace latentdyn
