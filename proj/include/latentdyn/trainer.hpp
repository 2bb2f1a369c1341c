#pragma once

#include <cstdint>
#include <vector>

namespace latentdyn {

struct TrainOptions {
  std::size_t epochs = 50;
  std::size_t batch = 128;
  double lr = 5e-4;
  std::uint64_t seed = 0;
};

// Batch index ranges over a shuffled order; the last batch may be short.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(
    std::size_t count, std::size_t batch);

}  // namespace latentdyn
