#include "latentdyn/trainer.hpp"

namespace latentdyn {

std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(
    std::size_t count, std::size_t batch) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (batch == 0) batch = count;
  for (std::size_t start = 0; start < count; start += batch) {
    out.push_back({start, std::min(start + batch, count)});
  }
  return out;
}

}  // namespace latentdyn
