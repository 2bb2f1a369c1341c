#pragma once

#include <cstdint>
#include <vector>

namespace latentdyn {

// Counter-based generator (splitmix64). The same seed yields the same stream
// on every platform; copying the object forks the stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // Uniform on [0, 1).
  double uniform();

  // Uniform on (0, 1]; safe as a log() argument.
  double uniform_open();

  // Standard normal draw. Consumes exactly two uniforms, so the stream
  // position is a pure function of the draw count.
  double gaussian();

  std::vector<double> gaussian_vec(std::size_t n);

  // Uniform integer in [0, bound); bound must be > 0.
  std::uint64_t below(std::uint64_t bound);

  // Fisher-Yates with draws from this stream.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      T tmp = v[i - 1];
      v[i - 1] = v[j];
      v[j] = tmp;
    }
  }

 private:
  std::uint64_t state_;
};

// Decorrelated child seed for episode / sweep-cell streams.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index);

}  // namespace latentdyn
