#include "latentdyn/rng.hpp"

#include <cmath>

#include "latentdyn/common.hpp"

namespace latentdyn {

namespace {

inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t Rng::next_u64() {
  state_ += 0x9e3779b97f4a7c15ull;
  return mix64(state_);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform_open() {
  return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

double Rng::gaussian() {
  // Box-Muller, cosine branch only.
  double u1 = uniform_open();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::vector<double> Rng::gaussian_vec(std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = gaussian();
  return out;
}

std::uint64_t Rng::below(std::uint64_t bound) {
  require(bound > 0, "Rng::below: bound must be positive");
  return static_cast<std::uint64_t>(
      (static_cast<unsigned __int128>(next_u64()) * bound) >> 64);
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) {
  return mix64(root ^ mix64(index + 0x6a09e667f3bcc909ull));
}

}  // namespace latentdyn
