#pragma once

#include <charconv>
#include <stdexcept>
#include <string>

namespace latentdyn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

// Shortest round-trip decimal form, byte-stable across runs.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace latentdyn
