#pragma once

#include <random>
#include <string_view>
#include <vector>

#include "smartshards/ids.hpp"

namespace smartshards {

// Deterministic random stream. Every simulator component draws from its own
// labeled substream of the root seed so adding draws in one component never
// shifts the sequence seen by another.
class RngStream {
 public:
  RngStream() : RngStream(0, "default") {}
  RngStream(uint64_t root_seed, std::string_view label)
      : eng_(mix64(root_seed ^ fnv1a(label))) {}

  uint64_t next() { return eng_(); }

  // Uniform in [0, n). n must be positive.
  uint64_t below(uint64_t n) { return eng_() % n; }

  // Uniform in [lo, hi], inclusive.
  int64_t range(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo + 1)));
  }

  template <class T>
  const T& pick(const std::vector<T>& v) {
    return v[below(v.size())];
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace smartshards
