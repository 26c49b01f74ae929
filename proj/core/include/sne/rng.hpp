#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace sne {

// Deterministic generator with portable distributions (the standard library's
// distributions are implementation-defined, which would break bitwise
// reproducibility across toolchains).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0;
};

// Named substream of a master seed: toggling one stochastic feature does not
// perturb the others.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream);

}  // namespace sne
