#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace idguard {

// Deterministic RNG with self-contained distributions. std::* distributions are
// implementation-defined, so uniform/normal are generated explicitly here and the
// whole state round-trips through a string (mt19937_64 stream operators).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

  // Derives an independent stream for a named purpose from a base seed.
  static Rng derive(std::uint64_t seed, std::uint64_t stream) {
    return Rng(splitmix(seed + 0x9e3779b97f4a7c15ULL * (stream + 1)));
  }

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() { return (eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range.
  int randint(int lo, int hi) {
    return lo + static_cast<int>(eng_() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  // Box-Muller without spare caching so the state stays a pure engine state.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(eng_() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

  std::vector<int> permutation(int n) {
    std::vector<int> p(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
    shuffle(p);
    return p;
  }

  std::string serialize() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
  }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::mt19937_64 eng_;
};

// Stream ids for Rng::derive, one per sampling concern.
namespace rng_stream {
constexpr std::uint64_t kDataset = 1;
constexpr std::uint64_t kModelInit = 2;    // + model index
constexpr std::uint64_t kModelTrain = 16;  // + model index
constexpr std::uint64_t kSurrogateInit = 30;
constexpr std::uint64_t kSurrogateTrain = 31;
constexpr std::uint64_t kEmbedderInit = 32;
constexpr std::uint64_t kEmbedderTrain = 33;
constexpr std::uint64_t kPrior = 40;
constexpr std::uint64_t kGenInit = 50;
constexpr std::uint64_t kGenTrain = 51;
constexpr std::uint64_t kAdvTrain = 60;
constexpr std::uint64_t kEval = 70;
}  // namespace rng_stream

}  // namespace idguard
