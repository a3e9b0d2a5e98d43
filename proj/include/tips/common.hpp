#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace tips {

using TokenId = std::uint32_t;

/// Thrown when an argument violates an operation's precondition.
class InvalidInput : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an object is used in a state that does not allow the call
/// (e.g. stepping a finished episode).
class InvalidState : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

/// Alpha calibration could not produce a scale (degenerate pilot).
class CalibrationFailed : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Mixes a base seed with up to three stream coordinates. Used to give every
/// (step, episode, decision) its own independent, order-free random stream.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                                    std::uint64_t c = 0) {
  std::uint64_t h = splitmix64(base ^ 0x5bd1e9955bd1e995ULL);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ (b + 0x632be59bd9b4e019ULL));
  h = splitmix64(h ^ (c + 0x8cb92ba72f3d8dd7ULL));
  return h;
}

/// Thin wrapper over mt19937_64 with platform-independent real draws
/// (std::uniform_real_distribution is implementation-defined).
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard exponential, used to build Dirichlet/Gamma(1) draws.
  double exponential();

  std::mt19937_64& engine() { return engine_; }

private:
  std::mt19937_64 engine_;
};

}  // namespace tips
