#include "tips/common.hpp"

#include <cmath>

namespace tips {

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw InvalidInput("Rng::below: n must be positive");
  // Rejection sampling keeps the draw unbiased for any n.
  const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::exponential() {
  double u;
  do {
    u = uniform();
  } while (u == 0.0);
  return -std::log(u);
}

}  // namespace tips
