#pragma once

#include <bit>
#include <cstdint>

// Coefficients of the Cephes double-precision exp (rational approximation of
// exp on [-ln2/2, ln2/2] after range reduction by powers of two).
namespace tips::kernels::exp_constants {

inline constexpr double kLog2e = 1.4426950408889634073599;
inline constexpr double kC1 = 6.93145751953125E-1;
inline constexpr double kC2 = 1.42860682030941723212E-6;
inline constexpr double kMaxLog = 7.09782712893383996843E2;
inline constexpr double kMinLog = -7.08396418532264106224E2;

inline constexpr double kP0 = 1.26177193074810590878E-4;
inline constexpr double kP1 = 3.02994407707441961300E-2;
inline constexpr double kP2 = 9.99999999999999999910E-1;

inline constexpr double kQ0 = 3.00198505138664455042E-6;
inline constexpr double kQ1 = 2.52448340349684104192E-3;
inline constexpr double kQ2 = 2.27265548208155028766E-1;
inline constexpr double kQ3 = 2.00000000000000000009E0;

/// 2^n for n in [-1022, 1023].
inline double pow2_normal(int n) {
  return std::bit_cast<double>(static_cast<std::uint64_t>(n + 1023) << 52);
}

/// 2^n applied in two halves so n = 1024 and subnormal results stay exact
/// to a single rounding.
inline double scale_pow2(double x, int n) {
  const int n1 = n >> 1;
  const int n2 = n - n1;
  return (x * pow2_normal(n1)) * pow2_normal(n2);
}

}  // namespace tips::kernels::exp_constants
