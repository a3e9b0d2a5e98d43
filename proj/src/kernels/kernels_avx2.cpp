// Compiled with -mavx2 (no -mfma: products and sums stay separate so the
// elementwise results match the scalar reference exactly).

#include <immintrin.h>

#include <cmath>
#include <limits>

#include "exp_constants.hpp"
#include "tips/kernels.hpp"

namespace tips::kernels {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

inline double hmax(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d m = _mm_max_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_max_sd(m, _mm_unpackhi_pd(m, m)));
}

// 2^n for int32 lanes in [-1022, 1023].
inline __m256d pow2_normal(__m128i n) {
  const __m256i e = _mm256_add_epi64(_mm256_cvtepi32_epi64(n), _mm256_set1_epi64x(1023));
  return _mm256_castsi256_pd(_mm256_slli_epi64(e, 52));
}

inline __m256d exp4(__m256d x) {
  using namespace exp_constants;
  const __m256d too_big = _mm256_cmp_pd(x, _mm256_set1_pd(kMaxLog), _CMP_GT_OQ);
  const __m256d too_small = _mm256_cmp_pd(x, _mm256_set1_pd(kMinLog), _CMP_LT_OQ);
  // Keep out-of-range lanes finite during the polynomial; patched at the end.
  x = _mm256_max_pd(_mm256_min_pd(x, _mm256_set1_pd(kMaxLog)), _mm256_set1_pd(kMinLog));

  __m256d px = _mm256_floor_pd(
      _mm256_add_pd(_mm256_mul_pd(_mm256_set1_pd(kLog2e), x), _mm256_set1_pd(0.5)));
  const __m128i n = _mm256_cvtpd_epi32(px);
  x = _mm256_sub_pd(x, _mm256_mul_pd(px, _mm256_set1_pd(kC1)));
  x = _mm256_sub_pd(x, _mm256_mul_pd(px, _mm256_set1_pd(kC2)));
  const __m256d xx = _mm256_mul_pd(x, x);

  __m256d p = _mm256_add_pd(_mm256_mul_pd(_mm256_set1_pd(kP0), xx), _mm256_set1_pd(kP1));
  p = _mm256_add_pd(_mm256_mul_pd(p, xx), _mm256_set1_pd(kP2));
  px = _mm256_mul_pd(x, p);

  __m256d q = _mm256_add_pd(_mm256_mul_pd(_mm256_set1_pd(kQ0), xx), _mm256_set1_pd(kQ1));
  q = _mm256_add_pd(_mm256_mul_pd(q, xx), _mm256_set1_pd(kQ2));
  q = _mm256_add_pd(_mm256_mul_pd(q, xx), _mm256_set1_pd(kQ3));

  x = _mm256_div_pd(px, _mm256_sub_pd(q, px));
  x = _mm256_add_pd(_mm256_set1_pd(1.0), _mm256_mul_pd(_mm256_set1_pd(2.0), x));

  const __m128i n1 = _mm_srai_epi32(n, 1);
  const __m128i n2 = _mm_sub_epi32(n, n1);
  x = _mm256_mul_pd(_mm256_mul_pd(x, pow2_normal(n1)), pow2_normal(n2));

  x = _mm256_blendv_pd(x, _mm256_set1_pd(std::numeric_limits<double>::infinity()), too_big);
  x = _mm256_blendv_pd(x, _mm256_setzero_pd(), too_small);
  return x;
}

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

double max_avx2(const double* x, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  std::size_t i = 0;
  if (n >= 4) {
    __m256d vm = _mm256_loadu_pd(x);
    for (i = 4; i + 4 <= n; i += 4) vm = _mm256_max_pd(vm, _mm256_loadu_pd(x + i));
    m = hmax(vm);
  }
  for (; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

double sum_avx2(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

double exp_shifted_avx2(const double* x, double shift, double* out, std::size_t n) {
  const __m256d vs = _mm256_set1_pd(shift);
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d e = exp4(_mm256_sub_pd(_mm256_loadu_pd(x + i), vs));
    _mm256_storeu_pd(out + i, e);
    acc = _mm256_add_pd(acc, e);
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    out[i] = exp_reference(x[i] - shift);
    s += out[i];
  }
  return s;
}

}  // namespace

namespace detail {
const KernelTable avx2_table{"avx2", axpy_avx2, max_avx2, sum_avx2, dot_avx2, exp_shifted_avx2};
}

}  // namespace tips::kernels
