#include <cmath>
#include <limits>

#include "exp_constants.hpp"
#include "tips/kernels.hpp"

namespace tips::kernels {

double exp_reference(double x) {
  using namespace exp_constants;
  if (x > kMaxLog) return std::numeric_limits<double>::infinity();
  if (x < kMinLog) return 0.0;
  double px = std::floor(kLog2e * x + 0.5);
  const int n = static_cast<int>(px);
  x = x - px * kC1;
  x = x - px * kC2;
  const double xx = x * x;
  px = x * ((kP0 * xx + kP1) * xx + kP2);
  x = px / ((((kQ0 * xx + kQ1) * xx + kQ2) * xx + kQ3) - px);
  x = 1.0 + 2.0 * x;
  return scale_pow2(x, n);
}

namespace {

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double max_scalar(const double* x, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

double sum_scalar(const double* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

double exp_shifted_scalar(const double* x, double shift, double* out, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = exp_reference(x[i] - shift);
    s += out[i];
  }
  return s;
}

}  // namespace

namespace detail {
const KernelTable scalar_table{"scalar", axpy_scalar, max_scalar, sum_scalar, dot_scalar,
                               exp_shifted_scalar};
}

}  // namespace tips::kernels
