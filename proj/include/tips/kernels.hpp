#pragma once

// Dense inner loops used by the policy (logit accumulation, softmax,
// gradient scatter). Each backend implements the same table; the active
// backend is picked once at startup from CPU features and can be forced with
// TIPS_KERNELS=scalar|avx2|neon.
//
// Elementwise kernels (axpy, exp_shifted's outputs) are bit-identical across
// backends. Reductions (sum, dot, the return value of exp_shifted) may differ
// in the last bits because lanes accumulate in a different order.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace tips::kernels {

enum class Backend { Scalar, Avx2, Neon };

struct KernelTable {
  const char* name;
  /// y[i] += a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  double (*reduce_max)(const double* x, std::size_t n);
  double (*reduce_sum)(const double* x, std::size_t n);
  double (*dot)(const double* x, const double* y, std::size_t n);
  /// out[i] = exp(x[i] - shift); returns the sum of out.
  double (*exp_shifted)(const double* x, double shift, double* out, std::size_t n);
};

bool supported(Backend b);
std::vector<Backend> available_backends();
const KernelTable& table(Backend b);
const KernelTable& active();
Backend active_backend();
/// Throws InvalidInput when the backend is not available on this machine.
void set_backend(Backend b);
std::string_view backend_name(Backend b);

/// Cephes-style exp shared by every backend (the vector versions evaluate the
/// identical operation sequence lane-wise).
double exp_reference(double x);

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active().axpy(a, x.data(), y.data(), x.size());
}
inline double max(std::span<const double> x) { return active().reduce_max(x.data(), x.size()); }
inline double sum(std::span<const double> x) { return active().reduce_sum(x.data(), x.size()); }
inline double dot(std::span<const double> x, std::span<const double> y) {
  return active().dot(x.data(), y.data(), x.size());
}

/// Writes softmax(logits) into probs and returns log(sum(exp(logits))).
double softmax(std::span<const double> logits, std::span<double> probs);
/// log(sum(exp(x))) with the max-shift trick.
double log_sum_exp(std::span<const double> x);

namespace detail {
extern const KernelTable scalar_table;
#if defined(TIPS_WITH_AVX2)
extern const KernelTable avx2_table;
#endif
#if defined(TIPS_WITH_NEON)
extern const KernelTable neon_table;
#endif
}  // namespace detail

}  // namespace tips::kernels
