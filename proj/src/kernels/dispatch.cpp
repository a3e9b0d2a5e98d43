#include <atomic>
#include <cmath>
#include <limits>
#include <cstdlib>
#include <string>

#include "tips/common.hpp"
#include "tips/kernels.hpp"

namespace tips::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(TIPS_WITH_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

Backend detect() {
  if (const char* forced = std::getenv("TIPS_KERNELS")) {
    const std::string name(forced);
    if (name == "scalar") return Backend::Scalar;
    if (name == "avx2" && supported(Backend::Avx2)) return Backend::Avx2;
    if (name == "neon" && supported(Backend::Neon)) return Backend::Neon;
  }
  if (supported(Backend::Avx2)) return Backend::Avx2;
  if (supported(Backend::Neon)) return Backend::Neon;
  return Backend::Scalar;
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> ptr{&table(detect())};
  return ptr;
}

}  // namespace

bool supported(Backend b) {
  switch (b) {
    case Backend::Scalar:
      return true;
    case Backend::Avx2:
      return cpu_has_avx2();
    case Backend::Neon:
#if defined(TIPS_WITH_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

std::vector<Backend> available_backends() {
  std::vector<Backend> out;
  for (Backend b : {Backend::Scalar, Backend::Avx2, Backend::Neon}) {
    if (supported(b)) out.push_back(b);
  }
  return out;
}

const KernelTable& table(Backend b) {
  if (!supported(b)) throw InvalidInput("kernel backend not available: " + std::string(backend_name(b)));
  switch (b) {
#if defined(TIPS_WITH_AVX2)
    case Backend::Avx2:
      return detail::avx2_table;
#endif
#if defined(TIPS_WITH_NEON)
    case Backend::Neon:
      return detail::neon_table;
#endif
    default:
      return detail::scalar_table;
  }
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

Backend active_backend() {
  const KernelTable* t = current().load(std::memory_order_relaxed);
  for (Backend b : available_backends()) {
    if (&table(b) == t) return b;
  }
  return Backend::Scalar;
}

void set_backend(Backend b) { current().store(&table(b), std::memory_order_relaxed); }

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::Scalar:
      return "scalar";
    case Backend::Avx2:
      return "avx2";
    case Backend::Neon:
      return "neon";
  }
  return "unknown";
}

double softmax(std::span<const double> logits, std::span<double> probs) {
  if (logits.empty()) throw InvalidInput("softmax of an empty logit vector");
  const KernelTable& k = active();
  const double m = k.reduce_max(logits.data(), logits.size());
  const double z = k.exp_shifted(logits.data(), m, probs.data(), logits.size());
  const double inv = 1.0 / z;
  for (double& p : probs) p *= inv;
  return m + std::log(z);
}

double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const KernelTable& k = active();
  const double m = k.reduce_max(x.data(), x.size());
  if (!std::isfinite(m)) return m;
  // Small inputs (answer sets, groups) do not justify a scratch buffer.
  double z = 0.0;
  for (double v : x) z += exp_reference(v - m);
  return m + std::log(z);
}

}  // namespace tips::kernels
