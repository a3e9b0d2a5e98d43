#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace tips::metrics {

/// Lowercase, trim, collapse internal whitespace. No article or punctuation
/// stripping.
std::string normalize_answer(std::string_view s);
std::vector<std::string> answer_tokens(std::string_view s);

int exact_match(const std::optional<std::string>& pred, std::span<const std::string> gold);

/// Token-multiset F1, maximised over the gold set.
double f1(std::string_view pred, std::span<const std::string> gold);

struct ScoredAnswer {
  std::optional<std::string> prediction;
  int em = 0;
  double f1 = 0.0;
};

ScoredAnswer score_answer(const std::optional<std::string>& pred, std::span<const std::string> gold);

struct AdvantageHistogram {
  std::vector<double> bin_edges;  // bins + 1 entries
  std::vector<std::uint64_t> counts;
  std::uint64_t n_tokens = 0;
  double mean = 0.0;
  double stdev = 0.0;
  double skew = 0.0;
  double frac_near_zero = 0.0;  // |A| < 0.05
};

/// Histogram over unmasked advantages; out-of-range values land in the edge bins.
AdvantageHistogram advantage_histogram(std::span<const double> advantages,
                                       std::span<const std::uint8_t> mask, std::size_t bins,
                                       double lo, double hi);

/// Merges several (advantages, mask) pairs into one histogram.
AdvantageHistogram advantage_histogram(const std::vector<std::vector<double>>& advantages,
                                       const std::vector<std::vector<std::uint8_t>>& masks,
                                       std::size_t bins, double lo, double hi);

/// CSV with header bin_lo,bin_hi,count.
std::string histogram_csv(const AdvantageHistogram& h);
nlohmann::json histogram_summary(const AdvantageHistogram& h);

}  // namespace tips::metrics
