#include "tips/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>

#include "tips/common.hpp"

namespace tips::metrics {

std::string normalize_answer(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::vector<std::string> answer_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in(normalize_answer(s));
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

int exact_match(const std::optional<std::string>& pred, std::span<const std::string> gold) {
  if (gold.empty()) throw InvalidInput("exact_match: empty gold set");
  if (!pred) return 0;
  const std::string p = normalize_answer(*pred);
  for (const auto& g : gold) {
    if (normalize_answer(g) == p) return 1;
  }
  return 0;
}

namespace {

double f1_single(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  if (pred.empty() || gold.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : gold) ++counts[t];
  int overlap = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return 2.0 * overlap / static_cast<double>(pred.size() + gold.size());
}

}  // namespace

double f1(std::string_view pred, std::span<const std::string> gold) {
  if (gold.empty()) throw InvalidInput("f1: empty gold set");
  const auto p = answer_tokens(pred);
  double best = 0.0;
  for (const auto& g : gold) best = std::max(best, f1_single(p, answer_tokens(g)));
  return best;
}

ScoredAnswer score_answer(const std::optional<std::string>& pred, std::span<const std::string> gold) {
  if (gold.empty()) throw InvalidInput("score_answer: empty gold set");
  return {pred, exact_match(pred, gold), pred ? f1(*pred, gold) : 0.0};
}

AdvantageHistogram advantage_histogram(const std::vector<std::vector<double>>& advantages,
                                       const std::vector<std::vector<std::uint8_t>>& masks,
                                       std::size_t bins, double lo, double hi) {
  if (bins < 1) throw InvalidInput("advantage_histogram: bins must be >= 1");
  if (!(hi > lo)) throw InvalidInput("advantage_histogram: empty range");
  if (advantages.size() != masks.size()) throw InvalidInput("advantage_histogram: batch size mismatch");

  AdvantageHistogram h;
  h.bin_edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) {
    h.bin_edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  }
  h.counts.assign(bins, 0);

  std::vector<double> kept;
  for (std::size_t e = 0; e < advantages.size(); ++e) {
    if (advantages[e].size() != masks[e].size()) throw InvalidInput("advantage_histogram: mask length mismatch");
    for (std::size_t t = 0; t < advantages[e].size(); ++t) {
      if (masks[e][t]) kept.push_back(advantages[e][t]);
    }
  }
  h.n_tokens = kept.size();
  if (kept.empty()) return h;

  const double width = (hi - lo) / static_cast<double>(bins);
  double sum = 0.0;
  std::size_t near_zero = 0;
  for (double a : kept) {
    auto idx = static_cast<std::ptrdiff_t>(std::floor((a - lo) / width));
    idx = std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(bins) - 1);
    ++h.counts[static_cast<std::size_t>(idx)];
    sum += a;
    if (std::abs(a) < 0.05) ++near_zero;
  }
  const double n = static_cast<double>(kept.size());
  h.mean = sum / n;
  double m2 = 0.0, m3 = 0.0;
  for (double a : kept) {
    const double d = a - h.mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= n;
  m3 /= n;
  h.stdev = std::sqrt(m2);
  h.skew = m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
  h.frac_near_zero = static_cast<double>(near_zero) / n;
  return h;
}

AdvantageHistogram advantage_histogram(std::span<const double> advantages,
                                       std::span<const std::uint8_t> mask, std::size_t bins,
                                       double lo, double hi) {
  const std::vector<std::vector<double>> a{std::vector<double>(advantages.begin(), advantages.end())};
  const std::vector<std::vector<std::uint8_t>> m{std::vector<std::uint8_t>(mask.begin(), mask.end())};
  return advantage_histogram(a, m, bins, lo, hi);
}

std::string histogram_csv(const AdvantageHistogram& h) {
  std::ostringstream out;
  out.precision(17);
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    out << h.bin_edges[i] << ',' << h.bin_edges[i + 1] << ',' << h.counts[i] << '\n';
  }
  return out.str();
}

nlohmann::json histogram_summary(const AdvantageHistogram& h) {
  return {{"n_tokens", h.n_tokens}, {"mean", h.mean},       {"stdev", h.stdev},
          {"skew", h.skew},         {"frac_near_zero", h.frac_near_zero},
          {"bins", h.counts.size()}, {"lo", h.bin_edges.front()}, {"hi", h.bin_edges.back()}};
}

}  // namespace tips::metrics
