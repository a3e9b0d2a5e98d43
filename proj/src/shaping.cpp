#include "tips/shaping.hpp"

#include <algorithm>
#include <cmath>

#include "tips/metrics.hpp"

namespace tips {

Band band_range(AlphaBand b) {
  switch (b) {
    case AlphaBand::Small: return {0.001, 0.05};
    case AlphaBand::Medium: return {0.05, 0.3};
    case AlphaBand::Large: return {0.3, 1.0};
  }
  throw InvalidInput("unknown alpha band");
}

void ShapingConfig::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidInput("shaping: alpha must be > 0");
  if (!(clamp_lo < clamp_hi)) throw InvalidInput("shaping: clamp_lo must be < clamp_hi");
  if (!(target > 0.0)) throw InvalidInput("shaping: target must be > 0");
  if (c_exec < 0.0 || c_ans < 0.0) throw InvalidInput("shaping: rule coefficients must be >= 0");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw InvalidInput("shaping: ema_decay must be in [0, 1)");
  if (calibrate && alpha_policy == AlphaPolicy::Fixed && pilot_batches < 1) {
    throw InvalidInput("shaping: pilot_batches must be >= 1");
  }
}

std::string to_string(ShapingMode m) {
  switch (m) {
    case ShapingMode::Info: return "info";
    case ShapingMode::HistoryMax: return "history-max";
    case ShapingMode::Rule: return "rule";
    case ShapingMode::None: return "none";
  }
  return "?";
}
std::string to_string(AlphaPolicy p) { return p == AlphaPolicy::Fixed ? "fixed" : "dynamic"; }
std::string to_string(AlphaBand b) {
  switch (b) {
    case AlphaBand::Small: return "small";
    case AlphaBand::Medium: return "medium";
    case AlphaBand::Large: return "large";
  }
  return "?";
}
std::string to_string(RuleMapping m) { return m == RuleMapping::LastToken ? "last_token" : "distributed"; }

ShapingMode parse_shaping_mode(const std::string& s) {
  if (s == "info") return ShapingMode::Info;
  if (s == "history-max") return ShapingMode::HistoryMax;
  if (s == "rule") return ShapingMode::Rule;
  if (s == "none") return ShapingMode::None;
  throw InvalidInput("unknown shaping mode '" + s + "'");
}
AlphaPolicy parse_alpha_policy(const std::string& s) {
  if (s == "fixed") return AlphaPolicy::Fixed;
  if (s == "dynamic") return AlphaPolicy::Dynamic;
  throw InvalidInput("unknown alpha policy '" + s + "'");
}
AlphaBand parse_alpha_band(const std::string& s) {
  if (s == "small") return AlphaBand::Small;
  if (s == "medium") return AlphaBand::Medium;
  if (s == "large") return AlphaBand::Large;
  throw InvalidInput("unknown alpha band '" + s + "'");
}
RuleMapping parse_rule_mapping(const std::string& s) {
  if (s == "last_token") return RuleMapping::LastToken;
  if (s == "distributed") return RuleMapping::Distributed;
  throw InvalidInput("unknown rule mapping '" + s + "'");
}

namespace {

void check_phi(std::span<const double> phi) {
  if (phi.size() < 2) throw InvalidInput("deltas: need at least two potentials");
  for (double p : phi) {
    if (!std::isfinite(p)) throw InvalidInput("deltas: non-finite potential");
  }
}

}  // namespace

std::vector<double> info_deltas(std::span<const double> phi, double alpha) {
  check_phi(phi);
  std::vector<double> d(phi.size() - 1);
  for (std::size_t k = 1; k < phi.size(); ++k) d[k - 1] = alpha * (phi[k] - phi[k - 1]);
  return d;
}

std::vector<double> history_max_deltas(std::span<const double> phi, double alpha) {
  check_phi(phi);
  std::vector<double> d(phi.size() - 1);
  double best = phi[0];
  for (std::size_t k = 1; k < phi.size(); ++k) {
    const double next = std::max(best, phi[k]);
    d[k - 1] = alpha * (next - best);
    best = next;
  }
  return d;
}

RuleEvents rule_events(const SegmentText& seg, std::span<const std::string> answer_set) {
  RuleEvents ev;
  if (!seg.response) return ev;
  const std::string resp = metrics::normalize_answer(*seg.response);
  const auto first = seg.response->find_first_not_of(" \t\r\n");
  const bool error = first != std::string::npos && seg.response->compare(first, 6, "Error:") == 0;
  if (error) return ev;
  ev.exec = seg.tool_call.find("<tool_call>") != std::string::npos && !resp.empty();
  for (const auto& a : answer_set) {
    const std::string g = metrics::normalize_answer(a);
    if (!g.empty() && resp.find(g) != std::string::npos) {
      ev.answer = true;
      break;
    }
  }
  return ev;
}

std::vector<double> rule_rewards(std::span<const SegmentText> segments, std::span<const std::string> answer_set,
                                 const ShapingConfig& cfg) {
  std::vector<double> out;
  out.reserve(segments.size());
  for (const auto& s : segments) {
    const RuleEvents ev = rule_events(s, answer_set);
    out.push_back(cfg.kappa * (cfg.c_exec * (ev.exec ? 1.0 : 0.0) + cfg.c_ans * (ev.answer ? 1.0 : 0.0)));
  }
  return out;
}

std::vector<double> map_segment_rewards(const Trajectory& traj, std::span<const double> segment_rewards,
                                        RuleMapping mapping) {
  if (segment_rewards.size() > traj.num_segments()) {
    throw InvalidInput("map_segment_rewards: more rewards than segments");
  }
  std::vector<double> out(traj.size(), 0.0);
  for (std::size_t s = 0; s < segment_rewards.size(); ++s) {
    const std::size_t lo = traj.boundaries[s], hi = traj.boundaries[s + 1];
    std::vector<std::size_t> trainable;
    for (std::size_t t = lo; t < hi; ++t) {
      if (traj.mask[t]) trainable.push_back(t);
    }
    if (trainable.empty()) continue;
    if (mapping == RuleMapping::LastToken) {
      out[trainable.back()] += segment_rewards[s];
    } else {
      const double share = segment_rewards[s] / static_cast<double>(trainable.size());
      for (std::size_t t : trainable) out[t] += share;
    }
  }
  return out;
}

double calibrate_alpha_fixed(std::span<const double> pilot_abs_deltas, double target, double lo, double hi) {
  if (pilot_abs_deltas.empty()) throw CalibrationFailed("calibrate_alpha_fixed: empty pilot");
  double s = 0.0;
  for (double d : pilot_abs_deltas) {
    if (!std::isfinite(d)) throw InvalidInput("calibrate_alpha_fixed: non-finite pilot delta");
    s += std::abs(d);
  }
  const double mean = s / static_cast<double>(pilot_abs_deltas.size());
  if (!(mean > 0.0)) throw CalibrationFailed("calibrate_alpha_fixed: pilot deltas have zero mean");
  return std::clamp(target / mean, lo, hi);
}

void observe(AlphaControllerState& state, double mean_abs_scaled_delta, double decay) {
  if (state.step == 0) {
    state.running_mean_abs_delta = mean_abs_scaled_delta;
  } else {
    state.running_mean_abs_delta = decay * state.running_mean_abs_delta + (1.0 - decay) * mean_abs_scaled_delta;
  }
  ++state.step;
}

double alpha_dynamic_update(const AlphaControllerState& state, double alpha, AlphaBand band) {
  const Band b = band_range(band);
  double next = alpha;
  if (state.running_mean_abs_delta < b.lo) next = alpha * 1.1;
  else if (state.running_mean_abs_delta > b.hi) next = alpha / 1.1;
  return std::clamp(next, 1e-4, 1e2);
}

}  // namespace tips
