#pragma once

// Dense turn-level rewards: information deltas from the answer potential,
// the history-max variant, rule-based segment rewards, and the alpha
// controllers (one-shot pilot calibration and a band-tracking EMA).

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tips/seg_mdp.hpp"

namespace tips {

enum class ShapingMode { Info, HistoryMax, Rule, None };
enum class AlphaPolicy { Fixed, Dynamic };
enum class RuleMapping { LastToken, Distributed };
enum class AlphaBand { Small, Medium, Large };

struct Band {
  double lo;
  double hi;
};

/// small [0.001, 0.05], medium [0.05, 0.3], large [0.3, 1.0]
Band band_range(AlphaBand b);

struct ShapingConfig {
  ShapingMode mode = ShapingMode::Info;
  double alpha = 0.1;
  AlphaPolicy alpha_policy = AlphaPolicy::Fixed;
  /// Fixed policy: replace alpha by the pilot calibration result.
  bool calibrate = true;
  double target = 0.2;
  std::size_t pilot_batches = 20;
  double clamp_lo = 0.05;
  double clamp_hi = 0.3;
  AlphaBand band = AlphaBand::Medium;
  double ema_decay = 0.99;
  TerminalConvention terminal = TerminalConvention::Measured;
  /// Also shape the segment after the last tool response (the answer turn).
  bool shape_final_segment = false;
  double c_exec = 0.1;
  double c_ans = 0.15;
  RuleMapping rule_mapping = RuleMapping::LastToken;
  double kappa = 1.0;  // scale applied to rule rewards
  double omega = 1.0;  // mixing weight of rule rewards into the token rewards

  void validate() const;
};

std::string to_string(ShapingMode m);
std::string to_string(AlphaPolicy p);
std::string to_string(AlphaBand b);
std::string to_string(RuleMapping m);
ShapingMode parse_shaping_mode(const std::string& s);
AlphaPolicy parse_alpha_policy(const std::string& s);
AlphaBand parse_alpha_band(const std::string& s);
RuleMapping parse_rule_mapping(const std::string& s);

/// Delta_k = alpha (Phi_k - Phi_{k-1}), k = 1..K.
std::vector<double> info_deltas(std::span<const double> phi, double alpha);
/// Delta_k = alpha max(0, F_k - F_{k-1}) with F the running maximum of Phi.
std::vector<double> history_max_deltas(std::span<const double> phi, double alpha);

/// Raw text of one segment for rule-event detection.
struct SegmentText {
  std::string tool_call;                // empty when the segment made no call
  std::optional<std::string> response;  // inner text of the tool response
};

struct RuleEvents {
  bool exec = false;
  bool answer = false;
};

RuleEvents rule_events(const SegmentText& seg, std::span<const std::string> answer_set);
/// Per-segment reward c_exec * [exec] + c_ans * [answer], scaled by kappa.
std::vector<double> rule_rewards(std::span<const SegmentText> segments, std::span<const std::string> answer_set,
                                 const ShapingConfig& cfg);

/// Interface for externally scored segments (e.g. a judge model). No
/// implementation ships; rule_rewards is the built-in scorer.
using SegmentScorer = std::function<double(const SegmentText&)>;

/// Places per-segment rewards on tokens: on the last trainable token of each
/// segment, or spread evenly over its trainable tokens.
std::vector<double> map_segment_rewards(const Trajectory& traj, std::span<const double> segment_rewards,
                                        RuleMapping mapping);

/// alpha = target / mean(|Delta_raw|), clamped to [lo, hi].
/// Throws CalibrationFailed when the pilot is empty or has zero mean.
double calibrate_alpha_fixed(std::span<const double> pilot_abs_deltas, double target = 0.2, double lo = 0.05,
                             double hi = 0.3);

struct AlphaControllerState {
  double running_mean_abs_delta = 0.0;  // EMA of mean |alpha * Delta|
  std::uint64_t step = 0;
};

/// Folds one batch's mean |alpha * Delta| into the EMA. The first
/// observation initializes the average.
void observe(AlphaControllerState& state, double mean_abs_scaled_delta, double decay = 0.99);

/// Multiplies alpha by 1.1 below the band, divides above it, and keeps the
/// result inside [1e-4, 1e2].
double alpha_dynamic_update(const AlphaControllerState& state, double alpha, AlphaBand band);

}  // namespace tips
