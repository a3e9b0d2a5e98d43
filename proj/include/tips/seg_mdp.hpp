#pragma once

// Token-level trajectories partitioned into turn segments, plus the return
// and boundary-injection arithmetic the shaping and trainer modules share.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "tips/common.hpp"

namespace tips {

/// A single rollout. Indices refer to the response tokens (the prompt lives
/// in the episode record, not here).
///
/// Invariants (checked by validate()):
///  - tokens, logprobs_old, mask and rewards have equal length T;
///  - boundaries = {0 = b_0 < b_1 < ... < b_K = T};
///  - rewards are zero except at b_k - 1 and at T - 1.
struct Trajectory {
  std::vector<TokenId> tokens;
  std::vector<double> logprobs_old;
  std::vector<std::uint8_t> mask;
  std::vector<double> rewards;
  std::vector<std::size_t> boundaries;
  double terminal_reward = 0.0;
  /// Number of leading segments that end in a tool response. The remaining
  /// segment (if any) is the final-answer segment.
  std::size_t tool_turns = 0;

  std::size_t size() const { return tokens.size(); }
  std::size_t num_segments() const { return boundaries.empty() ? 0 : boundaries.size() - 1; }
  void validate() const;
};

enum class SegmentKind { ToolTurn, FinalAnswer };

struct Segment {
  std::size_t index = 0;  // 1-based
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  SegmentKind kind = SegmentKind::ToolTurn;
};

/// Boundaries for a token sequence: 0, one index just past every complete
/// occurrence of `marker`, and T (unless the last marker already ends at T).
std::vector<std::size_t> segmentize(std::span<const TokenId> tokens, std::span<const TokenId> marker);

std::vector<Segment> segments(const Trajectory& traj);

/// 1-based segment index containing token t.
std::size_t segment_of(const Trajectory& traj, std::size_t t);

/// G_t = sum_{u>=t} gamma^{u-t} r_u, one backward pass.
std::vector<double> monte_carlo_returns(std::span<const double> rewards, double gamma = 1.0);

enum class TerminalConvention {
  /// Inject only the measured deltas.
  Measured,
  /// Also add -alpha * Phi(S_last) at the final token so the terminal
  /// potential is zero and returns shift by exactly -alpha * Phi(S_{k-1}).
  StrictPbrs,
};

/// Adds deltas[j] to rewards[b_{j+1} - 1]. In StrictPbrs mode the terminal
/// correction is added to the final token.
Trajectory inject_boundary_rewards(const Trajectory& traj, std::span<const double> deltas,
                                   TerminalConvention mode, double terminal_correction = 0.0);

/// One JSON trace record per episode.
struct EpisodeTrace {
  const Trajectory* traj = nullptr;
  std::vector<double> phi_values;
  std::vector<double> deltas;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::optional<std::vector<TokenId>> prompt;
};

nlohmann::json to_json(const EpisodeTrace& trace);

}  // namespace tips
