#include "tips/seg_mdp.hpp"

#include <algorithm>
#include <string>

namespace tips {

void Trajectory::validate() const {
  const std::size_t t = tokens.size();
  if (logprobs_old.size() != t || mask.size() != t || rewards.size() != t) {
    throw InvalidInput("trajectory: token, logprob, mask and reward lengths differ");
  }
  if (boundaries.size() < 2 || boundaries.front() != 0 || boundaries.back() != t) {
    throw InvalidInput("trajectory: boundaries must start at 0 and end at T");
  }
  for (std::size_t k = 1; k < boundaries.size(); ++k) {
    if (boundaries[k] <= boundaries[k - 1]) {
      throw InvalidInput("trajectory: boundaries must be strictly increasing");
    }
  }
  if (tool_turns > num_segments()) throw InvalidInput("trajectory: tool_turns exceeds segment count");
  for (std::size_t u = 0; u < t; ++u) {
    if (rewards[u] == 0.0 || u + 1 == t) continue;
    const bool at_boundary =
        std::binary_search(boundaries.begin() + 1, boundaries.end(), u + 1);
    if (!at_boundary) {
      throw InvalidInput("trajectory: nonzero reward away from a boundary at index " +
                         std::to_string(u));
    }
  }
}

std::vector<std::size_t> segmentize(std::span<const TokenId> tokens,
                                    std::span<const TokenId> marker) {
  if (tokens.empty()) throw InvalidInput("segmentize: empty token list");
  std::vector<std::size_t> out{0};
  if (!marker.empty()) {
    std::size_t i = 0;
    while (i + marker.size() <= tokens.size()) {
      if (std::equal(marker.begin(), marker.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i))) {
        i += marker.size();
        out.push_back(i);
      } else {
        ++i;
      }
    }
  }
  if (out.back() != tokens.size()) out.push_back(tokens.size());
  return out;
}

std::vector<Segment> segments(const Trajectory& traj) {
  std::vector<Segment> out;
  for (std::size_t k = 1; k < traj.boundaries.size(); ++k) {
    out.push_back({k, traj.boundaries[k - 1], traj.boundaries[k],
                   k <= traj.tool_turns ? SegmentKind::ToolTurn : SegmentKind::FinalAnswer});
  }
  return out;
}

std::size_t segment_of(const Trajectory& traj, std::size_t t) {
  const auto it = std::upper_bound(traj.boundaries.begin(), traj.boundaries.end(), t);
  if (it == traj.boundaries.begin() || it == traj.boundaries.end()) {
    throw InvalidInput("segment_of: token index outside the trajectory");
  }
  return static_cast<std::size_t>(it - traj.boundaries.begin());
}

std::vector<double> monte_carlo_returns(std::span<const double> rewards, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidInput("monte_carlo_returns: gamma must be in (0, 1]");
  std::vector<double> g(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    g[i] = acc;
  }
  return g;
}

Trajectory inject_boundary_rewards(const Trajectory& traj, std::span<const double> deltas,
                                   TerminalConvention mode, double terminal_correction) {
  if (deltas.size() + 1 > traj.boundaries.size()) {
    throw InvalidInput("inject_boundary_rewards: more deltas than boundaries");
  }
  Trajectory out = traj;
  for (std::size_t j = 0; j < deltas.size(); ++j) {
    out.rewards[traj.boundaries[j + 1] - 1] += deltas[j];
  }
  if (mode == TerminalConvention::StrictPbrs && !out.rewards.empty()) {
    out.rewards.back() += terminal_correction;
  }
  return out;
}

nlohmann::json to_json(const EpisodeTrace& trace) {
  nlohmann::json j;
  const Trajectory& t = *trace.traj;
  j["tokens"] = t.tokens;
  j["boundaries"] = t.boundaries;
  j["rewards"] = t.rewards;
  j["phi_values"] = trace.phi_values;
  j["deltas"] = trace.deltas;
  j["alpha"] = trace.alpha;
  j["terminal_reward"] = t.terminal_reward;
  j["seed"] = trace.seed;
  if (trace.prompt) j["prompt"] = *trace.prompt;
  return j;
}

}  // namespace tips
