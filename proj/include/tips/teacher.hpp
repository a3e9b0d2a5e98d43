#pragma once

// Frozen policy snapshot that scores contexts by how likely it is to
// force-decode any gold answer next: Phi(S) = log sum_m p_teach(A^m | S).

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "tips/features.hpp"
#include "tips/policy.hpp"
#include "tips/seg_mdp.hpp"

namespace tips {

struct TeacherSnapshot {
  std::shared_ptr<const PolicyParams> params;
  std::uint64_t version = 0;
  std::uint64_t created_at_step = 0;
};

TeacherSnapshot make_teacher(const PolicyParams& policy, std::uint64_t step = 0, std::uint64_t version = 0);

enum class Aggregation { LogSumExp, MeanLogp };

struct ScoringConfig {
  Aggregation aggregation = Aggregation::LogSumExp;
  /// Score answers after an appended <answer> tag instead of directly after
  /// the context.
  bool answer_tag_prefix = false;
};

using AnswerSet = std::vector<std::vector<TokenId>>;

/// Sum of per-token log-probs when force-decoding `answer` after `context`.
/// A token outside the state's legal range contributes -inf.
double answer_log_prob(const PolicyParams& params, const StateEncoder& enc, std::span<const TokenId> context,
                       std::span<const TokenId> answer, bool answer_tag_prefix = false);

/// Throws InvalidInput for an empty answer set. Duplicate answers are scored once.
double answer_potential(const TeacherSnapshot& teacher, const StateEncoder& enc,
                        std::span<const TokenId> context, const AnswerSet& answers,
                        const ScoringConfig& cfg = {});
double answer_potential(const PolicyParams& params, const StateEncoder& enc, std::span<const TokenId> context,
                        const AnswerSet& answers, const ScoringConfig& cfg = {});

/// New snapshot (version + 1) when step is a positive multiple of interval,
/// otherwise the same teacher.
TeacherSnapshot maybe_refresh(const TeacherSnapshot& teacher, const PolicyParams& policy, std::uint64_t step,
                              std::uint64_t interval);

struct PotentialTrace {
  std::vector<double> phi;  // Phi(S_0) .. Phi(S_K)
  std::uint64_t teacher_version = 0;
};

/// Phi at every boundary of `traj`; boundary k's context is prompt followed by
/// the first b_k response tokens.
PotentialTrace potential_trace(const TeacherSnapshot& teacher, const StateEncoder& enc,
                               std::span<const TokenId> prompt, const Trajectory& traj, const AnswerSet& answers,
                               const ScoringConfig& cfg = {});

}  // namespace tips
