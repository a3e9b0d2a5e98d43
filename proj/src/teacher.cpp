#include "tips/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "tips/env_qa.hpp"

namespace tips {

TeacherSnapshot make_teacher(const PolicyParams& policy, std::uint64_t step, std::uint64_t version) {
  return {std::make_shared<const PolicyParams>(policy.snapshot()), version, step};
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

AnswerSet dedupe(const AnswerSet& answers) {
  if (answers.empty()) throw InvalidInput("answer_potential: empty answer set");
  AnswerSet out;
  for (const auto& a : answers) {
    if (a.empty()) throw InvalidInput("answer_potential: empty answer");
    if (std::find(out.begin(), out.end(), a) == out.end()) out.push_back(a);
  }
  return out;
}

/// Scores several answers after one context, sharing the distribution of
/// every answer prefix.
std::vector<double> score_answers(const PolicyParams& params, const StateEncoder& enc,
                                  std::span<const TokenId> context, const AnswerSet& answers, bool tag) {
  std::vector<TokenId> buf(context.begin(), context.end());
  if (tag) buf.push_back(qa::tok::kAnswerOpen);
  const std::size_t base = buf.size();
  std::map<std::vector<TokenId>, Distribution> cache;
  std::vector<double> out;
  out.reserve(answers.size());
  for (const auto& a : answers) {
    double lp = 0.0;
    std::vector<TokenId> key;
    buf.resize(base);
    for (TokenId t : a) {
      if (t >= params.vocab_size()) throw InvalidInput("answer_potential: answer token outside the vocabulary");
      auto it = cache.find(key);
      if (it == cache.end()) {
        const PolicyInput in = enc.encode(buf);
        it = cache.emplace(key, in.legal.size() ? distribution(params, in) : Distribution{}).first;
      }
      const Distribution& d = it->second;
      if (!d.contains(t)) {
        lp = kNegInf;
        break;
      }
      lp += d.log_prob(t);
      key.push_back(t);
      buf.push_back(t);
    }
    out.push_back(lp);
  }
  return out;
}

double aggregate(const std::vector<double>& lps, Aggregation agg) {
  if (agg == Aggregation::MeanLogp) {
    double s = 0.0;
    for (double x : lps) s += x;
    return s / static_cast<double>(lps.size());
  }
  const double m = *std::max_element(lps.begin(), lps.end());
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : lps) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

double answer_log_prob(const PolicyParams& params, const StateEncoder& enc, std::span<const TokenId> context,
                       std::span<const TokenId> answer, bool answer_tag_prefix) {
  if (answer.empty()) throw InvalidInput("answer_log_prob: empty answer");
  return score_answers(params, enc, context, {std::vector<TokenId>(answer.begin(), answer.end())},
                       answer_tag_prefix)[0];
}

double answer_potential(const PolicyParams& params, const StateEncoder& enc, std::span<const TokenId> context,
                        const AnswerSet& answers, const ScoringConfig& cfg) {
  const AnswerSet uniq = dedupe(answers);
  return aggregate(score_answers(params, enc, context, uniq, cfg.answer_tag_prefix), cfg.aggregation);
}

double answer_potential(const TeacherSnapshot& teacher, const StateEncoder& enc,
                        std::span<const TokenId> context, const AnswerSet& answers, const ScoringConfig& cfg) {
  if (!teacher.params) throw InvalidState("answer_potential: empty teacher");
  return answer_potential(*teacher.params, enc, context, answers, cfg);
}

TeacherSnapshot maybe_refresh(const TeacherSnapshot& teacher, const PolicyParams& policy, std::uint64_t step,
                              std::uint64_t interval) {
  if (interval < 1) throw InvalidInput("maybe_refresh: interval must be >= 1");
  if (step > 0 && step % interval == 0) return make_teacher(policy, step, teacher.version + 1);
  return teacher;
}

PotentialTrace potential_trace(const TeacherSnapshot& teacher, const StateEncoder& enc,
                               std::span<const TokenId> prompt, const Trajectory& traj, const AnswerSet& answers,
                               const ScoringConfig& cfg) {
  if (traj.boundaries.size() < 2) throw InvalidInput("potential_trace: trajectory has no boundaries");
  if (!teacher.params) throw InvalidState("potential_trace: empty teacher");
  const AnswerSet uniq = dedupe(answers);
  PotentialTrace tr;
  tr.teacher_version = teacher.version;
  std::vector<TokenId> ctx(prompt.begin(), prompt.end());
  std::size_t done = 0;
  for (std::size_t b : traj.boundaries) {
    if (b > traj.tokens.size()) throw InvalidInput("potential_trace: boundary beyond trajectory");
    ctx.insert(ctx.end(), traj.tokens.begin() + static_cast<std::ptrdiff_t>(done),
               traj.tokens.begin() + static_cast<std::ptrdiff_t>(b));
    done = b;
    tr.phi.push_back(
        aggregate(score_answers(*teacher.params, enc, ctx, uniq, cfg.answer_tag_prefix), cfg.aggregation));
  }
  return tr;
}

}  // namespace tips
