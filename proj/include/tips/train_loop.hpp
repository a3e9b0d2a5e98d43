#pragma once

// Outer loop: rollout -> outcome reward -> teacher potentials -> shaping ->
// advantages -> update -> teacher refresh -> telemetry. Everything random is
// drawn from streams derived from (seed, step, episode, decision), so a run
// is a pure function of its config and dataset.

#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tips/env_qa.hpp"
#include "tips/features.hpp"
#include "tips/kv_config.hpp"
#include "tips/metrics.hpp"
#include "tips/policy.hpp"
#include "tips/shaping.hpp"
#include "tips/teacher.hpp"
#include "tips/trainers.hpp"

namespace tips {

enum class TrainerKind { Ppo, Grpo, MtPpo, MtGrpo, MtGrpoStar };

std::string to_string(TrainerKind k);
TrainerKind parse_trainer(const std::string& s);
std::string to_string(Aggregation a);
Aggregation parse_aggregation(const std::string& s);
std::string to_string(TerminalConvention t);
TerminalConvention parse_terminal(const std::string& s);

struct TrainConfig {
  TrainerKind trainer = TrainerKind::Ppo;
  PPOConfig ppo;
  GRPOConfig grpo;
  MTConfig mt;
  ShapingConfig shaping;
  ScoringConfig scoring{Aggregation::LogSumExp, true};
  std::uint64_t refresh_interval = 200;
  std::size_t steps = 2000;
  std::uint64_t seed = 1;
  /// Initial weight of the "candidate appears in a tool response" pair feature.
  double copy_prior = 3.0;
  HashConfig hash;
  qa::EnvConfig env;
  double val_fraction = 0.2;
  std::uint64_t split_seed = 0;  // 0: derived from the dataset seed and the run seed
  std::size_t eval_every = 0;    // 0: evaluate only at the end
  std::size_t collapse_window = 10;
  double collapse_frac = 0.1;
  double collapse_min_peak = 0.1;
  std::size_t histogram_bins = 40;
  double histogram_lo = -3.0;
  double histogram_hi = 3.0;
  std::size_t histogram_steps = 20;
  std::size_t trace_every = 0;  // 0: no episode traces

  void validate() const;
  bool uses_teacher() const {
    return shaping.mode == ShapingMode::Info || shaping.mode == ShapingMode::HistoryMax;
  }

  /// Every key with its resolved value.
  KvConfig to_kv() const;
  /// Starts from defaults and applies the keys present; unknown keys throw.
  static TrainConfig from_kv(const KvConfig& kv);
  static const std::set<std::string>& known_keys();
};

struct StepTelemetry {
  std::size_t step = 0;
  double mean_em = 0.0;
  double mean_f1 = 0.0;
  double mean_return = 0.0;
  double mean_abs_delta = 0.0;
  double alpha = 0.0;
  double kl = 0.0;
  double clip_frac = 0.0;
  std::uint64_t teacher_version = 0;
  double mean_ratio = 1.0;
  double grad_norm = 0.0;
  double critic_mse = 0.0;
  std::size_t n_tokens = 0;
  std::size_t n_deltas = 0;
  double mean_tool_calls = 0.0;
  std::optional<double> val_em;

  nlohmann::json to_json() const;
};

struct EvalResult {
  double em = 0.0;
  double f1 = 0.0;
  double em_1hop = 0.0;
  double em_2hop = 0.0;
  std::size_t n = 0;
  std::size_t n_1hop = 0;
  std::size_t n_2hop = 0;
  double mean_tool_calls = 0.0;

  nlohmann::json to_json() const;
};

struct Episode {
  std::size_t question = 0;
  std::vector<TokenId> prompt;
  Trajectory traj;
  std::vector<PolicyInput> inputs;    // one per trainable token
  std::vector<std::size_t> positions;  // index of each trainable token
  std::optional<std::string> answer;
  double em = 0.0;
  double f1 = 0.0;
  std::vector<double> phi;
  std::vector<double> deltas;
};

/// Training set / validation set split of question indices.
struct QuestionSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

QuestionSplit split_questions(std::size_t n_questions, double val_fraction, std::uint64_t seed);

/// Initial policy for the QA encoder: zero context weights and the copy prior
/// on the in-context pair feature.
PolicyParams initial_qa_policy(const StateEncoder& enc, double copy_prior);

class Trainer {
public:
  Trainer(const qa::Environment& env, TrainConfig cfg);

  StepTelemetry step();
  std::size_t steps_done() const { return step_; }

  /// Sampled rollout with the live policy.
  Episode rollout(std::size_t question, std::uint64_t seed) const;
  Episode rollout_greedy(std::size_t question) const;
  EvalResult evaluate(std::span<const std::size_t> questions) const;
  EvalResult evaluate_validation() const { return evaluate(split_.validation); }

  const TrainConfig& config() const { return cfg_; }
  const QaEncoder& encoder() const { return encoder_; }
  const PolicyParams& policy() const { return policy_; }
  const CriticParams& critic() const { return critic_; }
  const TeacherSnapshot& teacher() const { return teacher_; }
  const QuestionSplit& split() const { return split_; }
  double alpha() const { return alpha_; }
  std::optional<double> calibrated_alpha() const { return calibrated_alpha_; }
  /// Steps completed when calibration finished.
  std::optional<std::size_t> calibration_step() const { return calibration_step_; }
  std::optional<std::size_t> collapse_step() const { return collapse_step_; }
  metrics::AdvantageHistogram histogram() const;

  void set_trace_sink(std::function<void(const nlohmann::json&)> sink) { trace_sink_ = std::move(sink); }

private:
  Episode run_episode(std::size_t question, std::optional<std::uint64_t> seed) const;
  void shape(std::vector<Episode>& batch, std::vector<double>& abs_scaled, std::vector<double>& abs_raw);
  std::vector<std::vector<double>> advantages(std::vector<Episode>& batch, std::vector<std::vector<double>>& returns);
  std::vector<SegmentText> segment_texts(const Episode& ep) const;

  const qa::Environment* env_;
  TrainConfig cfg_;
  QaEncoder encoder_;
  QuestionSplit split_;
  PolicyParams policy_;
  CriticParams critic_;
  TeacherSnapshot teacher_;
  double alpha_;
  std::size_t step_ = 0;

  std::vector<double> pilot_;
  std::size_t pilot_batches_seen_ = 0;
  std::optional<double> calibrated_alpha_;
  std::optional<std::size_t> calibration_step_;
  AlphaControllerState controller_;

  std::deque<double> em_window_;
  double em_window_sum_ = 0.0;
  double em_peak_ = 0.0;
  std::optional<std::size_t> collapse_step_;

  std::deque<std::vector<double>> recent_advantages_;
  std::function<void(const nlohmann::json&)> trace_sink_;
};

struct RunResult {
  std::vector<StepTelemetry> telemetry;
  EvalResult final_eval;
  std::optional<std::size_t> collapse_step;
  double final_alpha = 0.0;
  std::optional<double> calibrated_alpha;
  std::optional<std::size_t> calibration_step;
  metrics::AdvantageHistogram histogram;
  PolicyParams policy;
  CriticParams critic;
};

RunResult train_loop(const qa::Environment& env, const TrainConfig& cfg,
                     const std::function<void(const StepTelemetry&)>& on_step = {},
                     const std::function<void(const nlohmann::json&)>& on_trace = {});

}  // namespace tips
