#include "tips/train_loop.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace tips {

// ------------------------------------------------------------ enum names

std::string to_string(TrainerKind k) {
  switch (k) {
    case TrainerKind::Ppo: return "ppo";
    case TrainerKind::Grpo: return "grpo";
    case TrainerKind::MtPpo: return "mt-ppo";
    case TrainerKind::MtGrpo: return "mt-grpo";
    case TrainerKind::MtGrpoStar: return "mt-grpo-star";
  }
  return "?";
}

TrainerKind parse_trainer(const std::string& s) {
  if (s == "ppo") return TrainerKind::Ppo;
  if (s == "grpo") return TrainerKind::Grpo;
  if (s == "mt-ppo") return TrainerKind::MtPpo;
  if (s == "mt-grpo") return TrainerKind::MtGrpo;
  if (s == "mt-grpo-star") return TrainerKind::MtGrpoStar;
  throw InvalidInput("unknown trainer '" + s + "'");
}

std::string to_string(Aggregation a) { return a == Aggregation::LogSumExp ? "logsumexp" : "mean-logp"; }

Aggregation parse_aggregation(const std::string& s) {
  if (s == "logsumexp") return Aggregation::LogSumExp;
  if (s == "mean-logp") return Aggregation::MeanLogp;
  throw InvalidInput("unknown aggregation '" + s + "'");
}

std::string to_string(TerminalConvention t) {
  return t == TerminalConvention::Measured ? "measured" : "strict-pbrs";
}

TerminalConvention parse_terminal(const std::string& s) {
  if (s == "measured") return TerminalConvention::Measured;
  if (s == "strict-pbrs") return TerminalConvention::StrictPbrs;
  throw InvalidInput("unknown terminal convention '" + s + "'");
}

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  ppo.validate();
  if (trainer == TrainerKind::Grpo || trainer == TrainerKind::MtGrpo || trainer == TrainerKind::MtGrpoStar) {
    grpo.validate();
  }
  mt.validate();
  shaping.validate();
  if (refresh_interval < 1) throw InvalidInput("config: refresh must be >= 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw InvalidInput("config: val_fraction must be in [0, 1)");
  if (collapse_window < 1) throw InvalidInput("config: collapse_window must be >= 1");
  if (histogram_bins < 1 || !(histogram_hi > histogram_lo)) throw InvalidInput("config: bad histogram range");
  if (env.top_k < 1 || env.token_cap < 1) throw InvalidInput("config: top_k and token_cap must be >= 1");
}

namespace {

std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string num(std::uint64_t x) { return std::to_string(x); }

std::string flag(bool b) { return b ? "true" : "false"; }

}  // namespace

const std::set<std::string>& TrainConfig::known_keys() {
  static const std::set<std::string> keys = {
      "trainer", "steps", "seed", "batch_size", "group_size", "epochs_per_batch", "minibatches", "clip_eps",
      "kl_coef", "gamma", "lam", "lr_policy", "lr_critic", "grad_clip", "grpo_grad_clip", "sigma_eps",
      "beta_blend", "lambda_mid", "lambda_final", "shaping", "alpha", "alpha_policy", "calibrate", "target",
      "pilot_batches", "clamp_lo", "clamp_hi", "band", "ema_decay", "terminal", "shape_final_segment", "c_exec",
      "c_ans", "rule_mapping", "kappa", "omega", "aggregation", "answer_tag_prefix", "refresh", "copy_prior",
      "feature_dim", "window", "hash_seed", "top_k", "max_turns", "token_cap", "val_fraction", "split_seed",
      "eval_every", "collapse_window", "collapse_frac", "collapse_min_peak", "histogram_bins", "histogram_lo",
      "histogram_hi", "histogram_steps", "trace_every"};
  return keys;
}

KvConfig TrainConfig::to_kv() const {
  KvConfig kv;
  kv.set("trainer", to_string(trainer));
  kv.set("steps", num(std::uint64_t{steps}));
  kv.set("seed", num(seed));
  kv.set("batch_size", num(std::uint64_t{ppo.batch_size}));
  kv.set("group_size", num(std::uint64_t{grpo.group_size}));
  kv.set("epochs_per_batch", num(std::uint64_t{ppo.epochs_per_batch}));
  kv.set("minibatches", num(std::uint64_t{ppo.minibatches}));
  kv.set("clip_eps", num(ppo.clip_eps));
  kv.set("kl_coef", num(ppo.kl_coef));
  kv.set("gamma", num(ppo.gamma));
  kv.set("lam", num(ppo.lam));
  kv.set("lr_policy", num(ppo.lr_policy));
  kv.set("lr_critic", num(ppo.lr_critic));
  kv.set("grad_clip", num(ppo.grad_clip));
  kv.set("grpo_grad_clip", num(grpo.grad_clip));
  kv.set("sigma_eps", num(grpo.sigma_eps));
  kv.set("beta_blend", num(mt.beta_blend));
  kv.set("lambda_mid", num(mt.lambda_mid));
  kv.set("lambda_final", num(mt.lambda_final));
  kv.set("shaping", to_string(shaping.mode));
  kv.set("alpha", num(shaping.alpha));
  kv.set("alpha_policy", to_string(shaping.alpha_policy));
  kv.set("calibrate", flag(shaping.calibrate));
  kv.set("target", num(shaping.target));
  kv.set("pilot_batches", num(std::uint64_t{shaping.pilot_batches}));
  kv.set("clamp_lo", num(shaping.clamp_lo));
  kv.set("clamp_hi", num(shaping.clamp_hi));
  kv.set("band", to_string(shaping.band));
  kv.set("ema_decay", num(shaping.ema_decay));
  kv.set("terminal", to_string(shaping.terminal));
  kv.set("shape_final_segment", flag(shaping.shape_final_segment));
  kv.set("c_exec", num(shaping.c_exec));
  kv.set("c_ans", num(shaping.c_ans));
  kv.set("rule_mapping", to_string(shaping.rule_mapping));
  kv.set("kappa", num(shaping.kappa));
  kv.set("omega", num(shaping.omega));
  kv.set("aggregation", to_string(scoring.aggregation));
  kv.set("answer_tag_prefix", flag(scoring.answer_tag_prefix));
  kv.set("refresh", num(refresh_interval));
  kv.set("copy_prior", num(copy_prior));
  kv.set("feature_dim", num(std::uint64_t{hash.feature_dim}));
  kv.set("window", num(std::uint64_t{hash.window}));
  kv.set("hash_seed", num(hash.hash_seed));
  kv.set("top_k", num(std::uint64_t{env.top_k}));
  kv.set("max_turns", num(std::uint64_t{env.max_turns}));
  kv.set("token_cap", num(std::uint64_t{env.token_cap}));
  kv.set("val_fraction", num(val_fraction));
  kv.set("split_seed", num(split_seed));
  kv.set("eval_every", num(std::uint64_t{eval_every}));
  kv.set("collapse_window", num(std::uint64_t{collapse_window}));
  kv.set("collapse_frac", num(collapse_frac));
  kv.set("collapse_min_peak", num(collapse_min_peak));
  kv.set("histogram_bins", num(std::uint64_t{histogram_bins}));
  kv.set("histogram_lo", num(histogram_lo));
  kv.set("histogram_hi", num(histogram_hi));
  kv.set("histogram_steps", num(std::uint64_t{histogram_steps}));
  kv.set("trace_every", num(std::uint64_t{trace_every}));
  return kv;
}

TrainConfig TrainConfig::from_kv(const KvConfig& kv) {
  kv.require_known(known_keys());
  TrainConfig c;
  auto size = [&](const char* k, std::size_t& out) {
    if (!kv.has(k)) return;
    const long long v = kv.get_int(k);
    if (v < 0) throw InvalidInput(std::string("config: ") + k + " must be >= 0");
    out = static_cast<std::size_t>(v);
  };
  auto u64 = [&](const char* k, std::uint64_t& out) {
    if (!kv.has(k)) return;
    try {
      out = std::stoull(kv.get(k));
    } catch (const std::exception&) {
      throw InvalidInput(std::string("config: ") + k + " is not an unsigned integer");
    }
  };
  auto real = [&](const char* k, double& out) { out = kv.get_double_or(k, out); };
  auto boolean = [&](const char* k, bool& out) { out = kv.get_bool_or(k, out); };

  if (kv.has("trainer")) c.trainer = parse_trainer(kv.get("trainer"));
  size("steps", c.steps);
  u64("seed", c.seed);
  size("batch_size", c.ppo.batch_size);
  size("group_size", c.grpo.group_size);
  size("epochs_per_batch", c.ppo.epochs_per_batch);
  size("minibatches", c.ppo.minibatches);
  real("clip_eps", c.ppo.clip_eps);
  real("kl_coef", c.ppo.kl_coef);
  real("gamma", c.ppo.gamma);
  real("lam", c.ppo.lam);
  real("lr_policy", c.ppo.lr_policy);
  real("lr_critic", c.ppo.lr_critic);
  real("grad_clip", c.ppo.grad_clip);
  real("grpo_grad_clip", c.grpo.grad_clip);
  real("sigma_eps", c.grpo.sigma_eps);
  real("beta_blend", c.mt.beta_blend);
  real("lambda_mid", c.mt.lambda_mid);
  real("lambda_final", c.mt.lambda_final);
  if (kv.has("shaping")) c.shaping.mode = parse_shaping_mode(kv.get("shaping"));
  real("alpha", c.shaping.alpha);
  if (kv.has("alpha_policy")) c.shaping.alpha_policy = parse_alpha_policy(kv.get("alpha_policy"));
  boolean("calibrate", c.shaping.calibrate);
  real("target", c.shaping.target);
  size("pilot_batches", c.shaping.pilot_batches);
  real("clamp_lo", c.shaping.clamp_lo);
  real("clamp_hi", c.shaping.clamp_hi);
  if (kv.has("band")) c.shaping.band = parse_alpha_band(kv.get("band"));
  real("ema_decay", c.shaping.ema_decay);
  if (kv.has("terminal")) c.shaping.terminal = parse_terminal(kv.get("terminal"));
  boolean("shape_final_segment", c.shaping.shape_final_segment);
  real("c_exec", c.shaping.c_exec);
  real("c_ans", c.shaping.c_ans);
  if (kv.has("rule_mapping")) c.shaping.rule_mapping = parse_rule_mapping(kv.get("rule_mapping"));
  real("kappa", c.shaping.kappa);
  real("omega", c.shaping.omega);
  if (kv.has("aggregation")) c.scoring.aggregation = parse_aggregation(kv.get("aggregation"));
  boolean("answer_tag_prefix", c.scoring.answer_tag_prefix);
  u64("refresh", c.refresh_interval);
  real("copy_prior", c.copy_prior);
  size("feature_dim", c.hash.feature_dim);
  size("window", c.hash.window);
  u64("hash_seed", c.hash.hash_seed);
  size("top_k", c.env.top_k);
  size("max_turns", c.env.max_turns);
  size("token_cap", c.env.token_cap);
  real("val_fraction", c.val_fraction);
  u64("split_seed", c.split_seed);
  size("eval_every", c.eval_every);
  size("collapse_window", c.collapse_window);
  real("collapse_frac", c.collapse_frac);
  real("collapse_min_peak", c.collapse_min_peak);
  size("histogram_bins", c.histogram_bins);
  real("histogram_lo", c.histogram_lo);
  real("histogram_hi", c.histogram_hi);
  size("histogram_steps", c.histogram_steps);
  size("trace_every", c.trace_every);
  c.validate();
  return c;
}

// ------------------------------------------------------------- records

nlohmann::json StepTelemetry::to_json() const {
  nlohmann::json j = {{"step", step},
                      {"mean_EM", mean_em},
                      {"mean_F1", mean_f1},
                      {"mean_return", mean_return},
                      {"mean_abs_delta", mean_abs_delta},
                      {"alpha", alpha},
                      {"kl", kl},
                      {"clip_frac", clip_frac},
                      {"teacher_version", teacher_version},
                      {"mean_ratio", mean_ratio},
                      {"grad_norm", grad_norm},
                      {"critic_mse", critic_mse},
                      {"n_tokens", n_tokens},
                      {"n_deltas", n_deltas},
                      {"mean_tool_calls", mean_tool_calls}};
  if (val_em) j["val_EM"] = *val_em;
  return j;
}

nlohmann::json EvalResult::to_json() const {
  return {{"EM", em},          {"F1", f1},           {"EM_1hop", em_1hop},
          {"EM_2hop", em_2hop}, {"n", n},             {"n_1hop", n_1hop},
          {"n_2hop", n_2hop},   {"mean_tool_calls", mean_tool_calls}};
}

QuestionSplit split_questions(std::size_t n_questions, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n_questions);
  for (std::size_t i = 0; i < n_questions; ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n_questions)));
  QuestionSplit s;
  s.validation.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

PolicyParams initial_qa_policy(const StateEncoder& enc, double copy_prior) {
  PolicyParams p(enc.feature_dim(), enc.vocab_size(), enc.pair_dim(), enc.hash_seed());
  auto u = p.pair_weights();
  if (u.size() >= 2 * kQaPairFlags) {
    u[kInContext] = copy_prior;
    u[kQaPairFlags + kInContext] = copy_prior;
  }
  return p;
}

// --------------------------------------------------------------- trainer

Trainer::Trainer(const qa::Environment& env, TrainConfig cfg)
    : env_(&env), cfg_(std::move(cfg)), encoder_(env, cfg_.hash) {
  cfg_.validate();
  if (env.config().max_turns != cfg_.env.max_turns || env.config().top_k != cfg_.env.top_k ||
      env.config().token_cap != cfg_.env.token_cap) {
    throw InvalidInput("trainer: environment settings differ from the run config");
  }
  if (env.dataset().questions.empty()) throw InvalidInput("trainer: dataset has no questions");
  const std::uint64_t split_seed =
      cfg_.split_seed ? cfg_.split_seed : derive_seed(env.dataset().params.seed, 0x5b117, cfg_.seed);
  split_ = split_questions(env.dataset().questions.size(), cfg_.val_fraction, split_seed);
  if (split_.train.empty()) throw InvalidInput("trainer: no training questions after the split");
  policy_ = initial_qa_policy(encoder_, cfg_.copy_prior);
  critic_ = CriticParams(encoder_.feature_dim());
  teacher_ = make_teacher(policy_, 0, 0);
  alpha_ = cfg_.shaping.alpha;
}

Episode Trainer::run_episode(std::size_t question, std::optional<std::uint64_t> seed) const {
  qa::EpisodeState state = env_->reset(question);
  Episode ep;
  ep.question = question;
  ep.prompt = state.context;
  std::vector<double> logps;
  std::uint64_t decision = 0;
  while (!state.done) {
    PolicyInput in = encoder_.encode(state.context);
    if (in.legal.size() == 0) throw InvalidState("rollout: no legal action in a running episode");
    const Distribution d = distribution(policy_, in);
    const TokenId t = seed ? sample(d, derive_seed(*seed, decision)) : greedy(d);
    ep.positions.push_back(state.context.size() - state.prompt_len);
    logps.push_back(d.log_prob(t));
    ep.inputs.push_back(std::move(in));
    env_->step(state, t);
    ++decision;
  }

  Trajectory& tr = ep.traj;
  const auto resp = state.response();
  tr.tokens.assign(resp.begin(), resp.end());
  tr.mask = state.mask;
  tr.logprobs_old.assign(tr.tokens.size(), 0.0);
  for (std::size_t j = 0; j < ep.positions.size(); ++j) tr.logprobs_old[ep.positions[j]] = logps[j];
  tr.rewards.assign(tr.tokens.size(), 0.0);
  const TokenId marker[] = {qa::tok::kToolResponseClose};
  tr.boundaries = segmentize(tr.tokens, marker);
  tr.tool_turns = static_cast<std::size_t>(std::count(tr.tokens.begin(), tr.tokens.end(), qa::tok::kToolResponseClose));

  const auto& gold = env_->dataset().questions[question].answer_set;
  ep.answer = qa::parse_answer(env_->response_text(state));
  const auto scored = metrics::score_answer(ep.answer, gold);
  ep.em = scored.em;
  ep.f1 = scored.f1;
  tr.terminal_reward = ep.em;
  tr.rewards.back() += ep.em;
  return ep;
}

Episode Trainer::rollout(std::size_t question, std::uint64_t seed) const { return run_episode(question, seed); }
Episode Trainer::rollout_greedy(std::size_t question) const { return run_episode(question, std::nullopt); }

EvalResult Trainer::evaluate(std::span<const std::size_t> questions) const {
  EvalResult r;
  double calls = 0.0;
  for (std::size_t q : questions) {
    const Episode ep = rollout_greedy(q);
    const int hops = env_->dataset().questions[q].hops;
    r.em += ep.em;
    r.f1 += ep.f1;
    calls += static_cast<double>(ep.traj.tool_turns);
    if (hops == 2) {
      r.em_2hop += ep.em;
      ++r.n_2hop;
    } else {
      r.em_1hop += ep.em;
      ++r.n_1hop;
    }
  }
  r.n = questions.size();
  if (r.n) {
    r.em /= static_cast<double>(r.n);
    r.f1 /= static_cast<double>(r.n);
    r.mean_tool_calls = calls / static_cast<double>(r.n);
  }
  if (r.n_1hop) r.em_1hop /= static_cast<double>(r.n_1hop);
  if (r.n_2hop) r.em_2hop /= static_cast<double>(r.n_2hop);
  return r;
}

std::vector<SegmentText> Trainer::segment_texts(const Episode& ep) const {
  const auto& vocab = env_->vocab();
  const Trajectory& tr = ep.traj;
  std::vector<SegmentText> out;
  for (std::size_t s = 0; s < std::min(tr.tool_turns, tr.num_segments()); ++s) {
    const auto seg = std::span<const TokenId>(tr.tokens).subspan(tr.boundaries[s], tr.boundaries[s + 1] - tr.boundaries[s]);
    const auto open = std::find(seg.begin(), seg.end(), qa::tok::kToolResponseOpen);
    SegmentText st;
    st.tool_call = vocab.detokenize(std::span<const TokenId>(seg.begin(), open));
    if (open != seg.end()) {
      const auto close = std::find(open, seg.end(), qa::tok::kToolResponseClose);
      st.response = vocab.detokenize(std::span<const TokenId>(open + 1, close));
    }
    out.push_back(std::move(st));
  }
  return out;
}

void Trainer::shape(std::vector<Episode>& batch, std::vector<double>& abs_scaled, std::vector<double>& abs_raw) {
  const ShapingConfig& sc = cfg_.shaping;
  const bool rule = sc.mode == ShapingMode::Rule || cfg_.trainer == TrainerKind::MtPpo;
  for (Episode& ep : batch) {
    const auto& gold = env_->dataset().questions[ep.question].answer_set;
    if (cfg_.uses_teacher()) {
      const auto answers = env_->answer_tokens(ep.question);
      ep.phi = potential_trace(teacher_, encoder_, ep.prompt, ep.traj, answers, cfg_.scoring).phi;
      const std::size_t k_total = ep.traj.num_segments();
      std::size_t shaped = std::min(ep.traj.tool_turns, k_total);
      if (sc.shape_final_segment && k_total > shaped) ++shaped;
      const std::span<const double> phi_used(ep.phi.data(), shaped + 1);
      if (shaped > 0) {
        const bool hmax = sc.mode == ShapingMode::HistoryMax;
        const auto raw = hmax ? history_max_deltas(phi_used, 1.0) : info_deltas(phi_used, 1.0);
        ep.deltas = hmax ? history_max_deltas(phi_used, alpha_) : info_deltas(phi_used, alpha_);
        for (double d : raw) abs_raw.push_back(std::abs(d));
        for (double d : ep.deltas) abs_scaled.push_back(std::abs(d));
      }
      if (shaped > 0 || sc.terminal == TerminalConvention::StrictPbrs) {
        ep.traj = inject_boundary_rewards(ep.traj, ep.deltas, sc.terminal, -alpha_ * phi_used.back());
      }
    }
    if (rule) {
      const auto seg = rule_rewards(segment_texts(ep), gold, sc);
      const auto tok = map_segment_rewards(ep.traj, seg, sc.rule_mapping);
      for (std::size_t t = 0; t < tok.size(); ++t) ep.traj.rewards[t] += sc.omega * tok[t];
    }
  }
}

std::vector<std::vector<double>> Trainer::advantages(std::vector<Episode>& batch,
                                                     std::vector<std::vector<double>>& returns) {
  std::vector<std::vector<double>> adv(batch.size());
  returns.assign(batch.size(), {});
  if (cfg_.trainer == TrainerKind::Ppo || cfg_.trainer == TrainerKind::MtPpo) {
    for (std::size_t e = 0; e < batch.size(); ++e) {
      const Episode& ep = batch[e];
      const std::size_t n = ep.positions.size();
      std::vector<double> r(n, 0.0), v(n, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t hi = j + 1 < n ? ep.positions[j + 1] : ep.traj.size();
        for (std::size_t u = ep.positions[j]; u < hi; ++u) r[j] += ep.traj.rewards[u];
        v[j] = value(critic_, ep.inputs[j].features);
      }
      adv[e] = gae_advantages(r, v, cfg_.ppo.gamma, cfg_.ppo.lam);
      returns[e] = monte_carlo_returns(r, cfg_.ppo.gamma);
    }
    return adv;
  }

  const std::size_t g = cfg_.grpo.group_size;
  for (std::size_t start = 0; start < batch.size(); start += g) {
    const std::size_t end = std::min(batch.size(), start + g);
    std::vector<double> big_r;
    for (std::size_t e = start; e < end; ++e) big_r.push_back(batch[e].traj.terminal_reward);
    std::vector<std::vector<double>> token_adv(end - start);
    if (cfg_.trainer == TrainerKind::Grpo) {
      const auto a = grpo_advantages(big_r, cfg_.grpo.sigma_eps);
      for (std::size_t i = 0; i < a.size(); ++i) token_adv[i].assign(batch[start + i].traj.size(), a[i]);
    } else {
      std::vector<std::vector<double>> seg_r;
      for (std::size_t e = start; e < end; ++e) {
        seg_r.push_back(rule_rewards(segment_texts(batch[e]), env_->dataset().questions[batch[e].question].answer_set,
                                     cfg_.shaping));
      }
      if (cfg_.trainer == TrainerKind::MtGrpo) {
        std::vector<double> r1;
        for (const auto& s : seg_r) r1.push_back(s.empty() ? 0.0 : s[0]);
        const auto a = mt_grpo_advantages_single(r1, big_r, cfg_.mt.beta_blend, cfg_.grpo.sigma_eps);
        for (std::size_t i = 0; i < a.rest.size(); ++i) {
          const Trajectory& tr = batch[start + i].traj;
          token_adv[i].assign(tr.size(), a.rest[i]);
          if (tr.tool_turns >= 1) {
            for (std::size_t t = 0; t < tr.boundaries[1]; ++t) token_adv[i][t] = a.turn1[i];
          }
        }
      } else {
        const auto a = mt_grpo_star_advantages(seg_r, big_r, cfg_.mt.lambda_mid, cfg_.mt.lambda_final,
                                               cfg_.grpo.sigma_eps);
        for (std::size_t i = 0; i < a.final_term.size(); ++i) {
          token_adv[i] = broadcast_segment_advantages(batch[start + i].traj, a.segment_credit[i], a.final_term[i]);
        }
      }
    }
    for (std::size_t i = 0; i < token_adv.size(); ++i) {
      const Episode& ep = batch[start + i];
      for (std::size_t p : ep.positions) adv[start + i].push_back(token_adv[i][p]);
    }
  }
  return adv;
}

StepTelemetry Trainer::step() {
  const std::size_t step_index = step_;
  try {
    const bool group = cfg_.trainer == TrainerKind::Grpo || cfg_.trainer == TrainerKind::MtGrpo ||
                       cfg_.trainer == TrainerKind::MtGrpoStar;
    const std::size_t g = group ? cfg_.grpo.group_size : 1;
    const std::size_t n_prompts = std::max<std::size_t>(1, cfg_.ppo.batch_size / g);

    Rng pick(derive_seed(cfg_.seed, step_index, 0));
    std::vector<std::size_t> questions;
    for (std::size_t i = 0; i < n_prompts; ++i) {
      const std::size_t q = split_.train[pick.below(split_.train.size())];
      for (std::size_t r = 0; r < g; ++r) questions.push_back(q);
    }

    std::vector<Episode> batch;
    batch.reserve(questions.size());
    for (std::size_t e = 0; e < questions.size(); ++e) {
      batch.push_back(rollout(questions[e], derive_seed(cfg_.seed, step_index, e + 1)));
    }

    const double alpha_used = alpha_;
    const std::uint64_t teacher_version = teacher_.version;
    std::vector<double> abs_scaled, abs_raw;
    shape(batch, abs_scaled, abs_raw);

    std::vector<std::vector<double>> returns;
    const auto adv = advantages(batch, returns);

    std::vector<PpoSample> samples;
    std::vector<CriticSample> critic_samples;
    std::vector<double> flat_adv;
    for (std::size_t e = 0; e < batch.size(); ++e) {
      const Episode& ep = batch[e];
      for (std::size_t j = 0; j < ep.positions.size(); ++j) {
        const std::size_t p = ep.positions[j];
        samples.push_back({&ep.inputs[j], ep.traj.tokens[p], ep.traj.logprobs_old[p], adv[e][j]});
        flat_adv.push_back(adv[e][j]);
        if (!returns[e].empty()) critic_samples.push_back({&ep.inputs[j].features, returns[e][j]});
      }
    }
    const bool use_critic = !group;
    const UpdateStats us = ppo_update(policy_, use_critic ? &critic_ : nullptr, samples, critic_samples, cfg_.ppo,
                                      group ? cfg_.grpo.grad_clip : cfg_.ppo.grad_clip);
    ++policy_.version;

    StepTelemetry t;
    t.step = step_index;
    t.alpha = cfg_.uses_teacher() ? alpha_used : 0.0;
    t.teacher_version = teacher_version;
    t.kl = us.kl;
    t.clip_frac = us.clip_frac;
    t.mean_ratio = us.mean_ratio;
    t.grad_norm = us.grad_norm;
    t.critic_mse = us.critic_mse;
    t.n_tokens = us.n_tokens;
    t.n_deltas = abs_scaled.size();
    const double nb = static_cast<double>(batch.size());
    for (const Episode& ep : batch) {
      t.mean_em += ep.em / nb;
      t.mean_f1 += ep.f1 / nb;
      double ret = 0.0;
      for (double r : ep.traj.rewards) ret += r;
      t.mean_return += ret / nb;
      t.mean_tool_calls += static_cast<double>(ep.traj.tool_turns) / nb;
    }
    if (!abs_scaled.empty()) {
      double s = 0.0;
      for (double d : abs_scaled) s += d;
      t.mean_abs_delta = s / static_cast<double>(abs_scaled.size());
    }

    // Alpha control for the next batch.
    const ShapingConfig& sc = cfg_.shaping;
    if (cfg_.uses_teacher()) {
      if (sc.alpha_policy == AlphaPolicy::Fixed && sc.calibrate && !calibrated_alpha_) {
        if (std::any_of(abs_raw.begin(), abs_raw.end(), [](double d) { return d != 0.0; })) {
          pilot_.insert(pilot_.end(), abs_raw.begin(), abs_raw.end());
          if (++pilot_batches_seen_ == sc.pilot_batches) {
            alpha_ = calibrate_alpha_fixed(pilot_, sc.target, sc.clamp_lo, sc.clamp_hi);
            calibrated_alpha_ = alpha_;
            calibration_step_ = step_index + 1;
          }
        }
      } else if (sc.alpha_policy == AlphaPolicy::Dynamic && !abs_scaled.empty()) {
        observe(controller_, t.mean_abs_delta, sc.ema_decay);
        alpha_ = alpha_dynamic_update(controller_, alpha_, sc.band);
      }
    }

    // Collapse detector on the training EM.
    em_window_.push_back(t.mean_em);
    em_window_sum_ += t.mean_em;
    if (em_window_.size() > cfg_.collapse_window) {
      em_window_sum_ -= em_window_.front();
      em_window_.pop_front();
    }
    if (em_window_.size() == cfg_.collapse_window) {
      const double avg = em_window_sum_ / static_cast<double>(cfg_.collapse_window);
      em_peak_ = std::max(em_peak_, avg);
      if (!collapse_step_ && em_peak_ >= cfg_.collapse_min_peak && avg < cfg_.collapse_frac * em_peak_) {
        collapse_step_ = step_index;
      }
    }

    recent_advantages_.push_back(std::move(flat_adv));
    if (recent_advantages_.size() > cfg_.histogram_steps) recent_advantages_.pop_front();

    if (trace_sink_ && cfg_.trace_every && step_index % cfg_.trace_every == 0 && !batch.empty()) {
      const Episode& ep = batch.front();
      EpisodeTrace tr{&ep.traj, ep.phi, ep.deltas, alpha_used, derive_seed(cfg_.seed, step_index, 1), ep.prompt};
      nlohmann::json j = to_json(tr);
      j["step"] = step_index;
      j["question"] = ep.question;
      j["teacher_version"] = teacher_version;
      j["em"] = ep.em;
      trace_sink_(j);
    }

    step_ = step_index + 1;
    teacher_ = maybe_refresh(teacher_, policy_, step_, cfg_.refresh_interval);
    if (cfg_.eval_every && step_ % cfg_.eval_every == 0) t.val_em = evaluate_validation().em;
    return t;
  } catch (const InvalidInput& e) {
    throw InvalidInput("step " + std::to_string(step_index) + ": " + e.what());
  } catch (const InvalidState& e) {
    throw InvalidState("step " + std::to_string(step_index) + ": " + e.what());
  } catch (const CalibrationFailed& e) {
    throw CalibrationFailed("step " + std::to_string(step_index) + ": " + e.what());
  }
}

metrics::AdvantageHistogram Trainer::histogram() const {
  std::vector<std::vector<double>> adv(recent_advantages_.begin(), recent_advantages_.end());
  std::vector<std::vector<std::uint8_t>> masks;
  for (const auto& a : adv) masks.emplace_back(a.size(), 1);
  return metrics::advantage_histogram(adv, masks, cfg_.histogram_bins, cfg_.histogram_lo, cfg_.histogram_hi);
}

RunResult train_loop(const qa::Environment& env, const TrainConfig& cfg,
                     const std::function<void(const StepTelemetry&)>& on_step,
                     const std::function<void(const nlohmann::json&)>& on_trace) {
  Trainer tr(env, cfg);
  if (on_trace) tr.set_trace_sink(on_trace);
  RunResult out;
  out.telemetry.reserve(cfg.steps);
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    out.telemetry.push_back(tr.step());
    if (on_step) on_step(out.telemetry.back());
  }
  out.final_eval = tr.evaluate_validation();
  out.collapse_step = tr.collapse_step();
  out.final_alpha = tr.alpha();
  out.calibrated_alpha = tr.calibrated_alpha();
  out.calibration_step = tr.calibration_step();
  out.histogram = tr.histogram();
  out.policy = tr.policy();
  out.critic = tr.critic();
  return out;
}

}  // namespace tips
