#include "tips/trainers.hpp"

#include <algorithm>
#include <cmath>

namespace tips {

void PPOConfig::validate() const {
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw InvalidInput("ppo: clip_eps must be in (0, 1)");
  if (kl_coef < 0.0) throw InvalidInput("ppo: kl_coef must be >= 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidInput("ppo: gamma must be in (0, 1]");
  if (!(lam >= 0.0 && lam <= 1.0)) throw InvalidInput("ppo: lam must be in [0, 1]");
  if (batch_size < 1 || epochs_per_batch < 1 || minibatches < 1) {
    throw InvalidInput("ppo: batch_size, epochs_per_batch and minibatches must be >= 1");
  }
  if (!(lr_policy >= 0.0) || !(lr_critic >= 0.0)) throw InvalidInput("ppo: learning rates must be >= 0");
}

void GRPOConfig::validate() const {
  if (group_size < 2) throw InvalidInput("grpo: group_size must be >= 2");
  if (!(sigma_eps > 0.0)) throw InvalidInput("grpo: sigma_eps must be > 0");
}

void MTConfig::validate() const {
  if (!(beta_blend >= 0.0 && beta_blend <= 1.0)) throw InvalidInput("mt: beta_blend must be in [0, 1]");
  if (lambda_mid < 0.0 || lambda_final < 0.0) throw InvalidInput("mt: lambda weights must be >= 0");
}

std::vector<double> gae_advantages(std::span<const double> rewards, std::span<const double> values, double gamma,
                                   double lam) {
  if (rewards.size() != values.size()) throw InvalidInput("gae: rewards and values differ in length");
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    if (!std::isfinite(rewards[i]) || !std::isfinite(values[i])) throw InvalidInput("gae: non-finite input");
  }
  std::vector<double> adv(rewards.size());
  if (gamma == 1.0 && lam == 1.0) {
    double g = 0.0;
    for (std::size_t t = rewards.size(); t-- > 0;) {
      g += rewards[t];
      adv[t] = g - values[t];
    }
    return adv;
  }
  double next_value = 0.0, acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    const double delta = rewards[t] + gamma * next_value - values[t];
    acc = delta + gamma * lam * acc;
    adv[t] = acc;
    next_value = values[t];
  }
  return adv;
}

double ppo_clip_term(double rho, double advantage, double eps) {
  return std::min(rho * advantage, std::clamp(rho, 1.0 - eps, 1.0 + eps) * advantage);
}

double low_var_kl(double logp_theta, double logp_ref) {
  const double log_r = logp_ref - logp_theta;
  return std::expm1(log_r) - log_r;
}

PpoLossStats ppo_loss(const PolicyParams& params, std::span<const PpoSample> samples, const PPOConfig& cfg,
                      GradientBuffer* grad) {
  PpoLossStats st;
  st.n_tokens = samples.size();
  if (samples.empty()) return st;
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  std::size_t clipped = 0;
  for (const auto& s : samples) {
    const Distribution d = distribution(params, *s.input);
    if (!d.contains(s.token)) throw InvalidInput("ppo_loss: sample token not legal in its state");
    const double logp = d.log_prob(s.token);
    const double rho = std::exp(logp - s.logp_old);
    const double unclipped = rho * s.advantage;
    const double clipped_val = std::clamp(rho, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * s.advantage;
    const bool clip_active = clipped_val < unclipped;
    if (rho < 1.0 - cfg.clip_eps || rho > 1.0 + cfg.clip_eps) ++clipped;
    const double kl = low_var_kl(logp, s.logp_old);
    st.surrogate += std::min(unclipped, clipped_val) * inv_n;
    st.kl += kl * inv_n;
    st.mean_ratio += rho * inv_n;
    if (grad) {
      // d/dtheta of -min(...) is -rho A grad(log pi) on the unclipped branch, 0 otherwise;
      // d/dtheta of k3 is (1 - r) grad(log pi) with r = pi_ref / pi_theta.
      const double r = std::exp(s.logp_old - logp);
      const double coef = (clip_active ? 0.0 : -unclipped) + cfg.kl_coef * (1.0 - r);
      grad->add_log_prob_grad(d, *s.input, s.token, coef * inv_n);
    }
  }
  st.clip_frac = static_cast<double>(clipped) * inv_n;
  st.loss = -st.surrogate + cfg.kl_coef * st.kl;
  return st;
}

UpdateStats ppo_update(PolicyParams& policy, CriticParams* critic, std::span<const PpoSample> samples,
                       std::span<const CriticSample> critic_samples, const PPOConfig& cfg, double grad_clip) {
  UpdateStats out;
  out.n_tokens = samples.size();
  if (samples.empty()) {
    out.empty_batch = true;
    return out;
  }
  GradientBuffer grad(policy.vocab_size(), policy.pair_dim());
  const std::size_t mb = std::min(cfg.minibatches, samples.size());
  double kl = 0.0, clip = 0.0, ratio = 0.0, norm = 0.0;
  std::size_t n_steps = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs_per_batch; ++epoch) {
    for (std::size_t m = 0; m < mb; ++m) {
      const std::size_t lo = samples.size() * m / mb, hi = samples.size() * (m + 1) / mb;
      grad.clear();
      const PpoLossStats st = ppo_loss(policy, samples.subspan(lo, hi - lo), cfg, &grad);
      const double w = static_cast<double>(hi - lo) / static_cast<double>(samples.size());
      kl += st.kl * w;
      clip += st.clip_frac * w;
      ratio += st.mean_ratio * w;
      double g = std::sqrt(grad.squared_norm());
      norm += g;
      ++n_steps;
      if (grad_clip > 0.0 && g > grad_clip) grad.scale(grad_clip / g);
      grad.apply(policy, -cfg.lr_policy);
    }
    if (critic && !critic_samples.empty()) critic_fit_inplace(*critic, critic_samples, cfg.lr_critic);
  }
  const double epochs = static_cast<double>(cfg.epochs_per_batch);
  out.kl = kl / epochs;
  out.clip_frac = clip / epochs;
  out.mean_ratio = ratio / epochs;
  out.grad_norm = norm / static_cast<double>(n_steps);
  if (critic) out.critic_mse = critic_mse(*critic, critic_samples);
  if (!policy.all_finite()) throw InvalidState("ppo_update: non-finite policy parameters");
  return out;
}

std::vector<double> standardize(std::span<const double> x, double eps) {
  std::vector<double> out(x.size(), 0.0);
  if (x.empty()) return out;
  // Extended precision keeps hand-checkable groups exact after rounding.
  const long double n = static_cast<long double>(x.size());
  long double mu = 0.0L;
  for (double v : x) mu += v;
  mu /= n;
  long double var = 0.0L;
  for (double v : x) var += (v - mu) * (v - mu);
  const long double denom = std::max(std::sqrt(var / n), static_cast<long double>(eps));
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>((x[i] - mu) / denom);
  return out;
}

std::vector<double> grpo_advantages(std::span<const double> rewards, double sigma_eps) {
  if (rewards.size() < 2) throw InvalidInput("grpo_advantages: group must have at least 2 members");
  return standardize(rewards, sigma_eps);
}

MtGrpoSingleAdvantages mt_grpo_advantages_single(std::span<const double> turn1_rewards,
                                                 std::span<const double> terminal_rewards, double beta_blend,
                                                 double sigma_eps) {
  if (turn1_rewards.size() != terminal_rewards.size()) {
    throw InvalidInput("mt_grpo: turn and terminal reward lists differ in length");
  }
  if (!(beta_blend >= 0.0 && beta_blend <= 1.0)) throw InvalidInput("mt_grpo: beta_blend must be in [0, 1]");
  const auto r = grpo_advantages(turn1_rewards, sigma_eps);
  const auto big_r = grpo_advantages(terminal_rewards, sigma_eps);
  MtGrpoSingleAdvantages out;
  out.rest = big_r;
  out.turn1.resize(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) out.turn1[i] = beta_blend * r[i] + (1.0 - beta_blend) * big_r[i];
  return out;
}

MtGrpoStarAdvantages mt_grpo_star_advantages(const std::vector<std::vector<double>>& segment_rewards,
                                             std::span<const double> terminal_rewards, double lambda_mid,
                                             double lambda_final, double sigma_eps) {
  if (segment_rewards.size() != terminal_rewards.size()) {
    throw InvalidInput("mt_grpo_star: segment and terminal reward lists differ in length");
  }
  const auto big_r = grpo_advantages(terminal_rewards, sigma_eps);
  MtGrpoStarAdvantages out;
  out.final_term.resize(big_r.size());
  for (std::size_t i = 0; i < big_r.size(); ++i) out.final_term[i] = lambda_final * big_r[i];
  out.segment_credit.resize(segment_rewards.size());
  std::size_t max_seg = 0;
  for (std::size_t i = 0; i < segment_rewards.size(); ++i) {
    out.segment_credit[i].assign(segment_rewards[i].size(), 0.0);
    max_seg = std::max(max_seg, segment_rewards[i].size());
  }
  for (std::size_t s = 0; s < max_seg; ++s) {
    std::vector<std::size_t> members;
    std::vector<double> pool;
    for (std::size_t i = 0; i < segment_rewards.size(); ++i) {
      if (s < segment_rewards[i].size()) {
        members.push_back(i);
        pool.push_back(segment_rewards[i][s]);
      }
    }
    if (pool.size() < 2) continue;
    const auto z = standardize(pool, sigma_eps);
    for (std::size_t j = 0; j < members.size(); ++j) out.segment_credit[members[j]][s] = lambda_mid * z[j];
  }
  return out;
}

std::vector<double> broadcast_segment_advantages(const Trajectory& traj, std::span<const double> segment_credit,
                                                 double final_term) {
  std::vector<double> adv(traj.size(), final_term);
  const std::size_t n = std::min(segment_credit.size(), std::min(traj.tool_turns, traj.num_segments()));
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t t = traj.boundaries[s]; t < traj.boundaries[s + 1]; ++t) adv[t] += segment_credit[s];
  }
  return adv;
}

}  // namespace tips
