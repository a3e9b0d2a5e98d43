#pragma once

// Policy-gradient building blocks: advantage estimators (GAE, GRPO and its
// multi-turn variants), the clipped PPO surrogate with a k3 KL term, and one
// PPO update over a batch of trainable-token samples.

#include <span>
#include <vector>

#include "tips/metrics.hpp"
#include "tips/policy.hpp"
#include "tips/seg_mdp.hpp"

namespace tips {

struct PPOConfig {
  double clip_eps = 0.2;
  double kl_coef = 0.001;
  double gamma = 1.0;
  double lam = 1.0;
  std::size_t batch_size = 64;  // episodes
  std::size_t epochs_per_batch = 1;
  std::size_t minibatches = 1;
  double lr_policy = 1.0;
  double lr_critic = 1e-1;
  double grad_clip = 1.0;  // global L2 norm; <= 0 disables

  void validate() const;
};

struct GRPOConfig {
  std::size_t group_size = 5;
  double grad_clip = 1.0;
  double sigma_eps = 1e-8;

  void validate() const;
};

struct MTConfig {
  double beta_blend = 0.5;
  double lambda_mid = 1.0;
  double lambda_final = 1.0;

  void validate() const;
};

/// Generalized advantage estimation over one sequence with V(s_T) = 0.
/// With gamma = lambda = 1 this is A_t = G_t - V(s_t).
std::vector<double> gae_advantages(std::span<const double> rewards, std::span<const double> values,
                                   double gamma = 1.0, double lam = 1.0);

double ppo_clip_term(double rho, double advantage, double eps);

/// k3 estimator (r - 1) - log r with r = pi_ref / pi_theta, from log-probs.
double low_var_kl(double logp_theta, double logp_ref);

/// One trainable token.
struct PpoSample {
  const PolicyInput* input;
  TokenId token;
  double logp_old;
  double advantage;
};

struct PpoLossStats {
  double loss = 0.0;  // -surrogate + kl_coef * kl, token mean
  double surrogate = 0.0;
  double kl = 0.0;
  double clip_frac = 0.0;
  double mean_ratio = 0.0;
  std::size_t n_tokens = 0;
};

/// Token-mean clipped-surrogate loss. When `grad` is given, adds d loss / d theta.
PpoLossStats ppo_loss(const PolicyParams& params, std::span<const PpoSample> samples, const PPOConfig& cfg,
                      GradientBuffer* grad = nullptr);

struct UpdateStats {
  double kl = 0.0;
  double clip_frac = 0.0;
  double mean_ratio = 1.0;
  double grad_norm = 0.0;
  double critic_mse = 0.0;
  std::size_t n_tokens = 0;
  bool empty_batch = false;
};

/// epochs x minibatches clipped-surrogate steps on the policy (gradient
/// clipped to `grad_clip`), then one critic step per epoch when `critic` is
/// non-null. Minibatches are contiguous slices of `samples`.
UpdateStats ppo_update(PolicyParams& policy, CriticParams* critic, std::span<const PpoSample> samples,
                       std::span<const CriticSample> critic_samples, const PPOConfig& cfg, double grad_clip);

/// (x - mean) / max(stdev, eps) with population statistics.
std::vector<double> standardize(std::span<const double> x, double eps);

/// Group-standardized terminal rewards. Throws for groups smaller than 2.
std::vector<double> grpo_advantages(std::span<const double> rewards, double sigma_eps = 1e-8);

struct MtGrpoSingleAdvantages {
  std::vector<double> turn1;  // beta r~ + (1 - beta) R~
  std::vector<double> rest;   // R~
};

MtGrpoSingleAdvantages mt_grpo_advantages_single(std::span<const double> turn1_rewards,
                                                 std::span<const double> terminal_rewards, double beta_blend,
                                                 double sigma_eps = 1e-8);

struct MtGrpoStarAdvantages {
  std::vector<std::vector<double>> segment_credit;  // lambda_mid * r~_{i,s}
  std::vector<double> final_term;                   // lambda_final * R~_i
};

/// segment_rewards[i][s] is member i's reward for tool segment s. Each
/// segment is standardized across the members that reached it; a segment
/// reached by a single member gets zero credit.
MtGrpoStarAdvantages mt_grpo_star_advantages(const std::vector<std::vector<double>>& segment_rewards,
                                             std::span<const double> terminal_rewards, double lambda_mid,
                                             double lambda_final, double sigma_eps = 1e-8);

/// Token advantages for one member: tool segment s tokens get
/// segment_credit[s] + final_term, final-answer tokens get final_term.
std::vector<double> broadcast_segment_advantages(const Trajectory& traj, std::span<const double> segment_credit,
                                                 double final_term);

}  // namespace tips
