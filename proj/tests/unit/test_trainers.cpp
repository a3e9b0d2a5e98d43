#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "tips/env_qa.hpp"
#include "tips/train_loop.hpp"
#include "tips/trainers.hpp"

using namespace tips;

namespace {

struct Batch {
  PolicyParams params;
  std::vector<PolicyInput> inputs;
  std::vector<PpoSample> samples;
};

SparseVector random_features(Rng& rng, std::size_t dim, std::size_t n) {
  SparseVector v;
  while (v.index.size() < n) {
    const auto f = static_cast<std::uint32_t>(rng.below(dim));
    if (std::find(v.index.begin(), v.index.end(), f) == v.index.end()) v.index.push_back(f);
  }
  std::sort(v.index.begin(), v.index.end());
  for (std::size_t i = 0; i < n; ++i) v.value.push_back(rng.uniform(-1.0, 1.0));
  return v;
}

Batch random_batch(Rng& rng, std::size_t n_tokens, double eps) {
  const std::size_t dim = 24, vocab = 3 + rng.below(6), pair_dim = 2;
  Batch b{PolicyParams(dim, vocab, pair_dim), {}, {}};
  b.inputs.resize(n_tokens);
  for (auto& in : b.inputs) {
    in.features = random_features(rng, dim, 1 + rng.below(4));
    in.legal = {0, static_cast<TokenId>(vocab)};
    in.pairs.push_back({static_cast<TokenId>(rng.below(vocab)), static_cast<std::uint32_t>(rng.below(pair_dim)), 1.0});
    for (std::uint32_t f : in.features.index)
      for (TokenId v = 0; v < vocab; ++v) b.params.set_weight(f, v, rng.uniform(-1.0, 1.0));
  }
  for (double& u : b.params.pair_weights()) u = rng.uniform(-1.0, 1.0);
  for (const auto& in : b.inputs) {
    const TokenId tok = static_cast<TokenId>(rng.below(vocab));
    const double logp = log_prob(b.params, in, tok);
    double old = logp + rng.uniform(-0.5, 0.5);
    // keep the ratio away from the clip kinks so central differences are smooth
    while (std::abs(std::exp(logp - old) - (1 - eps)) < 1e-3 || std::abs(std::exp(logp - old) - (1 + eps)) < 1e-3)
      old = logp + rng.uniform(-0.5, 0.5);
    b.samples.push_back({&in, tok, old, rng.uniform(-2.0, 2.0)});
  }
  return b;
}

double max_rel_fd_error(Batch& b, const PPOConfig& cfg) {
  GradientBuffer g(b.params.vocab_size(), b.params.pair_dim());
  ppo_loss(b.params, b.samples, cfg, &g);
  const double h = 1e-5;
  double worst = 0.0;
  auto rel = [](double a, double c) { return std::abs(a - c) / std::max(1e-6, std::max(std::abs(a), std::abs(c))); };
  for (std::uint32_t f : b.params.allocated_rows()) {
    for (TokenId v = 0; v < b.params.vocab_size(); ++v) {
      const double w = b.params.weight(f, v);
      b.params.set_weight(f, v, w + h);
      const double up = ppo_loss(b.params, b.samples, cfg).loss;
      b.params.set_weight(f, v, w - h);
      const double down = ppo_loss(b.params, b.samples, cfg).loss;
      b.params.set_weight(f, v, w);
      worst = std::max(worst, rel((up - down) / (2 * h), g.get(f, v)));
    }
  }
  for (std::size_t k = 0; k < b.params.pair_dim(); ++k) {
    auto u = b.params.pair_weights();
    const double w = u[k];
    u[k] = w + h;
    const double up = ppo_loss(b.params, b.samples, cfg).loss;
    u[k] = w - h;
    const double down = ppo_loss(b.params, b.samples, cfg).loss;
    u[k] = w;
    worst = std::max(worst, rel((up - down) / (2 * h), g.pair()[k]));
  }
  return worst;
}

std::vector<double> deltas_of(const std::vector<double>& phi, double alpha) {
  std::vector<double> d;
  for (std::size_t j = 1; j < phi.size(); ++j) d.push_back(alpha * (phi[j] - phi[j - 1]));
  return d;
}

bool same_params(const PolicyParams& a, const PolicyParams& b) {
  auto rows = a.allocated_rows();
  for (std::uint32_t f : b.allocated_rows()) rows.push_back(f);
  for (std::uint32_t f : rows)
    for (TokenId v = 0; v < a.vocab_size(); ++v)
      if (a.weight(f, v) != b.weight(f, v)) return false;
  return std::equal(a.pair_weights().begin(), a.pair_weights().end(), b.pair_weights().begin());
}

double pop_mean(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double pop_sd(const std::vector<double>& x) {
  const double m = pop_mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size()));
}

}  // namespace

TEST_CASE("GAE examples") {
  const std::vector<double> r{0, 0, 1};
  CHECK(gae_advantages(r, std::vector<double>(3, 0.5)) == std::vector<double>{0.5, 0.5, 0.5});
  CHECK(gae_advantages(r, monte_carlo_returns(r)) == std::vector<double>{0, 0, 0});
  const std::vector<double> bad{0, NAN, 1};
  CHECK_THROWS_AS(gae_advantages(r, bad), InvalidInput);
  // general recursion against its closed form for lambda = 1
  Rng rng(1);
  std::vector<double> rr(6), vv(6);
  for (auto& x : rr) x = rng.uniform(-1, 1);
  for (auto& x : vv) x = rng.uniform(-1, 1);
  const auto a = gae_advantages(rr, vv, 0.9, 1.0);
  const auto g = monte_carlo_returns(rr, 0.9);
  for (std::size_t t = 0; t < 6; ++t) CHECK(a[t] == doctest::Approx(g[t] - vv[t]).epsilon(1e-12));
}

TEST_CASE("clip term examples and k3") {
  CHECK(ppo_clip_term(1.0, 0.7, 0.2) == 0.7);
  CHECK(ppo_clip_term(1.5, 1.0, 0.2) == doctest::Approx(1.2));
  CHECK(ppo_clip_term(0.5, -1.0, 0.2) == doctest::Approx(-0.8));
  CHECK(low_var_kl(-1.0, -1.0) == 0.0);
  CHECK(low_var_kl(-1.0, -2.0) > 0.0);
  CHECK(low_var_kl(-2.0, -1.0) == doctest::Approx(std::exp(1.0) - 1.0 - 1.0));
}

TEST_CASE("PPO loss gradient matches finite differences: 5-token toy batch and 200 random batches") {
  Rng rng(77);
  PPOConfig cfg;
  cfg.kl_coef = 0.05;
  Batch toy = random_batch(rng, 5, cfg.clip_eps);
  CHECK(max_rel_fd_error(toy, cfg) < 1e-4);
  double worst = 0.0;
  for (int rep = 0; rep < 200; ++rep) {
    Batch b = random_batch(rng, 1 + rng.below(8), cfg.clip_eps);
    worst = std::max(worst, max_rel_fd_error(b, cfg));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("zero advantages with no KL leave the policy unchanged; lr 0 is a no-op") {
  Rng rng(3);
  PPOConfig cfg;
  cfg.kl_coef = 0.0;
  Batch b = random_batch(rng, 6, cfg.clip_eps);
  for (auto& s : b.samples) s.advantage = 0.0;
  PolicyParams p = b.params.snapshot();
  ppo_update(p, nullptr, b.samples, {}, cfg, 1.0);
  CHECK(same_params(p, b.params));

  Batch c = random_batch(rng, 6, cfg.clip_eps);
  cfg.kl_coef = 0.001;
  cfg.lr_policy = 0.0;
  PolicyParams q = c.params.snapshot();
  ppo_update(q, nullptr, c.samples, {}, cfg, 1.0);
  CHECK(same_params(q, c.params));

  const UpdateStats empty = ppo_update(q, nullptr, {}, {}, cfg, 1.0);
  CHECK(empty.empty_batch);
}

TEST_CASE("a positive advantage raises the probability of a single token") {
  Rng rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    Batch b = random_batch(rng, 1, 0.2);
    b.samples[0].logp_old = log_prob(b.params, b.inputs[0], b.samples[0].token);
    b.samples[0].advantage = 1.0;
    PPOConfig cfg;
    cfg.lr_policy = 1e-3;
    const double before = log_prob(b.params, b.inputs[0], b.samples[0].token);
    ppo_update(b.params, nullptr, b.samples, {}, cfg, 0.0);
    CHECK(log_prob(b.params, b.inputs[0], b.samples[0].token) > before);
  }
}

TEST_CASE("GRPO standardization") {
  CHECK(grpo_advantages(std::vector<double>{1, 0, 0, 0, 0}) == std::vector<double>{2, -0.5, -0.5, -0.5, -0.5});
  for (double v : grpo_advantages(std::vector<double>{0.3, 0.3, 0.3})) CHECK(v == 0.0);
  CHECK_THROWS_AS(grpo_advantages(std::vector<double>{1.0}), InvalidInput);
  Rng rng(5);
  for (int rep = 0; rep < 2000; ++rep) {
    std::vector<double> r(2 + rng.below(10));
    for (auto& x : r) x = rng.uniform() < 0.5 ? std::floor(rng.uniform(0, 3)) : rng.uniform(-5, 5);
    if (pop_sd(r) == 0.0) continue;
    const auto a = grpo_advantages(r);
    CHECK(std::abs(pop_mean(a)) < 1e-9);
    CHECK(std::abs(pop_sd(a) - 1.0) < 1e-6);
    const double c = rng.uniform(-10, 10), k = rng.uniform(0.1, 10);
    std::vector<double> shifted = r, scaled = r;
    for (auto& x : shifted) x += c;
    for (auto& x : scaled) x *= k;
    const auto as = grpo_advantages(shifted), ak = grpo_advantages(scaled);
    for (std::size_t i = 0; i < r.size(); ++i) {
      CHECK(as[i] == doctest::Approx(a[i]).epsilon(1e-9).scale(1.0));
      CHECK(ak[i] == doctest::Approx(a[i]).epsilon(1e-9).scale(1.0));
    }
  }
}

TEST_CASE("MT-GRPO single-call blend") {
  const auto a = mt_grpo_advantages_single(std::vector<double>{1, 0}, std::vector<double>{0, 1}, 0.5);
  CHECK(a.turn1 == std::vector<double>{0, 0});
  CHECK(a.rest == std::vector<double>{-1, 1});
  const std::vector<double> t1{0.1, 0.4, 0.0}, term{1, 0, 1};
  const auto b0 = mt_grpo_advantages_single(t1, term, 0.0);
  CHECK(b0.turn1 == grpo_advantages(term));
  CHECK(b0.rest == grpo_advantages(term));
  CHECK(mt_grpo_advantages_single(t1, term, 1.0).turn1 == grpo_advantages(t1));
}

TEST_CASE("MT-GRPO* per-segment pools") {
  // rollout 0 has two tool segments, rollout 1 one: segment 2's pool is a singleton.
  const auto s = mt_grpo_star_advantages({{0.25, 0.1}, {0.1}}, std::vector<double>{1, 0}, 1.0, 1.0);
  CHECK(s.segment_credit[0][1] == 0.0);
  CHECK(s.segment_credit[0][0] == doctest::Approx(1.0));
  CHECK(s.segment_credit[1][0] == doctest::Approx(-1.0));

  // three rollouts, two shared segments; recompute every pool by hand
  const std::vector<std::vector<double>> r{{0.1, 0.25}, {0.0, 0.1}, {0.25}};
  const std::vector<double> big{1, 0, 1};
  const double lm = 0.7, lf = 2.0;
  const auto t = mt_grpo_star_advantages(r, big, lm, lf);
  const double m1 = (0.1 + 0.0 + 0.25) / 3;
  const double sd1 = std::sqrt(((0.1 - m1) * (0.1 - m1) + m1 * m1 + (0.25 - m1) * (0.25 - m1)) / 3);
  const double m2 = (0.25 + 0.1) / 2, sd2 = 0.075;
  const double mb = 2.0 / 3, sdb = std::sqrt((2 * (1 - mb) * (1 - mb) + mb * mb) / 3);
  CHECK(t.segment_credit[0][0] == doctest::Approx(lm * (0.1 - m1) / sd1));
  CHECK(t.segment_credit[1][0] == doctest::Approx(lm * (0.0 - m1) / sd1));
  CHECK(t.segment_credit[2][0] == doctest::Approx(lm * (0.25 - m1) / sd1));
  CHECK(t.segment_credit[0][1] == doctest::Approx(lm * (0.25 - m2) / sd2));
  CHECK(t.segment_credit[1][1] == doctest::Approx(lm * (0.1 - m2) / sd2));
  CHECK(t.final_term[0] == doctest::Approx(lf * (1 - mb) / sdb));
  CHECK(t.final_term[1] == doctest::Approx(lf * (0 - mb) / sdb));

  // token table for rollout 0: two tool segments then the answer
  Trajectory tr;
  tr.tokens.assign(7, 0);
  tr.logprobs_old.assign(7, 0.0);
  tr.mask.assign(7, 1);
  tr.rewards.assign(7, 0.0);
  tr.boundaries = {0, 2, 5, 7};
  tr.tool_turns = 2;
  const auto adv = broadcast_segment_advantages(tr, t.segment_credit[0], t.final_term[0]);
  const double s1 = t.segment_credit[0][0] + t.final_term[0], s2 = t.segment_credit[0][1] + t.final_term[0];
  CHECK(adv == std::vector<double>{s1, s1, s2, s2, s2, t.final_term[0], t.final_term[0]});

  const auto z = mt_grpo_star_advantages(r, big, 0.0, lf);
  const auto g = grpo_advantages(big);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(z.final_term[i] == doctest::Approx(lf * g[i]));
    for (double c : z.segment_credit[i]) CHECK(c == 0.0);
  }
}

TEST_CASE("strict shaping with an offset-absorbing critic reproduces the unshaped update") {
  Rng rng(12);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t k = 1 + rng.below(4);
    Trajectory t;
    t.boundaries = {0};
    for (std::size_t s = 0; s < k; ++s) t.boundaries.push_back(t.boundaries.back() + 1 + rng.below(4));
    const std::size_t n = t.boundaries.back();
    t.tokens.assign(n, 0);
    t.logprobs_old.assign(n, 0.0);
    t.mask.assign(n, 1);
    t.rewards.assign(n, 0.0);
    t.rewards.back() = rng.uniform() < 0.5;
    std::vector<double> phi(k + 1);
    for (auto& p : phi) p = rng.uniform(-6, 0);
    const double alpha = rng.uniform(0.05, 2.0);
    const auto shaped = inject_boundary_rewards(t, deltas_of(phi, alpha), TerminalConvention::StrictPbrs,
                                                -alpha * phi.back());
    std::vector<double> v(n), v_shaped(n);
    for (std::size_t u = 0; u < n; ++u) {
      v[u] = rng.uniform(-1, 1);
      v_shaped[u] = v[u] - alpha * phi[segment_of(t, u) - 1];
    }
    const auto a0 = gae_advantages(t.rewards, v), a1 = gae_advantages(shaped.rewards, v_shaped);
    for (std::size_t u = 0; u < n; ++u) REQUIRE(std::abs(a0[u] - a1[u]) < 1e-12);

    Batch b = random_batch(rng, n, 0.2);
    Batch b2{b.params.snapshot(), b.inputs, b.samples};
    for (std::size_t u = 0; u < n; ++u) {
      b.samples[u].advantage = a0[u];
      b2.samples[u] = {&b2.inputs[u], b.samples[u].token, b.samples[u].logp_old, a1[u]};
    }
    PPOConfig cfg;
    ppo_update(b.params, nullptr, b.samples, {}, cfg, 1.0);
    ppo_update(b2.params, nullptr, b2.samples, {}, cfg, 1.0);
    double worst = 0.0;
    for (std::uint32_t f : b.params.allocated_rows())
      for (TokenId vv = 0; vv < b.params.vocab_size(); ++vv)
        worst = std::max(worst, std::abs(b.params.weight(f, vv) - b2.params.weight(f, vv)));
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("masked tokens never reach the update") {
  qa::DatasetParams dp;
  dp.n_entities = 40;
  dp.n_questions = 60;
  const qa::Dataset data = qa::generate_dataset(dp);
  const qa::Environment env(data, {});
  TrainConfig cfg;
  cfg.steps = 1;
  Trainer trainer(env, cfg);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Episode ep = trainer.rollout(seed % data.questions.size(), seed);
    std::vector<std::size_t> trainable;
    for (std::size_t t = 0; t < ep.traj.size(); ++t)
      if (ep.traj.mask[t]) trainable.push_back(t);
    CHECK(ep.positions == trainable);
    REQUIRE(ep.inputs.size() == trainable.size());

    Rng rng(seed);
    std::vector<double> adv(ep.traj.size()), adv_zeroed(ep.traj.size());
    for (std::size_t t = 0; t < adv.size(); ++t) {
      adv[t] = rng.uniform(-1, 1);
      adv_zeroed[t] = ep.traj.mask[t] ? adv[t] : 0.0;
    }
    auto build = [&](const std::vector<double>& a) {
      std::vector<PpoSample> s;
      for (std::size_t i = 0; i < ep.positions.size(); ++i) {
        const std::size_t t = ep.positions[i];
        s.push_back({&ep.inputs[i], ep.traj.tokens[t], ep.traj.logprobs_old[t], a[t]});
      }
      return s;
    };
    PolicyParams p1 = trainer.policy().snapshot(), p2 = trainer.policy().snapshot();
    ppo_update(p1, nullptr, build(adv), {}, cfg.ppo, 1.0);
    ppo_update(p2, nullptr, build(adv_zeroed), {}, cfg.ppo, 1.0);
    CHECK(same_params(p1, p2));
  }
}

TEST_CASE("config validation") {
  PPOConfig p;
  p.clip_eps = 1.0;
  CHECK_THROWS_AS(p.validate(), InvalidInput);
  GRPOConfig g;
  g.group_size = 1;
  CHECK_THROWS_AS(g.validate(), InvalidInput);
  MTConfig m;
  m.beta_blend = 1.5;
  CHECK_THROWS_AS(m.validate(), InvalidInput);
}
