#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "tips/pbrs_verify.hpp"

using namespace tips;
using namespace tips::pbrs;

namespace {

FiniteMDP empty_mdp(std::size_t n, std::size_t a, std::size_t h) {
  FiniteMDP m;
  m.n_states = n;
  m.n_actions = a;
  m.horizon = h;
  m.transition.assign(h * n * a * n, 0.0);
  m.reward.assign(m.transition.size(), 0.0);
  m.boundary_steps = {h};
  m.start.assign(n, 1.0 / static_cast<double>(n));
  return m;
}

TabularPolicy uniform_policy(const FiniteMDP& m) {
  return {m.n_states, m.n_actions, m.horizon,
          std::vector<double>(m.horizon * m.n_states * m.n_actions, 1.0 / static_cast<double>(m.n_actions))};
}

}  // namespace

TEST_CASE("horizon-1 Q is the expected immediate reward") {
  const FiniteMDP m = [] {
    FiniteMDP x = random_mdp(5);
    while (x.horizon != 1) x = random_mdp(x.n_states * 1000 + x.horizon + 17);
    return x;
  }();
  const QTable q = exact_q(m, random_policy(m, 2));
  for (std::size_t s = 0; s < m.n_states; ++s) {
    for (std::size_t a = 0; a < m.n_actions; ++a) {
      double want = 0.0;
      for (std::size_t s2 = 0; s2 < m.n_states; ++s2) want += m.p(0, s, a, s2) * m.r(0, s, a, s2);
      CHECK(q(0, s, a) == doctest::Approx(want).epsilon(1e-14));
    }
  }
}

TEST_CASE("deterministic 2-step chain") {
  // state 0 --a0--> 1 (reward 0) --a0--> 2 (reward 1); action 1 stays put with reward 0.
  FiniteMDP m = empty_mdp(3, 2, 2);
  for (std::size_t t = 0; t < 2; ++t) {
    for (std::size_t s = 0; s < 3; ++s) {
      const std::size_t next = std::min<std::size_t>(s + 1, 2);
      m.transition[m.index(t, s, 0, next)] = 1.0;
      m.transition[m.index(t, s, 1, s)] = 1.0;
    }
  }
  m.reward[m.index(1, 1, 0, 2)] = 1.0;
  TabularPolicy chain = uniform_policy(m);
  for (std::size_t i = 0; i < chain.probs.size(); i += 2) {
    chain.probs[i] = 1.0;
    chain.probs[i + 1] = 0.0;
  }
  const QTable q = exact_q(m, chain);
  CHECK(q(0, 0, 0) == 1.0);
  CHECK(q(1, 1, 0) == 1.0);
  CHECK(q(0, 0, 1) == 0.0);
  CHECK(optimal_q(m)(0, 0, 0) == 1.0);
}

TEST_CASE("validate rejects malformed instances") {
  FiniteMDP m = random_mdp(9);
  FiniteMDP bad = m;
  bad.transition[0] += 1e-9;
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
  bad = m;
  bad.boundary_steps.back() = m.horizon + 1;
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
  TabularPolicy pi = random_policy(m, 1);
  pi.probs[0] = -0.5;
  CHECK_THROWS_AS(exact_q(m, pi), InvalidInput);
}

TEST_CASE("exact_q matches a 1e6-rollout Monte Carlo estimate within 3 standard errors") {
  std::uint64_t seed = 100;
  FiniteMDP m = random_mdp(seed);
  while (m.n_states != 6 || m.horizon < 4) m = random_mdp(++seed);
  const TabularPolicy pi = random_policy(m, 77);
  const QTable q = exact_q(m, pi);
  const McEstimate est = monte_carlo_q(m, pi, 0, 2, 1, 1000000, 4242);
  CAPTURE(est.mean);
  CAPTURE(est.stderr_);
  CHECK(est.stderr_ > 0.0);
  CHECK(std::abs(est.mean - q(0, 2, 1)) < 3.0 * est.stderr_);
}

TEST_CASE("alpha = 0 leaves rewards unchanged and the defect exactly zero") {
  const FiniteMDP m = random_mdp(31);
  const Potential pot = random_potential(m.n_states, 32);
  const ShapedMDP sh = shape_mdp(m, pot, 0.0);
  const std::size_t n = m.n_states;
  for (std::size_t t = 0; t < m.horizon; ++t)
    for (std::size_t anchor = 0; anchor < n; ++anchor)
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t a = 0; a < m.n_actions; ++a)
          for (std::size_t s2 = 0; s2 < n; ++s2) {
            const std::size_t y = sh.augmented(m.is_boundary(t + 1) ? s2 : anchor, s2);
            REQUIRE(sh.mdp.r(t, sh.augmented(anchor, s), a, y) == m.r(t, s, a, s2));
          }
  const InvarianceReport rep = invariance_report(m, pot, 0.0, 3, 5);
  CHECK(rep.max_constancy_defect == 0.0);
  CHECK(rep.argmax_mismatches == 0);
}

TEST_CASE("constant potential changes only the final boundary transition, by -alpha c") {
  FiniteMDP m = random_mdp(40);
  while (m.boundary_steps.size() < 2) m = random_mdp(m.horizon + 1000);
  const double c = 2.5, alpha = 0.7;
  const Potential pot = Potential::terminal_zero(std::vector<double>(m.n_states, c));
  const ShapedMDP sh = shape_mdp(m, pot, alpha);
  const std::size_t n = m.n_states;
  for (std::size_t t = 0; t < m.horizon; ++t) {
    const double shift = t + 1 == m.horizon ? -alpha * c : 0.0;
    for (std::size_t anchor = 0; anchor < n; ++anchor)
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t a = 0; a < m.n_actions; ++a)
          for (std::size_t s2 = 0; s2 < n; ++s2) {
            const std::size_t y = sh.augmented(m.is_boundary(t + 1) ? s2 : anchor, s2);
            REQUIRE(sh.mdp.r(t, sh.augmented(anchor, s), a, y) == doctest::Approx(m.r(t, s, a, s2) + shift));
          }
  }
}

TEST_CASE("shaped total along any path is the original total minus alpha Phi(s_0)") {
  Rng rng(8);
  for (int rep = 0; rep < 200; ++rep) {
    const FiniteMDP m = random_mdp(1000 + rep);
    const Potential pot = random_potential(m.n_states, 2000 + rep);
    const double alpha = rng.uniform(0.01, 10.0);
    const ShapedMDP sh = shape_mdp(m, pot, alpha);
    std::size_t s = rng.below(m.n_states);
    const double phi0 = pot.values[s];
    std::size_t x = sh.augmented(s, s);
    double g = 0.0, g_shaped = 0.0;
    for (std::size_t t = 0; t < m.horizon; ++t) {
      const std::size_t a = rng.below(m.n_actions), s2 = rng.below(m.n_states);
      const std::size_t anchor = x / m.n_states;
      const std::size_t y = sh.augmented(m.is_boundary(t + 1) ? s2 : anchor, s2);
      g += m.r(t, s, a, s2);
      g_shaped += sh.mdp.r(t, x, a, y);
      s = s2;
      x = y;
    }
    CHECK(std::abs(g_shaped - (g - alpha * phi0)) < 1e-9);
  }
}

TEST_CASE("shaped minus original Q equals the -alpha Phi(anchor) offset table") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const FiniteMDP m = random_mdp(seed);
    const Potential pot = random_potential(m.n_states, seed + 500);
    const double alpha = 0.01 * std::pow(1000.0, static_cast<double>(seed) / 30.0);
    const ShapedMDP sh = shape_mdp(m, pot, alpha);
    const TabularPolicy pi = random_policy(m, seed + 900);
    const QTable q = exact_q(m, pi);
    const QTable qs = exact_q(sh.mdp, lift_policy(pi, m.n_states));
    double worst = 0.0;
    for (std::size_t t = 0; t < m.horizon; ++t)
      for (std::size_t anchor = 0; anchor < m.n_states; ++anchor)
        for (std::size_t s = 0; s < m.n_states; ++s)
          for (std::size_t a = 0; a < m.n_actions; ++a) {
            const double d = qs(t, sh.augmented(anchor, s), a) - q(t, s, a);
            worst = std::max(worst, std::abs(d + alpha * pot.values[anchor]));
          }
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("terminal potential of 1 shifts Q uniformly and is caught by the offset check") {
  const FiniteMDP m = random_mdp(12);
  Potential pot = random_potential(m.n_states, 13);
  pot.terminal.assign(m.n_states, 1.0);
  CHECK(!pot.terminal_is_zero());
  const InvarianceReport rep = invariance_report(m, pot, 1.0, 3, 14);
  CHECK(rep.max_constancy_defect < 1e-9);
  CHECK(rep.max_offset_defect == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("state-dependent terminal potential breaks constancy") {
  std::uint64_t seed = 50;
  FiniteMDP m = random_mdp(seed);
  while (m.horizon < 2) m = random_mdp(++seed);
  Potential pot = random_potential(m.n_states, 51);
  Rng rng(52);
  for (double& x : pot.terminal) x = rng.uniform(-5.0, 5.0);
  const InvarianceReport rep = invariance_report(m, pot, 1.0, 3, 53);
  CHECK(rep.max_constancy_defect > 1e-3);
}

TEST_CASE("verify_suite over 200 instances passes and its controls fail") {
  const SuiteReport rep = verify_suite(200, 1, 3);
  CHECK(rep.pass);
  CHECK(rep.instances == 200);
  CHECK(rep.max_constancy_defect < 1e-9);
  CHECK(rep.max_offset_defect < 1e-9);
  CHECK(rep.argmax_mismatches == 0);
  CHECK(rep.controls == 200);
  CHECK(rep.control_min_defect > 1e-3);
  CHECK(rep.summary_line().rfind("verify-pbrs PASS", 0) == 0);
  CHECK(rep.to_json()["instances"] == 200);
}

TEST_CASE("generator respects its limits and is deterministic") {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const FiniteMDP m = random_mdp(seed);
    CHECK(m.n_states <= 12);
    CHECK(m.n_actions <= 4);
    CHECK(m.horizon <= 10);
    CHECK(m.boundary_steps.back() == m.horizon);
  }
  CHECK(random_mdp(3).transition == random_mdp(3).transition);
}
