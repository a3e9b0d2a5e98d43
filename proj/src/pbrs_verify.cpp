#include "tips/pbrs_verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace tips::pbrs {

namespace {

constexpr double kRowTol = 1e-12;
constexpr double kPolicyTol = 1e-9;
constexpr double kInvarianceTol = 1e-9;
constexpr double kArgmaxTol = 1e-9;
constexpr double kControlMin = 1e-3;

void flat_dirichlet(Rng& rng, double* out, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = rng.exponential();
    sum += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= sum;
}

std::size_t draw(Rng& rng, const double* probs, std::size_t n) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  // Rounding left u above the running sum; take the last positive entry.
  for (std::size_t i = n; i-- > 0;) {
    if (probs[i] > 0.0) return i;
  }
  return n - 1;
}

void check_policy(const FiniteMDP& mdp, const TabularPolicy& pi) {
  if (pi.n_states != mdp.n_states || pi.n_actions != mdp.n_actions || pi.horizon != mdp.horizon ||
      pi.probs.size() != mdp.horizon * mdp.n_states * mdp.n_actions) {
    throw InvalidInput("policy shape does not match the MDP");
  }
  for (std::size_t row = 0; row < mdp.horizon * mdp.n_states; ++row) {
    double sum = 0.0;
    for (std::size_t a = 0; a < mdp.n_actions; ++a) {
      const double p = pi.probs[row * mdp.n_actions + a];
      if (!(p >= 0.0) || !std::isfinite(p)) throw InvalidInput("policy has a negative or non-finite probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kPolicyTol) throw InvalidInput("policy row does not sum to 1");
  }
}

QTable backward(const FiniteMDP& mdp, const TabularPolicy* pi) {
  mdp.validate();
  if (pi) check_policy(mdp, *pi);
  const std::size_t S = mdp.n_states, A = mdp.n_actions;
  QTable out{S, A, mdp.horizon, std::vector<double>(mdp.horizon * S * A, 0.0)};
  std::vector<double> v_next(S, 0.0), v(S, 0.0);
  for (std::size_t t = mdp.horizon; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double vs = pi ? 0.0 : -INFINITY;
      for (std::size_t a = 0; a < A; ++a) {
        double q = 0.0;
        for (std::size_t s2 = 0; s2 < S; ++s2) {
          const double p = mdp.p(t, s, a, s2);
          if (p != 0.0) q += p * (mdp.r(t, s, a, s2) + v_next[s2]);
        }
        out.q[(t * S + s) * A + a] = q;
        vs = pi ? vs + (*pi)(t, s, a) * q : std::max(vs, q);
      }
      v[s] = vs;
    }
    std::swap(v, v_next);
  }
  return out;
}

/// Greedy action with the lowest index among exact ties.
std::size_t greedy(const QTable& q, std::size_t t, std::size_t s) {
  std::size_t best = 0;
  for (std::size_t a = 1; a < q.n_actions; ++a) {
    if (q(t, s, a) > q(t, s, best)) best = a;
  }
  return best;
}

double max_q(const QTable& q, std::size_t t, std::size_t s) { return q(t, s, greedy(q, t, s)); }

struct Compare {
  double constancy = 0.0;
  double offset = 0.0;
  std::size_t mismatches = 0;
  std::size_t cells = 0;
};

/// Compares a shaped table over augmented states against the base table.
Compare compare(const QTable& base, const QTable& shaped, const Potential& pot, double alpha, std::size_t n) {
  Compare c;
  for (std::size_t t = 0; t < base.horizon; ++t) {
    for (std::size_t anchor = 0; anchor < n; ++anchor) {
      for (std::size_t s = 0; s < n; ++s) {
        const std::size_t x = anchor * n + s;
        double lo = INFINITY, hi = -INFINITY;
        for (std::size_t a = 0; a < base.n_actions; ++a) {
          const double d = shaped(t, x, a) - base(t, s, a);
          lo = std::min(lo, d);
          hi = std::max(hi, d);
          c.offset = std::max(c.offset, std::abs(d + alpha * pot.values[anchor]));
        }
        c.constancy = std::max(c.constancy, hi - lo);
        const std::size_t gs = greedy(shaped, t, x), gb = greedy(base, t, s);
        const bool shaped_ok = base(t, s, gs) >= max_q(base, t, s) - kArgmaxTol;
        const bool base_ok = shaped(t, x, gb) >= max_q(shaped, t, x) - kArgmaxTol;
        if (!shaped_ok || !base_ok) ++c.mismatches;
        ++c.cells;
      }
    }
  }
  return c;
}

}  // namespace

bool FiniteMDP::is_boundary(std::size_t step) const {
  return std::binary_search(boundary_steps.begin(), boundary_steps.end(), step);
}

void FiniteMDP::validate() const {
  if (n_states == 0 || n_actions == 0 || horizon == 0) throw InvalidInput("mdp: empty state, action or horizon");
  const std::size_t cells = horizon * n_states * n_actions * n_states;
  if (transition.size() != cells || reward.size() != cells) throw InvalidInput("mdp: table sizes do not match");
  if (start.size() != n_states) throw InvalidInput("mdp: start distribution has the wrong size");
  for (std::size_t row = 0; row < horizon * n_states * n_actions; ++row) {
    double sum = 0.0;
    for (std::size_t s2 = 0; s2 < n_states; ++s2) {
      const double p = transition[row * n_states + s2];
      if (!(p >= 0.0)) throw InvalidInput("mdp: negative transition probability");
      if (!std::isfinite(reward[row * n_states + s2])) throw InvalidInput("mdp: non-finite reward");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kRowTol) throw InvalidInput("mdp: transition row does not sum to 1");
  }
  double sum = 0.0;
  for (double p : start) {
    if (!(p >= 0.0)) throw InvalidInput("mdp: negative start probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kRowTol) throw InvalidInput("mdp: start distribution does not sum to 1");
  if (boundary_steps.empty() || boundary_steps.back() != horizon) {
    throw InvalidInput("mdp: boundary steps must end at the horizon");
  }
  for (std::size_t i = 0; i < boundary_steps.size(); ++i) {
    if (boundary_steps[i] < 1 || (i > 0 && boundary_steps[i] <= boundary_steps[i - 1])) {
      throw InvalidInput("mdp: boundary steps must be strictly increasing within 1..horizon");
    }
  }
}

Potential Potential::terminal_zero(std::vector<double> values) {
  Potential p;
  p.terminal.assign(values.size(), 0.0);
  p.values = std::move(values);
  return p;
}

bool Potential::terminal_is_zero() const {
  return std::all_of(terminal.begin(), terminal.end(), [](double x) { return x == 0.0; });
}

QTable exact_q(const FiniteMDP& mdp, const TabularPolicy& policy) { return backward(mdp, &policy); }

QTable optimal_q(const FiniteMDP& mdp) { return backward(mdp, nullptr); }

ShapedMDP shape_mdp(const FiniteMDP& mdp, const Potential& potential, double alpha) {
  mdp.validate();
  const std::size_t n = mdp.n_states, A = mdp.n_actions;
  if (potential.values.size() != n || potential.terminal.size() != n) {
    throw InvalidInput("shape_mdp: potential size does not match the state count");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(potential.values[i]) || !std::isfinite(potential.terminal[i])) {
      throw InvalidInput("shape_mdp: non-finite potential");
    }
  }
  ShapedMDP out;
  out.base_states = n;
  FiniteMDP& m = out.mdp;
  m.n_states = n * n;
  m.n_actions = A;
  m.horizon = mdp.horizon;
  m.boundary_steps = mdp.boundary_steps;
  m.transition.assign(m.horizon * m.n_states * A * m.n_states, 0.0);
  m.reward.assign(m.transition.size(), 0.0);
  m.start.assign(m.n_states, 0.0);
  for (std::size_t s = 0; s < n; ++s) m.start[out.augmented(s, s)] = mdp.start[s];

  for (std::size_t t = 0; t < mdp.horizon; ++t) {
    const bool lands_on_boundary = mdp.is_boundary(t + 1);
    const bool lands_terminal = t + 1 == mdp.horizon;
    for (std::size_t anchor = 0; anchor < n; ++anchor) {
      for (std::size_t s = 0; s < n; ++s) {
        const std::size_t x = out.augmented(anchor, s);
        for (std::size_t a = 0; a < A; ++a) {
          for (std::size_t s2 = 0; s2 < n; ++s2) {
            const std::size_t next_anchor = lands_on_boundary ? s2 : anchor;
            const std::size_t y = out.augmented(next_anchor, s2);
            const std::size_t k = m.index(t, x, a, y);
            m.transition[k] = mdp.p(t, s, a, s2);
            double r = mdp.r(t, s, a, s2);
            if (lands_on_boundary && alpha != 0.0) {
              const double phi_land = lands_terminal ? potential.terminal[s2] : potential.values[s2];
              r += alpha * (phi_land - potential.values[anchor]);
            }
            m.reward[k] = r;
          }
        }
      }
    }
  }
  return out;
}

TabularPolicy lift_policy(const TabularPolicy& policy, std::size_t base_states) {
  if (policy.n_states != base_states) throw InvalidInput("lift_policy: state count mismatch");
  const std::size_t n = base_states, A = policy.n_actions;
  TabularPolicy out{n * n, A, policy.horizon, std::vector<double>(policy.horizon * n * n * A)};
  for (std::size_t t = 0; t < policy.horizon; ++t) {
    for (std::size_t anchor = 0; anchor < n; ++anchor) {
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t a = 0; a < A; ++a) {
          out.probs[(t * n * n + anchor * n + s) * A + a] = policy(t, s, a);
        }
      }
    }
  }
  return out;
}

nlohmann::json InvarianceReport::to_json() const {
  return {{"max_constancy_defect", max_constancy_defect},
          {"max_offset_defect", max_offset_defect},
          {"argmax_mismatches", argmax_mismatches},
          {"cells_checked", cells_checked}};
}

InvarianceReport invariance_report(const FiniteMDP& mdp, const Potential& potential, double alpha,
                                   std::size_t n_random_policies, std::uint64_t seed) {
  const ShapedMDP shaped = shape_mdp(mdp, potential, alpha);
  InvarianceReport rep;
  auto absorb = [&](const Compare& c) {
    rep.max_constancy_defect = std::max(rep.max_constancy_defect, c.constancy);
    rep.max_offset_defect = std::max(rep.max_offset_defect, c.offset);
    rep.argmax_mismatches += c.mismatches;
    rep.cells_checked += c.cells;
  };
  for (std::size_t i = 0; i < n_random_policies; ++i) {
    const TabularPolicy pi = random_policy(mdp, derive_seed(seed, i));
    absorb(compare(exact_q(mdp, pi), exact_q(shaped.mdp, lift_policy(pi, mdp.n_states)), potential, alpha,
                   mdp.n_states));
  }
  absorb(compare(optimal_q(mdp), optimal_q(shaped.mdp), potential, alpha, mdp.n_states));
  return rep;
}

FiniteMDP random_mdp(std::uint64_t seed, const GeneratorLimits& limits) {
  if (limits.max_states < 2 || limits.max_actions < 2 || limits.max_horizon < 1) {
    throw InvalidInput("random_mdp: limits too small");
  }
  Rng rng(seed);
  FiniteMDP m;
  m.n_states = 2 + rng.below(limits.max_states - 1);
  m.n_actions = 2 + rng.below(limits.max_actions - 1);
  m.horizon = 1 + rng.below(limits.max_horizon);
  const std::size_t cells = m.horizon * m.n_states * m.n_actions * m.n_states;
  m.transition.assign(cells, 0.0);
  m.reward.assign(cells, 0.0);
  for (std::size_t row = 0; row < m.horizon * m.n_states * m.n_actions; ++row) {
    flat_dirichlet(rng, &m.transition[row * m.n_states], m.n_states);
  }
  for (double& r : m.reward) r = rng.uniform(-1.0, 1.0);
  for (std::size_t b = 1; b < m.horizon; ++b) {
    if (rng.uniform() < 0.5) m.boundary_steps.push_back(b);
  }
  m.boundary_steps.push_back(m.horizon);
  m.start.assign(m.n_states, 0.0);
  flat_dirichlet(rng, m.start.data(), m.n_states);
  m.validate();
  return m;
}

Potential random_potential(std::size_t n_states, std::uint64_t seed, double scale) {
  Rng rng(seed);
  std::vector<double> v(n_states);
  for (double& x : v) x = rng.uniform(-scale, scale);
  return Potential::terminal_zero(std::move(v));
}

TabularPolicy random_policy(const FiniteMDP& mdp, std::uint64_t seed) {
  Rng rng(seed);
  TabularPolicy pi{mdp.n_states, mdp.n_actions, mdp.horizon,
                   std::vector<double>(mdp.horizon * mdp.n_states * mdp.n_actions)};
  for (std::size_t row = 0; row < mdp.horizon * mdp.n_states; ++row) {
    flat_dirichlet(rng, &pi.probs[row * mdp.n_actions], mdp.n_actions);
  }
  return pi;
}

McEstimate monte_carlo_q(const FiniteMDP& mdp, const TabularPolicy& policy, std::size_t t, std::size_t s,
                         std::size_t a, std::size_t n_rollouts, std::uint64_t seed) {
  mdp.validate();
  check_policy(mdp, policy);
  if (t >= mdp.horizon || s >= mdp.n_states || a >= mdp.n_actions || n_rollouts < 2) {
    throw InvalidInput("monte_carlo_q: bad cell or rollout count");
  }
  Rng rng(seed);
  const std::size_t S = mdp.n_states, A = mdp.n_actions;
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < n_rollouts; ++i) {
    std::size_t state = s, action = a;
    double g = 0.0;
    for (std::size_t u = t; u < mdp.horizon; ++u) {
      if (u > t) action = draw(rng, &policy.probs[(u * S + state) * A], A);
      const std::size_t next = draw(rng, &mdp.transition[mdp.index(u, state, action, 0)], S);
      g += mdp.r(u, state, action, next);
      state = next;
    }
    sum += g;
    sum_sq += g * g;
  }
  const double n = static_cast<double>(n_rollouts);
  McEstimate est;
  est.mean = sum / n;
  const double var = std::max(0.0, (sum_sq - n * est.mean * est.mean) / (n - 1.0));
  est.stderr_ = std::sqrt(var / n);
  return est;
}

nlohmann::json SuiteReport::to_json() const {
  return {{"instances", instances},
          {"seed", seed},
          {"max_constancy_defect", max_constancy_defect},
          {"max_offset_defect", max_offset_defect},
          {"argmax_mismatches", argmax_mismatches},
          {"controls", controls},
          {"control_min_defect", control_min_defect},
          {"pass", pass},
          {"failures", failures}};
}

std::string SuiteReport::summary_line() const {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "verify-pbrs %s: instances=%zu max_constancy_defect=%.3e max_offset_defect=%.3e "
                "argmax_mismatches=%zu control_min_defect=%.3e",
                pass ? "PASS" : "FAIL", instances, max_constancy_defect, max_offset_defect, argmax_mismatches,
                control_min_defect);
  return buf;
}

SuiteReport verify_suite(std::size_t instances, std::uint64_t seed, std::size_t policies_per_instance) {
  SuiteReport out;
  out.instances = instances;
  out.seed = seed;
  out.control_min_defect = instances ? INFINITY : 0.0;
  bool ok = true;
  for (std::size_t i = 0; i < instances; ++i) {
    const std::uint64_t base = derive_seed(seed, i);
    const FiniteMDP mdp = random_mdp(derive_seed(base, 1));
    const Potential pot = random_potential(mdp.n_states, derive_seed(base, 2));
    Rng rng(derive_seed(base, 3));
    const double alpha = std::exp(rng.uniform(std::log(0.01), std::log(10.0)));
    const InvarianceReport rep = invariance_report(mdp, pot, alpha, policies_per_instance, derive_seed(base, 4));
    out.max_constancy_defect = std::max(out.max_constancy_defect, rep.max_constancy_defect);
    out.max_offset_defect = std::max(out.max_offset_defect, rep.max_offset_defect);
    out.argmax_mismatches += rep.argmax_mismatches;
    if (rep.max_constancy_defect >= kInvarianceTol || rep.max_offset_defect >= kInvarianceTol ||
        rep.argmax_mismatches > 0) {
      ok = false;
      nlohmann::json f = rep.to_json();
      f["instance"] = i;
      f["alpha"] = alpha;
      out.failures.push_back(f);
    }

    // Negative control: a state-dependent terminal potential breaks the
    // constant shift. A constant terminal value would not, so draw one per state.
    Potential bad = pot;
    for (double& x : bad.terminal) x = rng.uniform(-5.0, 5.0);
    const InvarianceReport ctl = invariance_report(mdp, bad, 1.0, 1, derive_seed(base, 5));
    out.control_min_defect = std::min(out.control_min_defect, ctl.max_constancy_defect);
    ++out.controls;
    if (!(ctl.max_constancy_defect > kControlMin)) {
      ok = false;
      nlohmann::json f = ctl.to_json();
      f["instance"] = i;
      f["control"] = true;
      out.failures.push_back(f);
    }
  }
  out.pass = ok && instances > 0;
  return out;
}

}  // namespace tips::pbrs
