#pragma once

// Exact finite-horizon MDP laboratory for checking that segment-level
// potential shaping shifts Q by a per-state constant and leaves greedy
// actions alone. Everything is backward induction; no sampling except in
// the Monte Carlo cross-check.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "tips/common.hpp"

namespace tips::pbrs {

/// Finite-horizon MDP with step-indexed dynamics, gamma = 1. Steps run
/// t = 0..horizon-1; the state reached after step horizon-1 is terminal.
struct FiniteMDP {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::size_t horizon = 0;
  /// P[t][s][a][s'] flattened, see index().
  std::vector<double> transition;
  /// R[t][s][a][s'] flattened, same layout.
  std::vector<double> reward;
  /// Segment boundary steps, sorted, within 1..horizon, last == horizon.
  std::vector<std::size_t> boundary_steps;
  std::vector<double> start;

  std::size_t index(std::size_t t, std::size_t s, std::size_t a, std::size_t s2) const {
    return ((t * n_states + s) * n_actions + a) * n_states + s2;
  }
  double p(std::size_t t, std::size_t s, std::size_t a, std::size_t s2) const { return transition[index(t, s, a, s2)]; }
  double r(std::size_t t, std::size_t s, std::size_t a, std::size_t s2) const { return reward[index(t, s, a, s2)]; }
  bool is_boundary(std::size_t step) const;

  /// Throws InvalidInput on malformed sizes, rows not summing to 1 within
  /// 1e-12, negative probabilities or bad boundaries.
  void validate() const;
};

/// State potential. The terminal layer uses `terminal` (zero under the
/// terminal-zero convention); every other boundary uses `values`.
struct Potential {
  std::vector<double> values;
  std::vector<double> terminal;

  static Potential terminal_zero(std::vector<double> values);
  bool terminal_is_zero() const;
};

/// Per-step action distributions: pi[t][s][a] flattened as (t * S + s) * A + a.
struct TabularPolicy {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::size_t horizon = 0;
  std::vector<double> probs;

  double operator()(std::size_t t, std::size_t s, std::size_t a) const {
    return probs[(t * n_states + s) * n_actions + a];
  }
};

/// Q[t][s][a] flattened as (t * S + s) * A + a.
struct QTable {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::size_t horizon = 0;
  std::vector<double> q;

  double operator()(std::size_t t, std::size_t s, std::size_t a) const {
    return q[(t * n_states + s) * n_actions + a];
  }
};

/// Q^pi by backward induction. Throws InvalidInput when the policy shape
/// does not match or a row is not a distribution.
QTable exact_q(const FiniteMDP& mdp, const TabularPolicy& policy);

/// Q* by backward induction.
QTable optimal_q(const FiniteMDP& mdp);

/// Shaped MDP over augmented states (anchor, s), where anchor is the state
/// at the most recent boundary (step 0 counts as a boundary). Augmented index
/// is anchor * n + s. A transition that lands on boundary step b gains
/// alpha * (Phi(landing) - Phi(anchor)), with the terminal potential used at
/// the horizon.
struct ShapedMDP {
  FiniteMDP mdp;
  std::size_t base_states = 0;

  std::size_t augmented(std::size_t anchor, std::size_t s) const { return anchor * base_states + s; }
};

ShapedMDP shape_mdp(const FiniteMDP& mdp, const Potential& potential, double alpha);

/// Lifts a base policy to the augmented state space (ignores the anchor).
TabularPolicy lift_policy(const TabularPolicy& policy, std::size_t base_states);

struct InvarianceReport {
  /// max over policies and (t, anchor, s) of max_{a,a'} |D(a) - D(a')|,
  /// D = Q_shaped - Q.
  double max_constancy_defect = 0.0;
  /// max |D(a) + alpha * Phi(anchor)|.
  double max_offset_defect = 0.0;
  /// (t, anchor, s) cells where the greedy action of Q_shaped is not greedy
  /// for Q (tolerance 1e-9), summed over policies and the optimal Q.
  std::size_t argmax_mismatches = 0;
  std::size_t cells_checked = 0;

  nlohmann::json to_json() const;
};

InvarianceReport invariance_report(const FiniteMDP& mdp, const Potential& potential, double alpha,
                                   std::size_t n_random_policies, std::uint64_t seed);

struct GeneratorLimits {
  std::size_t max_states = 12;
  std::size_t max_actions = 4;
  std::size_t max_horizon = 10;
  double potential_scale = 5.0;
};

/// Flat-Dirichlet transitions, uniform [-1, 1] rewards, random boundaries.
FiniteMDP random_mdp(std::uint64_t seed, const GeneratorLimits& limits = {});
Potential random_potential(std::size_t n_states, std::uint64_t seed, double scale = 5.0);
TabularPolicy random_policy(const FiniteMDP& mdp, std::uint64_t seed);

struct McEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
};

/// Monte Carlo estimate of Q^pi(t, s, a) from n rollouts.
McEstimate monte_carlo_q(const FiniteMDP& mdp, const TabularPolicy& policy, std::size_t t, std::size_t s,
                         std::size_t a, std::size_t n_rollouts, std::uint64_t seed);

struct SuiteReport {
  std::size_t instances = 0;
  std::uint64_t seed = 0;
  double max_constancy_defect = 0.0;
  double max_offset_defect = 0.0;
  std::size_t argmax_mismatches = 0;
  /// Smallest defect over the negative controls (state-dependent terminal
  /// potential); must be large.
  double control_min_defect = 0.0;
  std::size_t controls = 0;
  bool pass = false;
  /// Instances whose defect or mismatch count exceeded the tolerance.
  nlohmann::json failures = nlohmann::json::array();

  nlohmann::json to_json() const;
  std::string summary_line() const;
};

/// Runs invariance_report on `instances` random tuples (alpha log-uniform in
/// [0.01, 10]) and a negative control per instance.
SuiteReport verify_suite(std::size_t instances, std::uint64_t seed, std::size_t policies_per_instance = 3);

}  // namespace tips::pbrs
