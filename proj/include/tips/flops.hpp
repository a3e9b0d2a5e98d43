#pragma once

// Teacher-scoring cost model for a dense decoder-only transformer with
// grouped-query attention: one pass over the longest prefix (shared KV cache)
// plus answer scoring for every prefix and every candidate answer.

#include <map>
#include <string>
#include <vector>

#include "tips/kv_config.hpp"

namespace tips::flops {

struct ModelConfig {
  std::string name;
  double layers = 0;        // L
  double hidden = 0;        // h
  double intermediate = 0;  // I
  double heads = 0;         // H
  double head_dim = 0;      // d
  double kv_heads = 0;      // H_kv
  double vocab = 0;         // V

  double q_size() const { return heads * head_dim; }
  double kv_size() const { return kv_heads * head_dim; }
  void validate() const;

  /// Keys: name, layers, hidden, intermediate, heads, head_dim, kv_heads, vocab.
  static ModelConfig from_kv(const KvConfig& kv);
};

struct ScoringWorkload {
  double batch = 0;                    // B
  std::vector<double> prefix_lengths;  // L_i, one per prefix (S of them)
  double answer_len = 0;               // L_a
  double answers_per_sample = 0;       // A

  double prefixes_per_sample() const { return static_cast<double>(prefix_lengths.size()); }
  double max_prefix() const;
  void validate() const;

  /// Keys: batch, prefix_lengths, answer_len, answers_per_sample, and
  /// optionally prefixes_per_sample / max_prefix, which must agree with the list.
  static ScoringWorkload from_kv(const KvConfig& kv);
};

/// Parameter-FLOP constant: L (3hI + h(q + k + v + Hd)) + 2Vh.
double n_dense(const ModelConfig& c);

struct ScoringFlops {
  double prefix = 0.0;
  double answers = 0.0;
  double total = 0.0;
};

ScoringFlops teacher_scoring_flops(const ModelConfig& c, const ScoringWorkload& w);

/// 100 * f_total / baseline. Throws InvalidInput when baseline <= 0.
double relative_overhead(double f_total, double baseline_step_flops);

/// model name -> PPO step TFLOPs, from a two-column CSV with a header row.
std::map<std::string, double> load_baseline_csv(const std::string& path);

struct OverheadRow {
  std::string model;
  double n_dense = 0.0;
  double teacher_tflops = 0.0;
  double ppo_tflops = 0.0;
  double overhead_pct = 0.0;
};

/// A NaN baseline leaves the overhead unset (printed as '-').
OverheadRow overhead_row(const ModelConfig& c, const ScoringWorkload& w, double ppo_tflops);
std::string format_row_header();
std::string format_row(const OverheadRow& row);

}  // namespace tips::flops
