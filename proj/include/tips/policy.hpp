#pragma once

// Log-linear token policy and linear critic.
//
//   logit(v | s) = sum_f phi_f(s) W[f, v] + sum_g psi_g(s, v) u_g
//
// The softmax runs over the state's legal range only. W rows are stored
// copy-on-write so a teacher snapshot costs one pointer copy per row.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tips/features.hpp"

namespace tips {

class PolicyParams {
public:
  PolicyParams() = default;
  PolicyParams(std::size_t feature_dim, std::size_t vocab_size, std::size_t pair_dim = 0,
               std::uint64_t hash_seed = 0);

  std::size_t feature_dim() const { return rows_.size(); }
  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t pair_dim() const { return pair_.size(); }
  std::uint64_t hash_seed() const { return hash_seed_; }

  std::uint64_t version = 0;

  /// Row f of W, or nullptr when the row has never been written.
  const double* row(std::uint32_t f) const { return rows_[f] ? rows_[f]->data() : nullptr; }
  /// Writable row; allocates a zero row or detaches a shared one.
  double* mutable_row(std::uint32_t f);
  double weight(std::uint32_t f, TokenId v) const;
  void set_weight(std::uint32_t f, TokenId v, double x) { mutable_row(f)[v] = x; }

  std::span<const double> pair_weights() const { return pair_; }
  std::span<double> pair_weights() { return pair_; }

  /// Value-identical copy that later writes to either side do not affect.
  PolicyParams snapshot() const { return *this; }

  std::vector<std::uint32_t> allocated_rows() const;
  bool all_finite() const;

private:
  std::size_t vocab_size_ = 0;
  std::uint64_t hash_seed_ = 0;
  std::vector<std::shared_ptr<std::vector<double>>> rows_;
  std::vector<double> pair_;
};

/// Softmax over the legal range of one state.
struct Distribution {
  TokenRange legal;
  std::vector<double> logits;
  std::vector<double> probs;
  double log_z = 0.0;

  bool contains(TokenId t) const { return legal.contains(t); }
  double log_prob(TokenId t) const { return logits[t - legal.begin] - log_z; }
  double prob(TokenId t) const { return probs[t - legal.begin]; }
};

void compute_logits(const PolicyParams& params, const PolicyInput& input, std::span<double> out);
Distribution distribution(const PolicyParams& params, const PolicyInput& input);

/// Throws InvalidInput for a token outside the vocabulary or the legal range.
double log_prob(const PolicyParams& params, const PolicyInput& input, TokenId token);
TokenId sample(const PolicyParams& params, const PolicyInput& input, std::uint64_t seed);
TokenId sample(const Distribution& dist, std::uint64_t seed);
/// Most likely token; ties go to the lower id.
TokenId greedy(const Distribution& dist);

/// Sparse accumulator for parameter gradients: rows of W that were touched,
/// plus the dense pair-weight gradient.
class GradientBuffer {
public:
  GradientBuffer() = default;
  GradientBuffer(std::size_t vocab_size, std::size_t pair_dim);

  void clear();
  /// Adds coef * d log pi(token | input) / d theta.
  void add_log_prob_grad(const Distribution& dist, const PolicyInput& input, TokenId token, double coef);

  double get(std::uint32_t f, TokenId v) const;
  std::span<const double> pair() const { return pair_; }
  std::span<const std::uint32_t> rows() const { return order_; }
  std::span<const double> row(std::size_t i) const {
    return {pool_.data() + i * vocab_size_, vocab_size_};
  }

  double squared_norm() const;
  void scale(double s);
  /// params += step * gradient.
  void apply(PolicyParams& params, double step) const;

private:
  double* row_for(std::uint32_t f);

  std::size_t vocab_size_ = 0;
  std::unordered_map<std::uint32_t, std::size_t> slot_;
  std::vector<std::uint32_t> order_;
  std::vector<double> pool_;
  std::vector<double> pair_;
};

GradientBuffer grad_log_prob(const PolicyParams& params, const PolicyInput& input, TokenId token);

struct CriticParams {
  std::vector<double> weights;
  CriticParams() = default;
  explicit CriticParams(std::size_t feature_dim) : weights(feature_dim, 0.0) {}
};

double value(const CriticParams& critic, const SparseVector& features);

struct CriticSample {
  const SparseVector* features;
  double target;
};

/// One gradient step on 0.5 * mean (V - G)^2. Throws on a non-finite target.
void critic_fit_inplace(CriticParams& critic, std::span<const CriticSample> batch, double lr);
CriticParams critic_fit(const CriticParams& critic, std::span<const CriticSample> batch, double lr);
double critic_mse(const CriticParams& critic, std::span<const CriticSample> batch);

struct Checkpoint {
  PolicyParams policy;
  CriticParams critic;
};

/// Binary: magic "TIPSCKPT", JSON metadata {version, feature_dim, vocab_size,
/// hash_seed, pair_dim}, then nonzero W rows, pair weights, nonzero critic weights.
void save_checkpoint(const std::string& path, const PolicyParams& policy, const CriticParams& critic);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace tips
