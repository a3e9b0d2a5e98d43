#pragma once

// State encoders: map a context (token sequence) to the sparse features the
// policy and critic consume, the range of tokens the policy may emit, and
// candidate-specific pair features for answer tokens.

#include <cstdint>
#include <span>
#include <vector>

#include "tips/common.hpp"
#include "tips/env_qa.hpp"

namespace tips {

using qa::TokenRange;

struct SparseVector {
  std::vector<std::uint32_t> index;  // sorted, unique
  std::vector<double> value;

  std::size_t size() const { return index.size(); }
  double dot(std::span<const double> dense) const;
};

/// Feature shared by a candidate token and the context, e.g. "this entity is
/// the object of the top-ranked passage in the latest tool response".
struct PairFeature {
  TokenId token;
  std::uint32_t index;
  double value;
};

struct PolicyInput {
  SparseVector features;
  TokenRange legal;
  std::vector<PairFeature> pairs;  // sorted by token
};

struct HashConfig {
  std::size_t feature_dim = 1u << 15;
  std::size_t window = 16;
  std::uint64_t hash_seed = 0x7195a11ce5eedULL;
};

/// Hashes a list of (kind, a, b) keys into a unit-L2 sparse vector.
class FeatureHasher {
public:
  explicit FeatureHasher(HashConfig cfg);
  std::uint32_t slot(std::uint64_t kind, std::uint64_t a, std::uint64_t b = 0) const;
  /// Sorts, merges duplicate slots and L2-normalizes.
  static SparseVector finish(std::vector<std::uint32_t> slots);
  /// Bias, unigrams and bigrams over the last `window` tokens.
  void add_ngrams(std::span<const TokenId> context, std::vector<std::uint32_t>& slots) const;
  const HashConfig& config() const { return cfg_; }

private:
  HashConfig cfg_;
};

class StateEncoder {
public:
  virtual ~StateEncoder() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t feature_dim() const = 0;
  virtual std::size_t pair_dim() const { return 0; }
  virtual std::uint64_t hash_seed() const = 0;
  /// Maximum number of nonzero context features.
  virtual std::size_t feature_budget() const = 0;
  virtual PolicyInput encode(std::span<const TokenId> context) const = 0;
};

/// Unconstrained encoder: n-gram features only, every token legal, no pair
/// features. Used for generic sequences and unit tests.
class HashedEncoder final : public StateEncoder {
public:
  HashedEncoder(std::size_t vocab_size, HashConfig cfg = {});
  std::size_t vocab_size() const override { return vocab_size_; }
  std::size_t feature_dim() const override { return hasher_.config().feature_dim; }
  std::uint64_t hash_seed() const override { return hasher_.config().hash_seed; }
  std::size_t feature_budget() const override { return 2 * hasher_.config().window; }
  PolicyInput encode(std::span<const TokenId> context) const override;

private:
  std::size_t vocab_size_;
  FeatureHasher hasher_;
};

/// Pair-feature flags computed for each answer candidate; the index used by
/// the policy is flag + kQaPairFlags * (hops == 2).
enum QaPairFlag : std::uint32_t {
  kTopObjectLast,    // object of the rank-1 passage of the latest response
  kOtherObjectLast,  // object of a lower-ranked passage of the latest response
  kSubjectLast,      // subject of a passage of the latest response
  kObjectEarlier,    // object of a passage in an earlier response
  kInContext,        // appears anywhere in a tool response
  kQuestionSubject,  // the entity the question is about
  kRelationMatch,    // object of a passage whose relation is the question's last relation
  kBridge,           // object of a passage (question subject, first relation)
  kQaPairFlags
};

/// Encoder for the QA environment: grammar-constrained legal ranges, turn and
/// question-type indicators, n-grams, and answer pair features.
class QaEncoder final : public StateEncoder {
public:
  QaEncoder(const qa::Environment& env, HashConfig cfg = {});
  std::size_t vocab_size() const override { return env_->vocab().size(); }
  std::size_t feature_dim() const override { return hasher_.config().feature_dim; }
  std::size_t pair_dim() const override { return 2 * kQaPairFlags; }
  std::uint64_t hash_seed() const override { return hasher_.config().hash_seed; }
  std::size_t feature_budget() const override { return 2 * hasher_.config().window + 4; }
  PolicyInput encode(std::span<const TokenId> context) const override;

private:
  const qa::Environment* env_;
  FeatureHasher hasher_;
};

}  // namespace tips
