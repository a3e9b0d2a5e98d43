#include "tips/features.hpp"

#include <algorithm>
#include <cmath>

namespace tips {

namespace {

enum Kind : std::uint64_t { kBias = 1, kUnigram, kBigram, kTurn, kEvidence, kLastTemplate };

}  // namespace

double SparseVector::dot(std::span<const double> dense) const {
  double s = 0.0;
  for (std::size_t i = 0; i < index.size(); ++i) s += value[i] * dense[index[i]];
  return s;
}

FeatureHasher::FeatureHasher(HashConfig cfg) : cfg_(cfg) {
  if (cfg_.feature_dim < 1) throw InvalidInput("feature hasher: feature_dim must be >= 1");
  if (cfg_.feature_dim > (std::size_t{1} << 31)) throw InvalidInput("feature hasher: feature_dim too large");
}

std::uint32_t FeatureHasher::slot(std::uint64_t kind, std::uint64_t a, std::uint64_t b) const {
  std::uint64_t h = splitmix64(cfg_.hash_seed ^ (kind << 56));
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ (b * 0x9e3779b97f4a7c15ULL));
  return static_cast<std::uint32_t>(h % cfg_.feature_dim);
}

SparseVector FeatureHasher::finish(std::vector<std::uint32_t> slots) {
  std::sort(slots.begin(), slots.end());
  SparseVector v;
  for (std::size_t i = 0; i < slots.size();) {
    std::size_t j = i;
    while (j < slots.size() && slots[j] == slots[i]) ++j;
    v.index.push_back(slots[i]);
    v.value.push_back(static_cast<double>(j - i));
    i = j;
  }
  double norm = 0.0;
  for (double x : v.value) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& x : v.value) x /= norm;
  }
  return v;
}

void FeatureHasher::add_ngrams(std::span<const TokenId> context, std::vector<std::uint32_t>& slots) const {
  slots.push_back(slot(kBias, 0));
  const std::size_t w = std::min(cfg_.window, context.size());
  const auto tail = context.subspan(context.size() - w);
  for (std::size_t i = 0; i < tail.size(); ++i) {
    slots.push_back(slot(kUnigram, tail[i]));
    if (i > 0) slots.push_back(slot(kBigram, tail[i - 1], tail[i]));
  }
}

HashedEncoder::HashedEncoder(std::size_t vocab_size, HashConfig cfg)
    : vocab_size_(vocab_size), hasher_(cfg) {
  if (vocab_size < 1) throw InvalidInput("encoder: vocab_size must be >= 1");
}

PolicyInput HashedEncoder::encode(std::span<const TokenId> context) const {
  std::vector<std::uint32_t> slots;
  hasher_.add_ngrams(context, slots);
  PolicyInput in;
  in.features = FeatureHasher::finish(std::move(slots));
  in.legal = {0, static_cast<TokenId>(vocab_size_)};
  return in;
}

QaEncoder::QaEncoder(const qa::Environment& env, HashConfig cfg) : env_(&env), hasher_(cfg) {}

PolicyInput QaEncoder::encode(std::span<const TokenId> context) const {
  const auto& vocab = env_->vocab();
  const qa::ContextInfo info = qa::parse_context(context, vocab);
  const std::size_t turns = std::min(info.tool_calls, env_->config().max_turns);
  const auto phase = static_cast<std::uint64_t>(info.phase);
  const TokenId last_rel = info.relations.empty() ? 0 : info.relations.back();

  bool evidence = false;
  if (!info.observations.empty()) {
    for (const auto& p : info.observations.back()) evidence |= info.hops > 0 && p.relation == last_rel;
  }
  const TokenId last_template = info.templates_used.empty() ? 0 : info.templates_used.back();

  std::vector<std::uint32_t> slots;
  hasher_.add_ngrams(context, slots);
  const std::uint64_t state_key = phase * 64 + turns * 4 + static_cast<std::uint64_t>(info.hops);
  slots.push_back(hasher_.slot(kTurn, state_key));
  slots.push_back(hasher_.slot(kEvidence, state_key, evidence ? 1 : 2));
  slots.push_back(hasher_.slot(kLastTemplate, state_key, last_template));

  PolicyInput in;
  in.features = FeatureHasher::finish(std::move(slots));
  in.legal = env_->legal_actions(info.phase, turns);

  if (info.phase == qa::Phase::InAnswer && !info.observations.empty()) {
    const TokenRange ents = vocab.entities();
    std::vector<std::uint32_t> flags(ents.size(), 0);
    auto mark = [&](TokenId e, QaPairFlag f) {
      if (ents.contains(e)) flags[e - ents.begin] |= 1u << f;
    };
    for (std::size_t o = 0; o < info.observations.size(); ++o) {
      const bool latest = o + 1 == info.observations.size();
      const auto& obs = info.observations[o];
      for (std::size_t r = 0; r < obs.size(); ++r) {
        const auto& p = obs[r];
        if (latest) {
          mark(p.object, r == 0 ? kTopObjectLast : kOtherObjectLast);
          mark(p.subject, kSubjectLast);
        } else {
          mark(p.object, kObjectEarlier);
        }
        mark(p.object, kInContext);
        mark(p.subject, kInContext);
        if (info.hops > 0 && p.relation == last_rel) mark(p.object, kRelationMatch);
        if (!info.relations.empty() && p.subject == info.subject && p.relation == info.relations.front()) {
          mark(p.object, kBridge);
        }
      }
    }
    if (info.prompt_len > 0) mark(info.subject, kQuestionSubject);

    const std::uint32_t offset = info.hops == 2 ? std::uint32_t{kQaPairFlags} : 0u;
    for (TokenId t = in.legal.begin; t < in.legal.end; ++t) {
      const TokenId e = vocab.canonical(t);
      if (!ents.contains(e)) continue;
      const std::uint32_t f = flags[e - ents.begin];
      for (std::uint32_t g = 0; g < kQaPairFlags; ++g) {
        if (f & (1u << g)) in.pairs.push_back({t, offset + g, 1.0});
      }
    }
  }
  return in;
}

}  // namespace tips
