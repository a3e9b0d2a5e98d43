#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "tips/teacher.hpp"

using namespace tips;

namespace {

PolicyParams random_params(Rng& rng, const HashedEncoder& enc, std::span<const TokenId> ctx_tokens) {
  PolicyParams p(enc.feature_dim(), enc.vocab_size(), 0, enc.hash_seed());
  // Touch every row the contexts in these tests can activate.
  std::vector<TokenId> ctx;
  for (TokenId t : ctx_tokens) {
    ctx.push_back(t);
    for (TokenId extra = 0; extra <= enc.vocab_size(); ++extra) {
      auto c2 = ctx;
      if (extra < enc.vocab_size()) c2.push_back(extra);
      for (std::uint32_t f : enc.encode(c2).features.index)
        for (TokenId v = 0; v < enc.vocab_size(); ++v)
          if (p.weight(f, v) == 0.0) p.set_weight(f, v, rng.uniform(-1.5, 1.5));
    }
  }
  return p;
}

}  // namespace

TEST_CASE("uniform teacher: Phi = log M - l log V, independent of context") {
  const HashedEncoder enc(9);
  const PolicyParams zero(enc.feature_dim(), 9, 0, enc.hash_seed());
  const AnswerSet answers{{1, 2}, {3, 4}, {5, 5}};
  const std::vector<TokenId> ctx{0, 7};
  const double want = std::log(3.0) - 2.0 * std::log(9.0);
  CHECK(answer_potential(zero, enc, ctx, answers) == doctest::Approx(want).epsilon(1e-14));
  const std::vector<TokenId> other{8, 8, 8, 1};
  CHECK(answer_potential(zero, enc, other, answers) == answer_potential(zero, enc, ctx, answers));
}

TEST_CASE("two answers on a 3-token vocabulary: Phi = log(p + q) by enumeration") {
  const HashedEncoder enc(3);
  Rng rng(1);
  const std::vector<TokenId> ctx{2, 0, 1};
  const PolicyParams p = random_params(rng, enc, ctx);
  const AnswerSet answers{{0, 1}, {2}};
  auto prob_of = [&](const std::vector<TokenId>& ans) {
    std::vector<TokenId> c = ctx;
    double lp = 0.0;
    for (TokenId t : ans) {
      lp += log_prob(p, enc.encode(c), t);
      c.push_back(t);
    }
    return std::exp(lp);
  };
  const double pa = prob_of(answers[0]), pb = prob_of(answers[1]);
  CHECK(answer_potential(p, enc, ctx, answers) == doctest::Approx(std::log(pa + pb)).epsilon(1e-13));
  ScoringConfig mean{Aggregation::MeanLogp, false};
  CHECK(answer_potential(p, enc, ctx, answers, mean) ==
        doctest::Approx(0.5 * (std::log(pa) + std::log(pb))).epsilon(1e-13));
  // Every sequence of length 2 over the vocabulary sums to one.
  double total = 0.0;
  for (TokenId a = 0; a < 3; ++a)
    for (TokenId b = 0; b < 3; ++b) total += prob_of({a, b});
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("single answer: both aggregations give its log-probability; duplicates are scored once") {
  const HashedEncoder enc(6);
  Rng rng(2);
  const std::vector<TokenId> ctx{1, 2};
  const PolicyParams p = random_params(rng, enc, ctx);
  const std::vector<TokenId> a{4, 5};
  const double lp = answer_log_prob(p, enc, ctx, a);
  CHECK(answer_potential(p, enc, ctx, {a}) == doctest::Approx(lp).epsilon(1e-14));
  CHECK(answer_potential(p, enc, ctx, {a}, {Aggregation::MeanLogp, false}) == doctest::Approx(lp).epsilon(1e-14));
  CHECK(answer_potential(p, enc, ctx, {a, a}) == answer_potential(p, enc, ctx, {a}));
  CHECK_THROWS_AS(answer_potential(p, enc, ctx, AnswerSet{}), InvalidInput);
}

TEST_CASE("tag-prefixed scoring conditions on the answer tag") {
  const HashedEncoder enc(6);
  Rng rng(3);
  const std::vector<TokenId> ctx{1, 2};
  const PolicyParams p = random_params(rng, enc, ctx);
  std::vector<TokenId> tagged = ctx;
  tagged.push_back(qa::tok::kAnswerOpen);
  const std::vector<TokenId> a{5};
  CHECK(answer_log_prob(p, enc, ctx, a, true) == answer_log_prob(p, enc, tagged, a, false));
}

TEST_CASE("logsumexp lies between the best answer and log M above it") {
  const HashedEncoder enc(7);
  Rng rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    const std::vector<TokenId> ctx{static_cast<TokenId>(rng.below(7))};
    const PolicyParams p = random_params(rng, enc, ctx);
    AnswerSet answers;
    for (std::size_t m = 0, n = 1 + rng.below(4); m < n; ++m) answers.push_back({static_cast<TokenId>(m), 6});
    double best = -INFINITY;
    for (const auto& a : answers) best = std::max(best, answer_log_prob(p, enc, ctx, a));
    const double phi = answer_potential(p, enc, ctx, answers);
    CHECK(phi >= best - 1e-12);
    CHECK(phi <= best + std::log(static_cast<double>(answers.size())) + 1e-12);
    CHECK(phi == answer_potential(p, enc, ctx, answers));
  }
}

TEST_CASE("refresh happens on positive multiples of the interval") {
  PolicyParams live(8, 4);
  const TeacherSnapshot t0 = make_teacher(live, 0, 0);
  CHECK(maybe_refresh(t0, live, 0, 200).params == t0.params);
  CHECK(maybe_refresh(t0, live, 199, 200).params == t0.params);
  const TeacherSnapshot t1 = maybe_refresh(t0, live, 200, 200);
  CHECK(t1.params != t0.params);
  CHECK(t1.version == 1);
  CHECK(t1.created_at_step == 200);
  CHECK(maybe_refresh(t0, live, 1999, 2000).params == t0.params);
}

TEST_CASE("snapshot fidelity and isolation") {
  const HashedEncoder enc(5);
  Rng rng(5);
  const std::vector<TokenId> ctx{3, 1};
  PolicyParams live = random_params(rng, enc, ctx);
  const TeacherSnapshot t = make_teacher(live);
  const AnswerSet answers{{2}, {4, 0}};
  const double phi = answer_potential(t, enc, ctx, answers);
  CHECK(phi == answer_potential(live, enc, ctx, answers));
  for (std::uint32_t f : live.allocated_rows()) live.set_weight(f, 2, 7.0);
  CHECK(answer_potential(t, enc, ctx, answers) == phi);
  CHECK(answer_potential(live, enc, ctx, answers) != phi);
}

TEST_CASE("potential trace: one value per boundary, constant under a uniform teacher") {
  const HashedEncoder enc(9);
  const TeacherSnapshot uniform = make_teacher(PolicyParams(enc.feature_dim(), 9, 0, enc.hash_seed()));
  Trajectory t;
  t.tokens = {2, 6, 3, 1, 7};
  t.logprobs_old.assign(5, 0.0);
  t.mask.assign(5, 1);
  t.rewards.assign(5, 0.0);
  t.boundaries = {0, 5};
  const std::vector<TokenId> prompt{0, 8};
  const AnswerSet answers{{1}};
  const PotentialTrace tr = potential_trace(uniform, enc, prompt, t, answers);
  CHECK(tr.phi.size() == 2);
  t.boundaries = {0, 2, 5};
  const PotentialTrace tr3 = potential_trace(uniform, enc, prompt, t, answers);
  REQUIRE(tr3.phi.size() == 3);
  CHECK(tr3.phi[0] == tr3.phi[1]);
  CHECK(tr3.phi[1] == tr3.phi[2]);

  Rng rng(6);
  std::vector<TokenId> all = prompt;
  all.insert(all.end(), t.tokens.begin(), t.tokens.end());
  const TeacherSnapshot real = make_teacher(random_params(rng, enc, all), 0, 3);
  const PotentialTrace tr4 = potential_trace(real, enc, prompt, t, answers);
  CHECK(tr4.teacher_version == 3);
  std::vector<TokenId> ctx = prompt;
  ctx.insert(ctx.end(), t.tokens.begin(), t.tokens.begin() + 2);
  CHECK(tr4.phi[1] == answer_potential(real, enc, ctx, answers));
}
