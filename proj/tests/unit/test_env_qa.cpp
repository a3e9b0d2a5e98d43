#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tips/env_qa.hpp"

using namespace tips;
using namespace tips::qa;

namespace {

DatasetParams small_params() {
  DatasetParams p;
  p.seed = 11;
  p.n_entities = 60;
  p.n_relations = 6;
  p.n_questions = 120;
  return p;
}

const Dataset& small_dataset() {
  static const Dataset d = generate_dataset(small_params());
  return d;
}

std::vector<Passage> corpus(std::initializer_list<const char*> texts) {
  std::vector<Passage> out;
  std::size_t id = 0;
  for (const char* t : texts) out.push_back({id++, t, 0});
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("retrieve ranks by overlap, breaks ties by id and clamps k") {
  const auto c = corpus({"alpha beta gamma", "alpha delta", "zeta eta", "alpha beta"});
  CHECK(retrieve("alpha beta", c, 2) == std::vector<std::size_t>{0, 3});
  CHECK(retrieve("Alpha, DELTA!", c, 1) == std::vector<std::size_t>{1});
  CHECK(retrieve("alpha", c, 10).size() == 4);
  CHECK(retrieve("alpha", c, 3) == std::vector<std::size_t>{0, 1, 3});
  CHECK(retrieve("", c, 3).empty());
  CHECK(retrieve("   ", c, 3).empty());
  const Retriever r(c);
  CHECK(r.retrieve("zeta gamma", 4) == r.retrieve("zeta gamma", 4));
}

TEST_CASE("normalize_query lowercases and drops punctuation") {
  CHECK(normalize_query("  Foo, BAR!  baz ") == std::vector<std::string>{"foo", "bar", "baz"});
}

TEST_CASE("parse_answer takes the last well-formed pair") {
  CHECK(parse_answer("<answer>Watchmen</answer>") == std::optional<std::string>("Watchmen"));
  CHECK(parse_answer("x <answer>a</answer> y <answer> b </answer>") == std::optional<std::string>("b"));
  CHECK(!parse_answer("no tags here"));
  CHECK(!parse_answer("<answer>unclosed"));
  const std::vector<std::string> gold{"watchmen"};
  CHECK(episode_outcome("<answer> Watchmen </answer>", gold) == 1.0);
  CHECK(episode_outcome("Watchmen", gold) == 0.0);
  CHECK(episode_outcome("<answer>Rorschach</answer>", gold) == 0.0);
}

TEST_CASE("dataset generation is deterministic and round-trips through JSON") {
  const Dataset a = generate_dataset(small_params());
  const Dataset b = generate_dataset(small_params());
  CHECK(to_json(a).dump() == to_json(b).dump());
  const std::string p1 = "/tmp/tips_test_ds1.json", p2 = "/tmp/tips_test_ds2.json";
  save_dataset(a, p1);
  save_dataset(load_dataset(p1), p2);
  CHECK(slurp(p1) == slurp(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
  DatasetParams other = small_params();
  other.seed = 12;
  CHECK(to_json(generate_dataset(other)).dump() != to_json(a).dump());
}

TEST_CASE("hop mix controls the question types") {
  DatasetParams p = small_params();
  p.hop_mix = 0.0;
  for (const auto& q : generate_dataset(p).questions) CHECK(q.hops == 1);
  const auto& d = small_dataset();
  const auto two = std::count_if(d.questions.begin(), d.questions.end(), [](const Question& q) { return q.hops == 2; });
  CHECK(two == 60);
}

TEST_CASE("infeasible sizes are rejected") {
  DatasetParams p = small_params();
  p.n_questions = 100000;
  CHECK_THROWS_AS(generate_dataset(p), InvalidInput);
  p = small_params();
  p.hop_mix = 1.5;
  CHECK_THROWS_AS(generate_dataset(p), InvalidInput);
}

TEST_CASE("fact invariants and answer derivability") {
  const auto& d = small_dataset();
  std::set<std::pair<std::string, std::string>> keys;
  for (const auto& f : d.facts) {
    CHECK(!f.subject.empty());
    CHECK(!f.relation.empty());
    CHECK(!f.object.empty());
    CHECK(keys.insert({f.subject, f.relation}).second);
  }
  auto lookup = [&](const std::string& s, const std::string& r) -> std::string {
    for (const auto& f : d.facts)
      if (f.subject == s && f.relation == r) return f.object;
    return {};
  };
  for (const auto& q : d.questions) {
    REQUIRE(!q.answer_set.empty());
    REQUIRE(q.relations.size() == static_cast<std::size_t>(q.hops));
    std::string cur = q.subject;
    for (const auto& r : q.relations) cur = lookup(cur, r);
    CHECK(std::find(q.answer_set.begin(), q.answer_set.end(), cur) != q.answer_set.end());
  }
}

TEST_CASE("2-hop answers never share a passage with the question's subject") {
  const auto& d = small_dataset();
  for (const auto& q : d.questions) {
    if (q.hops != 2) continue;
    for (const auto& p : d.passages) {
      const auto toks = normalize_query(p.text);
      if (std::find(toks.begin(), toks.end(), normalize_query(q.subject).front()) == toks.end()) continue;
      for (const auto& a : q.answer_set) CHECK(p.text.find(a) == std::string::npos);
    }
  }
}

TEST_CASE("every 2-hop question is solvable with two calls") {
  const auto& d = small_dataset();
  const Environment env(d, {});
  for (std::size_t i = 0; i < d.questions.size(); ++i) {
    const auto& q = d.questions[i];
    if (q.hops != 2) continue;
    std::size_t first = 0, second = 0;
    std::string bridge;
    for (const auto& f : d.facts)
      if (f.subject == q.subject && f.relation == q.relations[0]) bridge = f.object;
    for (const auto& p : d.passages) {
      const auto& f = d.facts[p.fact];
      if (f.subject == q.subject && f.relation == q.relations[0]) first = p.id;
      if (f.subject == bridge && f.relation == q.relations[1]) second = p.id;
    }
    CHECK(two_call_solvable(env, env.prompt_tokens(i), first, second));
  }
}

TEST_CASE("episode protocol: masks, turn cap and answer termination") {
  const auto& d = small_dataset();
  EnvConfig cfg;
  cfg.max_turns = 4;
  const Environment env(d, cfg);
  EpisodeState st = env.reset(0);
  CHECK(st.phase == Phase::TurnStart);
  const TokenId tmpl = env.vocab().template_token(QueryTemplate::SubjRel1);
  for (std::size_t turn = 0; turn < 4; ++turn) {
    CHECK(env.legal_actions(st).contains(tok::kToolCallOpen));
    CHECK(!env.step(st, tok::kToolCallOpen));
    CHECK(env.legal_actions(st) == env.vocab().templates());
    const std::size_t before = st.context.size();
    const auto obs = env.step(st, tmpl);
    REQUIRE(obs.has_value());
    CHECK(st.turn_count == turn + 1);
    CHECK(obs->passages.size() == 3);
    // policy token, then the environment's reply, all masked
    CHECK(st.mask[before - st.prompt_len] == 1);
    for (std::size_t i = before + 1; i < st.context.size(); ++i) CHECK(st.mask[i - st.prompt_len] == 0);
    CHECK(st.context.back() == tok::kToolResponseClose);
  }
  CHECK(env.legal_actions(st) == TokenRange{tok::kAnswerOpen, tok::kAnswerOpen + 1});
  // a call at the cap is not executed
  EpisodeState capped = st;
  env.step(capped, tok::kToolCallOpen);
  CHECK(!env.step(capped, tmpl));
  CHECK(capped.turn_count == 4);
  CHECK(capped.context.back() == tok::kToolCallClose);

  env.step(st, tok::kAnswerOpen);
  CHECK(env.legal_actions(st) == env.vocab().answers());
  const auto gold = env.answer_tokens(0);
  REQUIRE(!gold.empty());
  CHECK(!env.step(st, gold[0][0]));
  CHECK(st.done);
  CHECK(st.context.back() == tok::kAnswerClose);
  CHECK(episode_outcome(env.response_text(st), d.questions[0].answer_set) == 1.0);
  CHECK_THROWS_AS(env.step(st, tok::kAnswerOpen), InvalidState);
}

TEST_CASE("token cap bounds the episode length") {
  const auto& d = small_dataset();
  EnvConfig cfg;
  cfg.token_cap = 20;
  const Environment env(d, cfg);
  Rng rng(3);
  for (int rep = 0; rep < 200; ++rep) {
    EpisodeState st = env.reset(rng.below(d.questions.size()));
    while (!st.done) {
      const TokenRange legal = env.legal_actions(st);
      env.step(st, legal.begin + static_cast<TokenId>(rng.below(legal.size())));
    }
    CHECK(st.response().size() <= 20);
    CHECK(st.turn_count <= cfg.max_turns);
    CHECK(st.mask.size() == st.response().size());
  }
}

TEST_CASE("vocabulary maps aliases to their entity") {
  const auto& d = small_dataset();
  const Vocabulary v(d);
  std::size_t aliases = 0;
  for (const auto& e : d.entities) {
    const TokenId id = v.id(e.name);
    CHECK(v.is_entity(id));
    for (const auto& a : e.aliases) {
      ++aliases;
      CHECK(v.canonical(v.id(a)) == id);
      CHECK(v.answers().contains(v.id(a)));
    }
  }
  CHECK(aliases > 0);
  CHECK_THROWS_AS(v.id("no such token"), InvalidInput);
  CHECK(v.text(tok::kAnswerOpen) == "<answer>");
}
