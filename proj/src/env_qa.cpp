#include "tips/env_qa.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "tips/metrics.hpp"

namespace tips::qa {

namespace {

constexpr std::array<std::string_view, 20> kRelationNames = {
    "birthplace", "capital",  "founder",  "leader",   "spouse",   "author",    "member",
    "owner",      "rival",    "mentor",   "ally",     "sibling",  "designer",  "neighbor",
    "successor",  "employer", "location", "parent",   "namesake", "partner"};

constexpr std::array<std::string_view, 6> kAliasSuffixes = {"prime", "major", "minor",
                                                            "north", "south", "city"};

constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.below(i)]);
  }
}

std::string make_name(Rng& rng) {
  const std::size_t syllables = 2 + rng.below(2);
  std::string out;
  for (std::size_t i = 0; i < syllables; ++i) {
    out.push_back(kConsonants[rng.below(kConsonants.size())]);
    out.push_back(kVowels[rng.below(kVowels.size())]);
  }
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string question_text(const std::string& subject, const std::vector<std::string>& rels) {
  std::string t = "What is the " + rels.back();
  for (std::size_t i = rels.size() - 1; i-- > 0;) t += " of the " + rels[i];
  return t + " of " + subject + "?";
}

}  // namespace

// ---------------------------------------------------------------- retrieval

std::vector<std::string> normalize_query(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isspace(u)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (!std::ispunct(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Retriever::Retriever(std::span<const Passage> corpus) {
  passage_tokens_.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto toks = normalize_query(corpus[i].text);
    std::sort(toks.begin(), toks.end());
    toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
    for (const auto& t : toks) index_[t].push_back(i);
    passage_tokens_.push_back(std::move(toks));
  }
}

std::vector<std::size_t> Retriever::retrieve(std::string_view query, std::size_t k) const {
  if (k < 1) throw InvalidInput("retrieve: k must be >= 1");
  auto q = normalize_query(query);
  if (q.empty()) return {};
  std::sort(q.begin(), q.end());
  q.erase(std::unique(q.begin(), q.end()), q.end());

  std::unordered_map<std::size_t, std::size_t> overlap;
  for (const auto& t : q) {
    auto it = index_.find(t);
    if (it == index_.end()) continue;
    for (std::size_t id : it->second) ++overlap[id];
  }
  std::vector<std::pair<std::size_t, std::size_t>> hits(overlap.begin(), overlap.end());
  std::sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });

  const std::size_t n = std::min(k, passage_tokens_.size());
  std::vector<std::size_t> out;
  out.reserve(n);
  for (std::size_t i = 0; i < hits.size() && out.size() < n; ++i) out.push_back(hits[i].first);
  // Zero-overlap passages fill the remainder in id order.
  for (std::size_t id = 0; out.size() < n; ++id) {
    if (!overlap.count(id)) out.push_back(id);
  }
  return out;
}

std::vector<std::size_t> retrieve(std::string_view query, std::span<const Passage> corpus,
                                  std::size_t k) {
  return Retriever(corpus).retrieve(query, k);
}

std::optional<std::string> parse_answer(std::string_view text) {
  constexpr std::string_view open = "<answer>", close = "</answer>";
  const auto c = text.rfind(close);
  if (c == std::string_view::npos) return std::nullopt;
  const auto o = text.substr(0, c).rfind(open);
  if (o == std::string_view::npos) return std::nullopt;
  return trim(text.substr(o + open.size(), c - o - open.size()));
}

double episode_outcome(std::string_view final_text, std::span<const std::string> answer_set) {
  return metrics::exact_match(parse_answer(final_text), answer_set);
}

// --------------------------------------------------------------- vocabulary

const std::array<std::string_view, tok::kNumControl>& Vocabulary::control_strings() {
  static const std::array<std::string_view, tok::kNumControl> s = {
      "<question>", "</question>",      "<tool_call>",       "<answer>",
      "</tool_call>", "<tool_response>", "</tool_response>", "</answer>"};
  return s;
}

const std::array<std::string_view, kNumTemplates>& Vocabulary::template_strings() {
  static const std::array<std::string_view, kNumTemplates> s = {
      "[q:subj+rel1]", "[q:subj+rel2]", "[q:obj+rel1]", "[q:obj+rel2]", "[q:subj]", "[q:obj]"};
  return s;
}

Vocabulary::Vocabulary(const Dataset& d) {
  auto add = [this](std::string s) {
    if (lookup_.count(s)) throw InvalidInput("vocabulary: duplicate token '" + s + "'");
    lookup_.emplace(s, static_cast<TokenId>(strings_.size()));
    strings_.push_back(std::move(s));
  };
  auto here = [this] { return static_cast<TokenId>(strings_.size()); };
  for (auto s : control_strings()) add(std::string(s));
  templates_.begin = here();
  for (auto s : template_strings()) add(std::string(s));
  templates_.end = here();
  entities_.begin = answers_.begin = here();
  for (const auto& e : d.entities) add(metrics::normalize_answer(e.name));
  entities_.end = here();
  for (TokenId t = 0; t < here(); ++t) canonical_.push_back(t);
  for (std::size_t i = 0; i < d.entities.size(); ++i) {
    for (const auto& a : d.entities[i].aliases) {
      add(metrics::normalize_answer(a));
      canonical_.push_back(entities_.begin + static_cast<TokenId>(i));
    }
  }
  answers_.end = here();
  relations_.begin = here();
  for (const auto& r : d.relations) add(r);
  relations_.end = here();
}

const std::string& Vocabulary::text(TokenId t) const {
  if (t >= strings_.size()) throw InvalidInput("vocabulary: token id out of range");
  return strings_[t];
}

std::optional<TokenId> Vocabulary::find(std::string_view s) const {
  auto it = lookup_.find(std::string(s));
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(std::string_view s) const {
  auto t = find(s);
  if (!t) throw InvalidInput("vocabulary: unknown token '" + std::string(s) + "'");
  return *t;
}

QueryTemplate Vocabulary::template_of(TokenId t) const {
  if (!is_template(t)) throw InvalidInput("vocabulary: not a query template token");
  return static_cast<QueryTemplate>(t - templates_.begin);
}

TokenId Vocabulary::template_token(QueryTemplate q) const {
  return templates_.begin + static_cast<TokenId>(q);
}

std::string Vocabulary::detokenize(std::span<const TokenId> tokens) const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += text(tokens[i]);
  }
  return out;
}

std::optional<std::vector<TokenId>> Vocabulary::tokenize_answer(std::string_view answer) const {
  const auto norm = metrics::normalize_answer(answer);
  if (auto t = find(norm); t && answers_.contains(*t)) return std::vector<TokenId>{*t};
  return std::nullopt;
}

// ------------------------------------------------------------------ episodes

ContextInfo parse_context(std::span<const TokenId> context, const Vocabulary& vocab) {
  ContextInfo info;
  std::size_t i = 0;
  if (!context.empty() && context[0] == tok::kQuestionOpen) {
    i = 1;
    if (i < context.size() && context[i] != tok::kQuestionClose) info.subject = context[i++];
    while (i < context.size() && context[i] != tok::kQuestionClose) info.relations.push_back(context[i++]);
    if (i < context.size()) ++i;
  }
  info.hops = static_cast<int>(info.relations.size());
  info.prompt_len = i;

  bool in_response = false;
  std::vector<PassageTokens> obs;
  std::vector<TokenId> triple;
  for (; i < context.size(); ++i) {
    const TokenId t = context[i];
    if (in_response) {
      if (t == tok::kToolResponseClose) {
        info.observations.push_back(std::move(obs));
        obs.clear();
        triple.clear();
        ++info.tool_calls;
        in_response = false;
        info.phase = Phase::TurnStart;
      } else {
        triple.push_back(t);
        if (triple.size() == 3) {
          obs.push_back({triple[0], triple[1], triple[2]});
          triple.clear();
        }
      }
      continue;
    }
    switch (info.phase) {
      case Phase::TurnStart:
        if (t == tok::kToolCallOpen) info.phase = Phase::InToolCall;
        else if (t == tok::kAnswerOpen) info.phase = Phase::InAnswer;
        else if (t == tok::kToolResponseOpen) in_response = true;
        break;
      case Phase::InToolCall:
        if (t == tok::kAnswerOpen) {
          info.phase = Phase::InAnswer;
        } else if (t == tok::kToolCallClose) {
          info.phase = Phase::TurnStart;
        } else if (vocab.is_template(t)) {
          info.templates_used.push_back(t);
        }
        break;
      case Phase::InAnswer:
        if (t == tok::kAnswerClose) info.phase = Phase::Done;
        break;
      case Phase::Done:
        // A scoring probe may reopen an answer after a finished one.
        if (t == tok::kAnswerOpen) info.phase = Phase::InAnswer;
        break;
    }
  }
  return info;
}

Environment::Environment(const Dataset& data, EnvConfig config)
    : data_(&data), config_(config), vocab_(data), retriever_(data.passages) {
  if (config_.top_k < 1) throw InvalidInput("environment: top_k must be >= 1");
  if (config_.token_cap < 1) throw InvalidInput("environment: token_cap must be >= 1");
  passage_tokens_.reserve(data.passages.size());
  for (const auto& p : data.passages) {
    const Fact& f = data.facts.at(p.fact);
    passage_tokens_.push_back({vocab_.id(metrics::normalize_answer(f.subject)), vocab_.id(f.relation),
                               vocab_.id(metrics::normalize_answer(f.object))});
  }
}

std::vector<TokenId> Environment::prompt_tokens(std::size_t question) const {
  const Question& q = data_->questions.at(question);
  std::vector<TokenId> out{tok::kQuestionOpen, vocab_.id(metrics::normalize_answer(q.subject))};
  for (const auto& r : q.relations) out.push_back(vocab_.id(r));
  out.push_back(tok::kQuestionClose);
  return out;
}

EpisodeState Environment::start(std::vector<TokenId> prompt) const {
  EpisodeState s;
  s.prompt_len = prompt.size();
  s.context = std::move(prompt);
  return s;
}

EpisodeState Environment::reset(std::size_t question) const {
  EpisodeState s = start(prompt_tokens(question));
  s.question = question;
  return s;
}

TokenRange Environment::legal_actions(Phase phase, std::size_t turn_count) const {
  switch (phase) {
    case Phase::TurnStart:
      return turn_count < config_.max_turns ? TokenRange{tok::kToolCallOpen, tok::kAnswerOpen + 1}
                                            : TokenRange{tok::kAnswerOpen, tok::kAnswerOpen + 1};
    case Phase::InToolCall:
      return vocab_.templates();
    case Phase::InAnswer:
      return vocab_.answers();
    case Phase::Done:
      break;
  }
  return {};
}

TokenRange Environment::legal_actions(const EpisodeState& state) const {
  return legal_actions(state.done ? Phase::Done : state.phase, state.turn_count);
}

std::string Environment::expand_query(const ContextInfo& info, TokenId query_token) const {
  if (!vocab_.is_template(query_token)) return vocab_.text(query_token);
  std::optional<TokenId> subj, rel1, rel2, obj;
  if (info.prompt_len > 0) subj = info.subject;
  if (!info.relations.empty()) rel1 = info.relations[0];
  if (info.relations.size() > 1) rel2 = info.relations[1];
  if (!info.observations.empty() && !info.observations.back().empty()) {
    obj = info.observations.back().front().object;
  }
  std::optional<TokenId> a, b;
  switch (vocab_.template_of(query_token)) {
    case QueryTemplate::SubjRel1: a = subj, b = rel1; break;
    case QueryTemplate::SubjRel2: a = subj, b = rel2; break;
    case QueryTemplate::ObjRel1: a = obj, b = rel1; break;
    case QueryTemplate::ObjRel2: a = obj, b = rel2; break;
    case QueryTemplate::Subj: a = subj; break;
    case QueryTemplate::Obj: a = obj; break;
  }
  std::string q;
  if (a) q = vocab_.text(*a);
  if (b) q += (q.empty() ? "" : " ") + vocab_.text(*b);
  return q;
}

std::optional<Observation> Environment::step(EpisodeState& state, TokenId emitted) const {
  if (state.done) throw InvalidState("step: episode is already done");
  if (emitted >= vocab_.size()) throw InvalidInput("step: token id out of range");

  auto response_len = [&] { return state.context.size() - state.prompt_len; };
  state.context.push_back(emitted);
  state.mask.push_back(1);

  std::optional<Observation> obs;
  std::vector<TokenId> reply;
  switch (state.phase) {
    case Phase::TurnStart:
      if (emitted == tok::kToolCallOpen) state.phase = Phase::InToolCall;
      else if (emitted == tok::kAnswerOpen) state.phase = Phase::InAnswer;
      break;
    case Phase::InToolCall: {
      reply.push_back(tok::kToolCallClose);
      if (state.turn_count < config_.max_turns) {
        Observation o;
        o.query = expand_query(parse_context(state.context, vocab_), emitted);
        o.passages = retriever_.retrieve(o.query, config_.top_k);
        o.tokens.push_back(tok::kToolResponseOpen);
        for (std::size_t id : o.passages) {
          o.tokens.insert(o.tokens.end(), passage_tokens_[id].begin(), passage_tokens_[id].end());
        }
        o.tokens.push_back(tok::kToolResponseClose);
        reply.insert(reply.end(), o.tokens.begin(), o.tokens.end());
        obs = std::move(o);
      }
      state.phase = Phase::TurnStart;
      break;
    }
    case Phase::InAnswer:
      reply.push_back(tok::kAnswerClose);
      state.phase = Phase::Done;
      state.done = true;
      break;
    case Phase::Done:
      throw InvalidState("step: episode is already done");
  }

  if (response_len() + reply.size() > config_.token_cap) {
    // The reply does not fit: the episode ends on the policy token.
    state.done = true;
    state.phase = Phase::Done;
    return std::nullopt;
  }
  state.context.insert(state.context.end(), reply.begin(), reply.end());
  state.mask.insert(state.mask.end(), reply.size(), 0);
  if (obs) ++state.turn_count;
  if (response_len() >= config_.token_cap) {
    state.done = true;
    state.phase = Phase::Done;
  }
  return obs;
}

std::vector<std::vector<TokenId>> Environment::answer_tokens(std::size_t question) const {
  std::vector<std::vector<TokenId>> out;
  for (const auto& a : data_->questions.at(question).answer_set) {
    auto t = vocab_.tokenize_answer(a);
    if (t && std::find(out.begin(), out.end(), *t) == out.end()) out.push_back(std::move(*t));
  }
  return out;
}

std::string Environment::response_text(const EpisodeState& state) const {
  return vocab_.detokenize(state.response());
}

bool two_call_solvable(const Environment& env, std::span<const TokenId> prompt,
                       std::size_t passage_a, std::size_t passage_b) {
  const auto tmpl = env.vocab().templates();
  for (TokenId t1 = tmpl.begin; t1 < tmpl.end; ++t1) {
    EpisodeState base = env.start(std::vector<TokenId>(prompt.begin(), prompt.end()));
    env.step(base, tok::kToolCallOpen);
    const auto o1 = env.step(base, t1);
    if (!o1) continue;
    for (TokenId t2 = tmpl.begin; t2 < tmpl.end; ++t2) {
      EpisodeState s = base;
      env.step(s, tok::kToolCallOpen);
      const auto o2 = env.step(s, t2);
      if (!o2) continue;
      auto seen = [&](std::size_t p) {
        return std::count(o1->passages.begin(), o1->passages.end(), p) > 0 ||
               std::count(o2->passages.begin(), o2->passages.end(), p) > 0;
      };
      if (seen(passage_a) && seen(passage_b)) return true;
    }
  }
  return false;
}

// ---------------------------------------------------------------- generation

Dataset generate_dataset(const DatasetParams& p) {
  if (p.n_entities < 2) throw InvalidInput("generate_dataset: need at least 2 entities");
  if (p.n_relations < 1 || p.n_questions < 1 || p.facts_per_entity < 1) {
    throw InvalidInput("generate_dataset: sizes must be >= 1");
  }
  if (!(p.hop_mix >= 0.0 && p.hop_mix <= 1.0)) throw InvalidInput("generate_dataset: hop_mix must be in [0, 1]");
  if (!(p.alias_fraction >= 0.0 && p.alias_fraction <= 1.0)) {
    throw InvalidInput("generate_dataset: alias_fraction must be in [0, 1]");
  }
  if (p.facts_per_entity > p.n_relations) {
    throw InvalidInput("generate_dataset: facts_per_entity exceeds n_relations");
  }
  if (p.top_k < 1) throw InvalidInput("generate_dataset: top_k must be >= 1");

  Rng rng(p.seed);
  Dataset d;
  d.params = p;

  for (std::size_t r = 0; r < p.n_relations; ++r) {
    d.relations.push_back(r < kRelationNames.size() ? std::string(kRelationNames[r])
                                                    : "relation" + std::to_string(r));
  }
  std::set<std::string> used(d.relations.begin(), d.relations.end());
  for (auto s : kAliasSuffixes) used.insert(std::string(s));
  std::size_t attempts = 0;
  while (d.entities.size() < p.n_entities) {
    if (++attempts > 100 * p.n_entities + 10000) throw InvalidInput("generate_dataset: too many entities");
    std::string name = make_name(rng);
    if (!used.insert(name).second) continue;
    d.entities.push_back({std::move(name), {}});
  }
  for (auto& e : d.entities) {
    if (rng.uniform() < p.alias_fraction) {
      e.aliases.push_back(e.name + " " + std::string(kAliasSuffixes[rng.below(kAliasSuffixes.size())]));
    }
  }

  std::vector<std::vector<std::size_t>> facts_of(p.n_entities);
  for (std::size_t s = 0; s < p.n_entities; ++s) {
    std::vector<std::size_t> rels(p.n_relations);
    for (std::size_t r = 0; r < p.n_relations; ++r) rels[r] = r;
    shuffle(rels, rng);
    rels.resize(p.facts_per_entity);
    std::sort(rels.begin(), rels.end());
    for (std::size_t r : rels) {
      std::size_t o = rng.below(p.n_entities - 1);
      if (o >= s) ++o;
      facts_of[s].push_back(d.facts.size());
      d.facts.push_back({d.entities[s].name, d.relations[r], d.entities[o].name});
    }
  }
  std::vector<std::size_t> fact_object(d.facts.size());
  {
    std::unordered_map<std::string, std::size_t> idx;
    for (std::size_t e = 0; e < d.entities.size(); ++e) idx[d.entities[e].name] = e;
    for (std::size_t f = 0; f < d.facts.size(); ++f) fact_object[f] = idx.at(d.facts[f].object);
  }

  std::vector<std::size_t> order(d.facts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(order, rng);
  std::vector<std::size_t> passage_of(d.facts.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Fact& f = d.facts[order[i]];
    d.passages.push_back({i, f.subject + " " + f.relation + " " + f.object, order[i]});
    passage_of[order[i]] = i;
  }

  Environment env(d, EnvConfig{p.top_k, 2, 1 << 20});
  const auto& vocab = env.vocab();
  auto entity_tok = [&](std::size_t e) { return vocab.id(d.entities[e].name); };
  auto answers_for = [&](std::size_t e) {
    std::vector<std::string> out{d.entities[e].name};
    out.insert(out.end(), d.entities[e].aliases.begin(), d.entities[e].aliases.end());
    return out;
  };
  auto rel_index = [&](const std::string& r) {
    return static_cast<std::size_t>(std::find(d.relations.begin(), d.relations.end(), r) - d.relations.begin());
  };
  auto prompt_for = [&](std::size_t s, std::initializer_list<std::size_t> rels) {
    std::vector<TokenId> t{tok::kQuestionOpen, entity_tok(s)};
    for (std::size_t r : rels) t.push_back(vocab.id(d.relations[r]));
    t.push_back(tok::kQuestionClose);
    return t;
  };
  // Passages surfaced by one template query issued from the bare prompt.
  auto first_call_passages = [&](const std::vector<TokenId>& prompt) {
    std::set<std::size_t> out;
    for (TokenId t = vocab.templates().begin; t < vocab.templates().end; ++t) {
      EpisodeState s = env.start(prompt);
      env.step(s, tok::kToolCallOpen);
      if (auto o = env.step(s, t)) out.insert(o->passages.begin(), o->passages.end());
    }
    return out;
  };

  const std::size_t n2 = static_cast<std::size_t>(std::llround(p.hop_mix * static_cast<double>(p.n_questions)));
  const std::size_t n1 = p.n_questions - n2;

  std::vector<Question> one_hop;
  if (n1 > 0) {
    std::vector<std::size_t> cand(d.facts.size());
    for (std::size_t i = 0; i < cand.size(); ++i) cand[i] = i;
    shuffle(cand, rng);
    for (std::size_t f : cand) {
      if (one_hop.size() == n1) break;
      const std::size_t s = f / p.facts_per_entity;
      const std::size_t r = rel_index(d.facts[f].relation);
      const auto prompt = prompt_for(s, {r});
      if (!first_call_passages(prompt).count(passage_of[f])) continue;
      Question q;
      q.hops = 1;
      q.subject = d.facts[f].subject;
      q.relations = {d.facts[f].relation};
      q.text = question_text(q.subject, q.relations);
      q.answer_set = answers_for(fact_object[f]);
      one_hop.push_back(std::move(q));
    }
    if (one_hop.size() < n1) {
      throw InvalidInput("generate_dataset: infeasible sizes, only " + std::to_string(one_hop.size()) +
                         " 1-hop questions available, " + std::to_string(n1) + " requested");
    }
  }

  std::vector<Question> two_hop;
  if (n2 > 0) {
    std::vector<std::pair<std::size_t, std::size_t>> chains;
    for (std::size_t f1 = 0; f1 < d.facts.size(); ++f1) {
      for (std::size_t f2 : facts_of[fact_object[f1]]) chains.emplace_back(f1, f2);
    }
    shuffle(chains, rng);
    for (const auto& [f1, f2] : chains) {
      if (two_hop.size() == n2) break;
      const std::size_t s = f1 / p.facts_per_entity;
      const std::size_t a = fact_object[f2];
      if (a == s) continue;
      const auto& sn = d.entities[s].name;
      const auto& an = d.entities[a].name;
      bool together = false;
      for (const auto& f : d.facts) {
        if ((f.subject == sn && f.object == an) || (f.subject == an && f.object == sn)) together = true;
      }
      if (together) continue;
      const auto prompt =
          prompt_for(s, {rel_index(d.facts[f1].relation), rel_index(d.facts[f2].relation)});
      bool surfaced = false;
      for (std::size_t id : first_call_passages(prompt)) {
        const Fact& f = d.facts[d.passages[id].fact];
        if (f.subject == an || f.object == an) surfaced = true;
      }
      if (surfaced) continue;
      if (!two_call_solvable(env, prompt, passage_of[f1], passage_of[f2])) continue;
      Question q;
      q.hops = 2;
      q.subject = sn;
      q.relations = {d.facts[f1].relation, d.facts[f2].relation};
      q.text = question_text(q.subject, q.relations);
      q.answer_set = answers_for(a);
      two_hop.push_back(std::move(q));
    }
    if (two_hop.size() < n2) {
      throw InvalidInput("generate_dataset: infeasible sizes, only " + std::to_string(two_hop.size()) +
                         " 2-hop chains available, " + std::to_string(n2) + " requested");
    }
  }

  d.questions = std::move(one_hop);
  d.questions.insert(d.questions.end(), two_hop.begin(), two_hop.end());
  shuffle(d.questions, rng);
  return d;
}

// ---------------------------------------------------------------------- json

nlohmann::json to_json(const Dataset& d) {
  using nlohmann::json;
  const auto& p = d.params;
  json j;
  j["meta"] = {{"seed", p.seed},
               {"n_entities", p.n_entities},
               {"n_relations", p.n_relations},
               {"n_questions", p.n_questions},
               {"facts_per_entity", p.facts_per_entity},
               {"hop_mix", p.hop_mix},
               {"alias_fraction", p.alias_fraction},
               {"top_k", p.top_k}};
  j["entities"] = json::array();
  for (const auto& e : d.entities) j["entities"].push_back({{"name", e.name}, {"aliases", e.aliases}});
  j["relations"] = d.relations;
  j["facts"] = json::array();
  for (const auto& f : d.facts) {
    j["facts"].push_back({{"subject", f.subject}, {"relation", f.relation}, {"object", f.object}});
  }
  j["passages"] = json::array();
  for (const auto& ps : d.passages) {
    j["passages"].push_back({{"id", ps.id}, {"text", ps.text}, {"fact", ps.fact}});
  }
  j["questions"] = json::array();
  for (const auto& q : d.questions) {
    j["questions"].push_back({{"text", q.text},
                              {"answer_set", q.answer_set},
                              {"hops", q.hops},
                              {"subject", q.subject},
                              {"relations", q.relations}});
  }
  return j;
}

Dataset dataset_from_json(const nlohmann::json& j) {
  Dataset d;
  try {
    const auto& m = j.at("meta");
    d.params.seed = m.at("seed").get<std::uint64_t>();
    d.params.n_entities = m.at("n_entities").get<std::size_t>();
    d.params.n_relations = m.at("n_relations").get<std::size_t>();
    d.params.n_questions = m.at("n_questions").get<std::size_t>();
    d.params.facts_per_entity = m.at("facts_per_entity").get<std::size_t>();
    d.params.hop_mix = m.at("hop_mix").get<double>();
    d.params.alias_fraction = m.value("alias_fraction", 0.2);
    d.params.top_k = m.value("top_k", std::size_t{3});
    for (const auto& e : j.at("entities")) {
      d.entities.push_back({e.at("name").get<std::string>(), e.value("aliases", std::vector<std::string>{})});
    }
    d.relations = j.at("relations").get<std::vector<std::string>>();
    for (const auto& f : j.at("facts")) {
      d.facts.push_back({f.at("subject").get<std::string>(), f.at("relation").get<std::string>(),
                         f.at("object").get<std::string>()});
    }
    for (const auto& ps : j.at("passages")) {
      d.passages.push_back({ps.at("id").get<std::size_t>(), ps.at("text").get<std::string>(),
                            ps.at("fact").get<std::size_t>()});
    }
    for (const auto& q : j.at("questions")) {
      Question x;
      x.text = q.at("text").get<std::string>();
      x.answer_set = q.at("answer_set").get<std::vector<std::string>>();
      x.hops = q.at("hops").get<int>();
      x.subject = q.at("subject").get<std::string>();
      x.relations = q.at("relations").get<std::vector<std::string>>();
      d.questions.push_back(std::move(x));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("dataset json: ") + e.what());
  }
  for (std::size_t i = 0; i < d.passages.size(); ++i) {
    if (d.passages[i].id != i || d.passages[i].fact >= d.facts.size()) {
      throw InvalidInput("dataset json: passage ids must be 0..n-1 and reference existing facts");
    }
  }
  for (const auto& q : d.questions) {
    if (q.answer_set.empty()) throw InvalidInput("dataset json: question with empty answer set");
    if (q.hops != static_cast<int>(q.relations.size())) {
      throw InvalidInput("dataset json: hops does not match relation count");
    }
  }
  return d;
}

void save_dataset(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write dataset to " + path);
  out << to_json(d).dump(1) << '\n';
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot read dataset from " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("dataset " + path + ": " + e.what());
  }
  return dataset_from_json(j);
}

}  // namespace tips::qa
