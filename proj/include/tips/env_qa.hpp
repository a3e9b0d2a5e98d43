#pragma once

// Synthetic multi-turn retrieval QA. A corpus of (subject, relation, object)
// facts, one passage per fact, a keyword-overlap retriever, and a tag-based
// episode protocol over a closed vocabulary:
//
//   prompt   : <question> subject rel1 [rel2] </question>           (masked)
//   tool turn: <tool_call> [q:template] </tool_call>
//              <tool_response> s r o  s r o  s r o </tool_response>  (env part masked)
//   answer   : <answer> entity </answer>
//
// Policy-emitted tokens carry mask 1; everything the environment appends
// carries mask 0.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tips/common.hpp"

namespace tips::qa {

struct Fact {
  std::string subject;
  std::string relation;
  std::string object;
};

struct Passage {
  std::size_t id = 0;
  std::string text;  // "subject relation object"
  std::size_t fact = 0;
};

struct Entity {
  std::string name;
  std::vector<std::string> aliases;
};

struct Question {
  std::string text;
  std::vector<std::string> answer_set;
  int hops = 1;
  std::string subject;
  std::vector<std::string> relations;  // one per hop
};

struct DatasetParams {
  std::uint64_t seed = 7;
  std::size_t n_entities = 200;
  std::size_t n_relations = 8;
  std::size_t n_questions = 1000;
  std::size_t facts_per_entity = 3;
  double hop_mix = 0.5;  // fraction of 2-hop questions
  double alias_fraction = 0.2;
  std::size_t top_k = 3;  // retrieval depth assumed by the solvability check
};

struct Dataset {
  DatasetParams params;
  std::vector<Entity> entities;
  std::vector<std::string> relations;
  std::vector<Fact> facts;
  std::vector<Passage> passages;
  std::vector<Question> questions;
};

/// Deterministic for a fixed seed. Throws InvalidInput when the requested
/// number of 1-hop or 2-hop questions exceeds what the fact graph supports.
Dataset generate_dataset(const DatasetParams& params);

nlohmann::json to_json(const Dataset& d);
Dataset dataset_from_json(const nlohmann::json& j);
void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

// ---------------------------------------------------------------- retrieval

/// Lowercase, split on whitespace, drop punctuation characters.
std::vector<std::string> normalize_query(std::string_view text);

class Retriever {
public:
  Retriever() = default;
  explicit Retriever(std::span<const Passage> corpus);

  /// Passage ids ranked by shared normalized tokens (descending), ties by
  /// ascending id; min(k, |corpus|) results. Empty query -> empty list.
  std::vector<std::size_t> retrieve(std::string_view query, std::size_t k) const;
  std::size_t size() const { return passage_tokens_.size(); }

private:
  std::unordered_map<std::string, std::vector<std::size_t>> index_;
  std::vector<std::vector<std::string>> passage_tokens_;
};

/// Convenience wrapper that indexes `corpus` on the fly.
std::vector<std::size_t> retrieve(std::string_view query, std::span<const Passage> corpus, std::size_t k);

/// Content of the last well-formed <answer>...</answer> pair, trimmed.
std::optional<std::string> parse_answer(std::string_view text);

/// EM of the parsed answer; 0 when no answer can be parsed.
double episode_outcome(std::string_view final_text, std::span<const std::string> answer_set);

// --------------------------------------------------------------- vocabulary

namespace tok {
inline constexpr TokenId kQuestionOpen = 0;
inline constexpr TokenId kQuestionClose = 1;
inline constexpr TokenId kToolCallOpen = 2;
inline constexpr TokenId kAnswerOpen = 3;
inline constexpr TokenId kToolCallClose = 4;
inline constexpr TokenId kToolResponseOpen = 5;
inline constexpr TokenId kToolResponseClose = 6;
inline constexpr TokenId kAnswerClose = 7;
inline constexpr TokenId kNumControl = 8;
}  // namespace tok

enum class QueryTemplate : std::uint8_t { SubjRel1, SubjRel2, ObjRel1, ObjRel2, Subj, Obj };
inline constexpr std::size_t kNumTemplates = 6;

struct TokenRange {
  TokenId begin = 0;
  TokenId end = 0;
  std::size_t size() const { return end - begin; }
  bool contains(TokenId t) const { return t >= begin && t < end; }
  friend bool operator==(const TokenRange&, const TokenRange&) = default;
};

/// Closed vocabulary: control tags, query templates, entity names followed by
/// aliases (a contiguous answer range), then relation names.
class Vocabulary {
public:
  Vocabulary() = default;
  explicit Vocabulary(const Dataset& d);

  std::size_t size() const { return strings_.size(); }
  const std::string& text(TokenId t) const;
  std::optional<TokenId> find(std::string_view s) const;
  TokenId id(std::string_view s) const;  // throws InvalidInput if unknown

  TokenRange templates() const { return templates_; }
  TokenRange entities() const { return entities_; }
  TokenRange answers() const { return answers_; }  // entities + aliases
  TokenRange relations() const { return relations_; }

  bool is_template(TokenId t) const { return templates_.contains(t); }
  bool is_entity(TokenId t) const { return entities_.contains(t); }
  /// Entity token an alias refers to; identity for every other token.
  TokenId canonical(TokenId t) const { return t < canonical_.size() ? canonical_[t] : t; }
  QueryTemplate template_of(TokenId t) const;
  TokenId template_token(QueryTemplate q) const;

  std::string detokenize(std::span<const TokenId> tokens) const;
  /// Token sequence for an answer string (each entity name/alias is one token).
  std::optional<std::vector<TokenId>> tokenize_answer(std::string_view answer) const;

  static const std::array<std::string_view, tok::kNumControl>& control_strings();
  static const std::array<std::string_view, kNumTemplates>& template_strings();

private:
  std::vector<std::string> strings_;
  std::unordered_map<std::string, TokenId> lookup_;
  TokenRange templates_, entities_, answers_, relations_;
  std::vector<TokenId> canonical_;
};

// ------------------------------------------------------------------ episodes

enum class Phase { TurnStart, InToolCall, InAnswer, Done };

struct PassageTokens {
  TokenId subject, relation, object;
};

/// Structural read of a context (prompt + response so far). A pure function
/// of the tokens, shared by the environment and the feature extractor.
struct ContextInfo {
  TokenId subject = 0;
  std::vector<TokenId> relations;
  int hops = 0;
  std::size_t prompt_len = 0;
  std::vector<std::vector<PassageTokens>> observations;
  std::vector<TokenId> templates_used;
  std::size_t tool_calls = 0;  // completed calls that produced a response
  Phase phase = Phase::TurnStart;
};

ContextInfo parse_context(std::span<const TokenId> context, const Vocabulary& vocab);

struct EnvConfig {
  std::size_t top_k = 3;
  std::size_t max_turns = 4;
  std::size_t token_cap = 128;  // response tokens
};

struct EpisodeState {
  std::size_t question = 0;
  std::vector<TokenId> context;  // prompt followed by response tokens
  std::size_t prompt_len = 0;
  std::vector<std::uint8_t> mask;  // one entry per response token
  std::size_t turn_count = 0;
  bool done = false;
  Phase phase = Phase::TurnStart;

  std::span<const TokenId> response() const {
    return std::span<const TokenId>(context).subspan(prompt_len);
  }
};

struct Observation {
  std::string query;
  std::vector<std::size_t> passages;
  std::vector<TokenId> tokens;
};

class Environment {
public:
  Environment(const Dataset& data, EnvConfig config);

  const Dataset& dataset() const { return *data_; }
  const Vocabulary& vocab() const { return vocab_; }
  const Retriever& retriever() const { return retriever_; }
  const EnvConfig& config() const { return config_; }

  std::vector<TokenId> prompt_tokens(std::size_t question) const;
  EpisodeState reset(std::size_t question) const;
  EpisodeState start(std::vector<TokenId> prompt) const;

  /// Appends a policy token and, when it completes a tag, the environment's
  /// reply. Throws InvalidState on a finished episode.
  std::optional<Observation> step(EpisodeState& state, TokenId emitted) const;

  /// Tokens the policy may emit next (grammar-constrained decoding).
  TokenRange legal_actions(const EpisodeState& state) const;
  TokenRange legal_actions(Phase phase, std::size_t turn_count) const;

  std::string expand_query(const ContextInfo& info, TokenId query_token) const;

  /// Token sequences of the question's answer set (deduplicated after
  /// normalization; answers outside the vocabulary are skipped).
  std::vector<std::vector<TokenId>> answer_tokens(std::size_t question) const;

  std::string response_text(const EpisodeState& state) const;

private:
  const Dataset* data_;
  EnvConfig config_;
  Vocabulary vocab_;
  Retriever retriever_;
  std::vector<std::array<TokenId, 3>> passage_tokens_;
};

/// Brute-force check used at generation time: some pair of template queries,
/// issued from the given prompt, brings both passages into context.
bool two_call_solvable(const Environment& env, std::span<const TokenId> prompt,
                       std::size_t passage_a, std::size_t passage_b);

}  // namespace tips::qa
