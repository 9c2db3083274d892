#pragma once

// JSON bodies of the scoring wire protocol (HTTP/1.1, stateless):
//   POST /v1/score        ScoreRequest            -> ScoreResponse
//   POST /v1/score_batch  {"items": [ScoreRequest]} -> {"results": [ScoreResponse]}
//   POST /v1/topk         TopkRequest             -> TopkResponse
//   GET  /v1/info                                  -> ServerInfo
// Failures carry {"error": {"code": str, "message": str}}.

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "errlens/errors.hpp"
#include "errlens/scorer.hpp"

namespace errlens::protocol {

inline constexpr const char* kScorePath = "/v1/score";
inline constexpr const char* kScoreBatchPath = "/v1/score_batch";
inline constexpr const char* kTopkPath = "/v1/topk";
inline constexpr const char* kInfoPath = "/v1/info";
inline constexpr int kDefaultMaxBatch = 4;

struct ScoreResponse {
  std::vector<std::string> tokens;
  std::vector<double> logprobs;
  std::string model_id;

  ScoredSequence to_sequence() const {
    std::vector<Token> toks;
    toks.reserve(tokens.size());
    for (const auto& t : tokens) toks.push_back(Token{t});
    return ScoredSequence(std::move(toks), logprobs);
  }
  friend bool operator==(const ScoreResponse&, const ScoreResponse&) = default;
};

struct TopkRequest {
  std::string condition;
  std::vector<std::string> prefix_tokens;
  int k = 1;
};

struct TopkResponse {
  std::vector<Candidate> candidates;
  std::string model_id;
};

struct ServerInfo {
  std::string model_id;
  int max_batch = kDefaultMaxBatch;
  bool supports_topk = false;
};

using json = nlohmann::json;

inline json encode(const PromptSet& p) {
  return {{"encoder_suffixes", p.encoder_suffixes}, {"decoder_prefixes", p.decoder_prefixes}};
}

inline json encode(const ScoreRequest& r) {
  return {{"condition", r.condition}, {"target", r.target}, {"prompts", encode(r.prompts)}};
}

inline json encode(const ScoreResponse& r) {
  return {{"tokens", r.tokens}, {"logprobs", r.logprobs}, {"model_id", r.model_id}};
}

inline json encode(const TopkRequest& r) {
  return {{"condition", r.condition}, {"prefix_tokens", r.prefix_tokens}, {"k", r.k}};
}

inline json encode(const TopkResponse& r) {
  json cands = json::array();
  for (const auto& c : r.candidates) cands.push_back({{"token", c.token.surface}, {"logprob", c.logprob}});
  return {{"candidates", std::move(cands)}, {"model_id", r.model_id}};
}

inline json encode(const ServerInfo& i) {
  return {{"model_id", i.model_id}, {"max_batch", i.max_batch}, {"supports_topk", i.supports_topk}};
}

inline json error_body(const std::string& code, const std::string& message) {
  return {{"error", {{"code", code}, {"message", message}}}};
}

namespace detail {

[[noreturn]] inline void violation(const std::string& what) { throw ProtocolError("protocol violation: " + what); }

inline const json& field(const json& j, const char* name) {
  if (!j.is_object()) violation("expected a JSON object");
  auto it = j.find(name);
  if (it == j.end()) violation(std::string("missing field '") + name + "'");
  return *it;
}

inline std::string string_field(const json& j, const char* name) {
  const auto& f = field(j, name);
  if (!f.is_string()) violation(std::string("field '") + name + "' must be a string");
  return f.get<std::string>();
}

inline std::vector<std::string> string_array(const json& j, const char* name) {
  const auto& f = field(j, name);
  if (!f.is_array()) violation(std::string("field '") + name + "' must be an array");
  std::vector<std::string> out;
  for (const auto& e : f) {
    if (!e.is_string()) violation(std::string("field '") + name + "' must hold strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

inline double finite_number(const json& j, const char* what) {
  if (!j.is_number()) violation(std::string(what) + " must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) violation(std::string(what) + " must be finite");
  return v;
}

}  // namespace detail

inline ScoreRequest decode_score_request(const json& j) {
  ScoreRequest r;
  r.condition = detail::string_field(j, "condition");
  r.target = detail::string_field(j, "target");
  if (j.contains("prompts")) {
    const auto& p = j.at("prompts");
    if (p.contains("encoder_suffixes")) r.prompts.encoder_suffixes = detail::string_array(p, "encoder_suffixes");
    if (p.contains("decoder_prefixes")) r.prompts.decoder_prefixes = detail::string_array(p, "decoder_prefixes");
  }
  return r;
}

inline ScoreResponse decode_score_response(const json& j) {
  ScoreResponse r;
  r.tokens = detail::string_array(j, "tokens");
  const auto& lps = detail::field(j, "logprobs");
  if (!lps.is_array()) detail::violation("field 'logprobs' must be an array");
  for (const auto& v : lps) r.logprobs.push_back(detail::finite_number(v, "logprob"));
  r.model_id = detail::string_field(j, "model_id");
  if (r.tokens.size() != r.logprobs.size())
    detail::violation("tokens and logprobs differ in length (" + std::to_string(r.tokens.size()) + " vs " +
                      std::to_string(r.logprobs.size()) + ")");
  if (r.tokens.empty()) detail::violation("empty token list");
  return r;
}

inline std::vector<ScoreResponse> decode_batch_response(const json& j, std::size_t expected) {
  const auto& results = detail::field(j, "results");
  if (!results.is_array()) detail::violation("field 'results' must be an array");
  if (results.size() != expected)
    detail::violation("batch returned " + std::to_string(results.size()) + " results for " +
                      std::to_string(expected) + " items");
  std::vector<ScoreResponse> out;
  for (const auto& r : results) out.push_back(decode_score_response(r));
  return out;
}

inline TopkRequest decode_topk_request(const json& j) {
  TopkRequest r;
  r.condition = detail::string_field(j, "condition");
  r.prefix_tokens = detail::string_array(j, "prefix_tokens");
  const auto& k = detail::field(j, "k");
  if (!k.is_number_integer()) detail::violation("field 'k' must be an integer");
  r.k = k.get<int>();
  return r;
}

// Candidates must be sorted descending and no longer than k.
inline TopkResponse decode_topk_response(const json& j, int k) {
  TopkResponse r;
  const auto& cands = detail::field(j, "candidates");
  if (!cands.is_array()) detail::violation("field 'candidates' must be an array");
  for (const auto& c : cands)
    r.candidates.push_back({Token{detail::string_field(c, "token")}, detail::finite_number(detail::field(c, "logprob"), "logprob")});
  r.model_id = detail::string_field(j, "model_id");
  if (r.candidates.size() > static_cast<std::size_t>(k))
    detail::violation("topk returned " + std::to_string(r.candidates.size()) + " candidates for k=" + std::to_string(k));
  for (std::size_t i = 1; i < r.candidates.size(); ++i)
    if (r.candidates[i].logprob > r.candidates[i - 1].logprob) detail::violation("topk candidates are not sorted descending");
  return r;
}

inline ServerInfo decode_info(const json& j) {
  ServerInfo i;
  i.model_id = detail::string_field(j, "model_id");
  const auto& mb = detail::field(j, "max_batch");
  if (!mb.is_number_integer() || mb.get<long long>() < 1) detail::violation("field 'max_batch' must be an integer >= 1");
  i.max_batch = mb.get<int>();
  const auto& st = detail::field(j, "supports_topk");
  if (!st.is_boolean()) detail::violation("field 'supports_topk' must be a boolean");
  i.supports_topk = st.get<bool>();
  return i;
}

// True when `j` is a well-formed error envelope.
inline bool is_error_envelope(const json& j) {
  if (!j.is_object() || !j.contains("error")) return false;
  const auto& e = j.at("error");
  return e.is_object() && e.contains("code") && e.at("code").is_string() && e.contains("message") &&
         e.at("message").is_string();
}

}  // namespace errlens::protocol
