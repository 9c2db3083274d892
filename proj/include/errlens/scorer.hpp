#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "errlens/errors.hpp"
#include "errlens/text.hpp"

namespace errlens {

struct Token {
  std::string surface;
  // Backend-opaque; -1 when the backend has no integer ids.
  std::int64_t id = -1;

  friend bool operator==(const Token& a, const Token& b) { return a.surface == b.surface; }
};

inline std::vector<std::string> surfaces(std::span<const Token> tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.surface);
  return out;
}

// A tokenized target with its per-token conditional log-probabilities (nats).
// Immutable once built.
class ScoredSequence {
 public:
  ScoredSequence(std::vector<Token> tokens, std::vector<double> logprobs)
      : tokens_(std::move(tokens)), logprobs_(std::move(logprobs)) {
    if (tokens_.empty()) throw ArgumentError("scored sequence must contain at least one token");
    if (tokens_.size() != logprobs_.size())
      throw ArgumentError("scored sequence has " + std::to_string(tokens_.size()) + " tokens but " +
                          std::to_string(logprobs_.size()) + " logprobs");
    double sum = 0.0;
    for (double lp : logprobs_) {
      if (!std::isfinite(lp)) throw ArgumentError("non-finite logprob in scored sequence");
      sum += lp;
    }
    mean_ = sum / static_cast<double>(logprobs_.size());
  }

  const std::vector<Token>& tokens() const noexcept { return tokens_; }
  const std::vector<double>& logprobs() const noexcept { return logprobs_; }
  double mean() const noexcept { return mean_; }
  std::size_t size() const noexcept { return tokens_.size(); }

  friend bool operator==(const ScoredSequence& a, const ScoredSequence& b) {
    return a.tokens_ == b.tokens_ && a.logprobs_ == b.logprobs_;
  }

 private:
  std::vector<Token> tokens_;
  std::vector<double> logprobs_;
  double mean_ = 0.0;
};

enum class Direction { RefToHyp, HypToRef, SrcToHyp };

enum class Variant { Precision, Recall, F, Faithfulness };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::Precision: return "precision";
    case Variant::Recall: return "recall";
    case Variant::F: return "f";
    case Variant::Faithfulness: return "faithfulness";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "precision") return Variant::Precision;
  if (s == "recall") return Variant::Recall;
  if (s == "f") return Variant::F;
  if (s == "faithfulness") return Variant::Faithfulness;
  throw ArgumentError("unknown variant '" + std::string(s) + "'");
}

struct PromptSet {
  std::vector<std::string> encoder_suffixes;
  std::vector<std::string> decoder_prefixes;

  bool empty() const noexcept { return encoder_suffixes.empty() && decoder_prefixes.empty(); }
  std::size_t size() const noexcept { return encoder_suffixes.size() + decoder_prefixes.size(); }

  // One PromptSet per individual prompt, encoder suffixes first.
  std::vector<PromptSet> individual() const {
    std::vector<PromptSet> out;
    for (const auto& s : encoder_suffixes) out.push_back({{s}, {}});
    for (const auto& p : decoder_prefixes) out.push_back({{}, {p}});
    return out;
  }

  friend bool operator==(const PromptSet&, const PromptSet&) = default;
};

struct Candidate {
  Token token;
  double logprob = 0.0;

  friend bool operator==(const Candidate& a, const Candidate& b) {
    return a.token == b.token && a.logprob == b.logprob;
  }
};

struct BackendInfo {
  std::string model_id;
  std::string tokenizer_id;
  bool supports_topk = false;
  bool concurrent_safe = false;
  int max_batch = 1;
};

// `prompts` carries at most one prompt when it reaches a backend; prompt
// averaging happens in score_tokens.
struct ScoreRequest {
  std::string condition;
  std::string target;
  PromptSet prompts;
};

// A conditional sequence scorer. Implementations must be deterministic: the
// same request on the same instance yields bitwise-equal results.
class ScorerBackend {
 public:
  virtual ~ScorerBackend() = default;

  virtual BackendInfo info() const = 0;
  virtual ScoredSequence score(const ScoreRequest& request) = 0;

  virtual std::vector<ScoredSequence> score_batch(std::span<const ScoreRequest> requests) {
    std::vector<ScoredSequence> out;
    out.reserve(requests.size());
    for (const auto& r : requests) out.push_back(score(r));
    return out;
  }

  // The k most probable next tokens after `prefix`, sorted descending.
  virtual std::vector<Candidate> topk(std::string_view condition, std::span<const Token> prefix, int k) = 0;

  // Inverse of the backend's tokenizer.
  virtual std::string detokenize(std::span<const Token> tokens) const = 0;
};

// Serializes every call into a backend that is not safe for concurrent use.
class SerializedBackend final : public ScorerBackend {
 public:
  explicit SerializedBackend(ScorerBackend& inner) : inner_(inner) {}

  BackendInfo info() const override {
    std::lock_guard lock(mu_);
    auto i = inner_.info();
    i.concurrent_safe = true;
    return i;
  }
  ScoredSequence score(const ScoreRequest& r) override {
    std::lock_guard lock(mu_);
    return inner_.score(r);
  }
  std::vector<ScoredSequence> score_batch(std::span<const ScoreRequest> rs) override {
    std::lock_guard lock(mu_);
    return inner_.score_batch(rs);
  }
  std::vector<Candidate> topk(std::string_view c, std::span<const Token> p, int k) override {
    std::lock_guard lock(mu_);
    return inner_.topk(c, p, k);
  }
  std::string detokenize(std::span<const Token> t) const override {
    std::lock_guard lock(mu_);
    return inner_.detokenize(t);
  }

 private:
  ScorerBackend& inner_;
  mutable std::mutex mu_;
};

namespace detail {

// Per-token mean over the individually prompted scorings of one target.
inline ScoredSequence combine_prompted(std::span<const ScoredSequence> scored) {
  if (scored.empty()) throw ProtocolError("backend returned no scores");
  if (scored.size() == 1) return scored.front();
  const auto& tokens = scored.front().tokens();
  std::vector<double> sum(tokens.size(), 0.0);
  for (const auto& s : scored) {
    if (s.tokens() != tokens) throw ProtocolError("prompted scores are not token-aligned");
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += s.logprobs()[i];
  }
  const auto n = static_cast<double>(scored.size());
  for (auto& v : sum) v /= n;
  return ScoredSequence(tokens, std::move(sum));
}

inline void append_requests(std::vector<ScoreRequest>& out, std::string_view condition, std::string_view target,
                            const PromptSet& prompts) {
  if (text::trim(target).empty()) throw ArgumentError("target must be non-empty");
  if (prompts.empty()) {
    out.push_back({std::string(condition), std::string(target), {}});
    return;
  }
  for (auto& p : prompts.individual()) out.push_back({std::string(condition), std::string(target), std::move(p)});
}

inline std::vector<ScoredSequence> checked_batch(ScorerBackend& backend, std::span<const ScoreRequest> requests) {
  auto scored = backend.score_batch(requests);
  if (scored.size() != requests.size()) throw ProtocolError("backend returned wrong number of batch results");
  return scored;
}

}  // namespace detail

// Token-aligned logprobs of `target` given `condition`. With prompts, each
// token's logprob is the mean of its logprobs under every individual prompt.
inline ScoredSequence score_tokens(ScorerBackend& backend, std::string_view condition, std::string_view target,
                                   const PromptSet& prompts = {}) {
  std::vector<ScoreRequest> requests;
  detail::append_requests(requests, condition, target, prompts);
  if (requests.size() == 1) return backend.score(requests.front());
  auto scored = detail::checked_batch(backend, requests);
  return detail::combine_prompted(scored);
}

inline double vanilla_score(const ScoredSequence& seq) { return seq.mean(); }

// Source/references pair that conditions a hypothesis.
struct EvalInputs {
  std::optional<std::string> source;
  std::vector<std::string> references;
};

inline void check_variant_inputs(const EvalInputs& in, Variant variant) {
  if (variant == Variant::Faithfulness) {
    if (!in.source || text::trim(*in.source).empty())
      throw ArgumentError("faithfulness variant requires a source");
  } else if (in.references.empty()) {
    throw ArgumentError(std::string(to_string(variant)) + " variant requires at least one reference");
  }
}

// Scores of several hypotheses under `variant`, issued as one backend batch.
// Multiple references take the maximum of the per-reference scores.
inline std::vector<double> variant_scores(ScorerBackend& backend, const EvalInputs& in,
                                          std::span<const std::string> hypotheses, Variant variant,
                                          const PromptSet& prompts = {}) {
  check_variant_inputs(in, variant);
  const std::size_t per_target = prompts.empty() ? 1 : prompts.size();
  std::vector<ScoreRequest> requests;
  for (const auto& hyp : hypotheses) {
    if (text::trim(hyp).empty()) throw ArgumentError("hypothesis must be non-empty");
    if (variant == Variant::Faithfulness) {
      detail::append_requests(requests, *in.source, hyp, prompts);
      continue;
    }
    for (const auto& ref : in.references) {
      if (variant != Variant::Recall) detail::append_requests(requests, ref, hyp, prompts);
      if (variant != Variant::Precision) detail::append_requests(requests, hyp, ref, prompts);
    }
  }
  const auto scored = detail::checked_batch(backend, requests);

  std::size_t cursor = 0;
  auto next_mean = [&] {
    auto seq = detail::combine_prompted(std::span(scored).subspan(cursor, per_target));
    cursor += per_target;
    return vanilla_score(seq);
  };
  std::vector<double> out;
  out.reserve(hypotheses.size());
  for (std::size_t h = 0; h < hypotheses.size(); ++h) {
    if (variant == Variant::Faithfulness) {
      out.push_back(next_mean());
      continue;
    }
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < in.references.size(); ++r) {
      double s = 0.0;
      if (variant == Variant::F) {
        const double precision = next_mean();
        const double recall = next_mean();
        s = (precision + recall) / 2.0;
      } else {
        s = next_mean();
      }
      best = std::max(best, s);
    }
    out.push_back(best);
  }
  return out;
}

inline double variant_score(ScorerBackend& backend, const EvalInputs& in, std::string_view hypothesis, Variant variant,
                            const PromptSet& prompts = {}) {
  const std::string hyp(hypothesis);
  return variant_scores(backend, in, std::span(&hyp, 1), variant, prompts).front();
}

inline double variant_score(ScorerBackend& backend, const std::optional<std::string>& source,
                            const std::vector<std::string>& references, std::string_view hypothesis, Variant variant,
                            const PromptSet& prompts = {}) {
  return variant_score(backend, EvalInputs{source, references}, hypothesis, variant, prompts);
}

}  // namespace errlens
