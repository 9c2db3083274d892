#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "errlens/config.hpp"
#include "errlens/errors.hpp"
#include "errlens/scorer.hpp"
#include "errlens/text.hpp"

namespace errlens {

enum class EditKind { InsertBefore, Delete, Substitute };

inline std::string_view to_string(EditKind k) {
  switch (k) {
    case EditKind::InsertBefore: return "insert_before";
    case EditKind::Delete: return "delete";
    case EditKind::Substitute: return "substitute";
  }
  return "?";
}

inline EditKind parse_edit_kind(std::string_view s) {
  if (s == "insert_before") return EditKind::InsertBefore;
  if (s == "delete") return EditKind::Delete;
  if (s == "substitute") return EditKind::Substitute;
  throw ParseError("unknown edit kind '" + std::string(s) + "'", 0);
}

// `candidate` is set for InsertBefore and Substitute, empty for Delete.
struct Edit {
  std::size_t position = 0;
  EditKind kind = EditKind::Delete;
  std::optional<Token> candidate;

  static Edit remove(std::size_t pos) { return {pos, EditKind::Delete, std::nullopt}; }
  static Edit substitute(std::size_t pos, Token t) { return {pos, EditKind::Substitute, std::move(t)}; }
  static Edit insert_before(std::size_t pos, Token t) { return {pos, EditKind::InsertBefore, std::move(t)}; }

  friend bool operator==(const Edit&, const Edit&) = default;
};

inline std::vector<Token> apply_edit(std::span<const Token> tokens, const Edit& edit) {
  if (edit.position >= tokens.size()) throw ArgumentError("edit position out of range");
  std::vector<Token> out(tokens.begin(), tokens.end());
  const auto at = out.begin() + static_cast<std::ptrdiff_t>(edit.position);
  switch (edit.kind) {
    case EditKind::Delete:
      if (out.size() == 1) throw ArgumentError("cannot delete the only token");
      out.erase(at);
      break;
    case EditKind::Substitute:
      if (!edit.candidate) throw ArgumentError("substitution without a candidate");
      *at = *edit.candidate;
      break;
    case EditKind::InsertBefore:
      if (!edit.candidate) throw ArgumentError("insertion without a candidate");
      out.insert(at, *edit.candidate);
      break;
  }
  return out;
}

struct NonTranslationVerdict {
  bool flagged = false;
  double overlap_ratio = 0.0;
  double low_prob_fraction = 0.0;

  friend bool operator==(const NonTranslationVerdict&, const NonTranslationVerdict&) = default;
};

// Flags a hypothesis only when both the surface overlap with the reference
// is low and most tokens fall below the sentence mean logprob.
inline NonTranslationVerdict non_translation_test(std::span<const Token> hyp_tokens, std::span<const Token> ref_tokens,
                                                  const ScoredSequence& scored, const EvalConfig& cfg) {
  if (hyp_tokens.empty() || ref_tokens.empty()) throw ArgumentError("non-translation test needs non-empty inputs");
  std::map<std::string, long, std::less<>> ref_counts;
  for (const auto& t : ref_tokens) ++ref_counts[t.surface];
  std::size_t shared = 0;
  for (const auto& t : hyp_tokens) {
    auto it = ref_counts.find(t.surface);
    if (it != ref_counts.end() && it->second > 0) {
      --it->second;
      ++shared;
    }
  }
  NonTranslationVerdict v;
  v.overlap_ratio = static_cast<double>(shared) / static_cast<double>(hyp_tokens.size());
  const double mean = vanilla_score(scored);
  const auto low = std::count_if(scored.logprobs().begin(), scored.logprobs().end(), [&](double lp) { return lp < mean; });
  v.low_prob_fraction = static_cast<double>(low) / static_cast<double>(scored.size());
  v.flagged = v.overlap_ratio < cfg.overlap_threshold && v.low_prob_fraction > cfg.low_prob_threshold;
  return v;
}

// Index of the least probable token; ties resolve to the lowest index.
inline std::size_t detect(const ScoredSequence& scored) {
  const auto& lp = scored.logprobs();
  return static_cast<std::size_t>(std::min_element(lp.begin(), lp.end()) - lp.begin());
}

// Delete, then substitutions, then insertions; candidate order is kept.
inline std::vector<Edit> propose_edits(std::span<const Token> hyp_tokens, std::size_t position,
                                       std::span<const Candidate> candidates) {
  if (position >= hyp_tokens.size()) throw ArgumentError("edit position out of range");
  std::vector<Edit> edits;
  edits.reserve(1 + 2 * candidates.size());
  if (hyp_tokens.size() > 1) edits.push_back(Edit::remove(position));
  for (const auto& c : candidates)
    if (c.token.surface != hyp_tokens[position].surface) edits.push_back(Edit::substitute(position, c.token));
  for (const auto& c : candidates) edits.push_back(Edit::insert_before(position, c.token));
  return edits;
}

// What refinement conditions on and how candidate sentences are ranked.
struct RefinementContext {
  EvalInputs inputs;
  Variant variant = Variant::Precision;
  PromptSet prompts;
};

struct Selection {
  Edit edit;
  double score = 0.0;
};

// Scores every edited sentence under the context's variant and returns the
// best one; ties go to the earlier edit.
inline Selection select_best(ScorerBackend& backend, const RefinementContext& ctx, std::span<const Token> hyp_tokens,
                             std::span<const Edit> edits) {
  if (edits.empty()) throw ArgumentError("select_best needs at least one edit");
  std::vector<std::string> sentences;
  sentences.reserve(edits.size());
  for (const auto& e : edits) sentences.push_back(backend.detokenize(apply_edit(hyp_tokens, e)));
  const auto scores = variant_scores(backend, ctx.inputs, sentences, ctx.variant, ctx.prompts);
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return {edits[best], scores[best]};
}

inline Selection select_best(ScorerBackend& backend, std::string_view condition, std::span<const Token> hyp_tokens,
                             std::span<const Edit> edits, const PromptSet& prompts = {}) {
  RefinementContext ctx{{std::nullopt, {std::string(condition)}}, Variant::Precision, prompts};
  return select_best(backend, ctx, hyp_tokens, edits);
}

struct RefinementIteration {
  std::size_t detected_index = 0;
  Token detected_token;
  std::vector<Candidate> candidates;
  // Present only when the best edit strictly improved the score.
  std::optional<Edit> chosen_edit;
  double score_before = 0.0;
  // Best edited score; below or equal to score_before when rejected.
  double score_after = 0.0;

  friend bool operator==(const RefinementIteration&, const RefinementIteration&) = default;
};

enum class StopReason { MaxIterations, EarlyStop, NonTranslationSkipped };

inline std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::MaxIterations: return "max_iterations";
    case StopReason::EarlyStop: return "early_stop";
    case StopReason::NonTranslationSkipped: return "non_translation_skipped";
  }
  return "?";
}

inline StopReason parse_stop_reason(std::string_view s) {
  if (s == "max_iterations") return StopReason::MaxIterations;
  if (s == "early_stop") return StopReason::EarlyStop;
  if (s == "non_translation_skipped") return StopReason::NonTranslationSkipped;
  throw ParseError("unknown stop reason '" + std::string(s) + "'", 0);
}

struct RefinementTrace {
  std::vector<RefinementIteration> iterations;
  std::string final_text;
  StopReason stop_reason = StopReason::EarlyStop;
  std::optional<NonTranslationVerdict> verdict;

  std::size_t accepted() const {
    return static_cast<std::size_t>(
        std::count_if(iterations.begin(), iterations.end(), [](const auto& it) { return it.chosen_edit.has_value(); }));
  }

  friend bool operator==(const RefinementTrace& a, const RefinementTrace& b) {
    return a.iterations == b.iterations && a.final_text == b.final_text && a.stop_reason == b.stop_reason &&
           a.verdict == b.verdict;
  }
};

namespace detail {

template <typename F>
decltype(auto) with_iteration_context(std::size_t iteration, F&& f) {
  const auto prefix = "refinement iteration " + std::to_string(iteration) + ": ";
  try {
    return f();
  } catch (const ServerError& e) {
    throw ServerError(e.status(), e.body(), prefix);
  } catch (const ProtocolError& e) {
    throw ProtocolError(prefix + e.what());
  } catch (const TransportError& e) {
    throw TransportError(prefix + e.what());
  }
}

inline std::vector<Token> word_tokens(std::string_view s) {
  std::vector<Token> out;
  for (auto& w : text::words(s)) out.push_back(Token{std::move(w)});
  return out;
}

}  // namespace detail

// Hypothesis-side token scores used for detection: the reference that
// scores the hypothesis best (r->h), or the source for faithfulness.
struct DetectionSide {
  std::string condition;
  ScoredSequence scored;
};

inline DetectionSide detection_side(ScorerBackend& backend, const RefinementContext& ctx, std::string_view hypothesis) {
  check_variant_inputs(ctx.inputs, ctx.variant);
  if (ctx.variant == Variant::Faithfulness)
    return {*ctx.inputs.source, score_tokens(backend, *ctx.inputs.source, hypothesis, ctx.prompts)};
  std::optional<DetectionSide> best;
  for (const auto& ref : ctx.inputs.references) {
    auto scored = score_tokens(backend, ref, hypothesis, ctx.prompts);
    if (!best || vanilla_score(scored) > vanilla_score(best->scored)) best = DetectionSide{ref, std::move(scored)};
  }
  return std::move(*best);
}

// Iterative detect-correct loop producing the refined hypothesis.
inline RefinementTrace refine(ScorerBackend& backend, const RefinementContext& ctx, std::string_view hypothesis,
                              const EvalConfig& cfg) {
  cfg.validate();
  if (text::trim(hypothesis).empty()) throw ArgumentError("hypothesis must be non-empty");

  RefinementTrace trace;
  trace.final_text = std::string(hypothesis);

  // A hypothesis that already equals a reference has no explicit errors.
  if (ctx.variant != Variant::Faithfulness) {
    const auto hyp_words = text::words(hypothesis);
    for (const auto& ref : ctx.inputs.references)
      if (text::words(ref) == hyp_words) return trace;
  }

  auto side = detail::with_iteration_context(0, [&] { return detection_side(backend, ctx, hypothesis); });
  const auto& anchor = ctx.variant == Variant::Faithfulness ? *ctx.inputs.source : side.condition;
  trace.verdict = non_translation_test(detail::word_tokens(hypothesis), detail::word_tokens(anchor), side.scored, cfg);
  if (trace.verdict->flagged) {
    trace.stop_reason = StopReason::NonTranslationSkipped;
    return trace;
  }

  std::vector<Token> tokens = side.scored.tokens();
  double current = detail::with_iteration_context(
      0, [&] { return variant_score(backend, ctx.inputs, hypothesis, ctx.variant, ctx.prompts); });
  ScoredSequence scored = side.scored;

  for (int it = 0; it < cfg.iterations; ++it) {
    const auto i = static_cast<std::size_t>(it);
    if (it > 0)
      scored = detail::with_iteration_context(
          i, [&] { return score_tokens(backend, side.condition, backend.detokenize(tokens), ctx.prompts); });
    // Subword backends may merge differently once text is re-tokenized.
    tokens = scored.tokens();

    RefinementIteration rec;
    rec.detected_index = detect(scored);
    rec.detected_token = tokens[rec.detected_index];
    rec.score_before = current;
    const auto prefix = std::span<const Token>(tokens).first(rec.detected_index);
    rec.candidates = detail::with_iteration_context(i, [&] { return backend.topk(side.condition, prefix, cfg.k); });

    const auto edits = propose_edits(tokens, rec.detected_index, rec.candidates);
    if (edits.empty()) {
      rec.score_after = current;
      trace.iterations.push_back(std::move(rec));
      trace.stop_reason = StopReason::EarlyStop;
      break;
    }
    const auto best = detail::with_iteration_context(i, [&] { return select_best(backend, ctx, tokens, edits); });
    rec.score_after = best.score;
    if (!(best.score > current)) {
      trace.iterations.push_back(std::move(rec));
      trace.stop_reason = StopReason::EarlyStop;
      break;
    }
    rec.chosen_edit = best.edit;
    tokens = apply_edit(tokens, best.edit);
    current = best.score;
    trace.iterations.push_back(std::move(rec));
    trace.final_text = backend.detokenize(tokens);
    trace.stop_reason = StopReason::MaxIterations;
  }
  return trace;
}

// Single-condition form: `condition` is the reference (or the source under
// the faithfulness variant).
inline RefinementTrace refine(ScorerBackend& backend, std::string_view condition, std::string_view hypothesis,
                              const EvalConfig& cfg) {
  RefinementContext ctx;
  ctx.variant = cfg.variant;
  ctx.prompts = cfg.prompts;
  if (cfg.variant == Variant::Faithfulness)
    ctx.inputs.source = std::string(condition);
  else
    ctx.inputs.references = {std::string(condition)};
  return refine(backend, ctx, hypothesis, cfg);
}

// Re-applies the accepted edits of a trace to the hypothesis tokens.
inline std::vector<Token> replay(std::span<const Token> hypothesis_tokens, const RefinementTrace& trace) {
  std::vector<Token> tokens(hypothesis_tokens.begin(), hypothesis_tokens.end());
  for (const auto& it : trace.iterations)
    if (it.chosen_edit) tokens = apply_edit(tokens, *it.chosen_edit);
  return tokens;
}

// JSON form used by `refine --trace` and inside report lines.

inline nlohmann::json to_json(const Edit& e) {
  nlohmann::json j{{"position", e.position}, {"kind", to_string(e.kind)}};
  if (e.candidate) j["token"] = e.candidate->surface;
  return j;
}

inline Edit edit_from_json(const nlohmann::json& j) {
  Edit e;
  e.position = j.at("position").get<std::size_t>();
  e.kind = parse_edit_kind(j.at("kind").get<std::string>());
  if (j.contains("token")) e.candidate = Token{j.at("token").get<std::string>()};
  return e;
}

inline nlohmann::json to_json(const RefinementTrace& t) {
  nlohmann::json iters = nlohmann::json::array();
  for (const auto& it : t.iterations) {
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& c : it.candidates) cands.push_back({{"token", c.token.surface}, {"logprob", c.logprob}});
    nlohmann::json j{{"detected_index", it.detected_index},
                     {"detected_token", it.detected_token.surface},
                     {"candidates", std::move(cands)},
                     {"chosen_edit", it.chosen_edit ? to_json(*it.chosen_edit) : nlohmann::json(nullptr)},
                     {"score_before", it.score_before},
                     {"score_after", it.score_after}};
    iters.push_back(std::move(j));
  }
  nlohmann::json out{{"iterations", std::move(iters)}, {"final_text", t.final_text},
                     {"stop_reason", to_string(t.stop_reason)}};
  if (t.verdict)
    out["non_translation"] = {{"flagged", t.verdict->flagged},
                              {"overlap_ratio", t.verdict->overlap_ratio},
                              {"low_prob_fraction", t.verdict->low_prob_fraction}};
  return out;
}

inline RefinementTrace trace_from_json(const nlohmann::json& j) {
  RefinementTrace t;
  for (const auto& ji : j.at("iterations")) {
    RefinementIteration it;
    it.detected_index = ji.at("detected_index").get<std::size_t>();
    it.detected_token = Token{ji.at("detected_token").get<std::string>()};
    for (const auto& c : ji.at("candidates"))
      it.candidates.push_back({Token{c.at("token").get<std::string>()}, c.at("logprob").get<double>()});
    if (!ji.at("chosen_edit").is_null()) it.chosen_edit = edit_from_json(ji.at("chosen_edit"));
    it.score_before = ji.at("score_before").get<double>();
    it.score_after = ji.at("score_after").get<double>();
    t.iterations.push_back(std::move(it));
  }
  t.final_text = j.at("final_text").get<std::string>();
  t.stop_reason = parse_stop_reason(j.at("stop_reason").get<std::string>());
  if (j.contains("non_translation")) {
    const auto& v = j.at("non_translation");
    t.verdict = NonTranslationVerdict{v.at("flagged").get<bool>(), v.at("overlap_ratio").get<double>(),
                                      v.at("low_prob_fraction").get<double>()};
  }
  return t;
}

}  // namespace errlens
