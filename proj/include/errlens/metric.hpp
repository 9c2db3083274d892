#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "errlens/config.hpp"
#include "errlens/error_analysis.hpp"
#include "errlens/scorer.hpp"

namespace errlens {

// Negative explicit distances smaller than this are floating-point noise.
inline constexpr double kDistanceClampTolerance = 1e-9;

inline double explicit_distance(double score_refined, double score_hyp) { return score_refined - score_hyp; }

// Pass score_ref_self = 0 when several references are configured.
inline double implicit_distance(double score_ref_self, double score_refined) { return score_ref_self - score_refined; }

// Higher is better; 0 only when both distances vanish.
inline double final_score(double dist_exp, double dist_imp, const EvalConfig& cfg) {
  return -(dist_exp * cfg.weight_exp + dist_imp * cfg.weight_imp) + 0.0;
}

struct EvalSample {
  std::string id;
  std::optional<std::string> source;
  std::vector<std::string> references;
  std::string hypothesis;
  std::string system;

  EvalInputs inputs() const { return {source, references}; }
  friend bool operator==(const EvalSample&, const EvalSample&) = default;
};

struct ErrorReport {
  std::string id;
  std::string system;
  double score_hyp = 0.0;
  double score_refined = 0.0;
  double score_ref_self = 0.0;
  double dist_exp = 0.0;
  double dist_imp = 0.0;
  double final_score = 0.0;
  std::string refined_text;
  RefinementTrace trace;
  bool non_translation = false;

  friend bool operator==(const ErrorReport&, const ErrorReport&) = default;
};

// Score of the conditioning signal against itself. Zero in
// multi-reference mode.
inline double reference_self_score(ScorerBackend& backend, const EvalInputs& in, const EvalConfig& cfg) {
  if (cfg.variant == Variant::Faithfulness)
    return variant_score(backend, in, *in.source, Variant::Faithfulness, cfg.prompts);
  if (in.references.size() > 1) return 0.0;
  return variant_score(backend, in, in.references.front(), cfg.variant, cfg.prompts);
}

// Explicit/implicit decomposition and weighted score of one hypothesis.
inline ErrorReport evaluate(ScorerBackend& backend, const EvalInputs& in, std::string_view hypothesis,
                            const EvalConfig& cfg) {
  cfg.validate();
  check_variant_inputs(in, cfg.variant);
  if (text::trim(hypothesis).empty()) throw ArgumentError("hypothesis must be non-empty");

  ErrorReport r;
  r.score_hyp = variant_score(backend, in, hypothesis, cfg.variant, cfg.prompts);
  r.trace = refine(backend, RefinementContext{in, cfg.variant, cfg.prompts}, hypothesis, cfg);
  r.refined_text = r.trace.final_text;
  r.non_translation = r.trace.stop_reason == StopReason::NonTranslationSkipped;
  r.score_refined = r.trace.accepted() == 0 ? r.score_hyp
                                            : variant_score(backend, in, r.refined_text, cfg.variant, cfg.prompts);
  r.score_ref_self = reference_self_score(backend, in, cfg);

  if (r.non_translation) {
    const double gap = r.score_ref_self - r.score_hyp;
    if (cfg.non_translation_weighting == NonTranslationWeighting::Explicit)
      r.dist_exp = gap;
    else
      r.dist_imp = gap;
  } else {
    r.dist_exp = explicit_distance(r.score_refined, r.score_hyp);
    if (r.dist_exp < 0.0 && r.dist_exp > -kDistanceClampTolerance) r.dist_exp = 0.0;
    r.dist_imp = implicit_distance(r.score_ref_self, r.score_refined);
  }
  r.final_score = final_score(r.dist_exp, r.dist_imp, cfg);
  return r;
}

inline ErrorReport evaluate(ScorerBackend& backend, const EvalSample& sample, const EvalConfig& cfg) {
  auto r = evaluate(backend, sample.inputs(), sample.hypothesis, cfg);
  r.id = sample.id;
  r.system = sample.system;
  return r;
}

// Evaluates a corpus on up to `jobs` threads. Output order follows input
// order; backends that are not concurrency-safe are serialized.
inline std::vector<ErrorReport> evaluate_corpus(ScorerBackend& backend, const std::vector<EvalSample>& samples,
                                                const EvalConfig& cfg, int jobs = 1) {
  cfg.validate();
  std::vector<ErrorReport> out(samples.size());
  jobs = std::clamp(jobs, 1, static_cast<int>(std::max<std::size_t>(samples.size(), 1)));
  if (jobs == 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) out[i] = evaluate(backend, samples[i], cfg);
    return out;
  }

  std::unique_ptr<SerializedBackend> guard;
  ScorerBackend* shared = &backend;
  if (!backend.info().concurrent_safe) {
    guard = std::make_unique<SerializedBackend>(backend);
    shared = guard.get();
  }

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto worker = [&] {
    while (!failed) {
      const auto i = next.fetch_add(1);
      if (i >= samples.size()) return;
      try {
        out[i] = evaluate(*shared, samples[i], cfg);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        failed = true;
      }
    }
  };
  std::vector<std::jthread> pool;
  for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  pool.clear();
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

}  // namespace errlens
