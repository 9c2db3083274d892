#pragma once

#include <cmath>
#include <string>

#include "errlens/errors.hpp"
#include "errlens/scorer.hpp"

namespace errlens {

// Which distance absorbs the whole gap of a hypothesis that the
// non-translation test flags.
enum class NonTranslationWeighting { Explicit, Implicit };

struct EvalConfig {
  int k = 10;
  int iterations = 5;
  double weight_exp = 1.4;
  double weight_imp = 1.0;
  double overlap_threshold = 0.15;
  double low_prob_threshold = 0.6;
  Variant variant = Variant::F;
  PromptSet prompts;
  NonTranslationWeighting non_translation_weighting = NonTranslationWeighting::Explicit;

  void validate() const {
    if (k < 1) throw ArgumentError("k must be >= 1");
    if (iterations < 1) throw ArgumentError("iterations must be >= 1");
    if (!std::isfinite(weight_exp) || !(weight_exp > 0.0)) throw ArgumentError("explicit weight must be finite and > 0");
    if (!std::isfinite(weight_imp) || !(weight_imp > 0.0)) throw ArgumentError("implicit weight must be finite and > 0");
    if (!(overlap_threshold >= 0.0 && overlap_threshold <= 1.0))
      throw ArgumentError("overlap threshold must be in [0,1]");
    if (!(low_prob_threshold >= 0.0 && low_prob_threshold <= 1.0))
      throw ArgumentError("low-probability threshold must be in [0,1]");
  }
};

}  // namespace errlens
