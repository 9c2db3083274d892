#pragma once

#include "errlens/config.hpp"
#include "errlens/data_io.hpp"
#include "errlens/error_analysis.hpp"
#include "errlens/errors.hpp"
#include "errlens/meta_eval.hpp"
#include "errlens/metric.hpp"
#include "errlens/ngram_scorer.hpp"
#include "errlens/scorer.hpp"
#include "errlens/text.hpp"
