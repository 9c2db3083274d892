#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errlens/config.hpp"
#include "errlens/errors.hpp"
#include "errlens/metric.hpp"

namespace errlens {

struct DarrJudgment {
  std::string segment_id;
  std::string system_better;
  std::string system_worse;

  friend bool operator==(const DarrJudgment&, const DarrJudgment&) = default;
};

// (system, segment_id)
using SegmentKey = std::pair<std::string, std::string>;
using SegmentScores = std::map<SegmentKey, double>;
using HumanScores = std::map<SegmentKey, double>;

enum class CorrelationKind { KendallDarr, Spearman, Pearson, Accuracy };

inline std::string_view to_string(CorrelationKind k) {
  switch (k) {
    case CorrelationKind::KendallDarr: return "kendall_darr";
    case CorrelationKind::Spearman: return "spearman";
    case CorrelationKind::Pearson: return "pearson";
    case CorrelationKind::Accuracy: return "accuracy";
  }
  return "?";
}

struct CorrelationResult {
  double statistic = 0.0;
  std::size_t n_items = 0;
  CorrelationKind kind = CorrelationKind::KendallDarr;
};

namespace detail {

inline double lookup_score(const SegmentScores& scores, const std::string& system, const std::string& segment) {
  auto it = scores.find({system, segment});
  if (it == scores.end())
    throw DataError("no metric score for system '" + system + "' on segment '" + segment + "'");
  return it->second;
}

// +1 when the metric agrees with the human preference, -1 otherwise (ties
// count against the metric).
inline std::vector<int> darr_outcomes(std::span<const DarrJudgment> judgments, const SegmentScores& scores) {
  std::vector<int> out;
  out.reserve(judgments.size());
  for (const auto& j : judgments) {
    const double better = lookup_score(scores, j.system_better, j.segment_id);
    const double worse = lookup_score(scores, j.system_worse, j.segment_id);
    out.push_back(better > worse ? 1 : -1);
  }
  return out;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

}  // namespace detail

// (concordant - discordant) / (concordant + discordant) over human-ranked pairs.
inline CorrelationResult kendall_darr(std::span<const DarrJudgment> judgments, const SegmentScores& scores) {
  const auto outcomes = detail::darr_outcomes(judgments, scores);
  if (outcomes.empty()) throw UndefinedCorrelationError("Kendall's tau needs at least one judgment");
  long concordant = 0, discordant = 0;
  for (int o : outcomes) (o > 0 ? concordant : discordant)++;
  return {static_cast<double>(concordant - discordant) / static_cast<double>(concordant + discordant),
          outcomes.size(), CorrelationKind::KendallDarr};
}

inline CorrelationResult pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ArgumentError("correlation inputs differ in length");
  if (x.size() < 2) throw UndefinedCorrelationError("correlation needs at least two items");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelationError("correlation is undefined for constant input");
  const double r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  return {r, x.size(), CorrelationKind::Pearson};
}

// 1-based ranks; tied values share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

inline CorrelationResult spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ArgumentError("correlation inputs differ in length");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  auto r = pearson(rx, ry);
  r.kind = CorrelationKind::Spearman;
  return r;
}

// Fraction of (score_correct, score_incorrect) pairs ranked correctly; ties fail.
inline CorrelationResult pairwise_accuracy(std::span<const std::pair<double, double>> pairs) {
  if (pairs.empty()) throw ArgumentError("pairwise accuracy needs at least one pair");
  const auto ok = std::count_if(pairs.begin(), pairs.end(), [](const auto& p) { return p.first > p.second; });
  return {static_cast<double>(ok) / static_cast<double>(pairs.size()), pairs.size(), CorrelationKind::Accuracy};
}

inline constexpr int kMinBootstrapResamples = 100;

// Paired bootstrap over judgments. Returns the fraction of resamples in which
// the metric with the higher full-sample tau fails to beat the other.
// Resample i draws from its own generator seeded by (seed, i).
inline double bootstrap_significance(std::span<const DarrJudgment> judgments, const SegmentScores& scores_a,
                                     const SegmentScores& scores_b, int resamples, std::uint64_t seed) {
  if (resamples < kMinBootstrapResamples)
    throw ArgumentError("bootstrap needs at least " + std::to_string(kMinBootstrapResamples) + " resamples");
  const auto a = detail::darr_outcomes(judgments, scores_a);
  const auto b = detail::darr_outcomes(judgments, scores_b);
  if (a.empty()) throw UndefinedCorrelationError("bootstrap needs at least one judgment");

  long observed = 0;
  for (std::size_t i = 0; i < a.size(); ++i) observed += a[i] - b[i];
  const bool a_wins = observed >= 0;

  long losses = 0;
  std::uniform_int_distribution<std::size_t> pick(0, a.size() - 1);
  for (int r = 0; r < resamples; ++r) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(r)};
    std::mt19937_64 rng(seq);
    long delta = 0;
    for (std::size_t n = 0; n < a.size(); ++n) {
      const auto i = pick(rng);
      delta += a[i] - b[i];
    }
    if (a_wins ? delta <= 0 : delta >= 0) ++losses;
  }
  return static_cast<double>(losses) / static_cast<double>(resamples);
}

inline constexpr double kDefaultOutlierCutoff = 2.5;

// Systems within cutoff * MAD of the median, pruned repeatedly until no
// further system is removed. Zero spread retains everything.
inline std::set<std::string> remove_outlier_systems(const std::map<std::string, double>& system_scores,
                                                    double cutoff = kDefaultOutlierCutoff) {
  if (system_scores.size() < 3) throw ArgumentError("outlier removal needs at least three systems");
  if (!(cutoff > 0.0)) throw ArgumentError("outlier cutoff must be > 0");
  std::map<std::string, double> kept = system_scores;
  while (kept.size() >= 3) {
    std::vector<double> values;
    for (const auto& [_, v] : kept) values.push_back(v);
    const double med = detail::median(values);
    std::vector<double> dev;
    for (double v : values) dev.push_back(std::abs(v - med));
    const double mad = detail::median(dev);
    if (mad == 0.0) break;
    const auto before = kept.size();
    std::erase_if(kept, [&](const auto& kv) { return std::abs(kv.second - med) > cutoff * mad; });
    if (kept.size() == before) break;
  }
  std::set<std::string> out;
  for (const auto& [name, _] : kept) out.insert(name);
  return out;
}

inline std::map<std::string, double> system_means(const std::map<SegmentKey, double>& scores) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& [key, v] : scores) {
    auto& [sum, n] = acc[key.first];
    sum += v;
    ++n;
  }
  std::map<std::string, double> out;
  for (const auto& [sys, sn] : acc) out[sys] = sn.first / static_cast<double>(sn.second);
  return out;
}

// The k systems with the highest mean human score; ties by system name.
inline std::set<std::string> topk_filter(const HumanScores& human, int k) {
  const auto means = system_means(human);
  if (k < 1 || static_cast<std::size_t>(k) > means.size())
    throw ArgumentError("top-k needs 1 <= k <= " + std::to_string(means.size()));
  std::vector<std::pair<std::string, double>> ranked(means.begin(), means.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::set<std::string> out;
  for (int i = 0; i < k; ++i) out.insert(ranked[static_cast<std::size_t>(i)].first);
  return out;
}

// Relative-ranking judgments implied by segment-level human scores: one per
// pair of systems with distinct scores on the same segment.
inline std::vector<DarrJudgment> darr_from_human(const HumanScores& human) {
  std::map<std::string, std::vector<std::pair<std::string, double>>> by_segment;
  for (const auto& [key, v] : human) by_segment[key.second].emplace_back(key.first, v);
  std::vector<DarrJudgment> out;
  for (const auto& [seg, entries] : by_segment)
    for (std::size_t i = 0; i < entries.size(); ++i)
      for (std::size_t j = i + 1; j < entries.size(); ++j) {
        const auto& [si, vi] = entries[i];
        const auto& [sj, vj] = entries[j];
        if (vi > vj) out.push_back({seg, si, sj});
        if (vj > vi) out.push_back({seg, sj, si});
      }
  return out;
}

inline std::vector<DarrJudgment> filter_judgments(std::span<const DarrJudgment> judgments,
                                                  const std::set<std::string>& systems) {
  std::vector<DarrJudgment> out;
  for (const auto& j : judgments)
    if (systems.contains(j.system_better) && systems.contains(j.system_worse)) out.push_back(j);
  return out;
}

// Metric scores keyed by (system, id), taken from reports.
inline SegmentScores report_scores(std::span<const ErrorReport> reports, double ErrorReport::*field = &ErrorReport::final_score) {
  SegmentScores out;
  for (const auto& r : reports)
    if (!out.emplace(SegmentKey{r.system, r.id}, r.*field).second)
      throw DataError("duplicate report for system '" + r.system + "' on segment '" + r.id + "'");
  return out;
}

struct SweepPoint {
  double ratio = 0.0;
  std::optional<CorrelationResult> result;
  std::string error;
};

// Re-weights precomputed distances with weights (ratio, 1) and correlates
// with the judgments. Never touches a backend.
inline std::vector<SweepPoint> weight_sweep(std::span<const ErrorReport> reports,
                                            std::span<const DarrJudgment> judgments, const EvalConfig& cfg_base,
                                            std::span<const double> ratios) {
  std::vector<SweepPoint> out;
  for (double ratio : ratios) {
    SweepPoint pt{ratio, std::nullopt, {}};
    try {
      EvalConfig cfg = cfg_base;
      cfg.weight_exp = ratio;
      cfg.weight_imp = 1.0;
      cfg.validate();
      SegmentScores scores;
      for (const auto& r : reports) scores[{r.system, r.id}] = final_score(r.dist_exp, r.dist_imp, cfg);
      pt.result = kendall_darr(judgments, scores);
    } catch (const Error& e) {
      pt.error = e.what();
    }
    out.push_back(std::move(pt));
  }
  return out;
}

}  // namespace errlens
