#pragma once

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "errlens/conformance.hpp"
#include "errlens/errlens.hpp"
#include "errlens/remote_scorer.hpp"

namespace errlens::cli {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kBackend = 3 };

struct Options {
  std::string backend = "ngram";
  std::string endpoint;
  std::string variant = "f";
  std::string prompts_file;
  int k = 10;
  int iterations = 5;
  std::string weights = "1.4:1";
  double overlap_threshold = 0.15;
  double lowprob_threshold = 0.6;
  std::string nt_weighting = "explicit";
  std::string samples;
  std::string judgments;
  std::string mqm;
  std::vector<std::string> scores;
  std::string out;
  bool trace = false;
  int bootstrap = 1000;
  std::optional<std::uint64_t> seed;
  std::optional<int> topk;
  std::string sweep = "1.0,1.1,1.2,1.3,1.4,1.5";
  int jobs = 1;
  std::vector<std::string> refs;
  std::string src;
  std::string hyp;
  std::string field = "final_score";
  std::string format = "tsv";
  std::string dataset = "-";
  bool remove_outliers = false;
  double outlier_cutoff = kDefaultOutlierCutoff;
};

inline std::pair<double, double> parse_weights(const std::string& s) {
  const auto parts = text::split(s, ':');
  if (parts.size() != 2) throw ArgumentError("--weights expects EXP:IMP, got '" + s + "'");
  try {
    std::size_t a = 0, b = 0;
    const double e = std::stod(parts[0], &a), i = std::stod(parts[1], &b);
    if (a != parts[0].size() || b != parts[1].size()) throw std::invalid_argument(s);
    return {e, i};
  } catch (const std::logic_error&) {
    throw ArgumentError("--weights expects EXP:IMP, got '" + s + "'");
  }
}

// "1.0,1.1,...,1.5" expands the ellipsis with the step of the first two
// values.
inline std::vector<double> parse_ratios(const std::string& s) {
  std::vector<std::string> parts;
  for (auto& p : text::split(s, ',')) parts.emplace_back(text::trim(p));
  auto num = [&](const std::string& p) {
    try {
      std::size_t n = 0;
      const double v = std::stod(p, &n);
      if (n != p.size()) throw std::invalid_argument(p);
      return v;
    } catch (const std::logic_error&) {
      throw ArgumentError("--sweep has a bad ratio '" + p + "'");
    }
  };
  std::vector<double> out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i] != "...") {
      out.push_back(num(parts[i]));
      continue;
    }
    if (out.size() < 2 || i + 1 >= parts.size()) throw ArgumentError("--sweep ellipsis needs two leading values and an end");
    const double step = out[out.size() - 1] - out[out.size() - 2];
    const double end = num(parts[i + 1]);
    if (!(step > 0.0) || end < out.back()) throw ArgumentError("--sweep ellipsis needs an increasing range");
    const double start = out.back();
    const auto n = static_cast<long>(std::floor((end - start) / step + 1e-9));
    for (long t = 1; t < n; ++t) out.push_back(std::round((start + static_cast<double>(t) * step) * 1e9) / 1e9);
  }
  if (out.empty()) throw ArgumentError("--sweep needs at least one ratio");
  return out;
}

inline EvalConfig make_config(const Options& o) {
  EvalConfig cfg;
  cfg.k = o.k;
  cfg.iterations = o.iterations;
  std::tie(cfg.weight_exp, cfg.weight_imp) = parse_weights(o.weights);
  cfg.overlap_threshold = o.overlap_threshold;
  cfg.low_prob_threshold = o.lowprob_threshold;
  cfg.variant = parse_variant(o.variant);
  if (!o.prompts_file.empty()) cfg.prompts = io::load_prompts(o.prompts_file);
  cfg.non_translation_weighting =
      o.nt_weighting == "implicit" ? NonTranslationWeighting::Implicit : NonTranslationWeighting::Explicit;
  cfg.validate();
  return cfg;
}

inline std::string resolve_endpoint(const Options& o) {
  if (!o.endpoint.empty()) return o.endpoint;
  if (const char* env = std::getenv("ERRLENS_ENDPOINT"); env && *env) return env;
  throw ArgumentError("remote backend needs --endpoint or ERRLENS_ENDPOINT");
}

inline std::unique_ptr<ScorerBackend> make_backend(const Options& o) {
  if (o.backend == "ngram") return std::make_unique<NgramBackend>();
  ServerEndpoint ep;
  ep.base_url = resolve_endpoint(o);
  ep.max_in_flight = std::max(o.jobs, 1);
  return std::make_unique<RemoteBackend>(ep);
}

// Writes to --out when given, otherwise to `out`.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : target_(&fallback) {
    if (!path.empty()) {
      file_.open(path, std::ios::binary | std::ios::trunc);
      if (!file_) throw IoError("cannot open '" + path + "' for writing");
      target_ = &file_;
    }
  }
  std::ostream& stream() { return *target_; }
  void finish() {
    target_->flush();
    if (!*target_) throw IoError("failed writing output");
  }

 private:
  std::ofstream file_;
  std::ostream* target_;
};

inline std::string metric_name(const std::string& path) { return std::filesystem::path(path).stem().string(); }

inline std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline int cmd_score(const Options& o, std::ostream& out) {
  const auto cfg = make_config(o);
  const auto samples = io::load_samples(o.samples);
  auto backend = make_backend(o);
  auto reports = evaluate_corpus(*backend, samples, cfg, o.jobs);
  Sink sink(o.out, out);
  for (const auto& r : reports) {
    auto j = io::to_json(r);
    if (!o.trace) j.erase("trace");
    sink.stream() << j.dump() << '\n';
  }
  sink.finish();
  return kOk;
}

inline int cmd_refine(const Options& o, std::ostream& out) {
  const auto cfg = make_config(o);
  EvalInputs in{o.src.empty() ? std::nullopt : std::optional(o.src), o.refs};
  auto backend = make_backend(o);
  const auto trace = refine(*backend, RefinementContext{in, cfg.variant, cfg.prompts}, o.hyp, cfg);
  Sink sink(o.out, out);
  if (o.trace)
    sink.stream() << to_json(trace).dump(2) << '\n';
  else
    sink.stream() << trace.final_text << '\n';
  sink.finish();
  return kOk;
}

inline std::vector<DarrJudgment> load_judgments(const Options& o, std::optional<std::set<std::string>>& keep) {
  std::vector<DarrJudgment> judgments;
  std::optional<HumanScores> human;
  if (!o.mqm.empty()) human = io::load_mqm(o.mqm);
  if (!o.judgments.empty())
    judgments = io::load_darr(o.judgments);
  else if (human)
    judgments = darr_from_human(*human);
  else
    throw ArgumentError("need --judgments (DARR TSV) or --mqm (MQM TSV)");
  if (o.topk) {
    if (!human) throw ArgumentError("--topk ranks systems by human score and needs --mqm");
    keep = topk_filter(*human, *o.topk);
    judgments = filter_judgments(judgments, *keep);
  }
  return judgments;
}

inline int cmd_meta_eval(const Options& o, std::ostream& out) {
  if (o.scores.empty()) throw ArgumentError("meta-eval needs at least one --scores file");
  if (o.scores.size() > 1 && o.bootstrap > 0 && !o.seed) throw ArgumentError("bootstrap testing requires --seed");
  std::optional<std::set<std::string>> keep;
  auto judgments = load_judgments(o, keep);

  double ErrorReport::*field = &ErrorReport::final_score;
  if (o.field == "score_hyp") field = &ErrorReport::score_hyp;
  else if (o.field == "score_refined") field = &ErrorReport::score_refined;
  else if (o.field != "final_score") throw ArgumentError("unknown --field '" + o.field + "'");

  std::vector<SegmentScores> metrics;
  for (const auto& path : o.scores) {
    const auto reports = io::load_reports(path);
    metrics.push_back(report_scores(reports, field));
  }
  if (o.remove_outliers) {
    // Systems are judged outliers by the baseline metric's system-level means.
    const auto means = system_means(metrics.front());
    if (means.size() >= 3) judgments = filter_judgments(judgments, remove_outlier_systems(means, o.outlier_cutoff));
  }

  struct Row {
    std::string metric;
    CorrelationResult result;
    std::optional<double> p;
  };
  std::vector<Row> rows;
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    Row row{metric_name(o.scores[i]), kendall_darr(judgments, metrics[i]), std::nullopt};
    if (i > 0 && o.bootstrap > 0)
      row.p = bootstrap_significance(judgments, metrics[i], metrics[0], o.bootstrap, *o.seed);
    rows.push_back(row);
  }

  Sink sink(o.out, out);
  auto& os = sink.stream();
  if (o.format == "json") {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows)
      arr.push_back({{"metric", r.metric},
                     {"dataset", o.dataset},
                     {"kind", to_string(r.result.kind)},
                     {"statistic", r.result.statistic},
                     {"n", r.result.n_items},
                     {"p_value", r.p ? nlohmann::json(*r.p) : nlohmann::json(nullptr)}});
    os << arr.dump(2) << '\n';
  } else if (o.format == "tsv") {
    os << "metric\tdataset\tstatistic\tn\tp_value\n";
    for (const auto& r : rows)
      os << r.metric << '\t' << o.dataset << '\t' << fmt(r.result.statistic) << '\t' << r.result.n_items << '\t'
         << (r.p ? fmt(*r.p) : "") << '\n';
  } else {
    throw ArgumentError("unknown --format '" + o.format + "'");
  }
  sink.finish();
  return kOk;
}

inline int cmd_sweep(const Options& o, std::ostream& out) {
  const auto cfg = make_config(o);
  const auto ratios = parse_ratios(o.sweep);
  std::optional<std::set<std::string>> keep;
  const auto judgments = load_judgments(o, keep);

  std::vector<ErrorReport> reports;
  if (!o.scores.empty()) {
    for (const auto& path : o.scores) {
      auto r = io::load_reports(path);
      reports.insert(reports.end(), r.begin(), r.end());
    }
  } else if (!o.samples.empty()) {
    auto samples = io::load_samples(o.samples);
    if (keep) std::erase_if(samples, [&](const EvalSample& s) { return !keep->contains(s.system); });
    auto backend = make_backend(o);
    reports = evaluate_corpus(*backend, samples, cfg, o.jobs);
  } else {
    throw ArgumentError("sweep needs --scores (precomputed reports) or --samples");
  }

  const auto points = weight_sweep(reports, judgments, cfg, ratios);
  Sink sink(o.out, out);
  auto& os = sink.stream();
  if (o.format == "json") {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : points) {
      nlohmann::json j{{"ratio", p.ratio}};
      if (p.result) {
        j["statistic"] = p.result->statistic;
        j["n"] = p.result->n_items;
      } else {
        j["error"] = p.error;
      }
      arr.push_back(std::move(j));
    }
    os << arr.dump(2) << '\n';
  } else {
    os << "ratio\tstatistic\tn\terror\n";
    for (const auto& p : points) {
      os << fmt(p.ratio) << '\t';
      if (p.result)
        os << fmt(p.result->statistic) << '\t' << p.result->n_items << "\t\n";
      else
        os << "\t\t" << p.error << '\n';
    }
  }
  sink.finish();
  return kOk;
}

inline int cmd_serve_check(const Options& o, std::ostream& out) {
  ServerEndpoint ep;
  ep.base_url = resolve_endpoint(o);
  ep.retries = 0;
  ep.timeout = std::chrono::milliseconds(10000);
  RemoteBackend client(ep);
  const auto results = conformance::run(client);
  bool ok = true;
  for (const auto& r : results) {
    out << (r.passed ? "PASS" : "FAIL") << '\t' << r.name;
    if (!r.detail.empty()) out << '\t' << r.detail;
    out << '\n';
    ok = ok && r.passed;
  }
  return ok ? kOk : kBackend;
}

inline void add_eval_flags(CLI::App* app, Options& o) {
  app->add_option("--backend", o.backend, "Scoring backend")->check(CLI::IsMember({"ngram", "remote"}))->capture_default_str();
  app->add_option("--endpoint", o.endpoint, "Base URL of the remote scoring server (fallback: ERRLENS_ENDPOINT)");
  app->add_option("--variant", o.variant, "Score variant")
      ->check(CLI::IsMember({"precision", "recall", "f", "faithfulness"}))
      ->capture_default_str();
  app->add_option("--prompts", o.prompts_file, "JSON file with encoder_suffixes / decoder_prefixes")->check(CLI::ExistingFile);
  app->add_option("--k", o.k, "Candidate tokens per correction (top-k)")->capture_default_str();
  app->add_option("--iterations", o.iterations, "Maximum detect-correct iterations")->capture_default_str();
  app->add_option("--weights", o.weights, "Explicit:implicit error weights, e.g. 1.4:1")->capture_default_str();
  app->add_option("--overlap-threshold", o.overlap_threshold, "Non-translation overlap-ratio threshold")->capture_default_str();
  app->add_option("--lowprob-threshold", o.lowprob_threshold, "Non-translation low-probability fraction threshold")
      ->capture_default_str();
  app->add_option("--non-translation-weighting", o.nt_weighting, "Distance side that absorbs non-translation gaps")
      ->check(CLI::IsMember({"explicit", "implicit"}))
      ->capture_default_str();
  app->add_option("--out", o.out, "Write results here instead of stdout");
  app->add_option("--jobs", o.jobs, "Parallel evaluation workers")->check(CLI::PositiveNumber)->capture_default_str();
}

inline void add_judgment_flags(CLI::App* app, Options& o) {
  app->add_option("--judgments", o.judgments, "DARR TSV: segment_id, better_system, worse_system")->check(CLI::ExistingFile);
  app->add_option("--mqm", o.mqm, "MQM TSV: system, segment_id, score")->check(CLI::ExistingFile);
  app->add_option("--topk", o.topk, "Keep only the K best systems by mean MQM score")->check(CLI::PositiveNumber);
  app->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"tsv", "json"}))->capture_default_str();
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"errlens: error-analysis scoring and meta-evaluation for generated text", "errlens"};
  app.require_subcommand(1);
  Options o;

  auto* score = app.add_subcommand("score", "Score a corpus of hypotheses; writes one JSON report per line");
  add_eval_flags(score, o);
  score->add_option("--samples", o.samples, "Samples file (.jsonl or .tsv)")->required()->check(CLI::ExistingFile);
  score->add_flag("--trace", o.trace, "Include refinement traces in each report");

  auto* refine_cmd = app.add_subcommand("refine", "Refine one hypothesis and print the result");
  add_eval_flags(refine_cmd, o);
  refine_cmd->add_option("--ref", o.refs, "Reference text (repeatable)");
  refine_cmd->add_option("--src", o.src, "Source text (faithfulness variant)");
  refine_cmd->add_option("--hyp", o.hyp, "Hypothesis text")->required();
  refine_cmd->add_flag("--trace", o.trace, "Print the full refinement trace as JSON");

  auto* meta = app.add_subcommand("meta-eval", "Correlate metric reports with human judgments");
  add_judgment_flags(meta, o);
  meta->add_option("--scores", o.scores, "Report JSONL per metric (repeatable; the first is the bootstrap baseline)")
      ->required()
      ->check(CLI::ExistingFile);
  meta->add_option("--bootstrap", o.bootstrap, "Paired bootstrap resamples (0 disables)")->capture_default_str();
  meta->add_option("--seed", o.seed, "Bootstrap RNG seed (required with --bootstrap)");
  meta->add_option("--field", o.field, "Report field used as the metric score")
      ->check(CLI::IsMember({"final_score", "score_hyp", "score_refined"}))
      ->capture_default_str();
  meta->add_option("--dataset", o.dataset, "Dataset label for the output table")->capture_default_str();
  meta->add_flag("--remove-outliers", o.remove_outliers, "Drop outlier systems (median/MAD rule) before correlating");
  meta->add_option("--outlier-cutoff", o.outlier_cutoff, "MAD multiple beyond which a system is an outlier")
      ->capture_default_str();
  meta->add_option("--out", o.out, "Write results here instead of stdout");

  auto* sweep = app.add_subcommand("sweep", "Correlation as a function of the explicit:implicit weight ratio");
  add_eval_flags(sweep, o);
  add_judgment_flags(sweep, o);
  sweep->add_option("--sweep", o.sweep, "Ratios, e.g. \"1.0,1.1,...,1.5\"")->capture_default_str();
  sweep->add_option("--scores", o.scores, "Precomputed report JSONL (repeatable)")->check(CLI::ExistingFile);
  sweep->add_option("--samples", o.samples, "Samples to evaluate once when no --scores are given")->check(CLI::ExistingFile);

  auto* check = app.add_subcommand("serve-check", "Ping a scoring server and run the protocol conformance probes");
  check->add_option("--endpoint", o.endpoint, "Base URL of the scoring server (fallback: ERRLENS_ENDPOINT)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*score) return cmd_score(o, out);
    if (*refine_cmd) {
      if (o.refs.empty() && o.src.empty()) throw ArgumentError("refine needs --ref or --src");
      return cmd_refine(o, out);
    }
    if (*meta) return cmd_meta_eval(o, out);
    if (*sweep) return cmd_sweep(o, out);
    if (*check) return cmd_serve_check(o, out);
  } catch (const TransportError& e) {
    err << "errlens: backend error: " << e.what() << '\n';
    return kBackend;
  } catch (const ArgumentError& e) {
    err << "errlens: " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    err << "errlens: data error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}

}  // namespace errlens::cli
