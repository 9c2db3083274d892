#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "errlens/error_analysis.hpp"
#include "errlens/errors.hpp"
#include "errlens/meta_eval.hpp"
#include "errlens/metric.hpp"
#include "errlens/text.hpp"

namespace errlens::io {

enum class SampleFormat { Jsonl, Tsv };

inline SampleFormat format_for(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".tsv" || ext == ".txt") return SampleFormat::Tsv;
  return SampleFormat::Jsonl;
}

namespace detail {

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

// Yields (1-based line number, line) for every line, stripping a trailing CR.
template <typename F>
void for_each_line(std::istream& in, F&& f) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    f(n, line);
  }
}

inline double parse_double(std::string_view s, std::size_t line) {
  s = text::trim(s);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw ParseError("'" + std::string(s) + "' is not a number", line);
  return v;
}

inline nlohmann::json parse_json_line(const std::string& line, std::size_t n) {
  try {
    return nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), n);
  }
}

inline void add_sample(std::vector<EvalSample>& out, std::map<std::pair<std::string, std::string>, std::size_t>& seen,
                       EvalSample s, std::size_t line) {
  if (text::trim(s.hypothesis).empty()) throw DataError("line " + std::to_string(line) + ": empty hypothesis");
  const auto key = std::make_pair(s.id, s.system);
  auto it = seen.find(key);
  if (it == seen.end()) {
    seen.emplace(key, out.size());
    out.push_back(std::move(s));
    return;
  }
  auto& prev = out[it->second];
  if (prev.hypothesis != s.hypothesis || prev.source != s.source)
    throw DataError("line " + std::to_string(line) + ": sample '" + s.id + "' repeats with conflicting fields");
  for (auto& r : s.references)
    if (std::find(prev.references.begin(), prev.references.end(), r) == prev.references.end())
      prev.references.push_back(std::move(r));
}

inline bool is_header(const std::vector<std::string>& fields, std::initializer_list<std::string_view> names) {
  if (fields.size() != names.size()) return false;
  std::size_t i = 0;
  for (auto n : names)
    if (text::trim(fields[i++]) != n) return false;
  return true;
}

inline void require_finite(double v, std::string_view what) {
  if (!std::isfinite(v)) throw DataError("refusing to serialize non-finite " + std::string(what));
}

}  // namespace detail

// JSONL rows: {"id", "src"?, "refs": [...] | "ref", "hyp", "system"?}.
// TSV: header naming columns id, hyp and optionally system, src, ref (ref may
// repeat). Rows sharing (id, system) merge their references.
inline std::vector<EvalSample> load_samples(std::istream& in, SampleFormat format) {
  std::vector<EvalSample> out;
  std::map<std::pair<std::string, std::string>, std::size_t> seen;

  if (format == SampleFormat::Jsonl) {
    detail::for_each_line(in, [&](std::size_t n, const std::string& line) {
      if (text::trim(line).empty()) return;
      const auto j = detail::parse_json_line(line, n);
      try {
        EvalSample s;
        s.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
        if (j.contains("src") && !j.at("src").is_null()) s.source = j.at("src").get<std::string>();
        if (j.contains("refs")) s.references = j.at("refs").get<std::vector<std::string>>();
        if (j.contains("ref")) s.references.push_back(j.at("ref").get<std::string>());
        s.hypothesis = j.at("hyp").get<std::string>();
        if (j.contains("system")) s.system = j.at("system").get<std::string>();
        detail::add_sample(out, seen, std::move(s), n);
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad sample row: ") + e.what(), n);
      }
    });
    return out;
  }

  std::optional<std::size_t> col_id, col_hyp, col_sys, col_src;
  std::vector<std::size_t> col_refs;
  std::size_t width = 0;
  detail::for_each_line(in, [&](std::size_t n, const std::string& line) {
    const auto fields = text::split(line, '\t');
    if (n == 1) {
      width = fields.size();
      for (std::size_t i = 0; i < fields.size(); ++i) {
        const auto name = text::trim(fields[i]);
        if (name == "id") col_id = i;
        else if (name == "hyp") col_hyp = i;
        else if (name == "system") col_sys = i;
        else if (name == "src") col_src = i;
        else if (name == "ref") col_refs.push_back(i);
        else throw ParseError("unknown column '" + std::string(name) + "'", n);
      }
      if (!col_hyp) throw ParseError("header has no 'hyp' column", n);
      if (!col_id) throw ParseError("header has no 'id' column", n);
      return;
    }
    if (text::trim(line).empty()) return;
    if (fields.size() != width)
      throw ParseError("expected " + std::to_string(width) + " fields, got " + std::to_string(fields.size()), n);
    EvalSample s;
    s.id = fields[*col_id];
    s.hypothesis = fields[*col_hyp];
    if (col_sys) s.system = fields[*col_sys];
    if (col_src && !fields[*col_src].empty()) s.source = fields[*col_src];
    for (auto c : col_refs)
      if (!fields[c].empty()) s.references.push_back(fields[c]);
    detail::add_sample(out, seen, std::move(s), n);
  });
  if (width == 0) throw ParseError("empty TSV file has no header", 1);
  return out;
}

inline std::vector<EvalSample> load_samples(const std::filesystem::path& path, std::optional<SampleFormat> format = {}) {
  auto in = detail::open_in(path);
  return load_samples(in, format.value_or(format_for(path)));
}

// segment_id <TAB> better_system <TAB> worse_system; optional header row.
inline std::vector<DarrJudgment> load_darr(std::istream& in) {
  std::vector<DarrJudgment> out;
  detail::for_each_line(in, [&](std::size_t n, const std::string& line) {
    if (text::trim(line).empty()) return;
    const auto f = text::split(line, '\t');
    if (n == 1 && detail::is_header(f, {"segment_id", "better_system", "worse_system"})) return;
    if (f.size() != 3) throw ParseError("expected 3 fields, got " + std::to_string(f.size()), n);
    if (f[1] == f[2])
      throw DataError("line " + std::to_string(n) + ": system '" + f[1] + "' is judged against itself");
    out.push_back({f[0], f[1], f[2]});
  });
  return out;
}

inline std::vector<DarrJudgment> load_darr(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return load_darr(in);
}

inline void write_darr(std::ostream& out, std::span<const DarrJudgment> judgments) {
  for (const auto& j : judgments) out << j.segment_id << '\t' << j.system_better << '\t' << j.system_worse << '\n';
}

inline void write_darr(std::span<const DarrJudgment> judgments, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  write_darr(out, judgments);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

// system <TAB> segment_id <TAB> score; repeated keys are averaged.
inline HumanScores load_mqm(std::istream& in) {
  std::map<SegmentKey, std::pair<double, std::size_t>> acc;
  detail::for_each_line(in, [&](std::size_t n, const std::string& line) {
    if (text::trim(line).empty()) return;
    const auto f = text::split(line, '\t');
    if (n == 1 && detail::is_header(f, {"system", "segment_id", "score"})) return;
    if (f.size() != 3) throw ParseError("expected 3 fields, got " + std::to_string(f.size()), n);
    const double v = detail::parse_double(f[2], n);
    auto& [sum, count] = acc[{f[0], f[1]}];
    sum += v;
    ++count;
  });
  HumanScores out;
  for (const auto& [k, sc] : acc) out[k] = sc.first / static_cast<double>(sc.second);
  return out;
}

inline HumanScores load_mqm(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return load_mqm(in);
}

inline nlohmann::json to_json(const ErrorReport& r) {
  for (auto [v, name] : {std::pair{r.score_hyp, "score_hyp"}, {r.score_refined, "score_refined"},
                         {r.score_ref_self, "score_ref_self"}, {r.dist_exp, "dist_exp"}, {r.dist_imp, "dist_imp"},
                         {r.final_score, "final_score"}})
    detail::require_finite(v, name);
  for (const auto& it : r.trace.iterations) {
    detail::require_finite(it.score_before, "trace score");
    detail::require_finite(it.score_after, "trace score");
    for (const auto& c : it.candidates) detail::require_finite(c.logprob, "candidate logprob");
  }
  return {{"id", r.id},
          {"system", r.system},
          {"score_hyp", r.score_hyp},
          {"score_refined", r.score_refined},
          {"score_ref_self", r.score_ref_self},
          {"dist_exp", r.dist_exp},
          {"dist_imp", r.dist_imp},
          {"final_score", r.final_score},
          {"refined_text", r.refined_text},
          {"non_translation", r.non_translation},
          {"trace", errlens::to_json(r.trace)}};
}

inline ErrorReport report_from_json(const nlohmann::json& j) {
  ErrorReport r;
  r.id = j.at("id").get<std::string>();
  r.system = j.value("system", "");
  r.score_hyp = j.at("score_hyp").get<double>();
  r.score_refined = j.at("score_refined").get<double>();
  r.score_ref_self = j.at("score_ref_self").get<double>();
  r.dist_exp = j.at("dist_exp").get<double>();
  r.dist_imp = j.at("dist_imp").get<double>();
  r.final_score = j.at("final_score").get<double>();
  r.refined_text = j.at("refined_text").get<std::string>();
  r.non_translation = j.value("non_translation", false);
  if (j.contains("trace"))
    r.trace = trace_from_json(j.at("trace"));
  else
    r.trace.final_text = r.refined_text;
  return r;
}

inline void write_reports(std::ostream& out, std::span<const ErrorReport> reports) {
  std::vector<std::string> lines;
  lines.reserve(reports.size());
  for (const auto& r : reports) lines.push_back(to_json(r).dump());
  for (const auto& l : lines) out << l << '\n';
}

// One JSON object per line. Nothing is written if any report holds a
// non-finite value.
inline void write_reports(std::span<const ErrorReport> reports, const std::filesystem::path& path) {
  std::vector<std::string> lines;
  lines.reserve(reports.size());
  for (const auto& r : reports) lines.push_back(to_json(r).dump());
  auto out = detail::open_out(path);
  for (const auto& l : lines) out << l << '\n';
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline std::vector<ErrorReport> load_reports(std::istream& in) {
  std::vector<ErrorReport> out;
  detail::for_each_line(in, [&](std::size_t n, const std::string& line) {
    if (text::trim(line).empty()) return;
    const auto j = detail::parse_json_line(line, n);
    try {
      out.push_back(report_from_json(j));
    } catch (const ParseError& e) {
      throw ParseError(e.what(), n);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad report row: ") + e.what(), n);
    }
  });
  return out;
}

inline std::vector<ErrorReport> load_reports(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return load_reports(in);
}

// {"encoder_suffixes": [...], "decoder_prefixes": [...]}
inline PromptSet load_prompts(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  try {
    const auto j = nlohmann::json::parse(in);
    PromptSet p;
    if (j.contains("encoder_suffixes")) p.encoder_suffixes = j.at("encoder_suffixes").get<std::vector<std::string>>();
    if (j.contains("decoder_prefixes")) p.decoder_prefixes = j.at("decoder_prefixes").get<std::vector<std::string>>();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad prompt file: ") + e.what(), 0);
  }
}

}  // namespace errlens::io
