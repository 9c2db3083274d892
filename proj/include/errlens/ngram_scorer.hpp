#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "errlens/scorer.hpp"
#include "errlens/text.hpp"

namespace errlens {

// Interpolated additive-smoothed bigram model estimated from a single
// condition text. Every distribution it emits is normalized over
// vocab = condition tokens + UNK; target tokens outside the condition are
// scored as UNK.
class OracleModel {
 public:
  static constexpr std::string_view kUnk = "<unk>";
  static constexpr double kDefaultBeta = 0.1;
  static constexpr double kDefaultLambda = 0.3;

  explicit OracleModel(std::string_view condition, double beta = kDefaultBeta, double lambda = kDefaultLambda)
      : beta_(beta), lambda_(lambda) {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw ArgumentError("oracle beta must be > 0");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ArgumentError("oracle lambda must be in [0,1]");
    const auto toks = text::words(condition);
    for (const auto& t : toks) index_.emplace(t, 0);
    index_.emplace(std::string(kUnk), 0);
    vocab_.reserve(index_.size());
    for (auto& [surface, idx] : index_) {
      idx = vocab_.size();
      vocab_.push_back(surface);
    }
    unigram_.assign(vocab_.size(), 0.0);
    bigram_from_.assign(vocab_.size(), 0.0);
    for (std::size_t i = 0; i < toks.size(); ++i) {
      const auto w = lookup(toks[i]);
      unigram_[w] += 1.0;
      if (i > 0) {
        const auto prev = lookup(toks[i - 1]);
        bigram_[{prev, w}] += 1.0;
        bigram_from_[prev] += 1.0;
      }
    }
    total_ = static_cast<double>(toks.size());
  }

  const std::vector<std::string>& vocab() const noexcept { return vocab_; }
  double beta() const noexcept { return beta_; }
  double lambda() const noexcept { return lambda_; }

  // Vocabulary index of a surface, UNK for anything outside the condition.
  std::size_t lookup(std::string_view surface) const {
    auto it = index_.find(std::string(surface));
    if (it == index_.end()) it = index_.find(std::string(kUnk));
    return it->second;
  }

  double unigram_prob(std::size_t w) const {
    return (unigram_[w] + beta_) / (total_ + beta_ * static_cast<double>(vocab_.size()));
  }

  double bigram_prob(std::size_t prev, std::size_t w) const {
    auto it = bigram_.find({prev, w});
    const double c = it == bigram_.end() ? 0.0 : it->second;
    return (c + beta_) / (bigram_from_[prev] + beta_ * static_cast<double>(vocab_.size()));
  }

  double prob(std::optional<std::size_t> prev, std::size_t w) const {
    if (!prev) return unigram_prob(w);
    return lambda_ * bigram_prob(*prev, w) + (1.0 - lambda_) * unigram_prob(w);
  }

 private:
  double beta_;
  double lambda_;
  double total_ = 0.0;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::vector<std::string> vocab_;
  std::vector<double> unigram_;
  std::vector<double> bigram_from_;
  std::map<std::pair<std::size_t, std::size_t>, double> bigram_;
};

inline double oracle_logprob(const OracleModel& model, const std::optional<Token>& prev, const Token& token) {
  std::optional<std::size_t> p;
  if (prev) p = model.lookup(prev->surface);
  return std::log(model.prob(p, model.lookup(token.surface)));
}

// Highest-probability vocabulary entries after `prev`, descending, ties by
// surface. k larger than the vocabulary returns everything.
inline std::vector<Candidate> oracle_topk(const OracleModel& model, const std::optional<Token>& prev, int k) {
  if (k < 1) throw ArgumentError("k must be >= 1");
  std::optional<std::size_t> p;
  if (prev) p = model.lookup(prev->surface);
  std::vector<Candidate> all;
  all.reserve(model.vocab().size());
  for (std::size_t i = 0; i < model.vocab().size(); ++i)
    all.push_back({Token{model.vocab()[i], static_cast<std::int64_t>(i)}, std::log(model.prob(p, i))});
  std::stable_sort(all.begin(), all.end(), [](const Candidate& a, const Candidate& b) {
    if (a.logprob != b.logprob) return a.logprob > b.logprob;
    return a.token.surface < b.token.surface;
  });
  if (static_cast<std::size_t>(k) < all.size()) all.resize(static_cast<std::size_t>(k));
  return all;
}

// Deterministic offline backend over OracleModel. Encoder suffixes are
// appended to the condition; decoder prefixes supply left context for the
// first target token and are not themselves returned.
class NgramBackend final : public ScorerBackend {
 public:
  explicit NgramBackend(double beta = OracleModel::kDefaultBeta, double lambda = OracleModel::kDefaultLambda)
      : beta_(beta), lambda_(lambda) {
    OracleModel("", beta, lambda);  // validates parameters
  }

  BackendInfo info() const override {
    return {"ngram-oracle(beta=" + std::to_string(beta_) + ",lambda=" + std::to_string(lambda_) + ")",
            "whitespace-punct", true, true, 1 << 20};
  }

  OracleModel model_for(std::string_view condition, const PromptSet& prompts = {}) const {
    std::string cond(condition);
    for (const auto& s : prompts.encoder_suffixes)
      if (!s.empty()) cond += " " + s;
    return OracleModel(cond, beta_, lambda_);
  }

  ScoredSequence score(const ScoreRequest& req) override {
    if (req.prompts.size() > 1) throw ArgumentError("backend requests carry at most one prompt");
    const auto words = text::words(req.target);
    if (words.empty()) throw ArgumentError("target must be non-empty");
    const auto model = model_for(req.condition, req.prompts);

    std::optional<Token> prev;
    for (const auto& p : req.prompts.decoder_prefixes) {
      auto pw = text::words(p);
      if (!pw.empty()) prev = Token{pw.back()};
    }
    std::vector<Token> tokens;
    std::vector<double> logprobs;
    for (const auto& w : words) {
      Token t{w, static_cast<std::int64_t>(model.lookup(w))};
      logprobs.push_back(oracle_logprob(model, prev, t));
      tokens.push_back(t);
      prev = t;
    }
    return ScoredSequence(std::move(tokens), std::move(logprobs));
  }

  std::vector<Candidate> topk(std::string_view condition, std::span<const Token> prefix, int k) override {
    if (k < 1) throw ArgumentError("k must be >= 1");
    const auto model = model_for(condition);
    std::optional<Token> prev;
    if (!prefix.empty()) prev = prefix.back();
    // UNK is not an emittable surface, so it never becomes a correction.
    auto all = oracle_topk(model, prev, static_cast<int>(model.vocab().size()));
    std::erase_if(all, [](const Candidate& c) { return c.token.surface == OracleModel::kUnk; });
    if (static_cast<std::size_t>(k) < all.size()) all.resize(static_cast<std::size_t>(k));
    return all;
  }

  std::string detokenize(std::span<const Token> tokens) const override { return text::join(surfaces(tokens)); }

 private:
  double beta_;
  double lambda_;
};

}  // namespace errlens
