#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include <nlohmann/json.hpp>

#include "errlens/errlens.hpp"
#include "errlens/protocol.hpp"

namespace errlens::support {

// Counts every sequence scored and every topk call routed through it.
class CountingBackend final : public ScorerBackend {
 public:
  explicit CountingBackend(ScorerBackend& inner) : inner_(inner) {}

  BackendInfo info() const override { return inner_.info(); }
  ScoredSequence score(const ScoreRequest& r) override {
    ++scored_;
    return inner_.score(r);
  }
  std::vector<ScoredSequence> score_batch(std::span<const ScoreRequest> rs) override {
    scored_ += rs.size();
    return inner_.score_batch(rs);
  }
  std::vector<Candidate> topk(std::string_view c, std::span<const Token> p, int k) override {
    ++topk_;
    return inner_.topk(c, p, k);
  }
  std::string detokenize(std::span<const Token> t) const override { return inner_.detokenize(t); }

  std::size_t scored() const { return scored_; }
  std::size_t topk_calls() const { return topk_; }

 private:
  ScorerBackend& inner_;
  std::atomic<std::size_t> scored_{0};
  std::atomic<std::size_t> topk_{0};
};

// Serves recorded word-level logprobs for known sentences and a flat floor
// for anything else. topk always offers the same candidate list.
class ReplayBackend final : public ScorerBackend {
 public:
  static constexpr double kFloor = -20.0;

  void record(const std::string& sentence, std::vector<double> logprobs) { table_[sentence] = std::move(logprobs); }
  void set_candidates(std::vector<Candidate> c) { candidates_ = std::move(c); }

  BackendInfo info() const override { return {"replay", "whitespace-punct", true, true, 64}; }

  ScoredSequence score(const ScoreRequest& r) override {
    const auto words = text::words(r.target);
    std::vector<Token> toks;
    for (const auto& w : words) toks.push_back(Token{w});
    auto it = table_.find(text::join(words));
    if (it != table_.end() && it->second.size() == toks.size()) return ScoredSequence(toks, it->second);
    return ScoredSequence(toks, std::vector<double>(toks.size(), kFloor));
  }

  std::vector<Candidate> topk(std::string_view, std::span<const Token>, int k) override {
    auto out = candidates_;
    if (out.size() > static_cast<std::size_t>(k)) out.resize(static_cast<std::size_t>(k));
    return out;
  }

  std::string detokenize(std::span<const Token> t) const override { return text::join(surfaces(t)); }

 private:
  std::map<std::string, std::vector<double>> table_;
  std::vector<Candidate> candidates_;
};

// Per-token logprobs printed under each word of the worked refinement
// example, iterations 0-3.
struct RecordedRow {
  std::string sentence;
  std::vector<double> logprobs;
};

inline const char* kWorkedReference = "Mike goes to the bookstore with my friend on Thursday.";

inline std::vector<RecordedRow> worked_example_rows() {
  return {
      {"Jerry went to the bookstore happily with friend Friday .",
       {-15.90, -2.82, -0.47, -0.71, -2.27, -13.33, -0.55, -4.69, -4.78, -0.24}},
      {"Mike went to the bookstore happily with friend Friday .",
       {-4.44, -2.67, -0.49, -0.71, -2.30, -13.21, -0.62, -4.70, -4.82, -0.23}},
      {"Mike went to the bookstore with friend Friday .", {-4.44, -2.67, -0.49, -0.71, -2.30, -0.61, -4.78, -4.51, -0.26}},
      {"Mike went to the bookstore with my friend Thursday .",
       {-4.44, -2.67, -0.49, -0.71, -2.30, -0.61, -0.96, -0.10, -2.42, -0.13}},
  };
}

inline ReplayBackend worked_example_backend() {
  ReplayBackend b;
  for (const auto& row : worked_example_rows()) b.record(row.sentence, row.logprobs);
  // Candidate logprobs are arbitrary; only their order matters here.
  b.set_candidates({{Token{"Mike"}, -1.0}, {Token{"my"}, -1.5}, {Token{"Thursday"}, -2.0}, {Token{"goes"}, -2.5}, {Token{"on"}, -3.0}});
  return b;
}

// In-process implementation of the scoring protocol over any backend, used
// as a test double for the remote client.
class ProtocolServer {
 public:
  struct Options {
    int max_batch = protocol::kDefaultMaxBatch;
    bool supports_topk = true;
    std::string model_id = "test-double";
    std::chrono::milliseconds delay{0};
    std::optional<std::string> required_token;
  };

  // Replaces the normal handler for a path: returns (status, body).
  using Override = std::function<std::pair<int, std::string>(const std::string& body)>;

  ProtocolServer(ScorerBackend& backend, Options opts) : backend_(backend), opts_(std::move(opts)) {
    server_.Get(protocol::kInfoPath, [this](const httplib::Request& req, httplib::Response& res) {
      handle(protocol::kInfoPath, req, res, [&](const nlohmann::json&) {
        return protocol::encode(protocol::ServerInfo{opts_.model_id, opts_.max_batch, opts_.supports_topk});
      });
    });
    server_.Post(protocol::kScorePath, [this](const httplib::Request& req, httplib::Response& res) {
      handle(protocol::kScorePath, req, res, [&](const nlohmann::json& j) { return score_one(j); });
    });
    server_.Post(protocol::kScoreBatchPath, [this](const httplib::Request& req, httplib::Response& res) {
      handle(protocol::kScoreBatchPath, req, res, [&](const nlohmann::json& j) {
        const auto& items = j.at("items");
        if (static_cast<int>(items.size()) > opts_.max_batch) throw ArgumentError("batch larger than max_batch");
        {
          std::lock_guard lock(mu_);
          batch_sizes_.push_back(items.size());
        }
        nlohmann::json results = nlohmann::json::array();
        for (const auto& item : items) results.push_back(score_one(item));
        return nlohmann::json{{"results", results}};
      });
    });
    server_.Post(protocol::kTopkPath, [this](const httplib::Request& req, httplib::Response& res) {
      handle(protocol::kTopkPath, req, res, [&](const nlohmann::json& j) {
        const auto r = protocol::decode_topk_request(j);
        std::vector<Token> prefix;
        for (const auto& t : r.prefix_tokens) prefix.push_back(Token{std::string(text::trim(t))});
        std::lock_guard lock(backend_mu_);
        auto cands = backend_.topk(r.condition, prefix, r.k);
        if (!prefix.empty())
          for (auto& c : cands) c.token.surface = " " + c.token.surface;
        return protocol::encode(protocol::TopkResponse{std::move(cands), opts_.model_id});
      });
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~ProtocolServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  void override_path(const std::string& path, Override o) {
    std::lock_guard lock(mu_);
    overrides_[path] = std::move(o);
  }
  int max_in_flight_seen() const { return max_seen_; }
  std::size_t requests(const std::string& path) const {
    std::lock_guard lock(mu_);
    auto it = counts_.find(path);
    return it == counts_.end() ? 0 : it->second;
  }
  std::vector<std::size_t> batch_sizes() const {
    std::lock_guard lock(mu_);
    return batch_sizes_;
  }
  std::optional<nlohmann::json> last_body(const std::string& path) const {
    std::lock_guard lock(mu_);
    auto it = bodies_.find(path);
    if (it == bodies_.end()) return std::nullopt;
    return std::optional<nlohmann::json>(std::in_place, it->second);
  }

 private:
  nlohmann::json score_one(const nlohmann::json& j) {
    const auto r = protocol::decode_score_request(j);
    if (text::trim(r.target).empty()) throw ArgumentError("empty target");
    std::lock_guard lock(backend_mu_);
    const auto seq = backend_.score(r);
    // Word-start tokens carry their leading space, as subword vocabularies do.
    auto toks = surfaces(seq.tokens());
    for (std::size_t i = 1; i < toks.size(); ++i) toks[i] = " " + toks[i];
    return protocol::encode(protocol::ScoreResponse{std::move(toks), seq.logprobs(), opts_.model_id});
  }

  template <typename F>
  void handle(const std::string& path, const httplib::Request& req, httplib::Response& res, F&& f) {
    const int now = ++in_flight_;
    int seen = max_seen_.load();
    while (now > seen && !max_seen_.compare_exchange_weak(seen, now)) {
    }
    Override o;
    {
      std::lock_guard lock(mu_);
      ++counts_[path];
      if (!req.body.empty()) {
        try {
          bodies_[path] = nlohmann::json::parse(req.body);
        } catch (...) {
        }
      }
      if (auto it = overrides_.find(path); it != overrides_.end()) o = it->second;
    }
    if (opts_.delay.count() > 0) std::this_thread::sleep_for(opts_.delay);
    if (opts_.required_token && req.get_header_value("Authorization") != "Bearer " + *opts_.required_token) {
      res.status = 401;
      res.set_content(protocol::error_body("unauthorized", "bad token").dump(), "application/json");
    } else if (o) {
      auto [status, body] = o(req.body);
      res.status = status;
      res.set_content(body, "application/json");
    } else {
      try {
        const auto j = req.body.empty() ? nlohmann::json::object() : nlohmann::json::parse(req.body);
        auto out = f(j);
        res.set_content(out.dump(), "application/json");
      } catch (const std::exception& e) {
        res.status = 400;
        res.set_content(protocol::error_body("bad_request", e.what()).dump(), "application/json");
      }
    }
    --in_flight_;
  }

  ScorerBackend& backend_;
  Options opts_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  mutable std::mutex mu_;
  std::mutex backend_mu_;
  std::map<std::string, Override> overrides_;
  std::map<std::string, std::size_t> counts_;
  std::map<std::string, nlohmann::json> bodies_;
  std::vector<std::size_t> batch_sizes_;
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_seen_{0};
};

// Random reference sentences over a small alphabet of distinct words.
inline std::vector<std::string> random_words(std::mt19937_64& rng, std::size_t n) {
  static const std::vector<std::string> pool = {"alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf",
                                                "hotel", "india", "juliet", "kilo", "lima", "mike", "november",
                                                "oscar", "papa", "quebec", "romeo", "sierra", "tango"};
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(pool[pick(rng)]);
  return out;
}

}  // namespace errlens::support
