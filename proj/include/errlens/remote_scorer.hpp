#pragma once

#include <chrono>
#include <future>
#include <mutex>
#include <optional>
#include <regex>
#include <semaphore>
#include <string>
#include <vector>

#include <httplib.h>

#include <nlohmann/json.hpp>

#include "errlens/errors.hpp"
#include "errlens/protocol.hpp"
#include "errlens/scorer.hpp"

namespace errlens {

struct ServerEndpoint {
  std::string base_url;
  std::chrono::milliseconds timeout{30000};
  int max_in_flight = 4;
  std::optional<std::string> auth_token;
  // Extra attempts after a transport failure; HTTP errors are not retried.
  int retries = 2;
};

// Client for the JSON scoring protocol. Shareable across threads; at most
// max_in_flight requests are outstanding at once. Values from the server are
// returned verbatim. Token surfaces are expected to concatenate back to the
// scored text.
class RemoteBackend final : public ScorerBackend {
 public:
  explicit RemoteBackend(ServerEndpoint endpoint)
      : endpoint_(std::move(endpoint)), slots_(std::max(endpoint_.max_in_flight, 1)) {
    if (endpoint_.max_in_flight < 1) throw ArgumentError("max_in_flight must be >= 1");
    if (endpoint_.retries < 0) throw ArgumentError("retries must be >= 0");
    static const std::regex url(R"(^(http)://([^/:\s]+)(:(\d+))?(/[^\s]*)?$)", std::regex::icase);
    std::smatch m;
    if (!std::regex_match(endpoint_.base_url, m, url))
      throw ArgumentError("endpoint '" + endpoint_.base_url + "' is not an absolute http:// URL");
    host_ = m[2].str();
    port_ = m[4].matched ? std::stoi(m[4].str()) : 80;
    base_path_ = m[5].matched ? m[5].str() : "";
    while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
  }

  const ServerEndpoint& endpoint() const noexcept { return endpoint_; }

  protocol::ServerInfo server_info() const {
    std::lock_guard lock(info_mu_);
    if (!info_) info_ = protocol::decode_info(request("GET", protocol::kInfoPath, nullptr));
    return *info_;
  }

  BackendInfo info() const override {
    const auto i = server_info();
    return {i.model_id, "remote:" + i.model_id, i.supports_topk, true, i.max_batch};
  }

  ScoredSequence score(const ScoreRequest& req) override {
    check_target(req);
    return protocol::decode_score_response(request("POST", protocol::kScorePath, protocol::encode(req))).to_sequence();
  }

  // Splits into chunks of the server's max_batch and sends them concurrently,
  // bounded by max_in_flight.
  std::vector<ScoredSequence> score_batch(std::span<const ScoreRequest> reqs) override {
    for (const auto& r : reqs) check_target(r);
    if (reqs.empty()) return {};
    const auto chunk = static_cast<std::size_t>(std::max(server_info().max_batch, 1));

    std::vector<std::future<std::vector<protocol::ScoreResponse>>> parts;
    for (std::size_t start = 0; start < reqs.size(); start += chunk) {
      auto piece = reqs.subspan(start, std::min(chunk, reqs.size() - start));
      parts.push_back(std::async(std::launch::async, [this, piece] {
        nlohmann::json items = nlohmann::json::array();
        for (const auto& r : piece) items.push_back(protocol::encode(r));
        nlohmann::json body = {{"items", std::move(items)}};
        return protocol::decode_batch_response(request("POST", protocol::kScoreBatchPath, body),
                                               piece.size());
      }));
    }
    std::vector<ScoredSequence> out;
    out.reserve(reqs.size());
    std::exception_ptr err;
    for (auto& p : parts) {
      try {
        for (const auto& r : p.get()) out.push_back(r.to_sequence());
      } catch (...) {
        if (!err) err = std::current_exception();
      }
    }
    if (err) std::rethrow_exception(err);
    return out;
  }

  std::vector<Candidate> topk(std::string_view condition, std::span<const Token> prefix, int k) override {
    if (k < 1) throw ArgumentError("k must be >= 1");
    protocol::TopkRequest req{std::string(condition), surfaces(prefix), k};
    return protocol::decode_topk_response(request("POST", protocol::kTopkPath, protocol::encode(req)), k).candidates;
  }

  std::string detokenize(std::span<const Token> tokens) const override { return text::join(surfaces(tokens), ""); }

  // Raw exchange for diagnostics: returns (status, body) without raising on
  // non-2xx statuses.
  std::pair<int, std::string> exchange(const std::string& method, const std::string& path,
                                       const std::optional<nlohmann::json>& body) const {
    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};

    std::string last_error;
    for (int attempt = 0; attempt <= endpoint_.retries; ++attempt) {
      httplib::Client cli(host_, port_);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(endpoint_.timeout);
      const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(endpoint_.timeout - secs);
      cli.set_connection_timeout(secs.count(), usecs.count());
      cli.set_read_timeout(secs.count(), usecs.count());
      cli.set_write_timeout(secs.count(), usecs.count());
      httplib::Headers headers;
      if (endpoint_.auth_token) headers.emplace("Authorization", "Bearer " + *endpoint_.auth_token);
      const auto full = base_path_ + path;
      auto res = method == "GET" ? cli.Get(full, headers)
                                 : cli.Post(full, headers, body ? body->dump() : std::string("{}"), "application/json");
      if (res) return {res->status, res->body};
      last_error = httplib::to_string(res.error());
    }
    throw TransportError(endpoint_.base_url + path + ": " + last_error + " (after " +
                         std::to_string(endpoint_.retries + 1) + " attempts)");
  }

 private:
  static void check_target(const ScoreRequest& r) {
    if (text::trim(r.target).empty()) throw ArgumentError("target must be non-empty");
  }

  nlohmann::json request(const std::string& method, const std::string& path,
                         const std::optional<nlohmann::json>& body) const {
    const auto [status, text] = exchange(method, path, body);
    if (status < 200 || status >= 300) throw ServerError(status, text);
    try {
      return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
      throw ProtocolError(endpoint_.base_url + path + ": response is not valid JSON");
    }
  }

  ServerEndpoint endpoint_;
  std::string host_;
  int port_ = 80;
  std::string base_path_;
  mutable std::counting_semaphore<> slots_;
  mutable std::mutex info_mu_;
  mutable std::optional<protocol::ServerInfo> info_;
};

}  // namespace errlens
