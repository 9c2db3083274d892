#pragma once

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "errlens/protocol.hpp"
#include "errlens/remote_scorer.hpp"

namespace errlens::conformance {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// A request sent to a live server; the response is validated against the
// schema, not compared with recorded values.
struct Probe {
  std::string name;
  std::string method;
  std::string path;
  nlohmann::json request;
};

inline std::vector<Probe> default_probes() {
  const nlohmann::json score = {
      {"condition", "Mike goes to the bookstore with my friend on Thursday."},
      {"target", "Jerry went to the bookstore happily with friend Friday."},
      {"prompts", {{"encoder_suffixes", nlohmann::json::array()}, {"decoder_prefixes", nlohmann::json::array()}}}};
  nlohmann::json prompted = score;
  prompted["prompts"]["encoder_suffixes"] = {"Such as"};
  return {
      {"info", "GET", protocol::kInfoPath, nullptr},
      {"score", "POST", protocol::kScorePath, score},
      {"score_prompted", "POST", protocol::kScorePath, prompted},
      {"score_batch", "POST", protocol::kScoreBatchPath, {{"items", {score, prompted}}}},
      {"topk", "POST", protocol::kTopkPath,
       {{"condition", "Mike goes to the bookstore with my friend on Thursday."},
        {"prefix_tokens", nlohmann::json::array()},
        {"k", 10}}},
      {"error_envelope", "POST", protocol::kScorePath,
       {{"condition", "a"}, {"target", ""}, {"prompts", {{"encoder_suffixes", nlohmann::json::array()}, {"decoder_prefixes", nlohmann::json::array()}}}}},
  };
}

// Validates one (probe, status, body) exchange.
inline CheckResult check_exchange(const Probe& probe, int status, const std::string& body) {
  CheckResult r{probe.name, false, {}};
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception&) {
    r.detail = "response is not JSON";
    return r;
  }
  try {
    if (probe.name == "error_envelope") {
      if (status < 400 || status >= 500) {
        r.detail = "expected a 4xx status, got " + std::to_string(status);
        return r;
      }
      if (!protocol::is_error_envelope(j)) {
        r.detail = "missing {\"error\": {\"code\", \"message\"}} envelope";
        return r;
      }
      r.passed = true;
      return r;
    }
    if (status != 200) {
      r.detail = "HTTP " + std::to_string(status);
      return r;
    }
    if (probe.path == protocol::kInfoPath) {
      protocol::decode_info(j);
    } else if (probe.path == protocol::kScorePath) {
      protocol::decode_score_response(j);
    } else if (probe.path == protocol::kScoreBatchPath) {
      protocol::decode_batch_response(j, probe.request.at("items").size());
    } else if (probe.path == protocol::kTopkPath) {
      const int k = probe.request.at("k").get<int>();
      if (protocol::decode_topk_response(j, k).candidates.empty()) {
        r.detail = "no candidates";
        return r;
      }
    }
    r.passed = true;
  } catch (const Error& e) {
    r.detail = e.what();
  }
  return r;
}

// Pings /v1/info, then runs every probe. Transport failures are reported as
// failed checks; topk is skipped when the server does not advertise it.
inline std::vector<CheckResult> run(const RemoteBackend& client, const std::vector<Probe>& probes = default_probes()) {
  std::vector<CheckResult> out;
  bool topk = true;
  for (const auto& p : probes) {
    if (p.path == protocol::kTopkPath && !topk) {
      out.push_back({p.name, true, "skipped: server does not support topk"});
      continue;
    }
    try {
      const auto [status, body] = client.exchange(p.method, p.path, p.request.is_null() ? std::nullopt : std::optional(p.request));
      out.push_back(check_exchange(p, status, body));
      if (p.path == protocol::kInfoPath && out.back().passed)
        topk = protocol::decode_info(nlohmann::json::parse(body)).supports_topk;
    } catch (const Error& e) {
      out.push_back({p.name, false, e.what()});
    }
  }
  return out;
}

}  // namespace errlens::conformance
