#include "sparc/metrics.hpp"

// httplib leaks macros that clash with Eigen internals, so it must come after
// every header that pulls in Eigen.
#include <httplib.h>
#include <json.hpp>

#include "sparc/common.hpp"

namespace sparc {

// "http://host[:port][/path]" -> (host:port base, path)
static std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
  const std::string prefix = "http://";
  if (endpoint.rfind(prefix, 0) != 0) {
    throw ConfigError("remote scorer endpoint must start with http:// : " + endpoint);
  }
  const size_t slash = endpoint.find('/', prefix.size());
  if (slash == std::string::npos) return {endpoint, "/"};
  return {endpoint.substr(0, slash), endpoint.substr(slash)};
}

double remote_toxicity_score(const std::string& text, const ToxicityScorer& scorer) {
  const auto [base, path] = split_endpoint(scorer.endpoint);
  nlohmann::json body;
  body["text"] = text;
  const std::string payload = body.dump();

  std::string last_error = "no attempt made";
  const int attempts = 1 + std::max(0, scorer.retries);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    httplib::Client client(base);
    client.set_connection_timeout(scorer.timeout_seconds, 0);
    client.set_read_timeout(scorer.timeout_seconds, 0);
    client.set_write_timeout(scorer.timeout_seconds, 0);

    auto res = client.Post(path, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "http status " + std::to_string(res->status);
      continue;
    }
    try {
      const auto reply = nlohmann::json::parse(res->body);
      if (!reply.contains("score") || !reply["score"].is_number()) {
        throw EvalError("remote scorer reply has no numeric score field");
      }
      const double score = reply["score"].get<double>();
      if (score < 0.0 || score > 1.0) {
        throw EvalError("remote scorer returned a score outside [0, 1]: " +
                        std::to_string(score));
      }
      return score;
    } catch (const nlohmann::json::exception& e) {
      last_error = std::string("malformed reply: ") + e.what();
    }
  }
  throw EvalError("remote scorer failed after " + std::to_string(attempts) +
                  " attempts: " + last_error);
}

}  // namespace sparc
