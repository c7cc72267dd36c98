#include <cstdlib>
#include <fstream>

#include <fmt/core.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "worldscale/llm.hpp"

namespace worldscale {
namespace {

using json = nlohmann::json;

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw UsageError(fmt::format("endpoint '{}' lacks a scheme", url));
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

class OpenAiStyleProvider : public Provider {
 public:
  OpenAiStyleProvider(HttpProviderConfig config, std::string token)
      : config_(std::move(config)), token_(std::move(token)), endpoint_(split_endpoint(config_.endpoint)) {}

  std::string id() const override { return config_.provider_id; }

  std::string complete(const ChatRequest& request) override {
    json body = {
        {"model", request.config.model_name},
        {"messages", json::array({{{"role", "user"}, {"content", request.prompt}}})},
        {"temperature", request.config.temperature},
        {"max_tokens", request.config.max_output_tokens},
    };

    httplib::Client client(endpoint_.origin);
    client.set_connection_timeout(config_.timeout_seconds, 0);
    client.set_read_timeout(config_.timeout_seconds, 0);
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);

    auto res = client.Post(endpoint_.path, headers, body.dump(), "application/json");
    if (!res) {
      throw TransientError(
          fmt::format("{}: request failed ({})", config_.provider_id, httplib::to_string(res.error())));
    }
    if (res->status == 429 || res->status >= 500) {
      throw TransientError(fmt::format("{}: HTTP {}", config_.provider_id, res->status));
    }
    if (res->status < 200 || res->status >= 300) {
      throw TransportError(fmt::format("{}: HTTP {}: {}", config_.provider_id, res->status, res->body.substr(0, 200)));
    }

    json reply;
    try {
      reply = json::parse(res->body);
    } catch (const json::parse_error& e) {
      throw TransientError(fmt::format("{}: unreadable response body ({})", config_.provider_id, e.what()));
    }
    if (!reply.contains("choices") || !reply["choices"].is_array() || reply["choices"].empty()) {
      throw TransportError(fmt::format("{}: response has no choices", config_.provider_id));
    }
    const auto& choice = reply["choices"][0];
    if (choice.value("finish_reason", "") == "content_filter") {
      throw RefusalError(fmt::format("{}: response blocked by content filter", config_.provider_id));
    }
    const auto& message = choice.contains("message") ? choice["message"] : json::object();
    if (message.contains("refusal") && message["refusal"].is_string()) {
      throw RefusalError(fmt::format("{}: {}", config_.provider_id, message["refusal"].get<std::string>()));
    }
    if (!message.contains("content") || !message["content"].is_string()) {
      throw TransportError(fmt::format("{}: response has no text content", config_.provider_id));
    }
    return message["content"].get<std::string>();
  }

 private:
  HttpProviderConfig config_;
  std::string token_;
  Endpoint endpoint_;
};

}  // namespace

std::vector<HttpProviderConfig> load_provider_configs(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open provider config {}", path.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(fmt::format("{}: invalid JSON ({})", path.string(), e.what()));
  }
  if (!j.contains("providers") || !j["providers"].is_array()) {
    throw DataError(fmt::format("{}: expected a 'providers' array", path.string()));
  }
  std::vector<HttpProviderConfig> out;
  for (const auto& p : j["providers"]) {
    for (const char* key : {"id", "endpoint", "model"}) {
      if (!p.contains(key)) throw DataError(fmt::format("{}: provider entry missing key '{}'", path.string(), key));
    }
    if (p.contains("api_key") || p.contains("token")) {
      throw DataError(fmt::format("{}: credentials belong in an environment variable (auth_env)", path.string()));
    }
    HttpProviderConfig c;
    c.provider_id = p["id"].get<std::string>();
    c.endpoint = p["endpoint"].get<std::string>();
    c.model_name = p["model"].get<std::string>();
    c.auth_env = p.value("auth_env", "");
    c.requests_per_minute = p.value("rpm", c.requests_per_minute);
    c.max_in_flight = p.value("max_in_flight", c.max_in_flight);
    c.temperature = p.value("temperature", c.temperature);
    c.max_output_tokens = p.value("max_output_tokens", c.max_output_tokens);
    c.timeout_seconds = p.value("timeout_s", c.timeout_seconds);
    if (p.value("tools_enabled", false)) {
      throw DataError(fmt::format("{}: provider '{}' enables tools", path.string(), c.provider_id));
    }
    out.push_back(std::move(c));
  }
  return out;
}

ModelConfig model_config(const HttpProviderConfig& config) {
  ModelConfig m;
  m.provider_id = config.provider_id;
  m.model_name = config.model_name;
  m.temperature = config.temperature;
  m.max_output_tokens = config.max_output_tokens;
  return m;
}

std::shared_ptr<Provider> make_http_provider(const HttpProviderConfig& config) {
  std::string token;
  if (!config.auth_env.empty()) {
    const char* v = std::getenv(config.auth_env.c_str());
    if (!v || !*v) {
      throw UsageError(fmt::format("provider '{}': environment variable {} is not set", config.provider_id,
                                   config.auth_env));
    }
    token = v;
  }
  return std::make_shared<OpenAiStyleProvider>(config, std::move(token));
}

}  // namespace worldscale
