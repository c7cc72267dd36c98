#include <atomic>
#include <cstdlib>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "support.hpp"
#include "worldscale/errors.hpp"
#include "worldscale/llm.hpp"

namespace ws = worldscale;

namespace {

ws::ModelConfig cfg(std::string provider = "mock", std::string model = "m1") {
  ws::ModelConfig c;
  c.provider_id = std::move(provider);
  c.model_name = std::move(model);
  return c;
}

ws::RetryPolicy no_sleep() {
  ws::RetryPolicy r;
  r.sleeper = [](std::chrono::milliseconds) {};
  return r;
}

std::shared_ptr<ws::MockProvider> echo(std::string id = "mock") {
  return std::make_shared<ws::MockProvider>(std::move(id), [](const ws::ChatRequest& r) {
    return "Echo " + r.task_id + "\nFinal answer: 10%";
  });
}

std::vector<ws::BatchJob> jobs(std::size_t n) {
  std::vector<ws::BatchJob> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({"t" + std::to_string(i), 0, "prompt " + std::to_string(i)});
  return out;
}

// Minimal chat-completions endpoint on a random local port.
class FakeEndpoint {
 public:
  explicit FakeEndpoint(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post("/v1/chat/completions", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeEndpoint() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

ws::HttpProviderConfig http_config(const std::string& url, const std::string& env = "") {
  ws::HttpProviderConfig c;
  c.provider_id = "local";
  c.endpoint = url;
  c.auth_env = env;
  c.model_name = "local-model";
  c.requests_per_minute = 0.0;
  c.timeout_seconds = 5;
  return c;
}

std::string reply(const std::string& content, const std::string& finish = "stop") {
  nlohmann::json j = {{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}, {"finish_reason", finish}}}}};
  return j.dump();
}

}  // namespace

TEST(Fingerprint, DependsOnPromptAndConfigOnly) {
  const auto a = ws::request_fingerprint("p", cfg());
  EXPECT_EQ(a.size(), 64u);
  EXPECT_EQ(a, ws::request_fingerprint("p", cfg()));
  EXPECT_NE(a, ws::request_fingerprint("q", cfg()));
  EXPECT_NE(a, ws::request_fingerprint("p", cfg("mock", "m2")));
  auto warm = cfg();
  warm.temperature = 0.7;
  EXPECT_NE(a, ws::request_fingerprint("p", warm));
}

TEST(Config, ToolsAndEmptyIdsAreRejected) {
  auto c = cfg();
  c.tools_enabled = true;
  EXPECT_THROW(ws::validate_config(c), ws::UsageError);
  EXPECT_THROW(ws::validate_config(cfg("", "m")), ws::UsageError);
  EXPECT_NO_THROW(ws::validate_config(cfg()));
}

TEST(Config, CredentialsMustComeFromTheEnvironment) {
  wstest::TempDir dir;
  wstest::spit(dir / "ok.json", R"({"providers": [{"id": "a", "endpoint": "https://x/v1", "model": "m",
    "auth_env": "WS_TEST_KEY", "rpm": 30, "max_in_flight": 2}]})");
  const auto ok = ws::load_provider_configs(dir / "ok.json");
  ASSERT_EQ(ok.size(), 1u);
  EXPECT_EQ(ok[0].auth_env, "WS_TEST_KEY");
  EXPECT_EQ(ok[0].max_in_flight, 2);
  EXPECT_DOUBLE_EQ(ok[0].requests_per_minute, 30.0);
  for (const char* field : {"api_key", "token"}) {
    wstest::spit(dir / "bad.json", std::string(R"({"providers": [{"id": "a", "endpoint": "https://x", "model": "m", ")") +
                                       field + R"(": "secret"}]})");
    EXPECT_THROW(ws::load_provider_configs(dir / "bad.json"), ws::DataError) << field;
  }
  wstest::spit(dir / "tools.json",
               R"({"providers": [{"id": "a", "endpoint": "https://x", "model": "m", "tools_enabled": true}]})");
  EXPECT_THROW(ws::load_provider_configs(dir / "tools.json"), ws::DataError);
  ::unsetenv("WS_TEST_UNSET_KEY");
  EXPECT_THROW(ws::make_http_provider(http_config("http://127.0.0.1:1/x", "WS_TEST_UNSET_KEY")), ws::UsageError);
}

TEST(Cache, PersistsAndReloads) {
  wstest::TempDir dir;
  const auto path = dir / "cache.jsonl";
  ws::RawResponse r;
  r.task_id = "t";
  r.request_fingerprint = "abc";
  r.response_text = "line one\nline \"two\"";
  r.attempt_count = 2;
  {
    ws::ResponseCache cache(path);
    cache.append(r);
    cache.append(r);  // duplicate fingerprints are ignored
    EXPECT_EQ(cache.size(), 1u);
  }
  EXPECT_EQ(wstest::count_lines(path), 1u);
  ws::ResponseCache again(path);
  const auto hit = again.lookup("abc");
  ASSERT_TRUE(hit.has_value());
  EXPECT_EQ(hit->response_text, r.response_text);
  EXPECT_EQ(hit->attempt_count, 2);
  EXPECT_FALSE(again.lookup("zzz").has_value());
  EXPECT_EQ(ws::raw_response_from_json(ws::to_json_line(r)).response_text, r.response_text);
}

TEST(Retry, TransientFailuresAreRetriedWithBackoff) {
  ws::ResponseCache cache;
  std::vector<std::chrono::milliseconds> waits;
  ws::RetryPolicy retry;
  retry.sleeper = [&](std::chrono::milliseconds d) { waits.push_back(d); };
  ws::LlmClient client(cache, retry);
  auto mock = echo();
  mock->fail_next(2);
  client.register_provider(mock);
  const auto r = client.submit({"p", cfg(), "t", 0});
  EXPECT_EQ(r.attempt_count, 3);
  EXPECT_EQ(mock->calls(), 3u);
  EXPECT_EQ(waits, (std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(500), std::chrono::milliseconds(1000)}));

  mock->fail_next(10);
  EXPECT_THROW(client.submit({"other", cfg(), "t", 0}), ws::TransportError);
  EXPECT_EQ(retry.backoff(20), retry.max_backoff);
}

TEST(Batch, ResumeCallsOnlyMissingSlots) {
  wstest::TempDir dir;
  const auto js = jobs(10);
  const std::vector<ws::ModelConfig> configs = {cfg("mock", "m1"), cfg("mock", "m2")};
  std::size_t first_calls = 0;
  {
    ws::ResponseCache cache(dir / "cache.jsonl");
    ws::LlmClient client(cache, no_sleep());
    auto mock = echo();
    client.register_provider(mock);
    ws::BatchOptions o;
    o.slot_limit = 7;
    const auto rep = client.run_batch(js, configs, o);
    EXPECT_EQ(rep.slots.size(), 20u);
    EXPECT_EQ(rep.ok, 7u);
    EXPECT_EQ(rep.pending, 13u);
    first_calls = mock->calls();
  }
  ws::ResponseCache cache(dir / "cache.jsonl");
  ws::LlmClient client(cache, no_sleep());
  auto mock = echo();
  client.register_provider(mock);
  const auto rep = client.run_batch(js, configs);
  EXPECT_EQ(first_calls, 7u);
  EXPECT_EQ(mock->calls(), 13u);
  EXPECT_EQ(rep.cache_hits, 7u);
  EXPECT_EQ(rep.ok, 20u);
  EXPECT_EQ(rep.provider_calls, 13u);
  EXPECT_EQ(wstest::count_lines(dir / "cache.jsonl"), 20u);
  for (std::size_t s = 0; s < rep.slots.size(); ++s) {
    EXPECT_EQ(rep.slots[s].job, s / 2);
    EXPECT_EQ(rep.slots[s].config, s % 2);
    EXPECT_EQ(rep.slots[s].response->model_name, configs[s % 2].model_name);
  }
}

TEST(Batch, InFlightNeverExceedsTheProviderCap) {
  ws::ResponseCache cache;
  ws::LlmClient client(cache, no_sleep());
  auto mock = echo();
  mock->set_delay(std::chrono::milliseconds(5));
  client.register_provider(mock, {0.0, 3});
  ws::BatchOptions o;
  o.threads = 12;
  const std::vector<ws::ModelConfig> configs = {cfg()};
  const auto rep = client.run_batch(jobs(40), configs, o);
  EXPECT_EQ(rep.ok, 40u);
  EXPECT_LE(mock->max_in_flight_seen(), 3);
  EXPECT_GE(mock->max_in_flight_seen(), 2);
}

TEST(Batch, FailuresAndRefusalsStayInTheirSlots) {
  ws::ResponseCache cache;
  ws::LlmClient client(cache, no_sleep());
  client.register_provider(std::make_shared<ws::MockProvider>("mock", [](const ws::ChatRequest& r) -> std::string {
    if (r.task_id == "t1") throw ws::RefusalError("declined");
    if (r.task_id == "t2") throw ws::TransportError("bad request");
    return "Final answer: 5%";
  }));
  const std::vector<ws::ModelConfig> configs = {cfg()};
  const auto rep = client.run_batch(jobs(4), configs);
  EXPECT_EQ(rep.ok, 2u);
  EXPECT_EQ(rep.failed, 2u);
  EXPECT_TRUE(rep.slots[1].refused);
  EXPECT_EQ(rep.slots[1].status, ws::SlotStatus::FAILED);
  EXPECT_FALSE(rep.slots[2].refused);
  EXPECT_NE(rep.slots[2].error.find("bad request"), std::string::npos);
  EXPECT_EQ(cache.size(), 2u);

  const std::vector<ws::ModelConfig> unknown = {cfg("nobody")};
  const auto rep2 = client.run_batch(jobs(1), unknown);
  EXPECT_EQ(rep2.failed, 1u);
}

TEST(RateLimiter, SpacesRequestsOnAFakeClock) {
  double now = 0.0;
  std::vector<double> sleeps;
  ws::RateLimiter limiter(60.0, 1.0, [&] { return now; }, [&](double s) {
    sleeps.push_back(s);
    now += s;
  });
  for (int i = 0; i < 5; ++i) limiter.acquire();
  EXPECT_NEAR(now, 4.0, 1e-9);  // one token per second after the first
  EXPECT_EQ(sleeps.size(), 4u);
  ws::RateLimiter off(0.0);
  for (int i = 0; i < 1000; ++i) off.acquire();
}

TEST(Subsample, ProportionalAndDeterministic) {
  std::vector<std::string> strata;
  for (int i = 0; i < 60; ++i) strata.push_back("math");
  for (int i = 0; i < 30; ++i) strata.push_back("reading");
  for (int i = 0; i < 10; ++i) strata.push_back("science");
  const auto a = ws::stratified_subsample(strata, 20, 5);
  EXPECT_EQ(a, ws::stratified_subsample(strata, 20, 5));
  ASSERT_EQ(a.size(), 20u);
  std::map<std::string, int> counts;
  for (auto i : a) ++counts[strata[i]];
  EXPECT_EQ(counts["math"], 12);
  EXPECT_EQ(counts["reading"], 6);
  EXPECT_EQ(counts["science"], 2);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(ws::stratified_subsample(strata, 500, 5).size(), 100u);

  std::vector<std::string> odd = {"a", "a", "b", "c"};
  const auto s = ws::stratified_subsample(odd, 3, 1);
  EXPECT_EQ(s.size(), 3u);
}

TEST(HttpProvider, RetriesTransientStatusAndSendsTheBearerToken) {
  std::atomic<int> hits{0};
  std::string seen_auth;
  nlohmann::json seen_body;
  FakeEndpoint server([&](const httplib::Request& req, httplib::Response& res) {
    const int n = ++hits;
    seen_auth = req.get_header_value("Authorization");
    seen_body = nlohmann::json::parse(req.body);
    if (n == 1) {
      res.status = 503;
      return;
    }
    if (n == 2) {
      res.status = 429;
      return;
    }
    res.set_content(reply("Working it out.\nFinal answer: 7%"), "application/json");
  });
  ::setenv("WS_TEST_HTTP_KEY", "sk-test-value", 1);
  auto provider = ws::make_http_provider(http_config(server.url(), "WS_TEST_HTTP_KEY"));
  ws::ResponseCache cache;
  ws::LlmClient client(cache, no_sleep());
  client.register_provider(provider);
  ws::ModelConfig mc = ws::model_config(http_config(server.url()));
  const auto r = client.submit({"How many?", mc, "t", 0});
  EXPECT_EQ(r.attempt_count, 3);
  EXPECT_EQ(hits.load(), 3);
  EXPECT_EQ(r.response_text, "Working it out.\nFinal answer: 7%");
  EXPECT_EQ(seen_auth, "Bearer sk-test-value");
  EXPECT_EQ(seen_body["model"], "local-model");
  EXPECT_EQ(seen_body["messages"].size(), 1u);
  EXPECT_FALSE(seen_body.contains("tools"));
  ::unsetenv("WS_TEST_HTTP_KEY");
}

TEST(HttpProvider, ContentFilterIsARefusalAndClientErrorsAreFatal) {
  std::atomic<int> hits{0};
  FakeEndpoint server([&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    const auto body = nlohmann::json::parse(req.body);
    const auto prompt = body["messages"][0]["content"].get<std::string>();
    if (prompt == "filtered") {
      res.set_content(reply("", "content_filter"), "application/json");
    } else {
      res.status = 400;
      res.set_content("bad", "text/plain");
    }
  });
  auto provider = ws::make_http_provider(http_config(server.url()));
  const auto mc = ws::model_config(http_config(server.url()));
  EXPECT_THROW(provider->complete({"filtered", mc, "t", 0}), ws::RefusalError);
  ws::ResponseCache cache;
  ws::LlmClient client(cache, no_sleep());
  client.register_provider(provider);
  EXPECT_THROW(client.submit({"other", mc, "t", 0}), ws::TransportError);
  EXPECT_EQ(hits.load(), 2);  // the 400 was not retried
}
