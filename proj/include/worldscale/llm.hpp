#pragma once

// Provider-agnostic dispatch of extrapolation prompts: request
// fingerprints, an append-only JSONL response cache, bounded retries,
// per-provider rate limits and in-flight caps, and resumable batches.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <vector>

#include "worldscale/errors.hpp"

namespace worldscale {

/// A failure worth retrying (HTTP 429/5xx, connection reset, timeout).
class TransientError : public TransportError {
 public:
  using TransportError::TransportError;
};

struct ModelConfig {
  std::string provider_id;
  std::string model_name;
  double temperature = 0.0;
  std::size_t max_output_tokens = 1024;
  bool tools_enabled = false;
};

/// Throws UsageError when tools are enabled or ids are empty.
void validate_config(const ModelConfig& config);

/// SHA-256 over the canonical JSON of the prompt and the model config.
std::string request_fingerprint(const std::string& prompt, const ModelConfig& config);

struct ChatRequest {
  std::string prompt;
  ModelConfig config;
  // Routing metadata; never sent over the wire and not part of the
  // fingerprint.
  std::string task_id;
  int variant_id = 0;
};

class Provider {
 public:
  virtual ~Provider() = default;
  virtual std::string id() const = 0;
  /// Returns the response text. Throws TransientError (retried),
  /// TransportError (fatal for the slot) or RefusalError.
  virtual std::string complete(const ChatRequest& request) = 0;
};

struct RawResponse {
  std::string task_id;
  int variant_id = 0;
  std::string model_name;
  std::string provider_id;
  std::string request_fingerprint;
  std::string response_text;
  double latency_ms = 0.0;
  std::string timestamp;  // ISO 8601 UTC
  int attempt_count = 0;
};

std::string to_json_line(const RawResponse& r);
RawResponse raw_response_from_json(const std::string& line);

// ---------------------------------------------------------------------------

/// Append-only JSONL cache keyed by request fingerprint. Existing lines are
/// never rewritten; appends are serialized through one mutex. An empty path
/// keeps the cache in memory.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path path = {});

  std::optional<RawResponse> lookup(const std::string& fingerprint) const;
  /// No-op when the fingerprint is already present.
  void append(const RawResponse& response);
  std::size_t size() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::map<std::string, RawResponse> entries_;
  std::ofstream out_;
};

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{30000};
  std::function<void(std::chrono::milliseconds)> sleeper;  // default: this_thread::sleep_for

  /// Backoff before retry number `retry` (1-based).
  std::chrono::milliseconds backoff(int retry) const;
};

/// Token bucket with `requests_per_minute` refill and `burst` capacity. A
/// rate of zero disables limiting.
class RateLimiter {
 public:
  using Clock = std::function<double()>;  // seconds, monotonic
  using Sleeper = std::function<void(double)>;

  explicit RateLimiter(double requests_per_minute, double burst = 1.0, Clock clock = {}, Sleeper sleeper = {});

  void acquire();

 private:
  double rate_per_s_;
  double capacity_;
  double tokens_;
  double last_;
  Clock clock_;
  Sleeper sleeper_;
  std::mutex mutex_;
};

struct ProviderLimits {
  double requests_per_minute = 0.0;
  int max_in_flight = 4;
};

// ---------------------------------------------------------------------------

enum class SlotStatus { OK, FAILED, PENDING };

std::string_view to_string(SlotStatus s);

struct BatchJob {
  std::string task_id;
  int variant_id = 0;
  std::string prompt;
};

struct SlotResult {
  std::size_t job = 0;
  std::size_t config = 0;
  SlotStatus status = SlotStatus::PENDING;
  std::optional<RawResponse> response;
  std::string error;
  bool refused = false;
  bool from_cache = false;
};

struct BatchOptions {
  int threads = 8;
  /// Dispatch only the first N slots (the rest stay PENDING); used to
  /// simulate an interrupted run.
  std::optional<std::size_t> slot_limit;
  std::function<void(std::size_t done, std::size_t total)> progress;
};

struct BatchReport {
  std::vector<SlotResult> slots;  // index = job * configs + config
  std::size_t ok = 0;
  std::size_t failed = 0;
  std::size_t pending = 0;
  std::size_t cache_hits = 0;
  std::size_t provider_calls = 0;  // attempts that reached a provider
};

class LlmClient {
 public:
  explicit LlmClient(ResponseCache& cache, RetryPolicy retry = {});

  void register_provider(std::shared_ptr<Provider> provider, ProviderLimits limits = {},
                         RateLimiter::Clock clock = {}, RateLimiter::Sleeper sleeper = {});
  bool has_provider(const std::string& id) const;

  /// Cache hit, or a provider call with retries whose result is appended
  /// to the cache before returning. Sets *from_cache when given.
  RawResponse submit(const ChatRequest& request, bool* from_cache = nullptr);

  /// Exactly jobs.size() * configs.size() slots, each OK, FAILED or
  /// PENDING. Per-slot errors never abort the batch.
  BatchReport run_batch(std::span<const BatchJob> jobs, std::span<const ModelConfig> configs,
                        const BatchOptions& options = {});

  std::size_t provider_calls() const { return provider_calls_.load(); }

 private:
  struct Entry {
    std::shared_ptr<Provider> provider;
    std::unique_ptr<RateLimiter> limiter;
    std::unique_ptr<std::counting_semaphore<1024>> gate;
  };
  Entry& entry(const std::string& id);

  ResponseCache& cache_;
  RetryPolicy retry_;
  std::map<std::string, Entry> providers_;
  std::atomic<std::size_t> provider_calls_{0};
};

/// Proportional stratified subsample of `target` indices with
/// largest-remainder allocation (ties by stratum label), sampled without
/// replacement from a seeded shuffle. Returns sorted indices; all indices
/// when target >= strata.size().
std::vector<std::size_t> stratified_subsample(std::span<const std::string> strata, std::size_t target,
                                              std::uint64_t seed);

// ---------------------------------------------------------------------------
// Providers

/// Scriptable in-process provider with call instrumentation: a responder
/// produces the text, an optional failure script raises errors for the
/// first attempts, and the in-flight high-water mark is recorded.
class MockProvider : public Provider {
 public:
  using Responder = std::function<std::string(const ChatRequest&)>;

  MockProvider(std::string id, Responder responder);

  std::string id() const override { return id_; }
  std::string complete(const ChatRequest& request) override;

  /// The next `n` calls throw TransientError.
  void fail_next(int n) { fail_next_ = n; }
  void set_delay(std::chrono::milliseconds d) { delay_ = d; }

  std::size_t calls() const { return calls_.load(); }
  int max_in_flight_seen() const { return max_seen_.load(); }

 private:
  std::string id_;
  Responder responder_;
  std::atomic<int> fail_next_{0};
  std::chrono::milliseconds delay_{0};
  std::atomic<std::size_t> calls_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_seen_{0};
};

/// Connection settings for an OpenAI-style chat-completions endpoint.
struct HttpProviderConfig {
  std::string provider_id;
  std::string endpoint;  // e.g. https://api.example.com/v1/chat/completions
  std::string auth_env;  // environment variable holding the bearer token; empty for none
  std::string model_name;
  double requests_per_minute = 60.0;
  int max_in_flight = 4;
  double temperature = 0.0;
  std::size_t max_output_tokens = 1024;
  int timeout_seconds = 120;
};

/// Parses {"providers": [{"id", "endpoint", "auth_env", "model", "rpm",
/// "max_in_flight", "temperature", "max_output_tokens", "timeout_s"}]}.
std::vector<HttpProviderConfig> load_provider_configs(const std::filesystem::path& path);

ModelConfig model_config(const HttpProviderConfig& config);

/// Sends a single user message with no tool fields. HTTP 429 and 5xx are
/// transient; a content-filter stop or a refusal field is a RefusalError.
/// Throws UsageError when the auth variable is named but unset.
std::shared_ptr<Provider> make_http_provider(const HttpProviderConfig& config);

}  // namespace worldscale
