#include "worldscale/llm.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <random>
#include <thread>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "worldscale/digest.hpp"
#include "worldscale/log.hpp"

namespace worldscale {
namespace {

using json = nlohmann::json;

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  return fmt::format("{}.{:03d}Z", buf, static_cast<int>(ms));
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

class SemaphoreGuard {
 public:
  explicit SemaphoreGuard(std::counting_semaphore<1024>& s) : s_(s) { s_.acquire(); }
  ~SemaphoreGuard() { s_.release(); }
  SemaphoreGuard(const SemaphoreGuard&) = delete;
  SemaphoreGuard& operator=(const SemaphoreGuard&) = delete;

 private:
  std::counting_semaphore<1024>& s_;
};

}  // namespace

void validate_config(const ModelConfig& config) {
  if (config.provider_id.empty()) throw UsageError("model config has no provider id");
  if (config.model_name.empty()) throw UsageError("model config has no model name");
  if (config.tools_enabled) {
    throw UsageError(fmt::format("model '{}': tool use must stay disabled", config.model_name));
  }
  if (config.temperature < 0.0) throw UsageError("temperature must be >= 0");
}

std::string request_fingerprint(const std::string& prompt, const ModelConfig& config) {
  json j = {
      {"prompt", prompt},
      {"provider_id", config.provider_id},
      {"model_name", config.model_name},
      {"temperature", config.temperature},
      {"max_output_tokens", config.max_output_tokens},
      {"tools_enabled", config.tools_enabled},
  };
  return sha256_hex(j.dump());
}

std::string to_json_line(const RawResponse& r) {
  json j = {
      {"task_id", r.task_id},
      {"variant_id", r.variant_id},
      {"model_name", r.model_name},
      {"provider_id", r.provider_id},
      {"request_fingerprint", r.request_fingerprint},
      {"response_text", r.response_text},
      {"latency_ms", r.latency_ms},
      {"timestamp", r.timestamp},
      {"attempt_count", r.attempt_count},
  };
  return j.dump();
}

RawResponse raw_response_from_json(const std::string& line) {
  json j = json::parse(line);
  RawResponse r;
  r.task_id = j.at("task_id").get<std::string>();
  r.variant_id = j.at("variant_id").get<int>();
  r.model_name = j.at("model_name").get<std::string>();
  r.provider_id = j.value("provider_id", "");
  r.request_fingerprint = j.at("request_fingerprint").get<std::string>();
  r.response_text = j.at("response_text").get<std::string>();
  r.latency_ms = j.value("latency_ms", 0.0);
  r.timestamp = j.value("timestamp", "");
  r.attempt_count = j.value("attempt_count", 1);
  return r;
}

// ---------------------------------------------------------------------------

ResponseCache::ResponseCache(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.empty()) return;
  bool needs_newline = false;
  if (std::filesystem::exists(path_)) {
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw DataError(fmt::format("cannot read cache {}", path_.string()));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        auto r = raw_response_from_json(line);
        entries_.emplace(r.request_fingerprint, std::move(r));
      } catch (const std::exception& e) {
        log::warning(fmt::format("{}:{}: skipping unreadable cache record ({})", path_.string(), lineno, e.what()));
      }
    }
    in.clear();
    in.seekg(0, std::ios::end);
    if (in.tellg() > 0) {
      in.seekg(-1, std::ios::end);
      char last = 0;
      in.get(last);
      needs_newline = last != '\n';
    }
  } else if (path_.has_parent_path()) {
    std::filesystem::create_directories(path_.parent_path());
  }
  out_.open(path_, std::ios::binary | std::ios::app);
  if (!out_) throw DataError(fmt::format("cannot open cache {} for appending", path_.string()));
  if (needs_newline) out_ << '\n' << std::flush;
}

std::optional<RawResponse> ResponseCache::lookup(const std::string& fingerprint) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(fingerprint);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ResponseCache::append(const RawResponse& response) {
  std::lock_guard lock(mutex_);
  if (!entries_.emplace(response.request_fingerprint, response).second) return;
  if (out_.is_open()) {
    out_ << to_json_line(response) << '\n';
    out_.flush();
    if (!out_) throw DataError(fmt::format("write to cache {} failed", path_.string()));
  }
}

std::size_t ResponseCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::chrono::milliseconds RetryPolicy::backoff(int retry) const {
  const double ms = static_cast<double>(initial_backoff.count()) * std::pow(multiplier, retry - 1);
  return std::chrono::milliseconds(
      static_cast<long long>(std::min(ms, static_cast<double>(max_backoff.count()))));
}

RateLimiter::RateLimiter(double requests_per_minute, double burst, Clock clock, Sleeper sleeper)
    : rate_per_s_(requests_per_minute / 60.0),
      capacity_(std::max(1.0, burst)),
      tokens_(std::max(1.0, burst)),
      clock_(std::move(clock)),
      sleeper_(std::move(sleeper)) {
  if (!clock_) {
    clock_ = [] {
      return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
    };
  }
  if (!sleeper_) {
    sleeper_ = [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); };
  }
  last_ = clock_();
}

void RateLimiter::acquire() {
  if (!(rate_per_s_ > 0.0)) return;
  while (true) {
    double wait = 0.0;
    {
      std::lock_guard lock(mutex_);
      const double now = clock_();
      tokens_ = std::min(capacity_, tokens_ + (now - last_) * rate_per_s_);
      last_ = now;
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      wait = (1.0 - tokens_) / rate_per_s_;
    }
    sleeper_(wait);
  }
}

// ---------------------------------------------------------------------------

std::string_view to_string(SlotStatus s) {
  switch (s) {
    case SlotStatus::OK: return "OK";
    case SlotStatus::FAILED: return "FAILED";
    case SlotStatus::PENDING: return "PENDING";
  }
  return "PENDING";
}

LlmClient::LlmClient(ResponseCache& cache, RetryPolicy retry) : cache_(cache), retry_(std::move(retry)) {
  if (!retry_.sleeper) retry_.sleeper = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  if (retry_.max_attempts < 1) throw UsageError("retry policy needs at least one attempt");
}

void LlmClient::register_provider(std::shared_ptr<Provider> provider, ProviderLimits limits,
                                  RateLimiter::Clock clock, RateLimiter::Sleeper sleeper) {
  if (!provider) throw UsageError("null provider");
  if (limits.max_in_flight < 1 || limits.max_in_flight > 1024) {
    throw UsageError(fmt::format("max_in_flight {} outside 1-1024", limits.max_in_flight));
  }
  Entry e;
  e.limiter = std::make_unique<RateLimiter>(limits.requests_per_minute, 1.0, std::move(clock), std::move(sleeper));
  e.gate = std::make_unique<std::counting_semaphore<1024>>(limits.max_in_flight);
  const auto id = provider->id();
  e.provider = std::move(provider);
  providers_[id] = std::move(e);
}

bool LlmClient::has_provider(const std::string& id) const { return providers_.count(id) > 0; }

LlmClient::Entry& LlmClient::entry(const std::string& id) {
  auto it = providers_.find(id);
  if (it == providers_.end()) throw UsageError(fmt::format("no provider registered as '{}'", id));
  return it->second;
}

RawResponse LlmClient::submit(const ChatRequest& request, bool* from_cache) {
  validate_config(request.config);
  const auto fingerprint = request_fingerprint(request.prompt, request.config);
  if (auto hit = cache_.lookup(fingerprint)) {
    if (from_cache) *from_cache = true;
    return *hit;
  }
  if (from_cache) *from_cache = false;

  auto& e = entry(request.config.provider_id);
  for (int attempt = 1;; ++attempt) {
    e.limiter->acquire();
    std::string text;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      SemaphoreGuard gate(*e.gate);
      ++provider_calls_;
      text = e.provider->complete(request);
    } catch (const TransientError& err) {
      if (attempt >= retry_.max_attempts) {
        throw TransportError(fmt::format("{}: gave up after {} attempts: {}", request.config.provider_id, attempt,
                                         err.what()));
      }
      log::warning(fmt::format("{}: attempt {} failed ({}), retrying", request.config.provider_id, attempt,
                               err.what()));
      retry_.sleeper(retry_.backoff(attempt));
      continue;
    }
    RawResponse r;
    r.task_id = request.task_id;
    r.variant_id = request.variant_id;
    r.model_name = request.config.model_name;
    r.provider_id = request.config.provider_id;
    r.request_fingerprint = fingerprint;
    r.response_text = std::move(text);
    r.latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    r.timestamp = utc_timestamp();
    r.attempt_count = attempt;
    cache_.append(r);
    return r;
  }
}

BatchReport LlmClient::run_batch(std::span<const BatchJob> jobs, std::span<const ModelConfig> configs,
                                 const BatchOptions& options) {
  BatchReport report;
  const std::size_t total = jobs.size() * configs.size();
  report.slots.resize(total);
  for (std::size_t s = 0; s < total; ++s) {
    report.slots[s].job = s / configs.size();
    report.slots[s].config = s % configs.size();
  }
  const std::size_t limit = std::min(total, options.slot_limit.value_or(total));
  const std::size_t calls_before = provider_calls_.load();

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (std::size_t s = next++; s < limit; s = next++) {
      auto& slot = report.slots[s];
      const auto& job = jobs[slot.job];
      ChatRequest req{job.prompt, configs[slot.config], job.task_id, job.variant_id};
      try {
        bool hit = false;
        slot.response = submit(req, &hit);
        slot.from_cache = hit;
        slot.status = SlotStatus::OK;
      } catch (const RefusalError& e) {
        slot.status = SlotStatus::FAILED;
        slot.refused = true;
        slot.error = fmt::format("refusal: {}", e.what());
      } catch (const Error& e) {
        slot.status = SlotStatus::FAILED;
        slot.error = e.what();
      }
      if (slot.status == SlotStatus::FAILED) {
        log::warning(fmt::format("slot {} ({}, variant {}, {}) failed: {}", s, job.task_id, job.variant_id,
                                 configs[slot.config].model_name, slot.error));
      }
      const std::size_t d = ++done;
      if (options.progress) {
        std::lock_guard lock(progress_mutex);
        options.progress(d, total);
      }
    }
  };

  const int threads = std::max(1, std::min<int>(options.threads, static_cast<int>(std::max<std::size_t>(limit, 1))));
  {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  for (const auto& slot : report.slots) {
    switch (slot.status) {
      case SlotStatus::OK: ++report.ok; break;
      case SlotStatus::FAILED: ++report.failed; break;
      case SlotStatus::PENDING: ++report.pending; break;
    }
    if (slot.from_cache) ++report.cache_hits;
  }
  report.provider_calls = provider_calls_.load() - calls_before;
  return report;
}

std::vector<std::size_t> stratified_subsample(std::span<const std::string> strata, std::size_t target,
                                              std::uint64_t seed) {
  const std::size_t n = strata.size();
  std::vector<std::size_t> out;
  if (target >= n) {
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = i;
    return out;
  }
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[strata[i]].push_back(i);

  struct Quota {
    std::string label;
    std::size_t take;
    double remainder;
  };
  std::vector<Quota> quotas;
  std::size_t assigned = 0;
  for (const auto& [label, members] : groups) {
    const double exact = static_cast<double>(target) * static_cast<double>(members.size()) / static_cast<double>(n);
    const auto whole = static_cast<std::size_t>(std::floor(exact));
    quotas.push_back({label, whole, exact - static_cast<double>(whole)});
    assigned += whole;
  }
  std::vector<std::size_t> order(quotas.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return quotas[a].remainder > quotas[b].remainder; });
  for (std::size_t r = 0; assigned < target; ++r, ++assigned) ++quotas[order[r % order.size()]].take;

  std::mt19937_64 rng(seed);
  for (const auto& q : quotas) {
    auto members = groups[q.label];
    for (std::size_t i = members.size(); i-- > 1;) {
      const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i + 1));
      std::swap(members[i], members[std::min(j, i)]);
    }
    out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(q.take));
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------

MockProvider::MockProvider(std::string id, Responder responder)
    : id_(std::move(id)), responder_(std::move(responder)) {}

std::string MockProvider::complete(const ChatRequest& request) {
  ++calls_;
  const int now = ++in_flight_;
  int seen = max_seen_.load();
  while (now > seen && !max_seen_.compare_exchange_weak(seen, now)) {
  }
  struct Leave {
    std::atomic<int>& c;
    ~Leave() { --c; }
  } leave{in_flight_};

  if (delay_.count() > 0) std::this_thread::sleep_for(delay_);
  int f = fail_next_.load();
  while (f > 0 && !fail_next_.compare_exchange_weak(f, f - 1)) {
  }
  if (f > 0) throw TransientError(fmt::format("{}: scripted transient failure", id_));
  return responder_(request);
}

}  // namespace worldscale
