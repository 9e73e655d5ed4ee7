#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>

#include "ctxhsd/prompts.hpp"
#include "ctxhsd/rng.hpp"

namespace ctxhsd {

struct Capabilities {
  bool text = true;
  bool image = false;
};

class LLMProvider {
 public:
  virtual ~LLMProvider() = default;
  virtual std::string id() const = 0;
  virtual Capabilities capabilities() const = 0;
  // Throws BackendError on failure; retriable() tells the retry loop whether to try again.
  virtual std::string complete(const ChatRequest& request) = 0;
};

// Counts calls; base for the mock providers.
class CountingProvider : public LLMProvider {
 public:
  std::size_t calls() const { return calls_.load(); }

 protected:
  void count() { ++calls_; }

 private:
  std::atomic<std::size_t> calls_{0};
};

// Returns the resolved prompt: the request text with its inputs, plus the image
// digest when an image is attached.
class EchoProvider : public CountingProvider {
 public:
  explicit EchoProvider(std::string id = "mock-echo") : id_(std::move(id)) {}
  std::string id() const override { return id_; }
  Capabilities capabilities() const override { return {true, true}; }
  std::string complete(const ChatRequest& request) override;

 private:
  std::string id_;
};

// Replies keyed by prompt id; a handler may inspect the request or throw.
class ScriptedProvider : public CountingProvider {
 public:
  using Handler = std::function<std::string(const ChatRequest&)>;

  explicit ScriptedProvider(std::string id = "mock-scripted", Capabilities caps = {true, true})
      : id_(std::move(id)), caps_(caps) {}
  ScriptedProvider& on(std::string prompt_id, std::string reply);
  ScriptedProvider& on(std::string prompt_id, Handler handler);

  std::string id() const override { return id_; }
  Capabilities capabilities() const override { return caps_; }
  std::string complete(const ChatRequest& request) override;

 private:
  std::string id_;
  Capabilities caps_;
  std::mutex mu_;
  std::map<std::string, Handler, std::less<>> handlers_;
};

// Offline stand-in used by the CLI's --mock: echoes generation prompts and
// answers prediction prompts with a label chosen by hashing the inputs.
class MockProvider : public CountingProvider {
 public:
  explicit MockProvider(std::string id = "mock") : id_(std::move(id)) {}
  std::string id() const override { return id_; }
  Capabilities capabilities() const override { return {true, true}; }
  std::string complete(const ChatRequest& request) override;

 private:
  std::string id_;
};

struct HttpProviderOptions {
  std::string base_url = "https://generativelanguage.googleapis.com/v1beta/openai";
  std::string model = "gemini-2.0-flash";
  std::string api_key_env = "GEMINI_API_KEY";
  std::chrono::seconds timeout{120};
  bool image_capable = true;
};

// Chat-completions client for any OpenAI-compatible endpoint.
class OpenAICompatibleProvider : public LLMProvider {
 public:
  explicit OpenAICompatibleProvider(HttpProviderOptions options);
  std::string id() const override;
  Capabilities capabilities() const override { return {true, options_.image_capable}; }
  std::string complete(const ChatRequest& request) override;

  // Exposed for tests: request body and response parsing, no network.
  static std::string build_body(const ChatRequest& request, const HttpProviderOptions& options);
  static std::string parse_response(std::string_view body);

 private:
  HttpProviderOptions options_;
  std::string api_key_;
};

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds base_delay{1000};
  std::chrono::milliseconds max_delay{30000};
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;
Sleeper real_sleeper();

// Runs `fn` until it succeeds, a non-retriable BackendError escapes, or the
// attempts are exhausted. Delay before retry k (1-based) is uniform in
// [0, min(max_delay, base_delay * 2^(k-1))].
std::string call_with_retry(const std::function<std::string()>& fn, const RetryPolicy& policy, Rng& rng,
                            const Sleeper& sleep);

class TokenBucket {
 public:
  using Clock = std::chrono::steady_clock;
  TokenBucket(double rate_per_second, double burst);
  // Blocks until a token is available.
  void acquire();
  bool try_acquire();

 private:
  void refill(Clock::time_point now);

  std::mutex mu_;
  double rate_;
  double capacity_;
  double tokens_;
  Clock::time_point last_;
};

// Provider decorator adding rate limiting and retries.
class ResilientProvider : public LLMProvider {
 public:
  ResilientProvider(LLMProvider& inner, RetryPolicy policy, double rate_per_second = 0.0,
                    Sleeper sleep = real_sleeper(), std::uint64_t seed = 0);
  std::string id() const override { return inner_.id(); }
  Capabilities capabilities() const override { return inner_.capabilities(); }
  std::string complete(const ChatRequest& request) override;

 private:
  LLMProvider& inner_;
  RetryPolicy policy_;
  std::unique_ptr<TokenBucket> bucket_;
  Sleeper sleep_;
  std::mutex rng_mu_;
  Rng rng_;
};

// Runs job(i) for i in [0, n) on at most `parallelism` threads. Exceptions
// from jobs are the caller's responsibility; a throwing job terminates.
void run_bounded(std::size_t n, std::size_t parallelism, const std::function<void(std::size_t)>& job);

}  // namespace ctxhsd
