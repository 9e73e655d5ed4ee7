#include "ctxhsd/provider.hpp"

#include <algorithm>
#include <cmath>
#include <thread>
#include <vector>

#include "ctxhsd/errors.hpp"
#include "ctxhsd/util.hpp"

namespace ctxhsd {

std::string EchoProvider::complete(const ChatRequest& request) {
  count();
  std::string out = request.user;
  for (const auto& [slot, value] : request.resolved_inputs) {
    if (value.rfind("sha256:", 0) == 0) out += "\n[" + slot + " " + value + "]";
  }
  return out;
}

ScriptedProvider& ScriptedProvider::on(std::string prompt_id, std::string reply) {
  return on(std::move(prompt_id), [reply = std::move(reply)](const ChatRequest&) { return reply; });
}

ScriptedProvider& ScriptedProvider::on(std::string prompt_id, Handler handler) {
  std::lock_guard lock(mu_);
  handlers_[std::move(prompt_id)] = std::move(handler);
  return *this;
}

std::string ScriptedProvider::complete(const ChatRequest& request) {
  count();
  Handler h;
  {
    std::lock_guard lock(mu_);
    auto it = handlers_.find(request.prompt_id);
    if (it == handlers_.end())
      throw BackendError("scripted provider has no reply for prompt " + request.prompt_id, false);
    h = it->second;
  }
  return h(request);
}

std::string MockProvider::complete(const ChatRequest& request) {
  count();
  std::string digest_src;
  for (const auto& [k, v] : request.resolved_inputs) digest_src += k + "=" + v + ";";
  const std::string digest = sha256_hex(digest_src);
  const auto pick = std::stoull(digest.substr(0, 8), nullptr, 16);
  const std::string& id = request.prompt_id;
  if (id == "predict_binary_tweet" || id == "predict_binary_meme") return pick % 2 ? "yes" : "no";
  if (id == "predict_multiclass_tweet") {
    static const char* kClasses[] = {"White Grievance", "Incitement", "Stereotypical", "Inferiority",
                                     "Irony",           "Threatening", "Other"};
    return kClasses[pick % 7];
  }
  if (id == "predict_multilabel_meme") {
    static const char* kLabels[] = {"Shaming", "Stereotype", "Objectification", "Violence"};
    std::vector<std::string> chosen;
    for (int b = 0; b < 4; ++b)
      if ((pick >> b) & 1u) chosen.emplace_back(kLabels[b]);
    return chosen.empty() ? "None" : join(chosen, ", ");
  }
  std::string out = "Mock " + id + ":";
  for (const auto& [k, v] : request.resolved_inputs)
    if (v.rfind("sha256:", 0) != 0) out += " " + v;
  if (request.image) out += " [image " + digest.substr(0, 12) + "]";
  return out;
}

Sleeper real_sleeper() {
  return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::string call_with_retry(const std::function<std::string()>& fn, const RetryPolicy& policy, Rng& rng,
                            const Sleeper& sleep) {
  const int attempts = std::max(1, policy.max_attempts);
  for (int attempt = 1;; ++attempt) {
    try {
      return fn();
    } catch (const BackendError& e) {
      if (!e.retriable() || attempt >= attempts) throw;
      const double cap = std::min<double>(static_cast<double>(policy.max_delay.count()),
                                          static_cast<double>(policy.base_delay.count()) * std::ldexp(1.0, attempt - 1));
      sleep(std::chrono::milliseconds(static_cast<long long>(rng.uniform() * cap)));
    }
  }
}

TokenBucket::TokenBucket(double rate_per_second, double burst)
    : rate_(rate_per_second), capacity_(std::max(1.0, burst)), tokens_(std::max(1.0, burst)), last_(Clock::now()) {}

void TokenBucket::refill(Clock::time_point now) {
  const double elapsed = std::chrono::duration<double>(now - last_).count();
  tokens_ = std::min(capacity_, tokens_ + elapsed * rate_);
  last_ = now;
}

bool TokenBucket::try_acquire() {
  std::lock_guard lock(mu_);
  refill(Clock::now());
  if (tokens_ >= 1.0) {
    tokens_ -= 1.0;
    return true;
  }
  return false;
}

void TokenBucket::acquire() {
  for (;;) {
    std::chrono::duration<double> wait{};
    {
      std::lock_guard lock(mu_);
      refill(Clock::now());
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
    }
    std::this_thread::sleep_for(wait);
  }
}

ResilientProvider::ResilientProvider(LLMProvider& inner, RetryPolicy policy, double rate_per_second, Sleeper sleep,
                                     std::uint64_t seed)
    : inner_(inner), policy_(policy), sleep_(std::move(sleep)), rng_(derive_seed(seed, 0xB0FF)) {
  if (rate_per_second > 0.0) bucket_ = std::make_unique<TokenBucket>(rate_per_second, rate_per_second);
}

std::string ResilientProvider::complete(const ChatRequest& request) {
  auto attempt = [&] {
    if (bucket_) bucket_->acquire();
    return inner_.complete(request);
  };
  // Jitter draws share one generator; the lock only guards the draw itself.
  Rng local(0);
  {
    std::lock_guard lock(rng_mu_);
    local = Rng(rng_.next());
  }
  return call_with_retry(attempt, policy_, local, sleep_);
}

void run_bounded(std::size_t n, std::size_t parallelism, const std::function<void(std::size_t)>& job) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(parallelism, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) job(i);
    });
  }
}

}  // namespace ctxhsd
