#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mmsynth/config_sampler.hpp"
#include "mmsynth/image_store.hpp"
#include "mmsynth/prompt_builder.hpp"
#include "mmsynth/rng.hpp"

namespace mmsynth {

struct EndpointConfig {
  std::string base_url;  // e.g. https://api.example.com/v1
  std::string api_key;
  std::string model_name = "gpt-4o-2024-08-06";
  int max_concurrency = 8;
  int max_retries = 5;
  double request_timeout_s = 120.0;

  void validate() const;
};

struct Usage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::int64_t total_tokens = 0;
};

struct GenerationResult {
  std::string raw_text;
  double latency_s = 0.0;
  int attempt_count = 1;
  std::optional<Usage> usage;
};

struct HttpRequest {
  std::string url;
  std::vector<std::pair<std::string, std::string>> headers;
  std::string body;
  double timeout_s = 120.0;
};

// status 0 means no HTTP response arrived (connection error or timeout).
struct HttpResponse {
  int status = 0;
  std::string body;
  std::map<std::string, std::string> headers;
  std::string error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const HttpRequest& request) = 0;
};

// cpp-httplib backed transport; supports http:// and https:// URLs.
std::shared_ptr<Transport> make_http_transport();

// Exponential backoff with full jitter: the n-th retry (1-based) sleeps a
// uniform draw from [0, min(cap, base * factor^(n-1))].
struct BackoffPolicy {
  double base_s = 1.0;
  double factor = 2.0;
  double cap_s = 30.0;

  double ceiling(int retry) const;
  double delay(int retry, Rng& rng) const;
};

bool is_retryable_status(int status);

// Maps an image id to a URL or data: URL. Throws InputError when the image
// cannot be resolved.
using ImageResolver = std::function<std::string(const std::string& id)>;

// http(s) and data: locators pass through; anything else is read from disk
// and inlined as base64.
ImageResolver corpus_image_resolver(const Corpus& corpus);

std::string base64_encode(std::string_view bytes);

// Chat-completions request: one user message holding the prompt text part
// followed by one image part per attachment, in attachment order.
nlohmann::json build_request_body(const PromptBundle& bundle, const EndpointConfig& endpoint,
                                  const ImageResolver& resolve);

// Text of the first choice's message. Throws ParseError on malformed bodies.
std::string extract_message_text(const nlohmann::json& response);

using Sleeper = std::function<void(double seconds)>;

// Thread-safe client. At most max_concurrency requests are in flight; the
// request slot is released while backing off.
class MllmClient {
 public:
  MllmClient(EndpointConfig endpoint, std::shared_ptr<Transport> transport, ImageResolver resolve,
             BackoffPolicy backoff = {}, Sleeper sleeper = {});

  GenerationResult generate(const PromptBundle& bundle);

  const EndpointConfig& endpoint() const noexcept { return endpoint_; }

 private:
  EndpointConfig endpoint_;
  std::shared_ptr<Transport> transport_;
  ImageResolver resolve_;
  BackoffPolicy backoff_;
  Sleeper sleeper_;
  std::counting_semaphore<1 << 20> slots_;
};

// Deterministic offline stand-in for the model: a schema-valid JSON object
// for the config's task whose empty fields follow the modality. `attempt`
// varies the output for regeneration; attempt 0 is the canonical draw.
GenerationResult mock_generate(const PromptBundle& bundle, const SynthesisConfig& config, int attempt = 0);

// Source of generations for the pipeline.
class Generator {
 public:
  virtual ~Generator() = default;
  virtual GenerationResult generate(const PromptBundle& bundle, const SynthesisConfig& config, int attempt) = 0;
  virtual std::string model_name() const = 0;
};

class EndpointGenerator final : public Generator {
 public:
  explicit EndpointGenerator(std::shared_ptr<MllmClient> client) : client_(std::move(client)) {}
  GenerationResult generate(const PromptBundle& bundle, const SynthesisConfig&, int) override {
    return client_->generate(bundle);
  }
  std::string model_name() const override { return client_->endpoint().model_name; }

 private:
  std::shared_ptr<MllmClient> client_;
};

struct MockOptions {
  // Fraction of generations deliberately corrupted (seeded), to exercise
  // rejection accounting.
  double invalid_rate = 0.0;
  // Random per-call sleep in [0, max_latency], drawn from a nondeterministic
  // source so completion order varies between runs.
  std::chrono::microseconds max_latency{0};
};

class MockGenerator final : public Generator {
 public:
  explicit MockGenerator(MockOptions options = {}) : options_(options) {}
  GenerationResult generate(const PromptBundle& bundle, const SynthesisConfig& config, int attempt) override;
  std::string model_name() const override { return "mock"; }

 private:
  MockOptions options_;
};

}  // namespace mmsynth
