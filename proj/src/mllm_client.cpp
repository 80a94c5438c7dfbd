#include "mmsynth/mllm_client.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include "mmsynth/digest.hpp"
#include "mmsynth/error.hpp"

namespace mmsynth {
namespace {

struct SlotGuard {
  explicit SlotGuard(std::counting_semaphore<1 << 20>& s) : sem(s) { sem.acquire(); }
  ~SlotGuard() { sem.release(); }
  std::counting_semaphore<1 << 20>& sem;
};

std::string mime_for(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return "image/png";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  return "image/jpeg";
}

std::optional<double> retry_after_seconds(const HttpResponse& resp) {
  for (const auto& [k, v] : resp.headers) {
    std::string key = k;
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
    if (key != "retry-after") continue;
    try {
      std::size_t used = 0;
      const double s = std::stod(v, &used);
      if (used > 0 && s >= 0.0 && std::isfinite(s)) return s;
    } catch (const std::exception&) {
    }
  }
  return std::nullopt;
}

std::uint64_t digest64(std::string_view text) {
  const std::string hex = sha256_hex(text);
  return std::stoull(hex.substr(0, 16), nullptr, 16);
}

}  // namespace

void EndpointConfig::validate() const {
  if (max_concurrency < 1) throw ConfigError("endpoint.max_concurrency", "must be >= 1");
  if (max_retries < 0) throw ConfigError("endpoint.max_retries", "must be >= 0");
  if (!(request_timeout_s > 0.0)) throw ConfigError("endpoint.request_timeout", "must be > 0");
  if (model_name.empty()) throw ConfigError("endpoint.model_name", "must not be empty");
}

double BackoffPolicy::ceiling(int retry) const {
  if (retry < 1) return 0.0;
  const double raw = base_s * std::pow(factor, retry - 1);
  return std::min(cap_s, raw);
}

double BackoffPolicy::delay(int retry, Rng& rng) const { return rng.uniform() * ceiling(retry); }

bool is_retryable_status(int status) { return status == 0 || status == 408 || status == 429 || status >= 500; }

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

ImageResolver corpus_image_resolver(const Corpus& corpus) {
  return [&corpus](const std::string& id) -> std::string {
    const ImageRecord* rec = corpus.find(id);
    if (rec == nullptr) throw InputError("image not in corpus: " + id);
    const std::string& loc = rec->locator;
    if (loc.starts_with("http://") || loc.starts_with("https://") || loc.starts_with("data:")) return loc;
    std::string path = loc;
    if (path.starts_with("file://")) path = path.substr(7);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read image " + id + " at " + loc);
    std::ostringstream os;
    os << in.rdbuf();
    return "data:" + mime_for(path) + ";base64," + base64_encode(os.str());
  };
}

nlohmann::json build_request_body(const PromptBundle& bundle, const EndpointConfig& endpoint,
                                  const ImageResolver& resolve) {
  nlohmann::json content = nlohmann::json::array();
  content.push_back({{"type", "text"}, {"text", bundle.text}});
  for (const auto& id : bundle.attachments) {
    content.push_back({{"type", "image_url"}, {"image_url", {{"url", resolve(id)}}}});
  }
  return {{"model", endpoint.model_name},
          {"temperature", bundle.params.temperature},
          {"top_p", bundle.params.top_p},
          {"messages", nlohmann::json::array({{{"role", "user"}, {"content", content}}})}};
}

std::string extract_message_text(const nlohmann::json& response) {
  if (!response.is_object() || !response.contains("choices") || !response["choices"].is_array() ||
      response["choices"].empty()) {
    throw ParseError("response has no choices");
  }
  const auto& msg = response["choices"][0].value("message", nlohmann::json::object());
  if (!msg.contains("content")) throw ParseError("first choice has no message content");
  const auto& content = msg["content"];
  if (content.is_string()) return content.get<std::string>();
  if (content.is_array()) {
    std::string text;
    for (const auto& part : content) {
      if (part.is_object() && part.value("type", "") == "text" && part.contains("text") && part["text"].is_string()) {
        text += part["text"].get<std::string>();
      }
    }
    return text;
  }
  throw ParseError("message content is neither a string nor a list of parts");
}

MllmClient::MllmClient(EndpointConfig endpoint, std::shared_ptr<Transport> transport, ImageResolver resolve,
                       BackoffPolicy backoff, Sleeper sleeper)
    : endpoint_(std::move(endpoint)),
      transport_(std::move(transport)),
      resolve_(std::move(resolve)),
      backoff_(backoff),
      sleeper_(std::move(sleeper)),
      slots_(std::max(1, endpoint_.max_concurrency)) {
  endpoint_.validate();
  if (!transport_) throw ConfigError("endpoint", "no transport");
  if (!sleeper_) {
    sleeper_ = [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); };
  }
}

GenerationResult MllmClient::generate(const PromptBundle& bundle) {
  HttpRequest request;
  std::string base = endpoint_.base_url;
  while (!base.empty() && base.back() == '/') base.pop_back();
  request.url = base + "/chat/completions";
  request.headers = {{"Content-Type", "application/json"}};
  if (!endpoint_.api_key.empty()) request.headers.emplace_back("Authorization", "Bearer " + endpoint_.api_key);
  request.body = build_request_body(bundle, endpoint_, resolve_).dump();
  request.timeout_s = endpoint_.request_timeout_s;

  // Jitter only shapes wait times, never output.
  Rng jitter(stream_seed(digest64(bundle.text), Stream::kJitter));
  const auto start = std::chrono::steady_clock::now();
  for (int attempt = 1;; ++attempt) {
    HttpResponse resp;
    {
      SlotGuard slot(slots_);
      resp = transport_->post(request);
    }
    if (resp.status >= 200 && resp.status < 300) {
      GenerationResult result;
      try {
        const auto body = nlohmann::json::parse(resp.body);
        result.raw_text = extract_message_text(body);
        if (body.contains("usage") && body["usage"].is_object()) {
          const auto& u = body["usage"];
          result.usage = Usage{u.value("prompt_tokens", std::int64_t{0}), u.value("completion_tokens", std::int64_t{0}),
                               u.value("total_tokens", std::int64_t{0})};
        }
      } catch (const std::exception& e) {
        throw PermanentError(resp.status, std::string("malformed response body: ") + e.what());
      }
      result.attempt_count = attempt;
      result.latency_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      return result;
    }
    if (!is_retryable_status(resp.status)) {
      throw PermanentError(resp.status, "endpoint returned HTTP " + std::to_string(resp.status));
    }
    if (attempt > endpoint_.max_retries) {
      const std::string why = resp.status == 0 ? "transport error: " + resp.error
                                               : "HTTP " + std::to_string(resp.status);
      throw TransportError(resp.status, attempt,
                           "retry budget exhausted after " + std::to_string(attempt) + " attempts (" + why + ")");
    }
    double wait = backoff_.delay(attempt, jitter);
    if (const auto ra = retry_after_seconds(resp)) wait = std::min(backoff_.cap_s, std::max(wait, *ra));
    sleeper_(wait);
  }
}

namespace {

constexpr std::array<std::string_view, 48> kWords = {
    "amber",   "harbor",  "lantern", "meadow",  "granite", "violet",  "canyon", "orchard", "copper",  "willow",
    "glacier", "market",  "bridge",  "feather", "compass", "pebble",  "timber", "saffron", "quartz",  "rivulet",
    "beacon",  "thistle", "cobalt",  "harvest", "summit",  "cathedral", "lagoon", "ember",  "prairie", "mosaic",
    "falcon",  "juniper", "marble",  "nectar",  "oasis",   "pylon",   "ripple", "sequoia", "tundra",  "umber",
    "vessel",  "wharf",   "zephyr",  "atrium",  "bramble", "cinder",  "dune",   "estuary"};

class MockText {
 public:
  MockText(std::uint64_t seed, std::string language) : rng_(seed), language_(std::move(language)) {}

  std::string words(std::size_t lo, std::size_t hi) {
    const std::size_t n = lo + rng_.below(hi - lo + 1);
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
      if (i) out += ' ';
      out += kWords[rng_.below(kWords.size())];
    }
    return out;
  }

  // Non-instruction fields are tagged with the target language.
  std::string localized(std::size_t lo, std::size_t hi) { return "[" + language_ + "] " + words(lo, hi); }

  std::uint64_t number() { return rng_.below(1000000); }

 private:
  Rng rng_;
  std::string language_;
};

nlohmann::ordered_json mock_object(const SynthesisConfig& config, std::uint64_t seed) {
  MockText t(seed, config.language);
  const Modality m = config.modality;
  nlohmann::ordered_json j;
  j["description"] = "General Description: " + t.words(6, 10) + ". Object-Level Details: " + t.words(6, 10) +
                     ". Contextual Features: " + t.words(4, 8) + ". Task-specific Brainstorming: " + t.words(4, 8) +
                     ".";
  const auto tag = std::to_string(t.number());
  switch (config.task) {
    case TaskKind::kClassification: {
      const std::string instruction = "Classify the " + t.words(1, 2) + " shown in the image.";
      const std::string input = m.query_has_text() ? t.localized(8, 16) : std::string();
      j["task_instruction"] = instruction;
      j["input_text"] = input;
      j["label"] = t.localized(1, 2) + " " + tag;
      j["misleading_label"] = t.localized(1, 2) + " " + tag + "x";
      j["evaluation"] = "Relevance, plausibility, clarity and diversity reviewed: " + t.words(5, 9) + ".";
      j["possible_improvements"] = "Sharpen the labels: " + t.words(4, 8) + ".";
      j["revised_task_instruction"] = "Identify the category of the " + t.words(1, 2) + " depicted in the image.";
      j["revised_input_text"] = m.query_has_text() ? t.localized(8, 16) : std::string();
      j["revised_label"] = t.localized(1, 2) + " " + tag;
      j["revised_misleading_label"] = t.localized(1, 2) + " " + tag + "x";
      break;
    }
    case TaskKind::kVqa: {
      j["question"] = t.localized(6, 12) + "?";
      j["positive_answer"] = t.localized(2, 5) + " " + tag;
      j["hard_negative_answer"] = t.localized(2, 5) + " " + tag + "x";
      j["evaluation"] = "Relevance, plausibility and diversity reviewed: " + t.words(5, 9) + ".";
      j["possible_improvements"] = "Make the distractor closer: " + t.words(4, 8) + ".";
      j["revised_question"] = t.localized(6, 12) + "?";
      j["revised_positive_answer"] = t.localized(2, 5) + " " + tag;
      j["revised_hard_negative_answer"] = t.localized(2, 5) + " " + tag + "x";
      break;
    }
    case TaskKind::kRetrieval: {
      const auto doc = [&](const char* suffix) {
        return m.doc_has_text() ? t.localized(12, 24) + " " + tag + suffix : std::string();
      };
      j["task_instruction"] = "Retrieve the " + t.words(1, 2) + " that matches the given image.";
      j["query"] = m.query_has_text() ? t.localized(3, 8) : std::string();
      j["positive_document"] = doc("");
      j["hard_negative_document"] = doc("x");
      j["evaluation"] = "Relevance, plausibility, clarity and diversity reviewed: " + t.words(5, 9) + ".";
      j["possible_improvements"] = "Diversify the wording: " + t.words(4, 8) + ".";
      j["revised_task_instruction"] = "Find the " + t.words(1, 2) + " most closely related to the given image.";
      j["revised_query"] = m.query_has_text() ? t.localized(3, 8) : std::string();
      j["revised_positive_document"] = doc("");
      j["revised_hard_negative_document"] = doc("x");
      break;
    }
  }
  return j;
}

}  // namespace

GenerationResult mock_generate(const PromptBundle& bundle, const SynthesisConfig& config, int attempt) {
  const std::uint64_t seed = derive_seed(digest64(bundle.text),
                                         derive_seed(stream_seed(config.seed, Stream::kMock),
                                                     static_cast<std::uint64_t>(attempt)));
  GenerationResult result;
  result.raw_text = mock_object(config, seed).dump();
  result.attempt_count = 1;
  return result;
}

GenerationResult MockGenerator::generate(const PromptBundle& bundle, const SynthesisConfig& config, int attempt) {
  if (options_.max_latency.count() > 0) {
    thread_local std::mt19937_64 noise{std::random_device{}()};
    const auto us = static_cast<std::int64_t>(noise() % static_cast<std::uint64_t>(options_.max_latency.count() + 1));
    std::this_thread::sleep_for(std::chrono::microseconds(us));
  }
  GenerationResult result = mock_generate(bundle, config, attempt);
  if (options_.invalid_rate > 0.0) {
    Rng fault(derive_seed(stream_seed(config.seed, Stream::kMock), 0xFA17ULL + static_cast<std::uint64_t>(attempt)));
    if (fault.uniform() < options_.invalid_rate) {
      auto j = nlohmann::ordered_json::parse(result.raw_text);
      switch (fault.below(3)) {
        case 0:
          // Truncated output.
          result.raw_text = result.raw_text.substr(0, result.raw_text.size() / 2);
          break;
        case 1:
          j.erase("evaluation");
          result.raw_text = j.dump();
          break;
        default:
          j["revised_task_instruction"] = "";
          j["revised_question"] = "";
          result.raw_text = j.dump();
          break;
      }
    }
  }
  return result;
}

}  // namespace mmsynth
