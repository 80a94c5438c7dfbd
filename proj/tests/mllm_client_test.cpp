#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <gtest/gtest.h>

#include <atomic>
#include <mutex>
#include <thread>

#include "mmsynth/error.hpp"
#include "mmsynth/mllm_client.hpp"
#include "mmsynth/response_validator.hpp"
#include "test_util.hpp"

using namespace mmsynth;

namespace {

std::string ok_body(const std::string& text) {
  return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}},
                        {"usage", {{"prompt_tokens", 10}, {"completion_tokens", 5}, {"total_tokens", 15}}}}
      .dump();
}

class ScriptedTransport : public Transport {
 public:
  explicit ScriptedTransport(std::vector<HttpResponse> script) : script_(std::move(script)) {}
  HttpResponse post(const HttpRequest& request) override {
    std::lock_guard lock(mu_);
    requests.push_back(request);
    const auto i = std::min(requests.size() - 1, script_.size() - 1);
    return script_[i];
  }
  std::vector<HttpRequest> requests;

 private:
  std::vector<HttpResponse> script_;
  std::mutex mu_;
};

class CountingTransport : public Transport {
 public:
  HttpResponse post(const HttpRequest&) override {
    const int now = ++in_flight_;
    int prev = peak.load();
    while (now > prev && !peak.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
    --in_flight_;
    return {200, ok_body("{}"), {}, {}};
  }
  std::atomic<int> peak{0};

 private:
  std::atomic<int> in_flight_{0};
};

EndpointConfig endpoint(int max_retries = 5, int max_concurrency = 8) {
  EndpointConfig e;
  e.base_url = "http://example.invalid/v1/";
  e.api_key = "sk-test";
  e.max_retries = max_retries;
  e.max_concurrency = max_concurrency;
  return e;
}

ImageResolver passthrough() {
  return [](const std::string& id) { return "https://img/" + id; };
}

PromptBundle bundle(std::vector<std::string> attachments = {"anchor"}) {
  PromptBundle b;
  b.text = "describe";
  b.attachments = std::move(attachments);
  return b;
}

struct SleepLog {
  std::vector<double> waits;
  Sleeper sleeper() {
    return [this](double s) { waits.push_back(s); };
  }
};

}  // namespace

TEST(MllmClient, RetryBudgetExhaustedAfterMaxRetriesPlusOne) {
  auto t = std::make_shared<ScriptedTransport>(std::vector<HttpResponse>{{429, "slow down", {}, {}}});
  SleepLog log;
  MllmClient client(endpoint(2), t, passthrough(), {}, log.sleeper());
  try {
    client.generate(bundle());
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.status(), 429);
    EXPECT_EQ(e.attempts(), 3);
  }
  EXPECT_EQ(t->requests.size(), 3u);
  EXPECT_EQ(log.waits.size(), 2u);
}

TEST(MllmClient, SucceedsOnSecondAttempt) {
  auto t = std::make_shared<ScriptedTransport>(
      std::vector<HttpResponse>{{503, "", {}, {}}, {200, ok_body("{\"a\": \"b\"}"), {}, {}}});
  SleepLog log;
  MllmClient client(endpoint(), t, passthrough(), {}, log.sleeper());
  const auto r = client.generate(bundle());
  EXPECT_EQ(r.attempt_count, 2);
  EXPECT_EQ(r.raw_text, "{\"a\": \"b\"}");
  ASSERT_TRUE(r.usage.has_value());
  EXPECT_EQ(r.usage->total_tokens, 15);
  ASSERT_EQ(log.waits.size(), 1u);
  EXPECT_GE(log.waits[0], 0.0);
  EXPECT_LE(log.waits[0], 1.0);
}

TEST(MllmClient, NetworkErrorsAndTimeoutsRetry) {
  auto t = std::make_shared<ScriptedTransport>(std::vector<HttpResponse>{
      {0, "", {}, "connection refused"}, {408, "", {}, {}}, {200, ok_body("x"), {}, {}}});
  SleepLog log;
  MllmClient client(endpoint(), t, passthrough(), {}, log.sleeper());
  EXPECT_EQ(client.generate(bundle()).attempt_count, 3);
}

TEST(MllmClient, ClientErrorsArePermanent) {
  auto t = std::make_shared<ScriptedTransport>(std::vector<HttpResponse>{{400, "bad", {}, {}}});
  MllmClient client(endpoint(), t, passthrough(), {}, [](double) {});
  try {
    client.generate(bundle());
    FAIL();
  } catch (const PermanentError& e) {
    EXPECT_EQ(e.status(), 400);
  }
  EXPECT_EQ(t->requests.size(), 1u);

  auto garbled = std::make_shared<ScriptedTransport>(std::vector<HttpResponse>{{200, "<html>", {}, {}}});
  MllmClient c2(endpoint(), garbled, passthrough(), {}, [](double) {});
  EXPECT_THROW(c2.generate(bundle()), PermanentError);
}

TEST(MllmClient, RetryAfterIsHonored) {
  auto t = std::make_shared<ScriptedTransport>(
      std::vector<HttpResponse>{{429, "", {{"Retry-After", "7"}}, {}}, {200, ok_body("x"), {}, {}}});
  SleepLog log;
  MllmClient client(endpoint(), t, passthrough(), {}, log.sleeper());
  client.generate(bundle());
  ASSERT_EQ(log.waits.size(), 1u);
  EXPECT_DOUBLE_EQ(log.waits[0], 7.0);
}

TEST(MllmClient, RequestCarriesTextThenImagesInOrder) {
  auto t = std::make_shared<ScriptedTransport>(std::vector<HttpResponse>{{200, ok_body("x"), {}, {}}});
  MllmClient client(endpoint(), t, passthrough(), {}, [](double) {});
  client.generate(bundle({"anchor", "pos", "neg"}));
  ASSERT_EQ(t->requests.size(), 1u);
  const auto& req = t->requests[0];
  EXPECT_EQ(req.url, "http://example.invalid/v1/chat/completions");
  bool auth = false;
  for (const auto& [k, v] : req.headers) auth |= k == "Authorization" && v == "Bearer sk-test";
  EXPECT_TRUE(auth);

  const auto body = nlohmann::json::parse(req.body);
  EXPECT_EQ(body["model"], "gpt-4o-2024-08-06");
  EXPECT_EQ(body["temperature"], 1.0);
  EXPECT_EQ(body["top_p"], 1.0);
  const auto& content = body["messages"][0]["content"];
  ASSERT_EQ(content.size(), 4u);
  EXPECT_EQ(content[0]["type"], "text");
  EXPECT_EQ(content[0]["text"], "describe");
  int images = 0;
  for (const auto& part : content) images += part["type"] == "image_url";
  EXPECT_EQ(images, 3);
  EXPECT_EQ(content[1]["image_url"]["url"], "https://img/anchor");
  EXPECT_EQ(content[2]["image_url"]["url"], "https://img/pos");
  EXPECT_EQ(content[3]["image_url"]["url"], "https://img/neg");
}

TEST(MllmClient, ConcurrencyNeverExceedsLimit) {
  auto t = std::make_shared<CountingTransport>();
  MllmClient client(endpoint(5, 3), t, passthrough(), {}, [](double) {});
  std::vector<std::jthread> threads;
  for (int i = 0; i < 12; ++i) {
    threads.emplace_back([&] {
      for (int k = 0; k < 5; ++k) client.generate(bundle());
    });
  }
  threads.clear();
  EXPECT_LE(t->peak.load(), 3);
  EXPECT_GE(t->peak.load(), 2);
}

TEST(BackoffPolicy, ScheduleIsMonotoneAndCapped) {
  const BackoffPolicy p;
  EXPECT_DOUBLE_EQ(p.ceiling(1), 1.0);
  EXPECT_DOUBLE_EQ(p.ceiling(2), 2.0);
  EXPECT_DOUBLE_EQ(p.ceiling(3), 4.0);
  EXPECT_DOUBLE_EQ(p.ceiling(6), 30.0);
  EXPECT_DOUBLE_EQ(p.ceiling(20), 30.0);
  for (int r = 1; r < 20; ++r) EXPECT_LE(p.ceiling(r), p.ceiling(r + 1));
  Rng rng(3);
  for (int r = 1; r < 10; ++r) {
    const double d = p.delay(r, rng);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, p.ceiling(r));
  }
  EXPECT_TRUE(is_retryable_status(429));
  EXPECT_TRUE(is_retryable_status(502));
  EXPECT_FALSE(is_retryable_status(401));
}

TEST(EndpointConfig, Validates) {
  auto e = endpoint();
  e.max_concurrency = 0;
  EXPECT_THROW(e.validate(), ConfigError);
  e = endpoint();
  e.request_timeout_s = 0;
  EXPECT_THROW(e.validate(), ConfigError);
}

TEST(ImageResolver, InlinesLocalFilesAndPassesUrls) {
  mmsynth::testing::TempDir dir;
  mmsynth::testing::write_file(dir / "x.png", "PNGDATA");
  const auto corpus = Corpus::from_records({{"local", (dir / "x.png").string(), std::nullopt, ImageStatus::kOk},
                                            {"remote", "https://cdn/x.jpg", std::nullopt, ImageStatus::kOk},
                                            {"gone", (dir / "none.jpg").string(), std::nullopt, ImageStatus::kOk}});
  const auto resolve = corpus_image_resolver(corpus);
  EXPECT_EQ(resolve("local"), "data:image/png;base64," + base64_encode("PNGDATA"));
  EXPECT_EQ(resolve("remote"), "https://cdn/x.jpg");
  EXPECT_THROW(resolve("gone"), InputError);
  EXPECT_THROW(resolve("missing"), InputError);
  EXPECT_EQ(base64_encode("hello"), "aGVsbG8=");
}

TEST(MllmClient, TalksToALocalServer) {
  httplib::Server server;
  std::atomic<int> calls{0};
  std::string seen_auth;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (calls++ == 0) {
      res.status = 500;
      return;
    }
    seen_auth = req.get_header_value("Authorization");
    const auto body = nlohmann::json::parse(req.body);
    res.set_content(ok_body("model=" + body["model"].get<std::string>()), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  auto e = endpoint();
  e.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  e.request_timeout_s = 5;
  MllmClient client(e, make_http_transport(), passthrough(), {}, [](double) {});
  const auto r = client.generate(bundle());
  EXPECT_EQ(r.raw_text, "model=gpt-4o-2024-08-06");
  EXPECT_EQ(r.attempt_count, 2);
  EXPECT_EQ(seen_auth, "Bearer sk-test");
  server.stop();
  th.join();

  auto dead = e;
  dead.max_retries = 1;
  MllmClient offline(dead, make_http_transport(), passthrough(), {}, [](double) {});
  try {
    offline.generate(bundle());
    FAIL();
  } catch (const TransportError& err) {
    EXPECT_EQ(err.status(), 0);
    EXPECT_EQ(err.attempts(), 2);
  }
}

TEST(MockGenerate, DeterministicAndSchemaValidForEveryRow) {
  int checked = 0;
  for (const auto& row : admissible_rows()) {
    for (std::uint64_t s = 0; s < 100; ++s) {
      SynthesisConfig c;
      c.task = row.task;
      c.modality = row.modality;
      c.language = s % 2 ? "en" : "ja";
      c.seed = derive_seed(9, s);
      PromptBundle b;
      b.text = "prompt " + std::to_string(s);
      const auto a = mock_generate(b, c);
      EXPECT_EQ(a.raw_text, mock_generate(b, c).raw_text);
      EXPECT_NE(a.raw_text, mock_generate(b, c, 1).raw_text);
      const auto gen = parse_generation(a.raw_text, c.task);
      const auto report = validate(gen, c);
      EXPECT_TRUE(report.accepted()) << a.raw_text;
      if (c.task == TaskKind::kClassification && !c.modality.query_has_text()) {
        EXPECT_EQ(gen.at("input_text"), "");
        EXPECT_EQ(gen.at("revised_input_text"), "");
      }
      ++checked;
    }
  }
  EXPECT_EQ(checked, 1000);
}

TEST(MockGenerator, InvalidRateProducesRejections) {
  MockGenerator gen(MockOptions{1.0, {}});
  int rejected = 0;
  for (std::uint64_t s = 0; s < 60; ++s) {
    SynthesisConfig c;
    c.task = kAllTasks[s % 3];
    c.modality = admissible_modalities(c.task)[0];
    c.language = "en";
    c.seed = s;
    const auto r = gen.generate(bundle(), c, 0);
    try {
      rejected += !validate(parse_generation(r.raw_text, c.task), c).accepted();
    } catch (const Error&) {
      ++rejected;
    }
  }
  EXPECT_EQ(rejected, 60);
}
