#include <gtest/gtest.h>

#include <map>

#include "mmsynth/error.hpp"
#include "mmsynth/pipeline.hpp"
#include "test_util.hpp"

using namespace mmsynth;
using mmsynth::testing::TempDir;
using mmsynth::testing::write_file;

namespace {

RunSpec mock_spec(const std::filesystem::path& out, std::uint64_t n = 200, int concurrency = 4) {
  RunSpec spec;
  spec.master_seed = 42;
  spec.n_samples = n;
  spec.mock = true;
  spec.out_dir = out;
  spec.shard_size = 50;
  spec.concurrency = concurrency;
  spec.demo_corpus_size = 256;
  spec.demo_dim = 16;
  return spec;
}

std::map<std::string, std::string> digests(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& p : list_shards(dir)) out[p.filename().string()] = sha256_file(p);
  return out;
}

class FlakyGenerator : public Generator {
 public:
  GenerationResult generate(const PromptBundle& bundle, const SynthesisConfig& config, int attempt) override {
    if (config.sample_index % 10 == 3) throw TransportError(503, 6, "retry budget exhausted");
    return mock_generate(bundle, config, attempt);
  }
  std::string model_name() const override { return "flaky"; }
};

}  // namespace

TEST(Pipeline, AcceptsEverythingAndIsReproducible) {
  TempDir a;
  TempDir b;
  const auto r1 = run(mock_spec(a.path()));
  EXPECT_TRUE(r1.complete);
  EXPECT_EQ(r1.accepted, 200u);
  EXPECT_EQ(r1.rejected + r1.failures, 0u);
  EXPECT_EQ(r1.stats.shards.size(), 4u);
  EXPECT_TRUE(r1.stats.consistent());
  run(mock_spec(b.path()));
  EXPECT_EQ(digests(a.path()), digests(b.path()));
  EXPECT_EQ(digests(a.path()).size(), 4u);
}

TEST(Pipeline, OutputIndependentOfConcurrencyAndLatency) {
  TempDir a;
  TempDir b;
  run(mock_spec(a.path(), 150, 1));
  RunHooks hooks;
  hooks.generator = std::make_shared<MockGenerator>(MockOptions{0.0, std::chrono::microseconds(300)});
  run(mock_spec(b.path(), 150, 16), hooks);
  EXPECT_EQ(digests(a.path()), digests(b.path()));
}

TEST(Pipeline, InterruptAndResumeMatchesUninterrupted) {
  TempDir whole;
  TempDir dir;
  run(mock_spec(whole.path()));

  RunHooks stop;
  stop.stop_after_shards = 1;
  const auto partial = run(mock_spec(dir.path()), stop);
  EXPECT_FALSE(partial.complete);
  EXPECT_EQ(list_shards(dir.path()).size(), 1u);
  EXPECT_TRUE(std::filesystem::exists(dir / std::string(kCheckpointFile)));
  EXPECT_FALSE(std::filesystem::exists(dir / "stats"));

  const auto resumed = run(mock_spec(dir.path(), 200, 8));
  EXPECT_TRUE(resumed.resumed);
  EXPECT_TRUE(resumed.complete);
  EXPECT_EQ(resumed.accepted, 200u);
  EXPECT_EQ(digests(dir.path()), digests(whole.path()));
  EXPECT_EQ(read_stats(dir.path()), read_stats(whole.path()));
}

TEST(Pipeline, CancelFlagStopsCleanly) {
  TempDir dir;
  std::atomic<bool> cancel{true};
  RunHooks hooks;
  hooks.cancel = &cancel;
  const auto r = run(mock_spec(dir.path()), hooks);
  EXPECT_FALSE(r.complete);
  EXPECT_LT(r.accepted, 200u);
  const auto again = run(mock_spec(dir.path()));
  EXPECT_TRUE(again.complete);
  EXPECT_EQ(again.accepted, 200u);
}

TEST(Pipeline, CompletedDirectoryIsRegeneratedFromScratch) {
  TempDir dir;
  run(mock_spec(dir.path()));
  const auto before = digests(dir.path());
  const auto r = run(mock_spec(dir.path()));
  EXPECT_FALSE(r.resumed);
  EXPECT_EQ(digests(dir.path()), before);
}

TEST(Pipeline, DifferentSpecInSameDirectoryIsRefused) {
  TempDir dir;
  RunHooks stop;
  stop.stop_after_shards = 1;
  run(mock_spec(dir.path()), stop);
  auto other = mock_spec(dir.path());
  other.master_seed = 43;
  EXPECT_THROW(run(other), WriteError);
}

TEST(Pipeline, RejectionAccountingAndRegeneration) {
  TempDir a;
  auto spec = mock_spec(a.path(), 300);
  spec.mock_options.invalid_rate = 0.3;
  const auto r0 = run(spec);
  EXPECT_GT(r0.rejected, 30u);
  EXPECT_EQ(r0.accepted + r0.rejected + r0.failures, 300u);
  std::uint64_t by_rule = 0;
  for (const auto& [rule, n] : r0.rejects_by_rule) by_rule += n;
  EXPECT_GE(by_rule, r0.rejected);

  TempDir b;
  spec.out_dir = b.path();
  spec.regenerations = 1;
  const auto r1 = run(spec);
  EXPECT_EQ(r1.accepted + r1.rejected + r1.failures, 300u);
  EXPECT_LT(r1.rejected, r0.rejected);
}

TEST(Pipeline, PerSampleFailuresAreRecordedNotFatal) {
  TempDir dir;
  RunHooks hooks;
  hooks.generator = std::make_shared<FlakyGenerator>();
  const auto r = run(mock_spec(dir.path(), 100), hooks);
  EXPECT_TRUE(r.complete);
  EXPECT_EQ(r.failures, 10u);
  EXPECT_EQ(r.accepted, 90u);
}

TEST(Pipeline, RealCorpusFromFiles) {
  TempDir dir;
  const auto demo = make_demo_corpus(40, 8, 3);
  std::string manifest;
  for (const auto& rec : demo.corpus.records()) {
    manifest += "{\"id\": \"" + rec.id + "\", \"locator\": \"https://img.example/" + rec.id + ".jpg\"}\n";
  }
  write_file(dir / "images.jsonl", manifest);
  std::vector<std::string> ids(demo.embeddings.ids().begin(), demo.embeddings.ids().end());
  save_embeddings(dir / "emb", ids, 8,
                  std::vector<float>(demo.embeddings.values().begin(), demo.embeddings.values().end()));
  write_file(dir / "run.json", R"({"seed": 5, "n_samples": 60, "mock": true, "shard_size": 25,
    "corpus": {"manifest": "images.jsonl", "embeddings": "emb"}, "out_dir": "out", "negative_window": [5, 20]})");
  const auto spec = load_run_spec(dir / "run.json");
  EXPECT_EQ(spec.out_dir, dir / "out");
  const auto r = run(spec);
  EXPECT_EQ(r.accepted, 60u);
  EXPECT_EQ(list_shards(dir / "out").size(), 3u);
}

TEST(RunSpec, ConfigParsing) {
  TempDir dir;
  std::filesystem::create_directories(dir / "cfg");
  write_file(dir / "cfg" / "run.json", R"({"workspace_root": "..", "seed": 9, "n_samples": 12, "out_dir": "data/out",
    "concurrency": 3, "regenerations": 1, "endpoint": {"model_name": "m1", "max_retries": 2}})");
  const auto spec = load_run_spec(dir / "cfg" / "run.json");
  EXPECT_EQ(spec.master_seed, 9u);
  EXPECT_EQ(spec.n_samples, 12u);
  EXPECT_EQ(std::filesystem::weakly_canonical(spec.out_dir), std::filesystem::weakly_canonical(dir / "data" / "out"));
  EXPECT_EQ(spec.concurrency, 3);
  EXPECT_EQ(spec.regenerations, 1);
  EXPECT_EQ(spec.endpoint.model_name, "m1");
  EXPECT_EQ(spec.endpoint.max_retries, 2);

  try {
    run_spec_from_json(nlohmann::json::parse(R"({"endpoint": {"api_key": "sk-live"}})"), dir.path());
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.path(), "endpoint.api_key");
    EXPECT_EQ(std::string(e.what()).find("sk-live"), std::string::npos);
  }
  EXPECT_THROW(run_spec_from_json(nlohmann::json::parse(R"({"sed": 1})"), dir.path()), ConfigError);
  EXPECT_THROW(run_spec_from_json(nlohmann::json::parse(R"({"seed": "x"})"), dir.path()), ConfigError);
  EXPECT_THROW(run_spec_from_json(nlohmann::json::parse(R"({"negative_window": [1, 5]})"), dir.path()), ConfigError);
  EXPECT_THROW(run_spec_from_json(nlohmann::json::parse(R"({"distribution": {"task_weights": {"vqa": 2}}})"),
                                  dir.path()),
               DistributionError);

  RunSpec bad = mock_spec(dir / "o");
  bad.n_samples = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = mock_spec(dir / "o");
  bad.mock = false;
  EXPECT_THROW(bad.validate(), ConfigError);
}
