#include "mmsynth/pipeline.hpp"

#include <chrono>
#include <condition_variable>
#include <fstream>
#include <mutex>
#include <thread>
#include <variant>

#include "mmsynth/digest.hpp"
#include "mmsynth/error.hpp"
#include "mmsynth/prompt_builder.hpp"
#include "mmsynth/response_validator.hpp"

namespace mmsynth {
namespace {

constexpr std::uint64_t kDemoCorpusSeed = 0x6D6D73796E7468ULL;

struct Accepted {
  DataSample sample;
  LengthCompliance lengths;
};
struct Rejected {
  std::vector<Violation> violations;
};
struct Failed {
  std::string message;
};
using Outcome = std::variant<Accepted, Rejected, Failed>;

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

template <typename T>
T get_as(const nlohmann::json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(path, "wrong value type");
  }
}

// Runs one sample through configure -> images -> prompt -> generate ->
// parse/validate/finalize.
class SampleProcessor {
 public:
  SampleProcessor(const RunSpec& spec, const ConfigSampler& sampler, const ImageStore& store,
                  const TemplateSet& templates, const ExamplePool& pool, Generator& generator)
      : spec_(spec), sampler_(sampler), store_(store), templates_(templates), pool_(pool), generator_(generator) {}

  Outcome process(std::uint64_t index) const {
    try {
      const SynthesisConfig config = sampler_.sample(spec_.master_seed, index);
      const ImageTriple triple = store_.select(config);
      const PromptBundle bundle = build_prompt(templates_, config, triple, pool_);
      Provenance prov{generator_.model_name(), sha256_hex(bundle.text), 0, 0};

      Rejected last;
      for (int attempt = 0; attempt <= spec_.regenerations; ++attempt) {
        const GenerationResult result = generator_.generate(bundle, config, attempt);
        RawGeneration gen;
        try {
          gen = parse_generation(result.raw_text, config.task);
        } catch (const SchemaError& e) {
          last = Rejected{{{std::string(rule::kSchema), e.what()}}};
          continue;
        } catch (const ParseError& e) {
          last = Rejected{{{std::string(rule::kParse), e.what()}}};
          continue;
        }
        auto report = validate(gen, config);
        if (!report.accepted()) {
          last = Rejected{std::move(report.violations)};
          continue;
        }
        return Accepted{finalize(gen, config, triple, prov), length_compliance(gen, config)};
      }
      return last;
    } catch (const std::exception& e) {
      return Failed{e.what()};
    }
  }

 private:
  const RunSpec& spec_;
  const ConfigSampler& sampler_;
  const ImageStore& store_;
  const TemplateSet& templates_;
  const ExamplePool& pool_;
  Generator& generator_;
};

void write_checkpoint(const std::filesystem::path& dir, const std::string& fingerprint, std::uint64_t next_index,
                      bool complete, const DatasetStats& stats) {
  nlohmann::ordered_json j;
  j["fingerprint"] = fingerprint;
  j["next_index"] = next_index;
  j["complete"] = complete;
  j["stats"] = stats.to_json();
  const auto path = dir / kCheckpointFile;
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << j.dump(2) << '\n';
    if (!out) throw WriteError("cannot write checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

ImageStore build_store(const RunSpec& spec) {
  if (spec.manifest.empty() && spec.embeddings.empty()) {
    auto demo = make_demo_corpus(spec.demo_corpus_size, spec.demo_dim, kDemoCorpusSeed);
    return ImageStore(std::move(demo.corpus), std::move(demo.embeddings), spec.negative_window);
  }
  return ImageStore(load_manifest(spec.manifest), load_embeddings_any(spec.embeddings), spec.negative_window);
}

}  // namespace

void RunSpec::validate() const {
  if (n_samples < 1) throw ConfigError("n_samples", "must be >= 1");
  if (shard_size < 1) throw ConfigError("shard_size", "must be >= 1");
  if (regenerations < 0 || regenerations > 1) throw ConfigError("regenerations", "must be 0 or 1");
  if (concurrency < 1) throw ConfigError("concurrency", "must be >= 1");
  if (out_dir.empty()) throw ConfigError("out_dir", "is required");
  if (manifest.empty() != embeddings.empty()) {
    throw ConfigError("corpus", "manifest and embeddings must be given together");
  }
  if (!mock && manifest.empty()) throw ConfigError("corpus", "a real corpus is required without mock mode");
  if (!mock && endpoint.base_url.empty()) throw ConfigError("endpoint.base_url", "is required without mock mode");
  if (mock_options.invalid_rate < 0.0 || mock_options.invalid_rate > 1.0) {
    throw ConfigError("mock_invalid_rate", "must lie in [0, 1]");
  }
  distribution.validate();
}

RunSpec run_spec_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("", "run spec must be an object");
  RunSpec spec;
  std::filesystem::path root = base_dir;
  if (j.contains("workspace_root")) root = resolve(base_dir, get_as<std::string>(j["workspace_root"], "workspace_root"));
  spec.asset_dir = default_asset_dir();

  for (const auto& [key, v] : j.items()) {
    if (key == "workspace_root") {
      continue;
    } else if (key == "seed") {
      spec.master_seed = get_as<std::uint64_t>(v, key);
    } else if (key == "n_samples") {
      spec.n_samples = get_as<std::uint64_t>(v, key);
    } else if (key == "distribution") {
      spec.distribution = distribution_from_json(v, key);
    } else if (key == "distribution_file") {
      spec.distribution = load_distribution(resolve(root, get_as<std::string>(v, key)));
    } else if (key == "mock") {
      spec.mock = get_as<bool>(v, key);
    } else if (key == "mock_invalid_rate") {
      spec.mock_options.invalid_rate = get_as<double>(v, key);
    } else if (key == "endpoint") {
      if (!v.is_object()) throw ConfigError(key, "expected an object");
      for (const auto& [ek, ev] : v.items()) {
        const std::string path = "endpoint." + ek;
        if (ek == "base_url") {
          spec.endpoint.base_url = get_as<std::string>(ev, path);
        } else if (ek == "model_name") {
          spec.endpoint.model_name = get_as<std::string>(ev, path);
        } else if (ek == "max_retries") {
          spec.endpoint.max_retries = get_as<int>(ev, path);
        } else if (ek == "request_timeout") {
          spec.endpoint.request_timeout_s = get_as<double>(ev, path);
        } else if (ek == "api_key") {
          throw ConfigError(path, "secrets are not read from config files; set MMSYNTH_API_KEY");
        } else {
          throw ConfigError(path, "unknown key");
        }
      }
    } else if (key == "corpus") {
      if (!v.is_object()) throw ConfigError(key, "expected an object");
      for (const auto& [ck, cv] : v.items()) {
        const std::string path = "corpus." + ck;
        if (ck == "manifest") {
          spec.manifest = resolve(root, get_as<std::string>(cv, path));
        } else if (ck == "embeddings") {
          spec.embeddings = resolve(root, get_as<std::string>(cv, path));
        } else {
          throw ConfigError(path, "unknown key");
        }
      }
    } else if (key == "negative_window") {
      const auto w = get_as<std::vector<std::size_t>>(v, key);
      if (w.size() != 2 || w[0] < 2 || w[0] > w[1]) throw ConfigError(key, "expected [lo, hi] with 2 <= lo <= hi");
      spec.negative_window = {w[0], w[1]};
    } else if (key == "out_dir") {
      spec.out_dir = resolve(root, get_as<std::string>(v, key));
    } else if (key == "shard_size") {
      spec.shard_size = get_as<std::size_t>(v, key);
    } else if (key == "regenerations") {
      spec.regenerations = get_as<int>(v, key);
    } else if (key == "concurrency") {
      spec.concurrency = get_as<int>(v, key);
    } else if (key == "assets") {
      spec.asset_dir = resolve(root, get_as<std::string>(v, key));
    } else {
      throw ConfigError(key, "unknown key");
    }
  }
  return spec;
}

RunSpec load_run_spec(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError(file.string(), "cannot open config");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(file.string(), e.what());
  }
  return run_spec_from_json(j, std::filesystem::absolute(file).parent_path());
}

nlohmann::ordered_json RunReport::to_json() const {
  nlohmann::ordered_json j;
  j["n_samples"] = n_samples;
  j["accepted"] = accepted;
  j["rejected"] = rejected;
  j["failures"] = failures;
  j["rejects_by_rule"] = rejects_by_rule;
  j["wall_time_s"] = wall_time_s;
  j["resumed"] = resumed;
  j["complete"] = complete;
  j["stats"] = stats.to_json();
  return j;
}

std::string run_fingerprint(const RunSpec& spec, const TemplateSet& templates) {
  nlohmann::ordered_json j;
  j["seed"] = spec.master_seed;
  j["n_samples"] = spec.n_samples;
  j["distribution"] = to_json(spec.distribution);
  j["mock"] = spec.mock;
  j["mock_invalid_rate"] = spec.mock_options.invalid_rate;
  j["model_name"] = spec.mock ? std::string("mock") : spec.endpoint.model_name;
  j["manifest"] = spec.manifest.string();
  j["embeddings"] = spec.embeddings.string();
  j["demo"] = {spec.demo_corpus_size, spec.demo_dim};
  j["negative_window"] = {spec.negative_window.lo, spec.negative_window.hi};
  j["shard_size"] = spec.shard_size;
  j["regenerations"] = spec.regenerations;
  j["templates"] = templates.digest();
  return sha256_hex(j.dump());
}

RunReport run(const RunSpec& spec, const RunHooks& hooks) {
  const auto started = std::chrono::steady_clock::now();
  spec.validate();

  const ConfigSampler sampler(spec.distribution);
  const ImageStore store = build_store(spec);
  const TemplateSet templates = TemplateSet::load(spec.asset_dir / "templates");
  const ExamplePool pool = load_example_pool(spec.asset_dir / "example_tasks");

  std::shared_ptr<Generator> generator = hooks.generator;
  if (!generator) {
    if (spec.mock) {
      generator = std::make_shared<MockGenerator>(spec.mock_options);
    } else {
      EndpointConfig endpoint = spec.endpoint;
      endpoint.max_concurrency = spec.concurrency;
      auto client = std::make_shared<MllmClient>(endpoint, make_http_transport(),
                                                 corpus_image_resolver(store.corpus()));
      generator = std::make_shared<EndpointGenerator>(std::move(client));
    }
  }

  const std::string fingerprint = run_fingerprint(spec, templates);
  std::optional<ResumePoint> resume;
  std::uint64_t start_index = 0;
  const auto checkpoint_path = spec.out_dir / kCheckpointFile;
  if (std::filesystem::exists(checkpoint_path)) {
    std::ifstream in(checkpoint_path);
    nlohmann::json cp;
    try {
      cp = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw WriteError("unreadable checkpoint " + checkpoint_path.string() + ": " + e.what());
    }
    if (cp.value("fingerprint", "") != fingerprint) {
      throw WriteError(spec.out_dir.string() + " holds output of a different run spec; use a fresh directory");
    }
    if (!cp.value("complete", false)) {
      resume = ResumePoint{DatasetStats::from_json(cp.at("stats"))};
      start_index = cp.at("next_index").get<std::uint64_t>();
    }
  }

  ShardWriter writer(spec.out_dir, spec.shard_size, resume);
  std::filesystem::remove(checkpoint_path);

  SampleProcessor processor(spec, sampler, store, templates, pool, *generator);
  const std::uint64_t n = spec.n_samples;
  const std::uint64_t window = std::max<std::uint64_t>(64, 4 * static_cast<std::uint64_t>(spec.concurrency));

  std::mutex mu;
  std::condition_variable cv_space;
  std::condition_variable cv_ready;
  std::map<std::uint64_t, Outcome> ready;
  std::uint64_t next_claim = start_index;
  std::uint64_t cursor = start_index;
  bool stop = false;

  std::uint64_t writing_index = start_index;
  writer.on_shard_closed([&](const DatasetStats& stats) {
    write_checkpoint(spec.out_dir, fingerprint, writing_index + 1, false, stats);
    if (hooks.stop_after_shards && stats.shards.size() >= *hooks.stop_after_shards) {
      std::lock_guard lock(mu);
      stop = true;
    }
  });

  const auto worker = [&] {
    for (;;) {
      std::uint64_t index;
      {
        std::unique_lock lock(mu);
        cv_space.wait(lock, [&] { return stop || next_claim >= n || next_claim < cursor + window; });
        if (stop || next_claim >= n) return;
        index = next_claim++;
      }
      Outcome outcome = processor.process(index);
      {
        std::lock_guard lock(mu);
        ready.emplace(index, std::move(outcome));
      }
      cv_ready.notify_one();
    }
  };

  std::vector<std::jthread> workers;
  const auto n_workers = static_cast<std::size_t>(std::min<std::uint64_t>(spec.concurrency, n - start_index));
  for (std::size_t i = 0; i < n_workers; ++i) workers.emplace_back(worker);

  std::exception_ptr fatal;
  try {
    while (cursor < n) {
      Outcome outcome;
      {
        std::unique_lock lock(mu);
        cv_ready.wait(lock, [&] { return ready.contains(cursor); });
        auto node = ready.extract(cursor);
        outcome = std::move(node.mapped());
      }
      writing_index = cursor;
      if (auto* ok = std::get_if<Accepted>(&outcome)) {
        // Lengths first: append may close a shard and checkpoint the stats.
        writer.record_lengths(ok->lengths);
        writer.append(ok->sample);
      } else if (auto* rej = std::get_if<Rejected>(&outcome)) {
        writer.record_reject(rej->violations);
      } else {
        writer.record_failure();
      }
      bool halt = false;
      {
        std::lock_guard lock(mu);
        ++cursor;
        halt = stop || (hooks.cancel != nullptr && hooks.cancel->load());
        if (halt) stop = true;
      }
      cv_space.notify_all();
      if (halt) break;
    }
  } catch (...) {
    fatal = std::current_exception();
    std::lock_guard lock(mu);
    stop = true;
  }
  cv_space.notify_all();
  workers.clear();
  if (fatal) std::rethrow_exception(fatal);

  RunReport report;
  report.n_samples = n;
  report.resumed = resume.has_value();
  if (cursor >= n) {
    report.stats = writer.finish();
    write_checkpoint(spec.out_dir, fingerprint, n, true, report.stats);
    report.complete = true;
  } else {
    report.stats = writer.stats();
  }
  report.accepted = report.stats.total;
  report.rejected = report.stats.rejected;
  report.failures = report.stats.failures;
  report.rejects_by_rule = report.stats.rejects_by_rule;
  report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace mmsynth
