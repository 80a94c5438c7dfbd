#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "mmsynth/config_sampler.hpp"
#include "mmsynth/dataset_writer.hpp"
#include "mmsynth/image_store.hpp"
#include "mmsynth/mllm_client.hpp"

namespace mmsynth {

struct RunSpec {
  std::uint64_t master_seed = 0;
  std::uint64_t n_samples = 1;
  DistributionSpec distribution = default_distribution();

  bool mock = true;
  MockOptions mock_options;
  EndpointConfig endpoint;

  // Both empty selects the built-in demo corpus, which only mock runs accept.
  std::filesystem::path manifest;
  std::filesystem::path embeddings;
  std::size_t demo_corpus_size = 512;
  std::size_t demo_dim = 32;
  NegativeWindow negative_window;

  std::filesystem::path out_dir;
  std::size_t shard_size = 1000;
  // Extra generations allowed after a validation reject (0 or 1).
  int regenerations = 0;
  // Worker count; also caps in-flight endpoint requests.
  int concurrency = 8;
  std::filesystem::path asset_dir = default_asset_dir();

  void validate() const;
};

// Config file keys: seed, n_samples, distribution (inline object) or
// distribution_file, mock, mock_invalid_rate, endpoint {base_url,
// model_name, max_retries, request_timeout}, corpus {manifest, embeddings},
// negative_window [lo, hi], out_dir, shard_size, regenerations,
// concurrency, assets, workspace_root. Relative paths resolve against
// workspace_root, which itself defaults to the config file's directory.
// Secrets are rejected: the API key comes from the environment only.
RunSpec run_spec_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunSpec load_run_spec(const std::filesystem::path& file);

struct RunReport {
  std::uint64_t n_samples = 0;
  std::uint64_t accepted = 0;
  std::uint64_t rejected = 0;
  std::uint64_t failures = 0;
  std::map<std::string, std::uint64_t> rejects_by_rule;
  double wall_time_s = 0.0;
  bool resumed = false;
  // False when the run stopped early; rerunning the same spec resumes it.
  bool complete = false;
  DatasetStats stats;

  nlohmann::ordered_json to_json() const;
};

struct RunHooks {
  // Replaces the generator the spec would build.
  std::shared_ptr<Generator> generator;
  // Stop cleanly once this many shards are durable, as if interrupted.
  std::optional<std::size_t> stop_after_shards;
  // Polled between samples; set from a signal handler to interrupt.
  const std::atomic<bool>* cancel = nullptr;
};

inline constexpr std::string_view kCheckpointFile = "_checkpoint";

// Hash of every spec field that affects output bytes. Concurrency and the
// endpoint's retry settings are left out.
std::string run_fingerprint(const RunSpec& spec, const TemplateSet& templates);

RunReport run(const RunSpec& spec, const RunHooks& hooks = {});

}  // namespace mmsynth
