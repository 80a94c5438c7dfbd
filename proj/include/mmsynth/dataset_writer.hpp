#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "mmsynth/digest.hpp"
#include "mmsynth/response_validator.hpp"

namespace mmsynth {

struct ShardInfo {
  std::string name;
  std::uint64_t lines = 0;
  std::string sha256;

  friend bool operator==(const ShardInfo&, const ShardInfo&) = default;
};

struct DatasetStats {
  std::uint64_t total = 0;
  std::map<std::string, std::uint64_t> by_task;
  // Keyed "<task> <modality>", e.g. "retrieval IT->I".
  std::map<std::string, std::uint64_t> by_modality;
  std::map<std::string, std::uint64_t> by_language;
  std::uint64_t rejected = 0;
  std::map<std::string, std::uint64_t> rejects_by_rule;
  std::uint64_t failures = 0;
  // Soft word-count guideline checks over accepted samples.
  std::uint64_t length_checked = 0;
  std::uint64_t length_met = 0;
  std::vector<ShardInfo> shards;

  void add(const DataSample& sample);
  // Partition invariant: modality and task totals both equal total.
  bool consistent() const;

  nlohmann::ordered_json to_json() const;
  static DatasetStats from_json(const nlohmann::json& j);

  friend bool operator==(const DatasetStats&, const DatasetStats&) = default;
};

std::string row_key(TaskKind task, Modality modality);

// One compact JSON object with the fields in this order: id, task, modality,
// language, instruction, query_text, query_image, pos_text, pos_image,
// neg_text, neg_image, provenance. No trailing newline.
std::string serialize_sample(const DataSample& sample);
// Throws ParseError.
DataSample parse_sample(std::string_view line);

std::string shard_name(std::size_t index);

inline constexpr std::string_view kStatsFile = "stats";
inline constexpr std::string_view kManifestFile = "_manifest";
inline constexpr std::string_view kLockFile = ".lock";

// Where a resumed writer picks up: the first `shards` files are kept and
// verified against `stats.shards`, later ones are removed.
struct ResumePoint {
  DatasetStats stats;
};

// Streams samples into shard-00000, shard-00001, ... with exactly
// shard_size lines each except the last. A shard is written as
// <name>.partial and renamed once synced. Holds an exclusive lock on the
// output directory for its lifetime. Dropping an unfinished writer removes
// the shard that was still open.
class ShardWriter {
 public:
  using ShardCallback = std::function<void(const DatasetStats&)>;

  ShardWriter(std::filesystem::path out_dir, std::size_t shard_size, std::optional<ResumePoint> resume = std::nullopt);
  ~ShardWriter();
  ShardWriter(const ShardWriter&) = delete;
  ShardWriter& operator=(const ShardWriter&) = delete;

  // Invoked after each shard is closed, with stats covering it.
  void on_shard_closed(ShardCallback cb) { on_shard_closed_ = std::move(cb); }

  // Throws WriteError on duplicate id or IO failure.
  void append(const DataSample& sample);
  // Rejections and failures only touch stats.
  void record_reject(std::span<const Violation> violations);
  void record_failure();
  void record_lengths(const LengthCompliance& lengths);

  // Closes the last shard and writes the stats and _manifest files.
  const DatasetStats& finish();
  const DatasetStats& stats() const noexcept { return stats_; }

 private:
  void open_shard();
  void close_shard();

  std::filesystem::path out_dir_;
  std::size_t shard_size_;
  DatasetStats stats_;
  std::unordered_set<std::string> ids_;
  ShardCallback on_shard_closed_;
  int lock_fd_ = -1;

  std::FILE* current_ = nullptr;
  std::filesystem::path current_path_;
  std::uint64_t current_lines_ = 0;
  std::optional<Sha256> current_hash_;
  bool finished_ = false;
};

// Convenience over ShardWriter for an in-memory, index-ordered batch.
DatasetStats write_shards(std::span<const DataSample> samples, const std::filesystem::path& out_dir,
                          std::size_t shard_size);

// shard-* files in name order.
std::vector<std::filesystem::path> list_shards(const std::filesystem::path& dir);
DatasetStats read_stats(const std::filesystem::path& dir);
// Recomputes totals and shard digests by scanning the shard files.
DatasetStats scan_shards(const std::filesystem::path& dir);

struct TrainingText {
  std::string query;
  std::string positive;
  std::string negative;
};

// Query: "<image> <t>\n<q_t><eos>" with the image token only when the query
// has an image. Documents: "<image>\n<text><eos>" likewise.
TrainingText render_training_text(const DataSample& sample, std::string_view image_token, std::string_view eos_token);

}  // namespace mmsynth
