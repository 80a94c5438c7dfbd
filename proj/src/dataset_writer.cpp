#include "mmsynth/dataset_writer.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mmsynth/error.hpp"

namespace mmsynth {
namespace {

nlohmann::json optional_image(const std::optional<std::string>& img) {
  return img ? nlohmann::json(*img) : nlohmann::json(nullptr);
}

std::optional<std::string> read_optional_image(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  if (!v.is_string()) throw ParseError(std::string(key) + " must be a string or null");
  return v.get<std::string>();
}

std::string read_string(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_string()) throw ParseError(std::string(key) + " must be a string");
  return v.get<std::string>();
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  // Write-then-rename so readers never see a torn file.
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw WriteError("cannot write " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw WriteError("cannot rename " + tmp + ": " + ec.message());
}

std::map<std::string, std::uint64_t> counts_from_json(const nlohmann::json& j) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& [k, v] : j.items()) out[k] = v.get<std::uint64_t>();
  return out;
}

}  // namespace

std::string row_key(TaskKind task, Modality modality) {
  return std::string(to_string(task)) + " " + to_string(modality);
}

void DatasetStats::add(const DataSample& sample) {
  ++total;
  ++by_task[std::string(to_string(sample.task))];
  ++by_modality[row_key(sample.task, sample.modality)];
  ++by_language[sample.language];
}

bool DatasetStats::consistent() const {
  std::uint64_t tasks = 0;
  std::uint64_t mods = 0;
  for (const auto& [k, v] : by_task) tasks += v;
  for (const auto& [k, v] : by_modality) mods += v;
  std::uint64_t lines = 0;
  for (const auto& s : shards) lines += s.lines;
  return tasks == total && mods == total && (shards.empty() || lines == total);
}

nlohmann::ordered_json DatasetStats::to_json() const {
  nlohmann::ordered_json j;
  j["total"] = total;
  j["by_task"] = by_task;
  j["by_modality"] = by_modality;
  j["by_language"] = by_language;
  j["rejected"] = rejected;
  j["rejects_by_rule"] = rejects_by_rule;
  j["failures"] = failures;
  j["length_guidelines"] = {{"checked", length_checked}, {"met", length_met}};
  auto shard_list = nlohmann::ordered_json::array();
  for (const auto& s : shards) {
    shard_list.push_back({{"name", s.name}, {"lines", s.lines}, {"sha256", s.sha256}});
  }
  j["shards"] = shard_list;
  return j;
}

DatasetStats DatasetStats::from_json(const nlohmann::json& j) {
  DatasetStats s;
  try {
    s.total = j.at("total").get<std::uint64_t>();
    s.by_task = counts_from_json(j.at("by_task"));
    s.by_modality = counts_from_json(j.at("by_modality"));
    s.by_language = counts_from_json(j.at("by_language"));
    s.rejected = j.value("rejected", std::uint64_t{0});
    if (j.contains("rejects_by_rule")) s.rejects_by_rule = counts_from_json(j["rejects_by_rule"]);
    s.failures = j.value("failures", std::uint64_t{0});
    if (j.contains("length_guidelines")) {
      s.length_checked = j["length_guidelines"].value("checked", std::uint64_t{0});
      s.length_met = j["length_guidelines"].value("met", std::uint64_t{0});
    }
    for (const auto& sh : j.value("shards", nlohmann::json::array())) {
      s.shards.push_back({sh.at("name").get<std::string>(), sh.at("lines").get<std::uint64_t>(),
                          sh.at("sha256").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed stats: ") + e.what());
  }
  return s;
}

std::string serialize_sample(const DataSample& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["task"] = to_string(s.task);
  j["modality"] = to_string(s.modality);
  j["language"] = s.language;
  j["instruction"] = s.instruction;
  j["query_text"] = s.query_text;
  j["query_image"] = optional_image(s.query_image);
  j["pos_text"] = s.pos_text;
  j["pos_image"] = optional_image(s.pos_image);
  j["neg_text"] = s.neg_text;
  j["neg_image"] = optional_image(s.neg_image);
  j["provenance"] = {{"model_name", s.provenance.model_name},
                     {"prompt_digest", s.provenance.prompt_digest},
                     {"seed", s.provenance.seed},
                     {"sample_index", s.provenance.sample_index}};
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

DataSample parse_sample(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed sample line: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("sample line is not an object");
  DataSample s;
  try {
    s.id = read_string(j, "id");
    s.task = parse_task(read_string(j, "task"));
    s.modality = parse_modality(read_string(j, "modality"));
    s.language = read_string(j, "language");
    s.instruction = read_string(j, "instruction");
    s.query_text = read_string(j, "query_text");
    s.query_image = read_optional_image(j, "query_image");
    s.pos_text = read_string(j, "pos_text");
    s.pos_image = read_optional_image(j, "pos_image");
    s.neg_text = read_string(j, "neg_text");
    s.neg_image = read_optional_image(j, "neg_image");
    const auto& p = j.at("provenance");
    s.provenance.model_name = read_string(p, "model_name");
    s.provenance.prompt_digest = read_string(p, "prompt_digest");
    s.provenance.seed = p.at("seed").get<std::uint64_t>();
    s.provenance.sample_index = p.at("sample_index").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad sample field: ") + e.what());
  } catch (const InputError& e) {
    throw ParseError(e.what());
  }
  return s;
}

std::string shard_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "shard-%05zu", index);
  return buf;
}

ShardWriter::ShardWriter(std::filesystem::path out_dir, std::size_t shard_size, std::optional<ResumePoint> resume)
    : out_dir_(std::move(out_dir)), shard_size_(shard_size) {
  if (shard_size_ == 0) throw WriteError("shard_size must be positive");
  std::error_code ec;
  std::filesystem::create_directories(out_dir_, ec);
  if (ec) throw WriteError("cannot create " + out_dir_.string() + ": " + ec.message());

  const auto lock_path = out_dir_ / kLockFile;
  lock_fd_ = ::open(lock_path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
  if (lock_fd_ < 0) throw WriteError("cannot open lock " + lock_path.string() + ": " + std::strerror(errno));
  if (::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(lock_fd_);
    lock_fd_ = -1;
    throw WriteError(out_dir_.string() + " is locked by another writer");
  }

  if (resume) {
    stats_ = std::move(resume->stats);
    for (const auto& shard : stats_.shards) {
      const auto path = out_dir_ / shard.name;
      if (!std::filesystem::exists(path) || sha256_file(path) != shard.sha256) {
        throw WriteError("cannot resume: " + shard.name + " is missing or differs from the checkpoint");
      }
      std::ifstream in(path, std::ios::binary);
      std::string line;
      while (std::getline(in, line)) ids_.insert(parse_sample(line).id);
    }
  }
  // Anything past the kept shards is stale output from an earlier attempt.
  for (const auto& entry : std::filesystem::directory_iterator(out_dir_)) {
    const auto& path = entry.path();
    const auto name = path.filename().string();
    if (!name.starts_with("shard-")) continue;
    const bool kept = std::any_of(stats_.shards.begin(), stats_.shards.end(),
                                  [&](const ShardInfo& s) { return s.name == name; });
    if (!kept) std::filesystem::remove(path);
  }
  std::filesystem::remove(out_dir_ / kStatsFile);
  std::filesystem::remove(out_dir_ / kManifestFile);
}

ShardWriter::~ShardWriter() {
  if (current_ != nullptr) {
    std::fclose(current_);
    std::error_code ec;
    std::filesystem::remove(current_path_, ec);
  }
  if (lock_fd_ >= 0) {
    ::unlink((out_dir_ / kLockFile).c_str());
    ::flock(lock_fd_, LOCK_UN);
    ::close(lock_fd_);
  }
}

void ShardWriter::open_shard() {
  current_path_ = out_dir_ / (shard_name(stats_.shards.size()) + ".partial");
  current_ = std::fopen(current_path_.c_str(), "wb");
  if (current_ == nullptr) throw WriteError("cannot open " + current_path_.string() + ": " + std::strerror(errno));
  current_lines_ = 0;
  current_hash_.emplace();
}

void ShardWriter::close_shard() {
  if (current_ == nullptr) return;
  const bool ok = std::fflush(current_) == 0 && ::fsync(::fileno(current_)) == 0;
  std::fclose(current_);
  current_ = nullptr;
  if (!ok) {
    std::filesystem::remove(current_path_);
    throw WriteError("cannot flush " + current_path_.string());
  }
  const std::string name = shard_name(stats_.shards.size());
  std::error_code ec;
  std::filesystem::rename(current_path_, out_dir_ / name, ec);
  if (ec) throw WriteError("cannot rename " + current_path_.string() + ": " + ec.message());
  stats_.shards.push_back({name, current_lines_, current_hash_->hex_digest()});
  current_hash_.reset();
  if (on_shard_closed_) on_shard_closed_(stats_);
}

void ShardWriter::append(const DataSample& sample) {
  if (finished_) throw WriteError("append after finish");
  if (!ids_.insert(sample.id).second) throw WriteError("duplicate sample id: " + sample.id);
  if (current_ == nullptr) open_shard();
  std::string line = serialize_sample(sample);
  line += '\n';
  if (std::fwrite(line.data(), 1, line.size(), current_) != line.size()) {
    std::fclose(current_);
    current_ = nullptr;
    std::filesystem::remove(current_path_);
    throw WriteError("write failed on " + current_path_.string());
  }
  current_hash_->update(line);
  ++current_lines_;
  stats_.add(sample);
  if (current_lines_ == shard_size_) close_shard();
}

void ShardWriter::record_reject(std::span<const Violation> violations) {
  ++stats_.rejected;
  // One count per rule per sample.
  std::vector<std::string> rules;
  for (const auto& v : violations) rules.push_back(v.rule_id);
  std::sort(rules.begin(), rules.end());
  rules.erase(std::unique(rules.begin(), rules.end()), rules.end());
  for (const auto& r : rules) ++stats_.rejects_by_rule[r];
}

void ShardWriter::record_failure() { ++stats_.failures; }

void ShardWriter::record_lengths(const LengthCompliance& lengths) {
  stats_.length_checked += static_cast<std::uint64_t>(lengths.checked);
  stats_.length_met += static_cast<std::uint64_t>(lengths.met);
}

const DatasetStats& ShardWriter::finish() {
  if (finished_) return stats_;
  close_shard();
  finished_ = true;
  write_text_file(out_dir_ / kStatsFile, stats_.to_json().dump(2) + "\n");
  nlohmann::ordered_json manifest;
  manifest["total"] = stats_.total;
  manifest["shards"] = stats_.to_json()["shards"];
  write_text_file(out_dir_ / kManifestFile, manifest.dump(2) + "\n");
  return stats_;
}

DatasetStats write_shards(std::span<const DataSample> samples, const std::filesystem::path& out_dir,
                          std::size_t shard_size) {
  ShardWriter writer(out_dir, shard_size);
  for (const auto& s : samples) writer.append(s);
  return writer.finish();
}

std::vector<std::filesystem::path> list_shards(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && name.starts_with("shard-") && name.find('.') == std::string::npos) {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

DatasetStats read_stats(const std::filesystem::path& dir) {
  std::ifstream in(dir / kStatsFile);
  if (!in) throw ParseError("no stats file in " + dir.string());
  try {
    return DatasetStats::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed stats: ") + e.what());
  }
}

DatasetStats scan_shards(const std::filesystem::path& dir) {
  DatasetStats stats;
  for (const auto& path : list_shards(dir)) {
    std::ifstream in(path, std::ios::binary);
    Sha256 hash;
    std::string line;
    std::uint64_t lines = 0;
    while (std::getline(in, line)) {
      stats.add(parse_sample(line));
      hash.update(line);
      hash.update("\n");
      ++lines;
    }
    stats.shards.push_back({path.filename().string(), lines, hash.hex_digest()});
  }
  return stats;
}

TrainingText render_training_text(const DataSample& s, std::string_view image_token, std::string_view eos_token) {
  TrainingText out;
  if (s.query_image) {
    out.query += image_token;
    out.query += ' ';
  }
  out.query += s.instruction;
  out.query += '\n';
  out.query += s.query_text;
  out.query += eos_token;

  const auto doc = [&](const std::optional<std::string>& image, const std::string& text) {
    std::string r;
    if (image) r += image_token;
    r += '\n';
    r += text;
    r += eos_token;
    return r;
  };
  out.positive = doc(s.pos_image, s.pos_text);
  out.negative = doc(s.neg_image, s.neg_text);
  return out;
}

}  // namespace mmsynth
