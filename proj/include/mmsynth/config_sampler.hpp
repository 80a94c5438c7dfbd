#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mmsynth/task.hpp"

namespace mmsynth {

// Closed vocabularies for the prompt style knobs.
namespace vocab {
inline constexpr std::array<std::string_view, 5> kTextLength = {"less than 10", "at least 10", "at least 50",
                                                                "at least 100", "at least 200"};
inline constexpr std::array<std::string_view, 3> kQueryLength = {"less than 5 words", "5 to 15 words",
                                                                 "at least 10 words"};
inline constexpr std::array<std::string_view, 4> kDocLength = {"10", "30", "200", "300"};
inline constexpr std::array<std::string_view, 3> kClarity = {"clear", "understandable with some effort",
                                                             "ambiguous"};
inline constexpr std::array<std::string_view, 3> kEducation = {"high school", "college", "PhD"};
inline constexpr std::array<std::string_view, 3> kQueryFrequency = {"extremely long-tail", "long-tail",
                                                                    "common"};
}  // namespace vocab

// Per-sample style draws. Fields that do not apply to the task stay empty:
// classification and VQA use text_length, clarity, education; retrieval uses
// query_frequency, query_length, clarity, doc_length, education.
struct StyleKnobs {
  std::string text_length;
  std::string query_length;
  std::string doc_length;
  std::string clarity;
  std::string education;
  std::string query_frequency;

  friend bool operator==(const StyleKnobs&, const StyleKnobs&) = default;
};

enum class LanguageTier : std::uint8_t { kHigh, kLow };

struct LanguageInfo {
  std::string code;
  std::string name;
  LanguageTier tier;
};

// The bundled 93-language table, in file order.
std::span<const LanguageInfo> language_table();
// English display name for a code; the code itself when unknown.
std::string language_name(std::string_view code);

inline constexpr std::size_t kLanguageCount = 93;

// Sample counts of the released synthetic dataset, one per admissible row.
struct RowCount {
  TaskKind task;
  Modality modality;
  std::uint64_t count;
};
std::span<const RowCount> reference_row_counts();

struct DistributionSpec {
  // Indexed by TaskKind.
  std::array<double, 3> task_weights{};
  std::array<std::vector<std::pair<Modality, double>>, 3> modality_weights;
  std::vector<std::pair<std::string, double>> language_weights;

  double task_weight(TaskKind t) const { return task_weights[static_cast<std::size_t>(t)]; }
  double modality_weight(TaskKind t, Modality m) const;
  double language_weight(std::string_view code) const;

  // Throws DistributionError naming the offending path.
  void validate() const;
};

DistributionSpec default_distribution();

// JSON layout:
//   {"task_weights": {"classification": 0.25, ...},
//    "modality_weights": {"retrieval": {"IT->I": 0.2, ...}, ...},
//    "language_weights": {"en": 0.5, ...}}
// Every section is optional and falls back to default_distribution().
DistributionSpec distribution_from_json(const nlohmann::json& j, const std::string& path = "distribution");
DistributionSpec load_distribution(const std::filesystem::path& file);
nlohmann::json to_json(const DistributionSpec& spec);

struct SynthesisConfig {
  std::uint64_t sample_index = 0;
  TaskKind task = TaskKind::kClassification;
  Modality modality;
  std::string language;
  StyleKnobs knobs;
  std::uint64_t seed = 0;

  friend bool operator==(const SynthesisConfig&, const SynthesisConfig&) = default;
};

// Precomputes cumulative tables for repeated draws against one spec.
class ConfigSampler {
 public:
  explicit ConfigSampler(DistributionSpec spec);

  SynthesisConfig sample(std::uint64_t master_seed, std::uint64_t index) const;
  const DistributionSpec& spec() const noexcept { return spec_; }

 private:
  DistributionSpec spec_;
  std::vector<double> task_cdf_;
  std::array<std::vector<double>, 3> modality_cdf_;
  std::vector<double> language_cdf_;
};

SynthesisConfig sample_config(std::uint64_t master_seed, std::uint64_t index, const DistributionSpec& spec);

}  // namespace mmsynth
