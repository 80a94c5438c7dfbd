#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmsynth/config_sampler.hpp"
#include "mmsynth/image_store.hpp"

namespace mmsynth {

inline constexpr std::string_view kVqaInstruction = "Represent the given image with the following question:";

// Keys the model must return for a task, in prompt order.
std::span<const std::string_view> required_keys(TaskKind task);

// The model's structured output bound to its task's key set. Extra keys in
// the source object are ignored.
struct RawGeneration {
  TaskKind task = TaskKind::kClassification;
  std::map<std::string, std::string, std::less<>> fields;

  const std::string& at(std::string_view key) const;
};

// Locates the first balanced {...} that parses as a JSON object, skipping
// code fences and surrounding prose.
std::optional<std::string_view> extract_json_object(std::string_view raw);

// Throws ParseError when no object is found and SchemaError naming the
// first missing or non-string required key.
RawGeneration parse_generation(std::string_view raw, TaskKind task);

// Stable rule identifiers used in reports, stats and logs.
namespace rule {
inline constexpr std::string_view kModalityEmptiness = "R1";
inline constexpr std::string_view kDistinctness = "R2";
inline constexpr std::string_view kNonEmpty = "R3";
inline constexpr std::string_view kBannedWords = "R4";
inline constexpr std::string_view kInstructionLanguage = "R5";
// Not validation rules proper: outcomes of parse_generation and of the
// structural DataSample checks.
inline constexpr std::string_view kParse = "parse";
inline constexpr std::string_view kSchema = "schema";
inline constexpr std::string_view kInvariant = "INV";
}  // namespace rule

struct Violation {
  std::string rule_id;
  std::string message;
};

enum class Verdict : std::uint8_t { kAccept, kReject };

struct ValidationReport {
  std::vector<Violation> violations;

  Verdict verdict() const noexcept { return violations.empty() ? Verdict::kAccept : Verdict::kReject; }
  bool accepted() const noexcept { return violations.empty(); }
  bool has(std::string_view rule_id) const;
};

ValidationReport validate(const RawGeneration& gen, const SynthesisConfig& config);

// Fraction of letters in the Basic Latin block; nullopt when the text has no
// letters. Non-ASCII code points outside common punctuation and symbol
// blocks count as letters, and so do malformed UTF-8 bytes.
std::optional<double> basic_latin_letter_ratio(std::string_view text);
inline constexpr double kMinBasicLatinRatio = 0.9;

// True when the text contains "query", "queries", "document" or
// "documents" as a whole word, case-insensitively.
bool contains_banned_word(std::string_view text);

// Word-count guidelines are soft: counted, never rejected on.
struct LengthCompliance {
  int checked = 0;
  int met = 0;
};
LengthCompliance length_compliance(const RawGeneration& gen, const SynthesisConfig& config);
std::size_t word_count(std::string_view text);

struct Provenance {
  std::string model_name;
  std::string prompt_digest;
  std::uint64_t seed = 0;
  std::uint64_t sample_index = 0;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

// The finalized quadruple (t, q, d+, d-). Texts that the modality leaves out
// are empty strings; images it leaves out are nullopt.
struct DataSample {
  std::string id;
  TaskKind task = TaskKind::kClassification;
  Modality modality;
  std::string language;
  std::string instruction;
  std::string query_text;
  std::optional<std::string> query_image;
  std::string pos_text;
  std::optional<std::string> pos_image;
  std::string neg_text;
  std::optional<std::string> neg_image;
  Provenance provenance;

  friend bool operator==(const DataSample&, const DataSample&) = default;
};

std::string sample_id(std::uint64_t sample_index);

// Builds the sample from revised fields only. Throws ContractError when the
// generation does not pass validate().
DataSample finalize(const RawGeneration& gen, const SynthesisConfig& config, const ImageTriple& triple,
                    Provenance provenance = {});

// Re-applies R1-R5 to a finalized sample plus the structural invariants
// (image presence per modality, admissible row, VQA instruction), which
// report under rule::kInvariant.
ValidationReport validate_sample(const DataSample& sample);

}  // namespace mmsynth
