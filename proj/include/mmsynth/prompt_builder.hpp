#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mmsynth/config_sampler.hpp"
#include "mmsynth/image_store.hpp"

namespace mmsynth {

enum class PromptTemplateKind : std::uint8_t {
  kClassification = 0,
  kVqa = 1,
  kRetrievalQueryImageOnly = 2,
  kRetrievalWithDocImages = 3,
};

// Asset key: "classification", "vqa", "retrieval_query_image",
// "retrieval_doc_images".
std::string_view to_string(PromptTemplateKind kind);
PromptTemplateKind template_kind(TaskKind task, Modality modality);

struct GenerationParams {
  double temperature = 1.0;
  double top_p = 1.0;

  friend bool operator==(const GenerationParams&, const GenerationParams&) = default;
};

struct PromptBundle {
  PromptTemplateKind kind = PromptTemplateKind::kClassification;
  std::string text;
  // Anchor first, then positive and negative when the document side has images.
  std::vector<std::string> attachments;
  GenerationParams params;

  friend bool operator==(const PromptBundle&, const PromptBundle&) = default;
};

// A template split into literal runs and `{slot}` references.
class PromptTemplate {
 public:
  explicit PromptTemplate(std::string_view text);

  // Distinct slot names in first-use order.
  const std::vector<std::string>& slots() const noexcept { return slots_; }
  // Throws PromptError if a slot has no value.
  std::string render(const std::map<std::string, std::string, std::less<>>& values) const;

 private:
  struct Slot {
    std::string name;
  };
  std::vector<std::variant<std::string, Slot>> parts_;
  std::vector<std::string> slots_;
};

// The four templates loaded from an asset directory holding manifest.json
// and one text file per kind. Loading checks that each file's slots match
// the manifest exactly.
class TemplateSet {
 public:
  static TemplateSet load(const std::filesystem::path& dir);

  const PromptTemplate& get(PromptTemplateKind kind) const { return templates_[static_cast<std::size_t>(kind)]; }
  // SHA-256 over the raw template files, for run fingerprints.
  const std::string& digest() const noexcept { return digest_; }

 private:
  TemplateSet() = default;
  std::vector<PromptTemplate> templates_;
  std::string digest_;
};

using ExamplePool = std::map<TaskKind, std::vector<std::string>>;

// Reads <dir>/classification.txt and <dir>/retrieval.txt, one task per line.
ExamplePool load_example_pool(const std::filesystem::path& dir);

// Asset root: $MMSYNTH_ASSETS when set, otherwise the source tree's assets/.
std::filesystem::path default_asset_dir();

inline constexpr std::size_t kExamplesPerPrompt = 3;

PromptBundle build_prompt(const TemplateSet& templates, const SynthesisConfig& config, const ImageTriple& triple,
                          const ExamplePool& example_pool);

// Every `{...}` pair left in rendered text (a pair never spans lines).
std::vector<std::string> unresolved_slots(std::string_view text);

}  // namespace mmsynth
