#include "mmsynth/prompt_builder.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mmsynth/digest.hpp"
#include "mmsynth/error.hpp"
#include "mmsynth/rng.hpp"

#ifndef MMSYNTH_SOURCE_ASSET_DIR
#define MMSYNTH_SOURCE_ASSET_DIR "assets"
#endif

namespace mmsynth {
namespace {

constexpr std::array<PromptTemplateKind, 4> kAllKinds = {
    PromptTemplateKind::kClassification, PromptTemplateKind::kVqa, PromptTemplateKind::kRetrievalQueryImageOnly,
    PromptTemplateKind::kRetrievalWithDocImages};

constexpr std::string_view kInputTextPresent = "a string the input text specified by the classification task";
constexpr std::string_view kQueryPresent =
    "a random user search query specified by the retrieval task and the query image.";
constexpr std::string_view kPositiveDocPresent =
    "a string, the relevant document for the query based on the query text and image content";
constexpr std::string_view kNegativeDocPresent =
    "a string, a hard negative document that only appears relevant to the query and the query image content.";
constexpr std::string_view kEmpty = "an empty string";

bool is_slot_char(char c) { return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_'; }

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PromptError("cannot open template asset " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string sample_examples(const std::vector<std::string>& pool, std::uint64_t seed) {
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  const std::size_t take = std::min(kExamplesPerPrompt, pool.size());
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + rng.below(order.size() - i);
    std::swap(order[i], order[j]);
  }
  std::string out;
  for (std::size_t i = 0; i < take; ++i) {
    if (i) out += '\n';
    out += "- ";
    out += pool[order[i]];
  }
  return out;
}

}  // namespace

std::string_view to_string(PromptTemplateKind kind) {
  switch (kind) {
    case PromptTemplateKind::kClassification:
      return "classification";
    case PromptTemplateKind::kVqa:
      return "vqa";
    case PromptTemplateKind::kRetrievalQueryImageOnly:
      return "retrieval_query_image";
    case PromptTemplateKind::kRetrievalWithDocImages:
      return "retrieval_doc_images";
  }
  return "unknown";
}

PromptTemplateKind template_kind(TaskKind task, Modality modality) {
  if (!is_admissible(task, modality)) {
    throw PromptError("modality " + to_string(modality) + " is not admissible for " + std::string(to_string(task)));
  }
  switch (task) {
    case TaskKind::kClassification:
      return PromptTemplateKind::kClassification;
    case TaskKind::kVqa:
      return PromptTemplateKind::kVqa;
    case TaskKind::kRetrieval:
      return modality.doc_has_image() ? PromptTemplateKind::kRetrievalWithDocImages
                                      : PromptTemplateKind::kRetrievalQueryImageOnly;
  }
  throw PromptError("unknown task");
}

PromptTemplate::PromptTemplate(std::string_view text) {
  std::string literal;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      std::size_t j = i + 1;
      while (j < text.size() && is_slot_char(text[j])) ++j;
      if (j < text.size() && text[j] == '}' && j > i + 1) {
        if (!literal.empty()) parts_.emplace_back(std::move(literal));
        literal.clear();
        std::string name(text.substr(i + 1, j - i - 1));
        if (std::find(slots_.begin(), slots_.end(), name) == slots_.end()) slots_.push_back(name);
        parts_.emplace_back(Slot{std::move(name)});
        i = j + 1;
        continue;
      }
    }
    literal += text[i++];
  }
  if (!literal.empty()) parts_.emplace_back(std::move(literal));
}

std::string PromptTemplate::render(const std::map<std::string, std::string, std::less<>>& values) const {
  std::string out;
  for (const auto& part : parts_) {
    if (const auto* lit = std::get_if<std::string>(&part)) {
      out += *lit;
      continue;
    }
    const auto& name = std::get<Slot>(part).name;
    const auto it = values.find(name);
    if (it == values.end()) throw PromptError("no value for template slot {" + name + "}");
    out += it->second;
  }
  return out;
}

TemplateSet TemplateSet::load(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw PromptError(manifest_path.string() + ": " + e.what());
  }

  TemplateSet set;
  Sha256 digest;
  for (PromptTemplateKind kind : kAllKinds) {
    const std::string key(to_string(kind));
    if (!manifest.contains(key)) throw PromptError(manifest_path.string() + ": missing entry \"" + key + "\"");
    const auto& entry = manifest[key];
    if (!entry.contains("file") || !entry["file"].is_string() || !entry.contains("slots") ||
        !entry["slots"].is_array()) {
      throw PromptError(manifest_path.string() + ": entry \"" + key + "\" needs \"file\" and \"slots\"");
    }
    const std::string text = read_text(dir / entry["file"].get<std::string>());
    digest.update(key);
    digest.update(text);
    PromptTemplate tpl(text);

    std::set<std::string> declared;
    for (const auto& s : entry["slots"]) declared.insert(s.get<std::string>());
    const std::set<std::string> found(tpl.slots().begin(), tpl.slots().end());
    for (const auto& s : declared) {
      if (!found.contains(s)) throw PromptError(key + ": declared slot {" + s + "} does not appear in the template");
    }
    for (const auto& s : found) {
      if (!declared.contains(s)) throw PromptError(key + ": template uses undeclared slot {" + s + "}");
    }
    set.templates_.push_back(std::move(tpl));
  }
  set.digest_ = digest.hex_digest();
  return set;
}

ExamplePool load_example_pool(const std::filesystem::path& dir) {
  ExamplePool pool;
  const std::pair<TaskKind, const char*> files[] = {{TaskKind::kClassification, "classification.txt"},
                                                    {TaskKind::kRetrieval, "retrieval.txt"}};
  for (const auto& [task, name] : files) {
    std::istringstream in(read_text(dir / name));
    std::string line;
    auto& list = pool[task];
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      list.push_back(line);
    }
  }
  return pool;
}

std::filesystem::path default_asset_dir() {
  if (const char* env = std::getenv("MMSYNTH_ASSETS"); env != nullptr && *env != '\0') return env;
  return MMSYNTH_SOURCE_ASSET_DIR;
}

PromptBundle build_prompt(const TemplateSet& templates, const SynthesisConfig& config, const ImageTriple& triple,
                          const ExamplePool& example_pool) {
  const Modality m = config.modality;
  PromptBundle bundle;
  bundle.kind = template_kind(config.task, m);

  if (triple.anchor.empty()) throw PromptError("image triple has no anchor");
  if (m.doc_has_image() != (triple.positive.has_value() && triple.negative.has_value()) ||
      triple.positive.has_value() != triple.negative.has_value()) {
    throw PromptError("image triple does not match modality " + to_string(m));
  }

  std::map<std::string, std::string, std::less<>> values;
  values["language"] = language_name(config.language);
  values["clarity"] = config.knobs.clarity;
  values["education"] = config.knobs.education;

  if (config.task != TaskKind::kVqa) {
    const auto it = example_pool.find(config.task);
    if (it == example_pool.end() || it->second.empty()) {
      throw PromptError("no example tasks for " + std::string(to_string(config.task)));
    }
    values["example_tasks"] = sample_examples(it->second, stream_seed(config.seed, Stream::kPrompt));
    values["modality_phrase"] = std::string(modality_phrase(m));
  }

  switch (bundle.kind) {
    case PromptTemplateKind::kClassification:
      values["input_text_spec"] = std::string(m.query_has_text() ? kInputTextPresent : kEmpty);
      values["text_length"] = config.knobs.text_length;
      break;
    case PromptTemplateKind::kVqa:
      values["text_length"] = config.knobs.text_length;
      break;
    case PromptTemplateKind::kRetrievalWithDocImages:
      values["positive_document_spec"] = std::string(m.doc_has_text() ? kPositiveDocPresent : kEmpty);
      values["hard_negative_document_spec"] = std::string(m.doc_has_text() ? kNegativeDocPresent : kEmpty);
      [[fallthrough]];
    case PromptTemplateKind::kRetrievalQueryImageOnly:
      values["query_spec"] = std::string(m.query_has_text() ? kQueryPresent : kEmpty);
      values["query_frequency"] = config.knobs.query_frequency;
      values["query_length"] = config.knobs.query_length;
      values["doc_length"] = config.knobs.doc_length;
      break;
  }

  bundle.text = templates.get(bundle.kind).render(values);
  bundle.attachments.push_back(triple.anchor);
  if (triple.positive) {
    bundle.attachments.push_back(*triple.positive);
    bundle.attachments.push_back(*triple.negative);
  }
  return bundle;
}

std::vector<std::string> unresolved_slots(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = text.find('{', pos)) != std::string_view::npos) {
    const auto close = text.find('}', pos + 1);
    const auto nl = text.find('\n', pos + 1);
    if (close == std::string_view::npos) break;
    if (nl != std::string_view::npos && nl < close) {
      pos = nl;
      continue;
    }
    out.emplace_back(text.substr(pos, close - pos + 1));
    pos = close + 1;
  }
  return out;
}

}  // namespace mmsynth
