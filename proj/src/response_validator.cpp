#include "mmsynth/response_validator.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>

#include <json.hpp>

#include "mmsynth/error.hpp"

namespace mmsynth {
namespace {

constexpr std::array<std::string_view, 11> kClassificationKeys = {
    "description",  "task_instruction",         "input_text",         "label",
    "misleading_label", "evaluation",           "possible_improvements", "revised_task_instruction",
    "revised_input_text", "revised_label",      "revised_misleading_label"};
constexpr std::array<std::string_view, 9> kVqaKeys = {
    "description", "question",         "positive_answer",         "hard_negative_answer",        "evaluation",
    "possible_improvements", "revised_question", "revised_positive_answer", "revised_hard_negative_answer"};
constexpr std::array<std::string_view, 11> kRetrievalKeys = {"description",
                                                             "task_instruction",
                                                             "query",
                                                             "positive_document",
                                                             "hard_negative_document",
                                                             "evaluation",
                                                             "possible_improvements",
                                                             "revised_task_instruction",
                                                             "revised_query",
                                                             "revised_positive_document",
                                                             "revised_hard_negative_document"};

bool blank(std::string_view s) { return s.find_first_not_of(" \t\r\n") == std::string_view::npos; }

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Decodes one UTF-8 code point; malformed input yields U+FFFD and advances
// one byte.
char32_t next_code_point(std::string_view s, std::size_t& i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  int len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    ++i;
    return 0xFFFD;
  }
  if (i + static_cast<std::size_t>(len) > s.size()) {
    ++i;
    return 0xFFFD;
  }
  for (int k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
    if ((b & 0xC0) != 0x80) {
      ++i;
      return 0xFFFD;
    }
    cp = (cp << 6) | (b & 0x3F);
  }
  i += static_cast<std::size_t>(len);
  return cp;
}

bool is_non_letter_block(char32_t cp) {
  return (cp >= 0x80 && cp <= 0xBF) || cp == 0xD7 || cp == 0xF7 || (cp >= 0x2000 && cp <= 0x2BFF) ||
         (cp >= 0x3000 && cp <= 0x303F) || (cp >= 0xFE30 && cp <= 0xFE4F) || (cp >= 0xFF01 && cp <= 0xFF20) ||
         (cp >= 0xFF3B && cp <= 0xFF40) || (cp >= 0xFF5B && cp <= 0xFF65) || (cp >= 0x1F000 && cp <= 0x1FAFF) ||
         cp == 0xFEFF;
}

struct LengthRule {
  std::size_t min_words = 0;
  std::size_t max_words = SIZE_MAX;
};

// "less than 10", "at least 50", "5 to 15 words", "300" (documents: at least).
LengthRule parse_length_rule(std::string_view knob) {
  LengthRule r;
  unsigned a = 0;
  unsigned b = 0;
  const std::string s(knob);
  if (std::sscanf(s.c_str(), "less than %u", &a) == 1) {
    r.max_words = a == 0 ? 0 : a - 1;
  } else if (std::sscanf(s.c_str(), "at least %u", &a) == 1) {
    r.min_words = a;
  } else if (std::sscanf(s.c_str(), "%u to %u", &a, &b) == 2) {
    r.min_words = a;
    r.max_words = b;
  } else if (std::sscanf(s.c_str(), "%u", &a) == 1) {
    r.min_words = a;
  }
  return r;
}

class Checker {
 public:
  explicit Checker(ValidationReport& report) : report_(report) {}

  void fail(std::string_view rule_id, std::string message) {
    report_.violations.push_back({std::string(rule_id), std::move(message)});
  }

  void must_be_empty(const RawGeneration& g, std::string_view key, std::string_view why) {
    if (!g.at(key).empty()) fail(rule::kModalityEmptiness, std::string(key) + " must be empty: " + std::string(why));
  }

  void must_be_filled(const RawGeneration& g, std::string_view key) {
    if (blank(g.at(key))) fail(rule::kNonEmpty, std::string(key) + " must not be empty");
  }

  void must_differ(const RawGeneration& g, std::string_view a, std::string_view b) {
    if (trim(g.at(a)) == trim(g.at(b))) fail(rule::kDistinctness, std::string(a) + " equals " + std::string(b));
  }

  void no_banned_words(const RawGeneration& g, std::string_view key) {
    if (contains_banned_word(g.at(key))) {
      fail(rule::kBannedWords, std::string(key) + " uses the word \"query\" or \"document\"");
    }
  }

  void english_instruction(std::string_view key, std::string_view text) {
    const auto ratio = basic_latin_letter_ratio(text);
    if (!ratio) {
      fail(rule::kInstructionLanguage, std::string(key) + " has no letters");
    } else if (*ratio < kMinBasicLatinRatio) {
      char buf[96];
      std::snprintf(buf, sizeof buf, " is not English-dominant (%.2f of letters in Basic Latin)", *ratio);
      fail(rule::kInstructionLanguage, std::string(key) + buf);
    }
  }

 private:
  ValidationReport& report_;
};

}  // namespace

std::span<const std::string_view> required_keys(TaskKind task) {
  switch (task) {
    case TaskKind::kClassification:
      return kClassificationKeys;
    case TaskKind::kVqa:
      return kVqaKeys;
    case TaskKind::kRetrieval:
      return kRetrievalKeys;
  }
  return {};
}

const std::string& RawGeneration::at(std::string_view key) const {
  const auto it = fields.find(key);
  if (it == fields.end()) throw SchemaError(std::string(key), "missing from generation");
  return it->second;
}

std::optional<std::string_view> extract_json_object(std::string_view raw) {
  std::size_t start = raw.find('{');
  while (start != std::string_view::npos) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    std::size_t end = std::string_view::npos;
    for (std::size_t i = start; i < raw.size(); ++i) {
      const char c = raw[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}') {
        if (--depth == 0) {
          end = i;
          break;
        }
      }
    }
    if (end == std::string_view::npos) return std::nullopt;
    const auto candidate = raw.substr(start, end - start + 1);
    if (nlohmann::json::accept(candidate)) return candidate;
    start = raw.find('{', start + 1);
  }
  return std::nullopt;
}

RawGeneration parse_generation(std::string_view raw, TaskKind task) {
  const auto object = extract_json_object(raw);
  if (!object) throw ParseError("no JSON object found in generation");
  const auto j = nlohmann::json::parse(*object);
  RawGeneration gen;
  gen.task = task;
  for (const auto key : required_keys(task)) {
    const auto it = j.find(key);
    if (it == j.end()) throw SchemaError(std::string(key), "missing required key");
    if (!it->is_string()) throw SchemaError(std::string(key), "value is not a string");
    gen.fields.emplace(std::string(key), it->get<std::string>());
  }
  return gen;
}

bool ValidationReport::has(std::string_view rule_id) const {
  return std::any_of(violations.begin(), violations.end(), [&](const Violation& v) { return v.rule_id == rule_id; });
}

std::optional<double> basic_latin_letter_ratio(std::string_view text) {
  std::size_t basic = 0;
  std::size_t other = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    const char32_t cp = next_code_point(text, i);
    if (cp < 0x80) {
      if (std::isalpha(static_cast<int>(cp))) ++basic;
    } else if (!is_non_letter_block(cp)) {
      ++other;
    }
  }
  if (basic + other == 0) return std::nullopt;
  return static_cast<double>(basic) / static_cast<double>(basic + other);
}

bool contains_banned_word(std::string_view text) {
  std::string word;
  const auto check = [&word] {
    const bool banned = word == "query" || word == "queries" || word == "document" || word == "documents";
    word.clear();
    return banned;
  };
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      word += static_cast<char>(std::tolower(c));
    } else if (check()) {
      return true;
    }
  }
  return check();
}

std::size_t word_count(std::string_view text) {
  std::size_t n = 0;
  bool in_word = false;
  for (const char c : text) {
    const bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r';
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

ValidationReport validate(const RawGeneration& gen, const SynthesisConfig& config) {
  ValidationReport report;
  Checker check(report);
  const Modality m = config.modality;

  // Schema drift (a generation bound to another task) is reported, not thrown.
  for (const auto key : required_keys(config.task)) {
    if (!gen.fields.contains(key)) check.fail(rule::kSchema, "missing key " + std::string(key));
  }
  if (!report.violations.empty()) return report;

  for (const auto key : {"description", "evaluation", "possible_improvements"}) check.must_be_filled(gen, key);

  switch (config.task) {
    case TaskKind::kClassification:
      if (!m.query_has_text()) {
        check.must_be_empty(gen, "input_text", "query side has no text");
        check.must_be_empty(gen, "revised_input_text", "query side has no text");
      } else {
        check.must_be_filled(gen, "revised_input_text");
      }
      check.must_be_filled(gen, "revised_task_instruction");
      check.must_be_filled(gen, "revised_label");
      check.must_be_filled(gen, "revised_misleading_label");
      check.must_differ(gen, "revised_label", "revised_misleading_label");
      check.english_instruction("revised_task_instruction", gen.at("revised_task_instruction"));
      break;
    case TaskKind::kVqa:
      check.must_be_filled(gen, "revised_question");
      check.must_be_filled(gen, "revised_positive_answer");
      check.must_be_filled(gen, "revised_hard_negative_answer");
      check.must_differ(gen, "revised_positive_answer", "revised_hard_negative_answer");
      break;
    case TaskKind::kRetrieval:
      check.must_be_filled(gen, "revised_task_instruction");
      if (!m.query_has_text()) {
        check.must_be_empty(gen, "query", "query side has no text");
        check.must_be_empty(gen, "revised_query", "query side has no text");
      } else {
        check.must_be_filled(gen, "revised_query");
      }
      if (!m.doc_has_text()) {
        for (const auto key : {"positive_document", "hard_negative_document", "revised_positive_document",
                               "revised_hard_negative_document"}) {
          check.must_be_empty(gen, key, "document side has no text");
        }
      } else {
        check.must_be_filled(gen, "revised_positive_document");
        check.must_be_filled(gen, "revised_hard_negative_document");
        check.must_differ(gen, "revised_positive_document", "revised_hard_negative_document");
        check.no_banned_words(gen, "revised_positive_document");
        check.no_banned_words(gen, "revised_hard_negative_document");
      }
      check.english_instruction("revised_task_instruction", gen.at("revised_task_instruction"));
      break;
  }
  return report;
}

LengthCompliance length_compliance(const RawGeneration& gen, const SynthesisConfig& config) {
  LengthCompliance out;
  const auto measure = [&](std::string_view key, std::string_view knob) {
    const auto it = gen.fields.find(key);
    if (knob.empty() || it == gen.fields.end()) return;
    const LengthRule r = parse_length_rule(knob);
    const std::size_t n = word_count(it->second);
    ++out.checked;
    if (n >= r.min_words && n <= r.max_words) ++out.met;
  };
  const Modality m = config.modality;
  switch (config.task) {
    case TaskKind::kClassification:
      if (m.query_has_text()) measure("revised_input_text", config.knobs.text_length);
      break;
    case TaskKind::kVqa:
      measure("revised_question", config.knobs.text_length);
      break;
    case TaskKind::kRetrieval:
      if (m.query_has_text()) measure("revised_query", config.knobs.query_length);
      if (m.doc_has_text()) {
        measure("revised_positive_document", config.knobs.doc_length);
        measure("revised_hard_negative_document", config.knobs.doc_length);
      }
      break;
  }
  return out;
}

std::string sample_id(std::uint64_t sample_index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%010llu", static_cast<unsigned long long>(sample_index));
  return buf;
}

DataSample finalize(const RawGeneration& gen, const SynthesisConfig& config, const ImageTriple& triple,
                    Provenance provenance) {
  const auto report = validate(gen, config);
  if (!report.accepted()) {
    std::string rules;
    for (const auto& v : report.violations) rules += (rules.empty() ? "" : ", ") + v.rule_id;
    throw ContractError("finalize called on a rejected generation (" + rules + ")");
  }
  const Modality m = config.modality;
  if (triple.anchor.empty() || m.doc_has_image() != (triple.positive && triple.negative)) {
    throw ContractError("image triple does not match modality " + to_string(m));
  }

  DataSample s;
  s.id = sample_id(config.sample_index);
  s.task = config.task;
  s.modality = m;
  s.language = config.language;
  switch (config.task) {
    case TaskKind::kClassification:
      s.instruction = gen.at("revised_task_instruction");
      s.query_text = gen.at("revised_input_text");
      s.pos_text = gen.at("revised_label");
      s.neg_text = gen.at("revised_misleading_label");
      break;
    case TaskKind::kVqa:
      s.instruction = std::string(kVqaInstruction);
      s.query_text = gen.at("revised_question");
      s.pos_text = gen.at("revised_positive_answer");
      s.neg_text = gen.at("revised_hard_negative_answer");
      break;
    case TaskKind::kRetrieval:
      s.instruction = gen.at("revised_task_instruction");
      s.query_text = gen.at("revised_query");
      s.pos_text = gen.at("revised_positive_document");
      s.neg_text = gen.at("revised_hard_negative_document");
      break;
  }
  if (m.query_has_image()) s.query_image = triple.anchor;
  if (m.doc_has_image()) {
    s.pos_image = triple.positive;
    s.neg_image = triple.negative;
  }
  provenance.seed = config.seed;
  provenance.sample_index = config.sample_index;
  s.provenance = std::move(provenance);
  return s;
}

ValidationReport validate_sample(const DataSample& s) {
  ValidationReport report;
  Checker check(report);
  const Modality m = s.modality;

  if (s.id.empty()) check.fail(rule::kInvariant, "empty id");
  if (!is_admissible(s.task, m)) {
    check.fail(rule::kInvariant, to_string(m) + " is not admissible for " + std::string(to_string(s.task)));
  }
  if (s.query_image.has_value() != m.query_has_image()) check.fail(rule::kInvariant, "query_image presence");
  if (s.pos_image.has_value() != m.doc_has_image()) check.fail(rule::kInvariant, "pos_image presence");
  if (s.neg_image.has_value() != m.doc_has_image()) check.fail(rule::kInvariant, "neg_image presence");
  if (s.pos_image && s.neg_image && *s.pos_image == *s.neg_image) {
    check.fail(rule::kInvariant, "positive and negative images coincide");
  }
  if (s.query_image && (s.query_image == s.pos_image || s.query_image == s.neg_image)) {
    check.fail(rule::kInvariant, "query image reused on the document side");
  }
  if (s.task == TaskKind::kVqa && s.instruction != kVqaInstruction) {
    check.fail(rule::kInvariant, "VQA instruction must be the fixed string");
  }

  const auto text_side = [&](const std::string& text, bool has_text, const char* name) {
    if (!has_text && !text.empty()) check.fail(rule::kModalityEmptiness, std::string(name) + " must be empty");
    if (has_text && blank(text)) check.fail(rule::kNonEmpty, std::string(name) + " must not be empty");
  };
  if (blank(s.instruction)) check.fail(rule::kNonEmpty, "instruction must not be empty");
  text_side(s.query_text, m.query_has_text(), "query_text");
  text_side(s.pos_text, m.doc_has_text(), "pos_text");
  text_side(s.neg_text, m.doc_has_text(), "neg_text");

  if (trim(s.pos_text) == trim(s.neg_text) && s.pos_image == s.neg_image) {
    check.fail(rule::kDistinctness, "positive equals hard negative");
  } else if (m.doc_has_text() && trim(s.pos_text) == trim(s.neg_text)) {
    check.fail(rule::kDistinctness, "pos_text equals neg_text");
  }
  if (s.task == TaskKind::kRetrieval) {
    if (contains_banned_word(s.pos_text)) check.fail(rule::kBannedWords, "pos_text uses a banned word");
    if (contains_banned_word(s.neg_text)) check.fail(rule::kBannedWords, "neg_text uses a banned word");
  }
  if (s.task != TaskKind::kVqa && !blank(s.instruction)) check.english_instruction("instruction", s.instruction);
  return report;
}

}  // namespace mmsynth
