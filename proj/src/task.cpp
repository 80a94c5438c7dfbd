#include "mmsynth/task.hpp"

#include <algorithm>
#include <cctype>

#include "mmsynth/error.hpp"

namespace mmsynth {
namespace {

constexpr Modality kIT{kImage, kText};
constexpr Modality kITT{kImageText, kText};
constexpr Modality kITI{kImageText, kImage};
constexpr Modality kII{kImage, kImage};
constexpr Modality kITIT{kImageText, kImageText};
constexpr Modality kTI{kText, kImage};
constexpr Modality kTIT{kText, kImageText};

constexpr std::array<TaskModality, 10> kRows = {{
    {TaskKind::kClassification, kIT},
    {TaskKind::kClassification, kITT},
    {TaskKind::kVqa, kITT},
    {TaskKind::kRetrieval, kIT},
    {TaskKind::kRetrieval, kITT},
    {TaskKind::kRetrieval, kITI},
    {TaskKind::kRetrieval, kII},
    {TaskKind::kRetrieval, kITIT},
    {TaskKind::kRetrieval, kTI},
    {TaskKind::kRetrieval, kTIT},
}};

constexpr std::array<Modality, 2> kClassificationModalities = {kIT, kITT};
constexpr std::array<Modality, 1> kVqaModalities = {kITT};
constexpr std::array<Modality, 7> kRetrievalModalities = {kIT, kITT, kITI, kII, kITIT, kTI, kTIT};

std::string side_string(std::uint8_t side) {
  std::string s;
  if (side & kImage) s += 'I';
  if (side & kText) s += 'T';
  return s;
}

std::uint8_t parse_side(std::string_view s, std::string_view whole) {
  if (s == "I") return kImage;
  if (s == "T") return kText;
  if (s == "IT" || s == "TI") return kImageText;
  throw InputError("bad modality side in '" + std::string(whole) + "'");
}

}  // namespace

std::string_view to_string(TaskKind task) {
  switch (task) {
    case TaskKind::kClassification:
      return "classification";
    case TaskKind::kVqa:
      return "vqa";
    case TaskKind::kRetrieval:
      return "retrieval";
  }
  return "unknown";
}

TaskKind parse_task(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "classification") return TaskKind::kClassification;
  if (lower == "vqa") return TaskKind::kVqa;
  if (lower == "retrieval") return TaskKind::kRetrieval;
  throw InputError("unknown task kind '" + std::string(name) + "'");
}

std::string to_string(Modality m) { return side_string(m.query) + "->" + side_string(m.doc); }

Modality parse_modality(std::string_view text) {
  // Accept both "IT->I" and the unicode arrow "IT→I".
  std::size_t pos = text.find("->");
  std::size_t len = 2;
  if (pos == std::string_view::npos) {
    pos = text.find("\xE2\x86\x92");
    len = 3;
  }
  if (pos == std::string_view::npos) throw InputError("bad modality '" + std::string(text) + "'");
  return Modality{parse_side(text.substr(0, pos), text), parse_side(text.substr(pos + len), text)};
}

std::string_view modality_phrase(Modality m) {
  if (m == kIT) return "image-to-text";
  if (m == kITT) return "(image,text)-to-text";
  if (m == kITI) return "(image,text)-to-image";
  if (m == kII) return "image-to-image";
  if (m == kITIT) return "(image,text)-to-(image,text)";
  if (m == kTI) return "text-to-image";
  if (m == kTIT) return "text-to-(image,text)";
  if (m == Modality{kText, kText}) return "text-to-text";
  if (m == Modality{kImage, kImageText}) return "image-to-(image,text)";
  return "unknown";
}

std::span<const TaskModality> admissible_rows() { return kRows; }

std::span<const Modality> admissible_modalities(TaskKind task) {
  switch (task) {
    case TaskKind::kClassification:
      return kClassificationModalities;
    case TaskKind::kVqa:
      return kVqaModalities;
    case TaskKind::kRetrieval:
      return kRetrievalModalities;
  }
  return {};
}

bool is_admissible(TaskKind task, Modality m) {
  const auto allowed = admissible_modalities(task);
  return std::find(allowed.begin(), allowed.end(), m) != allowed.end();
}

}  // namespace mmsynth
