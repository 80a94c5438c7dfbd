#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace mmsynth {

enum class TaskKind : std::uint8_t { kClassification = 0, kVqa = 1, kRetrieval = 2 };

inline constexpr std::array<TaskKind, 3> kAllTasks = {TaskKind::kClassification, TaskKind::kVqa,
                                                      TaskKind::kRetrieval};

std::string_view to_string(TaskKind task);
// Accepts "classification", "vqa", "retrieval" (case-insensitive).
TaskKind parse_task(std::string_view name);

// One side of a modality combination: a non-empty subset of {Image, Text}.
enum Side : std::uint8_t { kImage = 1, kText = 2, kImageText = kImage | kText };

struct Modality {
  std::uint8_t query = kImage;
  std::uint8_t doc = kText;

  bool query_has_image() const noexcept { return (query & kImage) != 0; }
  bool query_has_text() const noexcept { return (query & kText) != 0; }
  bool doc_has_image() const noexcept { return (doc & kImage) != 0; }
  bool doc_has_text() const noexcept { return (doc & kText) != 0; }

  friend auto operator<=>(const Modality&, const Modality&) = default;
};

// Compact arrow form: "I->T", "IT->IT", "T->I", ...
std::string to_string(Modality m);
Modality parse_modality(std::string_view text);

// Long form used inside prompts, e.g. "(image,text)-to-image".
std::string_view modality_phrase(Modality m);

struct TaskModality {
  TaskKind task;
  Modality modality;
};

// The ten admissible (task, modality) rows in a fixed order.
std::span<const TaskModality> admissible_rows();
std::span<const Modality> admissible_modalities(TaskKind task);
bool is_admissible(TaskKind task, Modality m);

}  // namespace mmsynth
