#include "mmsynth/config_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "mmsynth/error.hpp"
#include "mmsynth/rng.hpp"

namespace mmsynth {
namespace {

constexpr std::string_view kLanguagesTsv =
#include "languages_data.inc"
    ;

std::vector<LanguageInfo> parse_language_table() {
  std::vector<LanguageInfo> out;
  std::istringstream in{std::string(kLanguagesTsv)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto t1 = line.find('\t');
    const auto t2 = line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos) continue;
    out.push_back({line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1),
                   line.substr(t2 + 1) == "high" ? LanguageTier::kHigh : LanguageTier::kLow});
  }
  return out;
}

constexpr std::array<RowCount, 10> kReferenceCounts = {{
    {TaskKind::kClassification, {kImage, kText}, 126177},
    {TaskKind::kClassification, {kImageText, kText}, 13823},
    {TaskKind::kVqa, {kImageText, kText}, 140000},
    {TaskKind::kRetrieval, {kImage, kText}, 98040},
    {TaskKind::kRetrieval, {kImageText, kText}, 41960},
    {TaskKind::kRetrieval, {kImageText, kImage}, 56185},
    {TaskKind::kRetrieval, {kImage, kImage}, 27988},
    {TaskKind::kRetrieval, {kImageText, kImageText}, 27656},
    {TaskKind::kRetrieval, {kText, kImage}, 14090},
    {TaskKind::kRetrieval, {kText, kImageText}, 14081},
}};

constexpr double kSumTolerance = 1e-9;

std::size_t idx(TaskKind t) { return static_cast<std::size_t>(t); }

void check_weight(double w, const std::string& path) {
  if (!std::isfinite(w)) throw DistributionError(path, "weight is not finite");
  if (w < 0.0) throw DistributionError(path, "weight is negative");
}

void check_sum(double sum, const std::string& path) {
  if (std::abs(sum - 1.0) > kSumTolerance) {
    std::ostringstream os;
    os.precision(17);
    os << "weights sum to " << sum << ", expected 1";
    throw DistributionError(path, os.str());
  }
}

template <typename Weights>
std::vector<double> cumulative(const Weights& weights) {
  std::vector<double> cdf;
  cdf.reserve(weights.size());
  double acc = 0.0;
  for (const auto& w : weights) {
    if constexpr (std::is_arithmetic_v<std::decay_t<decltype(w)>>) {
      acc += w;
    } else {
      acc += w.second;
    }
    cdf.push_back(acc);
  }
  return cdf;
}

template <std::size_t N>
std::string draw(Rng& rng, const std::array<std::string_view, N>& choices) {
  return std::string(choices[rng.below(N)]);
}

double number_at(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number()) throw DistributionError(path, "expected a number");
  return j.get<double>();
}

}  // namespace

std::span<const LanguageInfo> language_table() {
  static const std::vector<LanguageInfo> table = parse_language_table();
  return table;
}

std::string language_name(std::string_view code) {
  for (const auto& info : language_table()) {
    if (info.code == code) return info.name;
  }
  return std::string(code);
}

std::span<const RowCount> reference_row_counts() { return kReferenceCounts; }

double DistributionSpec::modality_weight(TaskKind t, Modality m) const {
  for (const auto& [mod, w] : modality_weights[idx(t)]) {
    if (mod == m) return w;
  }
  return 0.0;
}

double DistributionSpec::language_weight(std::string_view code) const {
  for (const auto& [c, w] : language_weights) {
    if (c == code) return w;
  }
  return 0.0;
}

void DistributionSpec::validate() const {
  double task_sum = 0.0;
  for (TaskKind t : kAllTasks) {
    const std::string path = "task_weights." + std::string(to_string(t));
    check_weight(task_weight(t), path);
    task_sum += task_weight(t);
  }
  check_sum(task_sum, "task_weights");

  for (TaskKind t : kAllTasks) {
    const std::string base = "modality_weights." + std::string(to_string(t));
    const auto& weights = modality_weights[idx(t)];
    if (weights.empty()) throw DistributionError(base, "no modality weights");
    std::set<Modality> seen;
    double sum = 0.0;
    for (const auto& [m, w] : weights) {
      const std::string path = base + "." + to_string(m);
      if (!is_admissible(t, m)) throw DistributionError(path, "modality not admissible for this task");
      if (!seen.insert(m).second) throw DistributionError(path, "duplicate modality");
      check_weight(w, path);
      sum += w;
    }
    check_sum(sum, base);
  }

  if (language_weights.size() != kLanguageCount) {
    throw DistributionError("language_weights", "expected " + std::to_string(kLanguageCount) + " languages, got " +
                                                    std::to_string(language_weights.size()));
  }
  std::set<std::string> codes;
  double lang_sum = 0.0;
  for (const auto& [code, w] : language_weights) {
    const std::string path = "language_weights." + code;
    if (code.empty()) throw DistributionError("language_weights", "empty language code");
    if (!codes.insert(code).second) throw DistributionError(path, "duplicate language");
    check_weight(w, path);
    lang_sum += w;
  }
  check_sum(lang_sum, "language_weights");
}

DistributionSpec default_distribution() {
  DistributionSpec spec;
  // Classification : VQA : Retrieval = 1 : 1 : 2.
  spec.task_weights = {0.25, 0.25, 0.50};

  std::array<std::uint64_t, 3> totals{};
  for (const auto& row : kReferenceCounts) totals[idx(row.task)] += row.count;
  for (const auto& row : kReferenceCounts) {
    spec.modality_weights[idx(row.task)].emplace_back(
        row.modality, static_cast<double>(row.count) / static_cast<double>(totals[idx(row.task)]));
  }

  // English takes half, the other high-resource languages share a quarter,
  // the low-resource languages share the remaining quarter evenly.
  const auto table = language_table();
  const auto high_others = std::count_if(table.begin(), table.end(), [](const LanguageInfo& l) {
    return l.tier == LanguageTier::kHigh && l.code != "en";
  });
  const auto low = std::count_if(table.begin(), table.end(),
                                 [](const LanguageInfo& l) { return l.tier == LanguageTier::kLow; });
  for (const auto& lang : table) {
    double w = 0.0;
    if (lang.code == "en") {
      w = 0.5;
    } else if (lang.tier == LanguageTier::kHigh) {
      w = 0.25 / static_cast<double>(high_others);
    } else {
      w = 0.25 / static_cast<double>(low);
    }
    spec.language_weights.emplace_back(lang.code, w);
  }
  return spec;
}

DistributionSpec distribution_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw DistributionError(path, "expected an object");
  DistributionSpec spec = default_distribution();
  for (const auto& [key, value] : j.items()) {
    const std::string section = path + "." + key;
    if (key == "task_weights") {
      if (!value.is_object()) throw DistributionError(section, "expected an object");
      spec.task_weights = {0.0, 0.0, 0.0};
      for (const auto& [name, w] : value.items()) {
        TaskKind t;
        try {
          t = parse_task(name);
        } catch (const InputError&) {
          throw DistributionError(section + "." + name, "unknown task");
        }
        spec.task_weights[idx(t)] = number_at(w, section + "." + name);
      }
    } else if (key == "modality_weights") {
      if (!value.is_object()) throw DistributionError(section, "expected an object");
      for (const auto& [name, mods] : value.items()) {
        const std::string task_path = section + "." + name;
        TaskKind t;
        try {
          t = parse_task(name);
        } catch (const InputError&) {
          throw DistributionError(task_path, "unknown task");
        }
        if (!mods.is_object()) throw DistributionError(task_path, "expected an object");
        auto& weights = spec.modality_weights[idx(t)];
        weights.clear();
        for (const auto& [mod_text, w] : mods.items()) {
          Modality m;
          try {
            m = parse_modality(mod_text);
          } catch (const InputError&) {
            throw DistributionError(task_path + "." + mod_text, "unparsable modality");
          }
          weights.emplace_back(m, number_at(w, task_path + "." + mod_text));
        }
      }
    } else if (key == "language_weights") {
      if (!value.is_object()) throw DistributionError(section, "expected an object");
      spec.language_weights.clear();
      // nlohmann::json objects iterate in key order; keep the bundled table
      // order for known codes so draws do not depend on file layout.
      std::set<std::string> given;
      for (const auto& [code, w] : value.items()) given.insert(code);
      for (const auto& lang : language_table()) {
        if (given.erase(lang.code)) {
          spec.language_weights.emplace_back(lang.code, number_at(value.at(lang.code), section + "." + lang.code));
        }
      }
      for (const auto& code : given) {
        spec.language_weights.emplace_back(code, number_at(value.at(code), section + "." + code));
      }
    } else {
      throw DistributionError(section, "unknown key");
    }
  }
  try {
    spec.validate();
  } catch (const DistributionError& e) {
    throw DistributionError(path + "." + e.path(), std::string(e.what()).substr(e.path().size() + 2));
  }
  return spec;
}

DistributionSpec load_distribution(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DistributionError(file.string(), "cannot open file");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DistributionError(file.string(), e.what());
  }
  return distribution_from_json(j, file.filename().string());
}

nlohmann::json to_json(const DistributionSpec& spec) {
  nlohmann::json j;
  for (TaskKind t : kAllTasks) j["task_weights"][std::string(to_string(t))] = spec.task_weight(t);
  for (TaskKind t : kAllTasks) {
    auto& section = j["modality_weights"][std::string(to_string(t))];
    for (const auto& [m, w] : spec.modality_weights[idx(t)]) section[to_string(m)] = w;
  }
  for (const auto& [code, w] : spec.language_weights) j["language_weights"][code] = w;
  return j;
}

ConfigSampler::ConfigSampler(DistributionSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  task_cdf_ = cumulative(spec_.task_weights);
  for (TaskKind t : kAllTasks) modality_cdf_[idx(t)] = cumulative(spec_.modality_weights[idx(t)]);
  language_cdf_ = cumulative(spec_.language_weights);
}

SynthesisConfig ConfigSampler::sample(std::uint64_t master_seed, std::uint64_t index) const {
  SynthesisConfig config;
  config.sample_index = index;
  config.seed = derive_seed(master_seed, index);

  Rng rng(stream_seed(config.seed, Stream::kConfig));
  config.task = kAllTasks[rng.pick(task_cdf_)];
  const auto& mods = spec_.modality_weights[idx(config.task)];
  config.modality = mods[rng.pick(modality_cdf_[idx(config.task)])].first;
  config.language = spec_.language_weights[rng.pick(language_cdf_)].first;

  StyleKnobs& k = config.knobs;
  if (config.task == TaskKind::kRetrieval) {
    k.query_frequency = draw(rng, vocab::kQueryFrequency);
    k.query_length = draw(rng, vocab::kQueryLength);
    k.clarity = draw(rng, vocab::kClarity);
    k.doc_length = draw(rng, vocab::kDocLength);
    k.education = draw(rng, vocab::kEducation);
  } else {
    k.text_length = draw(rng, vocab::kTextLength);
    k.clarity = draw(rng, vocab::kClarity);
    k.education = draw(rng, vocab::kEducation);
  }
  return config;
}

SynthesisConfig sample_config(std::uint64_t master_seed, std::uint64_t index, const DistributionSpec& spec) {
  return ConfigSampler(spec).sample(master_seed, index);
}

}  // namespace mmsynth
