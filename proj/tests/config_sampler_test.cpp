#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "mmsynth/config_sampler.hpp"
#include "mmsynth/error.hpp"
#include "mmsynth/rng.hpp"

using namespace mmsynth;

namespace {

std::uint64_t count_of(TaskKind t, const char* mod) {
  for (const auto& row : reference_row_counts()) {
    if (row.task == t && row.modality == parse_modality(mod)) return row.count;
  }
  return 0;
}

}  // namespace

TEST(Task, AdmissibleRowsAreTheTenPublishedOnes) {
  const auto rows = admissible_rows();
  ASSERT_EQ(rows.size(), 10u);
  std::set<std::string> seen;
  for (const auto& r : rows) seen.insert(std::string(to_string(r.task)) + " " + to_string(r.modality));
  EXPECT_EQ(seen.size(), 10u);
  EXPECT_TRUE(seen.contains("classification I->T"));
  EXPECT_TRUE(seen.contains("classification IT->T"));
  EXPECT_TRUE(seen.contains("vqa IT->T"));
  EXPECT_TRUE(seen.contains("retrieval T->IT"));
  EXPECT_FALSE(is_admissible(TaskKind::kVqa, parse_modality("I->T")));
  EXPECT_FALSE(is_admissible(TaskKind::kClassification, parse_modality("T->I")));
}

TEST(Task, ModalityTextRoundTrips) {
  for (const auto& r : admissible_rows()) EXPECT_EQ(parse_modality(to_string(r.modality)), r.modality);
  EXPECT_EQ(parse_modality("IT→I"), parse_modality("IT->I"));
  EXPECT_EQ(modality_phrase(parse_modality("IT->I")), "(image,text)-to-image");
  EXPECT_THROW(parse_modality("X->T"), InputError);
  EXPECT_THROW(parse_modality("IT"), InputError);
  EXPECT_EQ(parse_task("Retrieval"), TaskKind::kRetrieval);
  EXPECT_THROW(parse_task("ranking"), InputError);
}

TEST(ReferenceCounts, TotalsMatchTheReleasedDataset) {
  std::map<TaskKind, std::uint64_t> per_task;
  std::uint64_t total = 0;
  for (const auto& row : reference_row_counts()) {
    per_task[row.task] += row.count;
    total += row.count;
  }
  EXPECT_EQ(per_task[TaskKind::kClassification], 140000u);
  EXPECT_EQ(per_task[TaskKind::kVqa], 140000u);
  EXPECT_EQ(per_task[TaskKind::kRetrieval], 280000u);
  EXPECT_EQ(total, 560000u);
  EXPECT_EQ(count_of(TaskKind::kClassification, "I->T"), 126177u);
  EXPECT_EQ(count_of(TaskKind::kRetrieval, "T->IT"), 14081u);
}

TEST(DefaultDistribution, ScalesBackToReferenceCounts) {
  const auto spec = default_distribution();
  for (const auto& row : reference_row_counts()) {
    const double scaled = 560000.0 * spec.task_weight(row.task) * spec.modality_weight(row.task, row.modality);
    EXPECT_EQ(std::llround(scaled), static_cast<long long>(row.count)) << to_string(row.modality);
    EXPECT_NEAR(scaled, static_cast<double>(row.count), 1e-6);
  }
  EXPECT_NEAR(spec.modality_weight(TaskKind::kClassification, parse_modality("I->T")), 0.9013, 5e-5);
  EXPECT_NEAR(spec.modality_weight(TaskKind::kRetrieval, parse_modality("T->IT")), 0.0503, 5e-5);
}

TEST(DefaultDistribution, LanguageWeights) {
  const auto spec = default_distribution();
  ASSERT_EQ(spec.language_weights.size(), kLanguageCount);
  ASSERT_EQ(language_table().size(), kLanguageCount);
  EXPECT_DOUBLE_EQ(spec.language_weight("en"), 0.5);
  double high = 0.0;
  double low = 0.0;
  for (const auto& lang : language_table()) {
    if (lang.code == "en") continue;
    (lang.tier == LanguageTier::kHigh ? high : low) += spec.language_weight(lang.code);
  }
  EXPECT_NEAR(high, 0.25, 1e-12);
  EXPECT_NEAR(low, 0.25, 1e-12);
  EXPECT_EQ(language_name("de"), "German");
  EXPECT_EQ(language_name("xx"), "xx");
}

TEST(DistributionSpec, RejectsBadWeightsWithPath) {
  auto bad_sum = default_distribution();
  bad_sum.task_weights = {0.3, 0.3, 0.3};
  EXPECT_THROW(bad_sum.validate(), DistributionError);

  try {
    distribution_from_json(nlohmann::json::parse(R"({"modality_weights": {"vqa": {"I->T": 1.0}}})"));
    FAIL();
  } catch (const DistributionError& e) {
    EXPECT_NE(std::string(e.what()).find("vqa"), std::string::npos) << e.what();
  }
  try {
    distribution_from_json(nlohmann::json::parse(R"({"task_weights": {"ranking": 1.0}})"));
    FAIL();
  } catch (const DistributionError& e) {
    EXPECT_EQ(e.path(), "distribution.task_weights.ranking");
  }
  EXPECT_THROW(distribution_from_json(nlohmann::json::parse(
                   R"({"task_weights": {"classification": 1.5, "vqa": -0.5, "retrieval": 0}})")),
               DistributionError);
  EXPECT_THROW(distribution_from_json(nlohmann::json::parse(R"({"bogus": 1})")), DistributionError);
}

TEST(DistributionSpec, JsonRoundTrip) {
  const auto spec = default_distribution();
  const auto back = distribution_from_json(to_json(spec));
  EXPECT_EQ(back.task_weights, spec.task_weights);
  for (const auto& row : reference_row_counts()) {
    EXPECT_DOUBLE_EQ(back.modality_weight(row.task, row.modality), spec.modality_weight(row.task, row.modality));
  }
  EXPECT_EQ(back.language_weights, spec.language_weights);
}

TEST(ConfigSampler, DeterministicPerIndex) {
  const ConfigSampler sampler(default_distribution());
  for (std::uint64_t i = 0; i < 200; ++i) {
    EXPECT_EQ(sampler.sample(7, i), sampler.sample(7, i));
    EXPECT_EQ(sampler.sample(7, i), sample_config(7, i, default_distribution()));
  }
  int differ = 0;
  for (std::uint64_t i = 0; i < 50; ++i) differ += sampler.sample(7, i).seed != sampler.sample(8, i).seed;
  EXPECT_EQ(differ, 50);
}

TEST(ConfigSampler, DrawsAreAdmissibleAndKnobsFollowTask) {
  const ConfigSampler sampler(default_distribution());
  for (std::uint64_t i = 0; i < 2000; ++i) {
    const auto c = sampler.sample(1, i);
    EXPECT_TRUE(is_admissible(c.task, c.modality));
    EXPECT_GT(default_distribution().language_weight(c.language), 0.0);
    if (c.task == TaskKind::kRetrieval) {
      EXPECT_FALSE(c.knobs.query_length.empty());
      EXPECT_FALSE(c.knobs.doc_length.empty());
      EXPECT_FALSE(c.knobs.query_frequency.empty());
      EXPECT_TRUE(c.knobs.text_length.empty());
    } else {
      EXPECT_FALSE(c.knobs.text_length.empty());
      EXPECT_TRUE(c.knobs.query_length.empty());
    }
    EXPECT_FALSE(c.knobs.clarity.empty());
    EXPECT_FALSE(c.knobs.education.empty());
  }
}

TEST(ConfigSampler, ZeroWeightRowsNeverDrawn) {
  auto j = nlohmann::json::parse(
      R"({"task_weights": {"classification": 0, "vqa": 0, "retrieval": 1},
          "modality_weights": {"retrieval": {"T->I": 1.0, "I->T": 0.0}}})");
  for (const auto& lang : language_table()) j["language_weights"][lang.code] = lang.code == "en" ? 1.0 : 0.0;
  const auto spec = distribution_from_json(j);
  const ConfigSampler sampler(spec);
  for (std::uint64_t i = 0; i < 500; ++i) {
    const auto c = sampler.sample(3, i);
    EXPECT_EQ(c.task, TaskKind::kRetrieval);
    EXPECT_EQ(to_string(c.modality), "T->I");
    EXPECT_EQ(c.language, "en");
  }
}

TEST(Rng, BelowStaysInRangeAndCoversIt) {
  Rng rng(11);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto v = rng.below(7);
    ASSERT_LT(v, 7u);
    ++hits[v];
  }
  for (int h : hits) EXPECT_GT(h, 800);
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 1));
  EXPECT_NE(stream_seed(5, Stream::kConfig), stream_seed(5, Stream::kImages));
}
