#include <gtest/gtest.h>

#include "mmsynth/error.hpp"
#include "mmsynth/mllm_client.hpp"
#include "mmsynth/response_validator.hpp"

using namespace mmsynth;

namespace {

SynthesisConfig make_config(TaskKind task, const char* modality, std::uint64_t seed = 5) {
  SynthesisConfig c;
  c.task = task;
  c.modality = parse_modality(modality);
  c.language = "en";
  c.seed = seed;
  c.sample_index = 12;
  if (task == TaskKind::kRetrieval) {
    c.knobs.query_length = "5 to 15 words";
    c.knobs.doc_length = "10";
  } else {
    c.knobs.text_length = "at least 10";
  }
  return c;
}

RawGeneration mock_gen(const SynthesisConfig& c) {
  PromptBundle b;
  b.text = "p";
  return parse_generation(mock_generate(b, c).raw_text, c.task);
}

ImageTriple triple_for(Modality m) {
  ImageTriple t{"a", std::nullopt, std::nullopt};
  if (m.doc_has_image()) {
    t.positive = "p";
    t.negative = "n";
  }
  return t;
}

}  // namespace

TEST(ParseGeneration, FindsObjectInsideProseAndFences) {
  const std::string raw =
      "Sure! Here you go {not json}\n```json\n{\"description\": \"a {brace} \\\"q\\\"\", \"question\": \"q\", "
      "\"positive_answer\": \"p\", \"hard_negative_answer\": \"n\", \"evaluation\": \"e\", "
      "\"possible_improvements\": \"i\", \"revised_question\": \"rq\", \"revised_positive_answer\": \"rp\", "
      "\"revised_hard_negative_answer\": \"rn\", \"extra\": 3}\n```\nThanks";
  const auto gen = parse_generation(raw, TaskKind::kVqa);
  EXPECT_EQ(gen.at("description"), "a {brace} \"q\"");
  EXPECT_EQ(gen.at("revised_question"), "rq");
  EXPECT_FALSE(gen.fields.contains("extra"));
}

TEST(ParseGeneration, ErrorsAreTyped) {
  EXPECT_THROW(parse_generation("no object here", TaskKind::kVqa), ParseError);
  EXPECT_THROW(parse_generation("{\"description\": \"trunc", TaskKind::kVqa), ParseError);
  try {
    parse_generation("{\"description\": \"d\"}", TaskKind::kVqa);
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.key(), "question");
  }
  auto j = nlohmann::json::parse(mock_generate({}, make_config(TaskKind::kVqa, "IT->T")).raw_text);
  j["revised_question"] = 42;
  try {
    parse_generation(j.dump(), TaskKind::kVqa);
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.key(), "revised_question");
  }
}

TEST(ParseGeneration, FuzzedInputOnlyThrowsTypedErrors) {
  Rng rng(77);
  const std::string alphabet = "{}[]\":,\\ abcqx01\n";
  const std::string valid = mock_generate({}, make_config(TaskKind::kRetrieval, "IT->IT")).raw_text;
  for (int i = 0; i < 5000; ++i) {
    std::string s;
    if (i % 2 == 0) {
      const auto n = rng.below(80);
      for (std::uint64_t k = 0; k < n; ++k) s += alphabet[rng.below(alphabet.size())];
    } else {
      s = valid;
      const auto edits = 1 + rng.below(4);
      for (std::uint64_t k = 0; k < edits; ++k) s[rng.below(s.size())] = alphabet[rng.below(alphabet.size())];
    }
    try {
      const auto gen = parse_generation(s, TaskKind::kRetrieval);
      validate(gen, make_config(TaskKind::kRetrieval, "IT->IT"));
    } catch (const ParseError&) {
    } catch (const SchemaError&) {
    }
  }
}

TEST(Validate, R1ModalityEmptiness) {
  const auto c = make_config(TaskKind::kClassification, "I->T");
  auto gen = mock_gen(c);
  EXPECT_TRUE(validate(gen, c).accepted());
  gen.fields["input_text"] = "some text";
  const auto r = validate(gen, c);
  EXPECT_TRUE(r.has(rule::kModalityEmptiness));
  EXPECT_EQ(r.verdict(), Verdict::kReject);

  const auto rc = make_config(TaskKind::kRetrieval, "I->I");
  auto rgen = mock_gen(rc);
  EXPECT_TRUE(validate(rgen, rc).accepted());
  rgen.fields["revised_positive_document"] = "text";
  EXPECT_TRUE(validate(rgen, rc).has(rule::kModalityEmptiness));
}

TEST(Validate, R2Distinctness) {
  const auto c = make_config(TaskKind::kClassification, "IT->T");
  auto gen = mock_gen(c);
  gen.fields["revised_misleading_label"] = "  " + gen.at("revised_label") + "\n";
  EXPECT_TRUE(validate(gen, c).has(rule::kDistinctness));

  const auto v = make_config(TaskKind::kVqa, "IT->T");
  auto vg = mock_gen(v);
  vg.fields["revised_hard_negative_answer"] = vg.at("revised_positive_answer");
  EXPECT_TRUE(validate(vg, v).has(rule::kDistinctness));
}

TEST(Validate, R3NonEmpty) {
  const auto c = make_config(TaskKind::kRetrieval, "T->IT");
  auto gen = mock_gen(c);
  gen.fields["revised_query"] = "   ";
  EXPECT_TRUE(validate(gen, c).has(rule::kNonEmpty));
  gen = mock_gen(c);
  gen.fields["evaluation"] = "";
  EXPECT_TRUE(validate(gen, c).has(rule::kNonEmpty));
}

TEST(Validate, R4BannedWordsInDocuments) {
  EXPECT_TRUE(contains_banned_word("See the Documents below"));
  EXPECT_TRUE(contains_banned_word("query"));
  EXPECT_TRUE(contains_banned_word("a (queries)."));
  EXPECT_FALSE(contains_banned_word("documentation and queryable fields"));
  const auto c = make_config(TaskKind::kRetrieval, "IT->T");
  auto gen = mock_gen(c);
  gen.fields["revised_hard_negative_document"] = "This document shows a bridge.";
  EXPECT_TRUE(validate(gen, c).has(rule::kBannedWords));
  gen = mock_gen(c);
  gen.fields["revised_query"] = "which document shows a bridge";
  EXPECT_FALSE(validate(gen, c).has(rule::kBannedWords));
}

TEST(Validate, R5EnglishInstruction) {
  EXPECT_DOUBLE_EQ(*basic_latin_letter_ratio("Find it, 2024!"), 1.0);
  EXPECT_FALSE(basic_latin_letter_ratio("123 ... !?").has_value());
  EXPECT_LT(*basic_latin_letter_ratio("找到与图片最相关的文章"), 0.1);
  EXPECT_GE(*basic_latin_letter_ratio("Find the café “menu” now"), 0.9);

  const auto c = make_config(TaskKind::kRetrieval, "I->T");
  auto gen = mock_gen(c);
  gen.fields["revised_task_instruction"] = "找到与图片最相关的文章";
  EXPECT_TRUE(validate(gen, c).has(rule::kInstructionLanguage));

  const auto v = make_config(TaskKind::kVqa, "IT->T");
  auto vg = mock_gen(v);
  vg.fields["revised_question"] = "这张图片里有什么？";
  EXPECT_TRUE(validate(vg, v).accepted());
}

TEST(Validate, SchemaDriftIsReported) {
  const auto c = make_config(TaskKind::kRetrieval, "I->T");
  const auto vqa = mock_gen(make_config(TaskKind::kVqa, "IT->T"));
  EXPECT_TRUE(validate(vqa, c).has(rule::kSchema));
}

TEST(Finalize, UsesRevisedFieldsAndFixedVqaInstruction) {
  const auto c = make_config(TaskKind::kRetrieval, "IT->IT");
  const auto gen = mock_gen(c);
  const auto s = finalize(gen, c, triple_for(c.modality), {"m", "digest", 0, 0});
  EXPECT_EQ(s.id, "s0000000012");
  EXPECT_EQ(s.instruction, gen.at("revised_task_instruction"));
  EXPECT_EQ(s.query_text, gen.at("revised_query"));
  EXPECT_EQ(s.pos_text, gen.at("revised_positive_document"));
  EXPECT_EQ(s.neg_text, gen.at("revised_hard_negative_document"));
  EXPECT_EQ(s.query_image, "a");
  EXPECT_EQ(s.pos_image, "p");
  EXPECT_EQ(s.neg_image, "n");
  EXPECT_EQ(s.provenance.seed, c.seed);
  EXPECT_EQ(s.provenance.sample_index, 12u);
  EXPECT_TRUE(validate_sample(s).accepted());

  const auto v = make_config(TaskKind::kVqa, "IT->T");
  const auto vs = finalize(mock_gen(v), v, triple_for(v.modality));
  EXPECT_EQ(vs.instruction, kVqaInstruction);
  EXPECT_EQ(vs.instruction, "Represent the given image with the following question:");

  auto bad = gen;
  bad.fields["revised_query"] = "";
  EXPECT_THROW(finalize(bad, c, triple_for(c.modality)), ContractError);
  EXPECT_THROW(finalize(gen, c, ImageTriple{"a", std::nullopt, std::nullopt}), ContractError);
}

TEST(ValidateSample, EveryRowRoundTripsAndInvariantsBite) {
  for (const auto& row : admissible_rows()) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      SynthesisConfig c = make_config(row.task, "I->T", seed);
      c.modality = row.modality;
      const auto s = finalize(mock_gen(c), c, triple_for(c.modality));
      EXPECT_TRUE(validate_sample(s).accepted());
      EXPECT_EQ(s.query_text.empty(), !row.modality.query_has_text());
      EXPECT_EQ(s.pos_text.empty(), !row.modality.doc_has_text());
    }
  }
  const auto c = make_config(TaskKind::kRetrieval, "T->I");
  auto s = finalize(mock_gen(c), c, triple_for(c.modality));
  s.query_image = "a";
  EXPECT_TRUE(validate_sample(s).has(rule::kInvariant));
  s = finalize(mock_gen(c), c, triple_for(c.modality));
  s.neg_image = s.pos_image;
  EXPECT_FALSE(validate_sample(s).accepted());
  s = finalize(mock_gen(c), c, triple_for(c.modality));
  s.modality = parse_modality("I->T");
  s.task = TaskKind::kVqa;
  EXPECT_TRUE(validate_sample(s).has(rule::kInvariant));
}

TEST(LengthCompliance, CountsWithoutRejecting) {
  const auto c = make_config(TaskKind::kRetrieval, "T->IT");
  auto gen = mock_gen(c);
  gen.fields["revised_query"] = "one two three four five six";
  gen.fields["revised_positive_document"] = "short";
  gen.fields["revised_hard_negative_document"] = "w w w w w w w w w w w";
  const auto lc = length_compliance(gen, c);
  EXPECT_EQ(lc.checked, 3);
  EXPECT_EQ(lc.met, 2);
  EXPECT_TRUE(validate(gen, c).accepted());
  EXPECT_EQ(word_count("  a  b\tc\n"), 3u);
}
