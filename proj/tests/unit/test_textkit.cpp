#include <doctest.h>

#include <set>

#include "bootrl/textkit.hpp"

using namespace bootrl;
using namespace bootrl::textkit;

namespace {

TaskSample pear_sample() {
  TaskSample s;
  s.id = "pear";
  s.family = TaskFamily::Choice;
  s.question = "Would a pear sink in water?";
  s.options = {{'A', "Yes"}, {'B', "No"}};
  s.true_answer = AnswerValue::option('B', "No");
  return s;
}

TaskSample dimes_sample() {
  TaskSample s;
  s.id = "dimes";
  s.family = TaskFamily::Numeric;
  s.question =
      "Sam had 9 dimes in his bank. His father gave him 7 more. How many "
      "dimes does Sam possess now?";
  s.true_answer = AnswerValue::numeric(16);
  return s;
}

}  // namespace

TEST_SUITE_BEGIN("textkit");

TEST_CASE("tokenizer round-trips the printable alphabet") {
  const Vocab& v = vocab();
  std::string all;
  all.push_back('\n');
  for (int c = 0x20; c <= 0x7e; ++c) all.push_back(static_cast<char>(c));
  CHECK(v.decode(v.encode(all)) == all);

  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    std::string s;
    const auto len = rng.uniform_u64(60);
    for (uint64_t k = 0; k < len; ++k) {
      s.push_back(all[rng.uniform_u64(all.size())]);
    }
    CHECK(v.decode(v.encode(s)) == s);
  }
}

TEST_CASE("encode rejects characters outside the alphabet") {
  CHECK_THROWS_AS(vocab().encode("caf\xc3\xa9"), ConfigError);
}

TEST_CASE("decode drops control ids") {
  const std::vector<TokenId> ids = {Vocab::kBos, 4, Vocab::kPad, 5, Vocab::kEos};
  CHECK(vocab().decode(ids) == vocab().decode({4, 5}));
}

TEST_CASE("rationale prompt places the given answer before the rationale") {
  const auto s = pear_sample();
  const ExemplarSet ex = builtin_exemplars();
  const std::string text =
      rationale_prompt_text(s, AnswerValue::option('B', "No"), ex, 0);
  CHECK(text ==
        "[Instruction and Question]\n"
        "Pick the correct option.\n"
        "Would a pear sink in water?\n"
        "A. Yes\n"
        "B. No\n"
        "[Answer]\n"
        "No\n"
        "[Rationale]\n");
}

TEST_CASE("answer prompt layout ends at the answer header") {
  const auto s = dimes_sample();
  const ExemplarSet ex = builtin_exemplars();
  const std::string text =
      answer_prompt_text(s, "Sam has 9 + 7 = 16 dimes.", ex, 0);
  CHECK(text ==
        "[Instruction and Question]\n"
        "Solve the problem.\n"
        "Sam had 9 dimes in his bank. His father gave him 7 more. How many "
        "dimes does Sam possess now?\n"
        "[Rationale]\n"
        "Sam has 9 + 7 = 16 dimes.\n"
        "[Answer]\n");
}

TEST_CASE("empty rationale still renders a valid prompt") {
  const auto s = dimes_sample();
  const std::string text = answer_prompt_text(s, "", builtin_exemplars(), 0);
  CHECK(text.find("[Rationale]\n\n[Answer]\n") != std::string::npos);
}

TEST_CASE("exemplar blocks precede the query block") {
  const auto s = dimes_sample();
  const ExemplarSet ex = builtin_exemplars();
  const std::string with = rationale_prompt_text(s, s.true_answer, ex);
  const std::string without = rationale_prompt_text(s, s.true_answer, ex, 0);
  const std::string prefix = rationale_prefix_text(s.family, ex);
  CHECK(with == prefix + without);
  CHECK(with.size() > without.size());
}

TEST_CASE("rendering is deterministic and injective over questions") {
  const ExemplarSet ex = builtin_exemplars();
  corpus::CorpusSpec spec;
  spec.count = 120;
  spec.seed = 2;
  spec.numeric_fraction = 0.5;
  const auto samples = corpus::generate_corpus(spec);
  std::set<std::string> prompts;
  std::set<std::string> questions;
  for (const auto& s : samples) {
    const std::string a = rationale_prompt_text(s, s.true_answer, ex);
    CHECK(a == rationale_prompt_text(s, s.true_answer, ex));
    prompts.insert(a);
    questions.insert(question_block(s));
  }
  CHECK(prompts.size() == questions.size());
}

TEST_CASE("prompt overflow names the sample") {
  const auto s = dimes_sample();
  try {
    render_rationale_prompt(s, s.true_answer, builtin_exemplars(), 32);
    FAIL("expected overflow");
  } catch (const PromptOverflow& e) {
    CHECK(e.sample_id == "dimes");
    CHECK(std::string(e.what()).find("dimes") != std::string::npos);
  }
}

TEST_CASE("final answer extraction") {
  const auto numeric = dimes_sample();
  const auto choice = pear_sample();

  SUBCASE("numeric decimal after the last answer header") {
    const auto a = extract_final_answer("...[Answer]\n16", numeric);
    REQUIRE(a.has_value());
    CHECK(a->number == 16.0);
  }
  SUBCASE("choice by option text") {
    const auto a = extract_final_answer(
        "The density of a pear is less than water. Thus, a pear would "
        "float.\n[Answer]\nNo",
        choice);
    REQUIRE(a.has_value());
    CHECK(a->label == 'B');
  }
  SUBCASE("choice by label variants") {
    for (const char* text : {"B", "B.", "B. No"}) {
      const auto a =
          extract_final_answer(std::string("[Answer]\n") + text, choice);
      REQUIRE(a.has_value());
      CHECK(a->label == 'B');
    }
  }
  SUBCASE("unparseable numeric text gives none") {
    CHECK_FALSE(extract_final_answer("...[Answer]\nbanana", numeric));
  }
  SUBCASE("no marker gives none") {
    CHECK_FALSE(extract_final_answer("no marker here", numeric));
  }
  SUBCASE("the last marker wins") {
    const auto a = extract_final_answer(
        "[Answer]\n3\nmore text\n[Answer]\n16\n", numeric);
    REQUIRE(a.has_value());
    CHECK(a->number == 16.0);
  }
}

TEST_CASE("answers_equal tolerance") {
  const auto n = [](double v) { return AnswerValue::numeric(v); };
  CHECK(answers_equal(n(16.0), n(16.0000004)));
  CHECK_FALSE(answers_equal(n(0.5), n(0.5000011)));
  CHECK(answers_equal(AnswerValue::option('C', "Paris"),
                      AnswerValue::option('C', "Paris")));
  CHECK_FALSE(answers_equal(AnswerValue::option('C', "Paris"),
                            AnswerValue::option('D', "Rome")));
  CHECK_FALSE(answers_equal(n(16.0), AnswerValue::option('A', "16")));
}

TEST_CASE("answers_equal is reflexive and symmetric but not transitive") {
  const auto n = [](double v) { return AnswerValue::numeric(v); };
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double a = rng.uniform_real() * 10.0;
    const double b = a + (rng.uniform_real() - 0.5) * 4e-6;
    CHECK(answers_equal(n(a), n(a)));
    CHECK(answers_equal(n(a), n(b)) == answers_equal(n(b), n(a)));
  }
  // The documented chain: 0 ~ 9e-7 and 9e-7 ~ 1.8e-6, but 0 !~ 1.8e-6.
  CHECK(answers_equal(n(0.0), n(9e-7)));
  CHECK(answers_equal(n(9e-7), n(1.8e-6)));
  CHECK_FALSE(answers_equal(n(0.0), n(1.8e-6)));
}

TEST_CASE("numeral containment normalizes decimal forms") {
  CHECK(contains_numeral("Sam has 9 + 7 = 16 dimes.", 16));
  CHECK(contains_numeral("the result is 16.0 exactly", 16));
  CHECK(contains_numeral("16.00 apples", 16));
  CHECK(contains_numeral("answer: 016", 16));
  CHECK_FALSE(contains_numeral("Sam has 9 + 7 = 163 dimes.", 16));
  CHECK_FALSE(contains_numeral("digits 1 and 6 alone, also 161 and 6.1", 16));
  CHECK(contains_numeral("half is 0.5", 0.5));
  CHECK_FALSE(contains_numeral("no numbers here", 16));
}

TEST_CASE("exemplar files round-trip") {
  const auto path =
      std::filesystem::temp_directory_path() / "bootrl_exemplars_test.jsonl";
  const ExemplarSet ex = builtin_exemplars();
  write_exemplars(path, ex);
  const ExemplarSet back = read_exemplars(path);
  CHECK(back.numeric_instruction == ex.numeric_instruction);
  CHECK(back.choice_instruction == ex.choice_instruction);
  REQUIRE(back.numeric.size() == ex.numeric.size());
  REQUIRE(back.choice.size() == ex.choice.size());
  for (std::size_t i = 0; i < ex.numeric.size(); ++i) {
    CHECK(back.numeric[i].question == ex.numeric[i].question);
    CHECK(back.numeric[i].answer == ex.numeric[i].answer);
    CHECK(back.numeric[i].rationale == ex.numeric[i].rationale);
  }
  std::filesystem::remove(path);
}

TEST_SUITE_END();
