#include <doctest.h>

#include <random>

#include "cotforge/error.hpp"
#include "cotforge/format.hpp"
#include "cotforge/metrics.hpp"
#include "test_util.hpp"

using namespace cotforge;

namespace {

Sample mc_sample() {
  Sample sample = testutil::make_sample(1, TaskKind::multiple_choice);
  // Options A=red, B=green, C=blue; gold is the text of B.
  sample.gold_answer = "green";
  return sample;
}

std::string structured(const std::string& reasoning, std::optional<std::string> option,
                       const std::string& answer, const FormatSpec& spec) {
  return render(StructuredRecord::create(reasoning, std::move(option), answer, spec.kind), spec);
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("numeric canonicalization fixture table") {
  const std::vector<std::pair<std::string, std::string>> cases = {
      {"42", "42"},
      {"  42  ", "42"},
      {"+42", "42"},
      {"-7", "-7"},
      {"-0", "0"},
      {"0.5", "1/2"},
      {"0.50", "1/2"},
      {".5", "1/2"},
      {"2/4", "1/2"},
      {"3 / 6", "1/2"},
      {"-0.25", "-1/4"},
      {"3.14", "157/50"},
      {"72.", "72"},
      {"50%", "50"},
      {"$1,000", "1000"},
      {"1,234", "1234"},
      {"1,234,567", "1234567"},
      {"1,234.5", "2469/2"},
      {"\\boxed{72}", "72"},
      {"\\boxed{\\frac{1}{2}}", "1/2"},
      {"$\\frac{10}{4}$", "5/2"},
      {"\\dfrac{2}{8}", "1/4"},
      {"\\frac{3}{6}", "1/2"},
      {"\\text{7}", "7"},
      // A comma that is not a three-digit group separator is preserved, so the
      // value falls back to normalized text instead of being misread.
      {"2,5", "2,5"},
      {"1,2345", "1,2345"},
      {"1e3", "1e3"},
      {"The answer is 42", "the answer is 42"},
      {"", ""},
  };
  for (const auto& [raw, expected] : cases) {
    CAPTURE(raw);
    CHECK(canonicalize_answer(raw, TaskKind::numeric_qa) == expected);
  }
}

TEST_CASE("boolean canonicalization fixture table") {
  const std::vector<std::pair<std::string, std::string>> cases = {
      {"yes", "true"},   {"Yes.", "true"},  {"Y", "true"},       {"TRUE", "true"},
      {"no", "false"},   {"No!", "false"},  {"n", "false"},      {"False", "false"},
      {"\\boxed{yes}", "true"},             {"nope", "nope"},    {"maybe so", "maybe so"},
  };
  for (const auto& [raw, expected] : cases) {
    CAPTURE(raw);
    CHECK(canonicalize_answer(raw, TaskKind::boolean_qa) == expected);
  }
}

TEST_CASE("choice canonicalization fixture table") {
  const std::vector<std::pair<std::string, std::string>> cases = {
      {"B", "B"},        {"b", "B"},         {"(b)", "B"},      {"[C]", "C"},
      {"b.", "B"},       {"'C'", "C"},       {"**A**", "A"},    {"Option D", "D"},
      {"option b", "B"}, {"\\boxed{E}", "E"}, {"green", "green"}, {"AB", "AB"},
  };
  for (const auto& [raw, expected] : cases) {
    CAPTURE(raw);
    CHECK(canonicalize_answer(raw, TaskKind::multiple_choice) == expected);
  }
}

TEST_CASE("equivalent numeric surface forms match the gold answer") {
  Sample sample = testutil::make_sample(2, TaskKind::numeric_qa);
  sample.gold_answer = "1/2";
  for (const std::string raw : {"0.5", "2/4", "\\frac{1}{2}", "$0.50$", ".5"}) {
    CAPTURE(raw);
    CHECK(answers_match(raw, sample));
  }
  CHECK_FALSE(answers_match("0.51", sample));
  CHECK_FALSE(answers_match("", sample));
}

TEST_CASE("multiple-choice answers match by label or by option text") {
  const Sample sample = mc_sample();
  CHECK(answers_match("B", sample));
  CHECK(answers_match("(b)", sample));
  CHECK(answers_match("green", sample));
  CHECK_FALSE(answers_match("red", sample));
  CHECK_FALSE(answers_match("A", sample));
  CHECK_FALSE(answers_match("purple", sample));
}

TEST_CASE("judge scores structured outputs against the contract") {
  const auto spec = default_spec(TaskKind::numeric_qa, FormatKind::xml);
  Sample sample = testutil::make_sample(2, TaskKind::numeric_qa);  // gold "4"

  SUBCASE("valid and correct, including canonical equivalence") {
    const auto outcome = judge(structured("2+2", std::nullopt, "4.0", spec), sample, spec);
    CHECK(outcome.format_valid);
    CHECK(outcome.extracted_answer == std::optional<std::string>("4"));
    CHECK(outcome.content_correct);
  }
  SUBCASE("valid but wrong") {
    const auto outcome = judge(structured("2+3", std::nullopt, "5", spec), sample, spec);
    CHECK(outcome.format_valid);
    CHECK_FALSE(outcome.content_correct);
  }
  SUBCASE("invalid text scores all false") {
    const auto outcome = judge("no structure at all", sample, spec);
    CHECK_FALSE(outcome.format_valid);
    CHECK_FALSE(outcome.extracted_answer.has_value());
    CHECK_FALSE(outcome.content_correct);
  }
}

TEST_CASE("multiple-choice judging works on the label and flags text conflicts") {
  const auto spec = default_spec(TaskKind::multiple_choice, FormatKind::xml);
  const Sample sample = mc_sample();

  const auto agreeing =
      judge(structured("r", std::optional<std::string>("B"), "green", spec), sample, spec);
  CHECK(agreeing.content_correct);
  CHECK_FALSE(agreeing.label_text_conflict);

  const auto conflicting =
      judge(structured("r", std::optional<std::string>("b"), "blue", spec), sample, spec);
  CHECK(conflicting.content_correct);  // label B is still the gold label
  CHECK(conflicting.label_text_conflict);
  CHECK(conflicting.extracted_answer == std::optional<std::string>("B"));

  const auto wrong =
      judge(structured("r", std::optional<std::string>("A"), "red", spec), sample, spec);
  CHECK_FALSE(wrong.content_correct);
  CHECK_FALSE(wrong.label_text_conflict);
}

TEST_CASE("evaluate aggregates format and content accuracy") {
  const auto spec = default_spec(TaskKind::numeric_qa, FormatKind::json);
  std::vector<std::pair<Sample, std::string>> outputs;
  for (int i = 0; i < 4; ++i) {
    outputs.emplace_back(testutil::make_sample(i, TaskKind::numeric_qa), "");
  }
  outputs[0].second = structured("r", std::nullopt, "0", spec);   // correct
  outputs[1].second = structured("r", std::nullopt, "2", spec);   // correct
  outputs[2].second = structured("r", std::nullopt, "99", spec);  // wrong
  outputs[3].second = "not structured";                           // invalid

  const auto report = evaluate(outputs, spec);
  CHECK(report.n == 4);
  CHECK(report.format_accuracy == doctest::Approx(0.75));
  CHECK(report.content_accuracy == doctest::Approx(0.5));
  REQUIRE(report.per_sample.size() == 4);
  CHECK(report.content_accuracy <= report.format_accuracy);

  SUBCASE("duplicate sample ids are rejected") {
    outputs.push_back(outputs[0]);
    CHECK_THROWS_AS(evaluate(outputs, spec), DuplicateIdError);
  }
  SUBCASE("empty input is a data error") {
    CHECK_THROWS_AS(evaluate({}, spec), Error);
  }
}

TEST_CASE("prediction-file evaluation keeps missing and failed rows in the denominator") {
  const auto spec = default_spec(TaskKind::numeric_qa, FormatKind::json);
  std::vector<Sample> samples;
  for (int i = 0; i < 4; ++i) samples.push_back(testutil::make_sample(i, TaskKind::numeric_qa));

  std::vector<Prediction> predictions = {
      {"s0", "freeform", structured("r", std::nullopt, "0", spec), false, ""},
      {"s1", "freeform", structured("r", std::nullopt, "99", spec), false, ""},
      {"s2", "", "", true, "backend down"},
      // s3 has no prediction at all.
  };
  const auto report = evaluate(samples, predictions, spec);
  CHECK(report.n == 4);
  CHECK(report.format_accuracy == doctest::Approx(0.5));
  CHECK(report.content_accuracy == doctest::Approx(0.25));

  SUBCASE("a prediction for an unknown sample is a data error") {
    predictions.push_back({"ghost", "x", "y", false, ""});
    CHECK_THROWS_AS(evaluate(samples, predictions, spec), Error);
  }
  SUBCASE("duplicate prediction ids are rejected") {
    predictions.push_back(predictions[0]);
    CHECK_THROWS_AS(evaluate(samples, predictions, spec), DuplicateIdError);
  }
}

TEST_CASE("consistency report covers the four transition cells") {
  const auto report = consistency_report({true, true, false, false}, {true, false, true, false});
  CHECK(report.n == 4);
  CHECK(report.n_kept_correct == 1);
  CHECK(report.n_lost == 1);
  CHECK(report.n_gained == 1);
  CHECK(report.n_kept_wrong == 1);
  CHECK(report.kept_correct_rate == doctest::Approx(0.25));
  CHECK(report.gained_rate == doctest::Approx(0.25));
  CHECK(report.lost_rate == doctest::Approx(0.25));
  CHECK(report.kept_wrong_rate == doctest::Approx(0.25));

  CHECK_THROWS_AS(consistency_report({true}, {true, false}), Error);
  CHECK_THROWS_AS(consistency_report({}, {}), Error);
}

TEST_CASE("consistency cells partition the pairs for random inputs") {
  std::mt19937 rng(5150);
  std::bernoulli_distribution coin(0.6);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<std::size_t> size_dist(1, 200);
    const std::size_t n = size_dist(rng);
    std::vector<bool> before(n);
    std::vector<bool> after(n);
    std::size_t before_correct = 0;
    std::size_t after_correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
      before[i] = coin(rng);
      after[i] = coin(rng);
      before_correct += before[i] ? 1 : 0;
      after_correct += after[i] ? 1 : 0;
    }
    const auto report = consistency_report(before, after);
    CHECK(report.n_kept_correct + report.n_gained + report.n_lost + report.n_kept_wrong == n);
    CHECK(report.n_kept_correct + report.n_lost == before_correct);
    CHECK(report.n_kept_correct + report.n_gained == after_correct);
    const double rate_sum = report.kept_correct_rate + report.gained_rate + report.lost_rate +
                            report.kept_wrong_rate;
    CHECK(std::abs(rate_sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("default extraction prefers explicit answer markers") {
  const FreeformExtractor extractor;

  CHECK(extractor.extract("work work\n#### 42", TaskKind::numeric_qa) ==
        std::optional<std::string>("42"));
  CHECK(extractor.extract("#### 41\nrevised\n#### 42", TaskKind::numeric_qa) ==
        std::optional<std::string>("42"));
  CHECK(extractor.extract("so $\\boxed{72}$ wins", TaskKind::numeric_qa) ==
        std::optional<std::string>("72"));
  CHECK(extractor.extract("The final answer is 12", TaskKind::numeric_qa) ==
        std::optional<std::string>("12"));
  CHECK(extractor.extract("Answer: 9", TaskKind::numeric_qa) == std::optional<std::string>("9"));
  // Markers win over the trailing-number fallback.
  CHECK(extractor.extract("#### 7\nfootnote mentions 9", TaskKind::numeric_qa) ==
        std::optional<std::string>("7"));
}

TEST_CASE("default extraction falls back to a task-shaped scan") {
  const FreeformExtractor extractor;

  CHECK(extractor.extract("first 12 then 15", TaskKind::numeric_qa) ==
        std::optional<std::string>("15"));
  CHECK(extractor.extract("it costs 1,234.50 total", TaskKind::numeric_qa) ==
        std::optional<std::string>("1,234.50"));
  CHECK(extractor.extract("hmm, yes I believe", TaskKind::boolean_qa) ==
        std::optional<std::string>("yes"));
  CHECK(extractor.extract("maybe no, then yes", TaskKind::boolean_qa) ==
        std::optional<std::string>("yes"));
  CHECK(extractor.extract("between (A) and (B), pick (B)", TaskKind::multiple_choice) ==
        std::optional<std::string>("B"));
  CHECK_FALSE(extractor.extract("nothing of note", TaskKind::numeric_qa).has_value());
  CHECK_FALSE(extractor.extract("nothing of note", TaskKind::boolean_qa).has_value());
  CHECK_FALSE(extractor.extract("nothing of note", TaskKind::multiple_choice).has_value());
}

TEST_CASE("extraction composes with matching") {
  const FreeformExtractor extractor;
  Sample sample = testutil::make_sample(21, TaskKind::numeric_qa);  // gold "42"
  CHECK(extractor.correct("#### 42", sample));
  CHECK(extractor.correct("adding up gives 42", sample));
  CHECK_FALSE(extractor.correct("#### 41", sample));
  CHECK_FALSE(extractor.correct("no numbers", sample));
}

TEST_CASE("custom extraction patterns are tried in order, last occurrence wins") {
  const FreeformExtractor extractor({R"(ANSWER=(\d+))", R"(RESULT=(\d+))"});
  CHECK(extractor.extract("ANSWER=5 noise ANSWER=9", TaskKind::numeric_qa) ==
        std::optional<std::string>("9"));
  CHECK(extractor.extract("RESULT=3", TaskKind::numeric_qa) == std::optional<std::string>("3"));
  // The first pattern that matches anywhere wins over later patterns.
  CHECK(extractor.extract("RESULT=3 ANSWER=4", TaskKind::numeric_qa) ==
        std::optional<std::string>("4"));
  CHECK_FALSE(extractor.extract("#### 42", TaskKind::numeric_qa).has_value());

  CHECK_THROWS_AS(FreeformExtractor({R"(broken[)"}), Error);
  CHECK_THROWS_AS(FreeformExtractor(std::vector<std::string>{}), Error);
}

TEST_CASE("report serializations carry the headline numbers") {
  const auto spec = default_spec(TaskKind::numeric_qa, FormatKind::json);
  const Sample sample = testutil::make_sample(0, TaskKind::numeric_qa);
  const auto report = evaluate({{sample, structured("r", std::nullopt, "0", spec)}}, spec);
  const auto doc = report.to_json();
  CHECK(doc["n"] == 1);
  CHECK(doc["format_accuracy"] == 1.0);
  CHECK(doc["per_sample"].size() == 1);
  CHECK(doc["per_sample"][0]["sample_id"] == "s0");
  CHECK(report.to_table().find("content_accuracy") != std::string::npos);

  const auto transitions = consistency_report({true}, {true});
  CHECK(transitions.to_json()["kept_correct_rate"] == 1.0);
  CHECK(transitions.to_table().find("kept_correct") != std::string::npos);
}

}  // TEST_SUITE
