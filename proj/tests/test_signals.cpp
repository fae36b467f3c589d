#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "cotforge/error.hpp"
#include "cotforge/signals.hpp"

using namespace cotforge;

namespace {

// Independent reference: mean and population standard deviation computed in
// long double with a two-pass formula, unlike the production single pass.
std::pair<double, double> reference_moments(const std::vector<double>& values) {
  long double mean = 0.0L;
  for (double v : values) mean += v;
  mean /= static_cast<long double>(values.size());
  long double variance = 0.0L;
  for (double v : values) variance += (v - mean) * (v - mean);
  variance /= static_cast<long double>(values.size());
  return {static_cast<double>(mean), static_cast<double>(std::sqrt(variance))};
}

// Brute-force objective value, term by term, mirroring the definition rather
// than the implementation.
double reference_loss(const GroupBatch& batch) {
  const auto advantages = group_advantages(batch.rewards);
  double sum = 0.0;
  for (std::size_t i = 0; i < advantages.size(); ++i) {
    const double ratio = batch.ratios[i];
    const double clipped = std::min(std::max(ratio, 1.0 - batch.epsilon), 1.0 + batch.epsilon);
    sum += std::min(ratio * advantages[i], clipped * advantages[i]) -
           batch.beta * batch.kl_terms[i];
  }
  return sum / static_cast<double>(advantages.size());
}

}  // namespace

TEST_SUITE("training-signals") {

TEST_CASE("reward grants one point per independent check") {
  CHECK(reward(true, true) == 2);
  CHECK(reward(true, false) == 1);
  CHECK(reward(false, true) == 1);
  CHECK(reward(false, false) == 0);
}

TEST_CASE("advantages for the canonical half-right group") {
  const auto advantages = group_advantages({2.0, 2.0, 0.0, 0.0});
  REQUIRE(advantages.size() == 4);
  CHECK(advantages[0] == 1.0);
  CHECK(advantages[1] == 1.0);
  CHECK(advantages[2] == -1.0);
  CHECK(advantages[3] == -1.0);
}

TEST_CASE("a zero-variance group gets all-zero advantages") {
  for (double level : {0.0, 1.0, 2.0}) {
    const auto advantages = group_advantages({level, level, level});
    CHECK(std::all_of(advantages.begin(), advantages.end(),
                      [](double a) { return a == 0.0; }));
  }
}

TEST_CASE("advantages agree with an independent oracle on random groups") {
  std::mt19937 rng(424242);
  std::uniform_int_distribution<int> size_dist(2, 64);
  std::uniform_int_distribution<int> reward_dist(0, 2);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> rewards(static_cast<std::size_t>(size_dist(rng)));
    for (auto& r : rewards) r = static_cast<double>(reward_dist(rng));
    const auto [mean, stdev] = reference_moments(rewards);
    const auto advantages = group_advantages(rewards);
    REQUIRE(advantages.size() == rewards.size());
    for (std::size_t i = 0; i < rewards.size(); ++i) {
      const double expected = stdev == 0.0 ? 0.0 : (rewards[i] - mean) / stdev;
      CHECK(std::abs(advantages[i] - expected) <= 1e-9);
    }
  }
}

TEST_CASE("advantage error paths") {
  CHECK_THROWS_AS(group_advantages({}), Error);
  CHECK_THROWS_AS(group_advantages({1.0}), Error);
  CHECK_THROWS_AS(group_advantages({1.0, std::numeric_limits<double>::quiet_NaN()}), Error);
}

TEST_CASE("objective value for a hand-computed two-trajectory group") {
  // rewards [2, 0] -> advantages [1, -1]; ratio 2.0 clips to 1.2 on the
  // positive advantage; ratio 1.0 is unclipped; beta 0 isolates the policy
  // term: ((min(2, 1.2) * 1) + (min(1, 1) * -1)) / 2 = 0.1.
  GroupBatch batch;
  batch.rewards = {2.0, 0.0};
  batch.ratios = {2.0, 1.0};
  batch.kl_terms = {0.0, 0.0};
  batch.epsilon = 0.2;
  batch.beta = 0.0;
  CHECK(grpo_loss(batch) == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("zero-variance rewards reduce the objective to the KL penalty") {
  GroupBatch batch;
  batch.rewards = {1.0, 1.0, 1.0};
  batch.ratios = {0.5, 1.5, 3.0};
  batch.kl_terms = {0.1, 0.2, 0.3};
  batch.beta = 0.04;
  CHECK(grpo_loss(batch) == doctest::Approx(-0.04 * 0.2).epsilon(1e-12));
}

TEST_CASE("unit ratios with zero beta score exactly zero on centered advantages") {
  GroupBatch batch;
  batch.rewards = {2.0, 0.0};
  batch.ratios = {1.0, 1.0};
  batch.kl_terms = {5.0, 5.0};
  batch.beta = 0.0;
  CHECK(grpo_loss(batch) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("objective value matches a brute-force oracle, clipped and unclipped") {
  std::mt19937 rng(777);
  std::uniform_int_distribution<int> size_dist(2, 16);
  std::uniform_int_distribution<int> reward_dist(0, 2);
  std::uniform_real_distribution<double> ratio_dist(0.05, 3.0);
  std::uniform_real_distribution<double> kl_dist(0.0, 2.0);
  int clipped_cases = 0;
  for (int trial = 0; trial < 200; ++trial) {
    GroupBatch batch;
    const std::size_t n = static_cast<std::size_t>(size_dist(rng));
    for (std::size_t i = 0; i < n; ++i) {
      batch.rewards.push_back(static_cast<double>(reward_dist(rng)));
      batch.ratios.push_back(ratio_dist(rng));
      batch.kl_terms.push_back(kl_dist(rng));
    }
    batch.epsilon = 0.2;
    batch.beta = trial % 2 == 0 ? 0.04 : 0.0;
    const bool any_clip = std::any_of(batch.ratios.begin(), batch.ratios.end(), [&](double r) {
      return r < 1.0 - batch.epsilon || r > 1.0 + batch.epsilon;
    });
    clipped_cases += any_clip ? 1 : 0;
    const double expected = reference_loss(batch);
    const double actual = grpo_loss(batch);
    const double scale = std::max(1.0, std::abs(expected));
    CHECK(std::abs(actual - expected) <= 1e-9 * scale);
  }
  CHECK(clipped_cases >= 60);
}

TEST_CASE("group batch validation rejects malformed inputs") {
  GroupBatch batch;
  batch.rewards = {2.0, 0.0};
  batch.ratios = {1.0, 1.0};
  batch.kl_terms = {0.0, 0.0};
  CHECK_NOTHROW(batch.validate());

  SUBCASE("ragged lists") {
    batch.ratios.push_back(1.0);
    CHECK_THROWS_AS(grpo_loss(batch), Error);
  }
  SUBCASE("too small") {
    batch.rewards = {2.0};
    batch.ratios = {1.0};
    batch.kl_terms = {0.0};
    CHECK_THROWS_AS(grpo_loss(batch), Error);
  }
  SUBCASE("non-positive ratio") {
    batch.ratios[0] = 0.0;
    CHECK_THROWS_AS(grpo_loss(batch), Error);
  }
  SUBCASE("negative KL") {
    batch.kl_terms[0] = -0.1;
    CHECK_THROWS_AS(grpo_loss(batch), Error);
  }
  SUBCASE("epsilon out of range") {
    batch.epsilon = 0.0;
    CHECK_THROWS_AS(grpo_loss(batch), Error);
    batch.epsilon = 1.0;
    CHECK_THROWS_AS(grpo_loss(batch), Error);
  }
  SUBCASE("NaN reward") {
    batch.rewards[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(grpo_loss(batch), Error);
  }
}

TEST_CASE("the k3 estimator is non-negative and zero at agreement") {
  CHECK(kl_k3(-1.5, -1.5) == 0.0);
  std::mt19937 rng(31);
  std::uniform_real_distribution<double> logp(-8.0, 0.0);
  for (int i = 0; i < 1000; ++i) {
    const double theta = logp(rng);
    const double ref = logp(rng);
    const double k3 = kl_k3(theta, ref);
    CHECK(k3 >= 0.0);
    const double d = ref - theta;
    CHECK(k3 == doctest::Approx(std::exp(d) - d - 1.0).epsilon(1e-12));
  }
}

TEST_CASE("segment sums for a small hand-labeled stream") {
  SegmentedTokens tokens;
  tokens.token_nll = {1.0, 2.0, 3.0, 4.0};
  tokens.labels = {SegmentLabel::format, SegmentLabel::rationale, SegmentLabel::rationale,
                   SegmentLabel::answer};
  const auto report = segment_loss_report(tokens);
  CHECK(report.format_sum == 1.0);
  CHECK(report.rationale_sum == 5.0);
  CHECK(report.answer_sum == 4.0);
  CHECK(report.total == 10.0);
  CHECK(report.format_tokens == 1);
  CHECK(report.rationale_tokens == 2);
  CHECK(report.answer_tokens == 1);
  REQUIRE(report.token_ratio.has_value());
  CHECK((*report.token_ratio)[0] == doctest::Approx(1.0));
  CHECK((*report.token_ratio)[1] == doctest::Approx(2.0));
  CHECK((*report.token_ratio)[2] == doctest::Approx(1.0));
}

TEST_CASE("token ratios are normalized by the answer segment") {
  SegmentedTokens tokens;
  for (int i = 0; i < 25; ++i) {
    tokens.token_nll.push_back(0.1);
    tokens.labels.push_back(SegmentLabel::format);
  }
  for (int i = 0; i < 135; ++i) {
    tokens.token_nll.push_back(0.1);
    tokens.labels.push_back(SegmentLabel::rationale);
  }
  for (int i = 0; i < 5; ++i) {
    tokens.token_nll.push_back(0.1);
    tokens.labels.push_back(SegmentLabel::answer);
  }
  const auto report = segment_loss_report(tokens);
  REQUIRE(report.token_ratio.has_value());
  CHECK((*report.token_ratio)[0] == doctest::Approx(5.0));
  CHECK((*report.token_ratio)[1] == doctest::Approx(27.0));
  CHECK((*report.token_ratio)[2] == doctest::Approx(1.0));

  SUBCASE("no answer tokens means no ratio") {
    tokens.token_nll.resize(160);
    tokens.labels.resize(160);
    const auto no_answer = segment_loss_report(tokens);
    CHECK_FALSE(no_answer.token_ratio.has_value());
    CHECK(no_answer.answer_tokens == 0);
    CHECK(no_answer.answer_sum == 0.0);
  }
}

TEST_CASE("the segment decomposition identity holds exactly on random streams") {
  std::mt19937 rng(60601);
  std::uniform_int_distribution<int> len_dist(1, 400);
  std::uniform_int_distribution<int> label_dist(0, 2);
  std::uniform_real_distribution<double> nll_dist(0.0, 12.0);
  for (int trial = 0; trial < 300; ++trial) {
    SegmentedTokens tokens;
    const int n = len_dist(rng);
    for (int i = 0; i < n; ++i) {
      tokens.token_nll.push_back(nll_dist(rng));
      tokens.labels.push_back(static_cast<SegmentLabel>(label_dist(rng)));
    }
    const auto report = segment_loss_report(tokens);
    // Exact in floating point: total is defined as the sum of the three
    // per-segment sums, never recomputed over the raw stream.
    CHECK(report.total == report.format_sum + report.rationale_sum + report.answer_sum);
    CHECK(report.format_tokens + report.rationale_tokens + report.answer_tokens ==
          static_cast<std::size_t>(n));
  }
}

TEST_CASE("segmented token validation rejects malformed streams") {
  SegmentedTokens tokens;
  tokens.token_nll = {1.0};
  tokens.labels = {SegmentLabel::answer};
  CHECK_NOTHROW(tokens.validate());

  SUBCASE("ragged") {
    tokens.labels.push_back(SegmentLabel::format);
    CHECK_THROWS_AS(segment_loss_report(tokens), Error);
  }
  SUBCASE("empty") {
    tokens.token_nll.clear();
    tokens.labels.clear();
    CHECK_THROWS_AS(segment_loss_report(tokens), Error);
  }
  SUBCASE("negative NLL") {
    tokens.token_nll[0] = -0.5;
    CHECK_THROWS_AS(segment_loss_report(tokens), Error);
  }
  SUBCASE("NaN NLL") {
    tokens.token_nll[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(segment_loss_report(tokens), Error);
  }
}

TEST_CASE("segment labels round-trip through their names") {
  for (const auto label :
       {SegmentLabel::format, SegmentLabel::rationale, SegmentLabel::answer}) {
    CHECK(segment_label_from_string(to_string(label)) == label);
  }
  CHECK_THROWS_AS(segment_label_from_string("prologue"), Error);
}

TEST_CASE("segment report serializations carry the sums") {
  SegmentedTokens tokens;
  tokens.token_nll = {1.0, 2.0};
  tokens.labels = {SegmentLabel::format, SegmentLabel::answer};
  const auto report = segment_loss_report(tokens);
  const auto doc = report.to_json();
  CHECK(doc["format_sum"] == 1.0);
  CHECK(doc["answer_sum"] == 2.0);
  CHECK(doc["total"] == 3.0);
  CHECK(report.to_table().find("rationale") != std::string::npos);
}

}  // TEST_SUITE
