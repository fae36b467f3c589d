#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace cotforge {

// Two independent checks, one point each: 2 when both the output shape and
// the final answer are right, 1 when exactly one is, 0 when neither.
int reward(bool format_correct, bool answer_correct);

// Group-normalized advantages: (r_i - mean) / population standard deviation.
// A zero-variance group yields all-zero advantages instead of dividing by
// zero. Throws Error(group_too_small) for fewer than two rewards and
// Error(numeric) on NaN input.
std::vector<double> group_advantages(const std::vector<double>& rewards);

// One group's inputs for the clipped policy-gradient objective value. The
// ratio list holds pi_theta / pi_old per trajectory; kl_terms holds the
// per-trajectory KL penalty estimates (non-negative by construction).
struct GroupBatch {
  std::vector<double> rewards;
  std::vector<double> ratios;
  std::vector<double> kl_terms;
  double epsilon = 0.2;
  double beta = 0.04;

  // Throws Error(length_mismatch) on ragged lists, Error(group_too_small)
  // below two trajectories, Error(numeric) on NaN, non-positive ratios,
  // negative KL terms, or epsilon outside (0, 1).
  void validate() const;
};

// Mean over the group of min(ratio * A, clip(ratio, 1-eps, 1+eps) * A) minus
// beta times the KL term, evaluated exactly in that order per trajectory and
// summed left to right.
double grpo_loss(const GroupBatch& batch);

// k3 estimator of KL(pi_theta || pi_ref) for one token: exp(ref - theta) -
// (ref - theta) - 1, always >= 0. Inputs are log-probabilities.
double kl_k3(double logprob_theta, double logprob_ref);

enum class SegmentLabel { format, rationale, answer };

const char* to_string(SegmentLabel label);
SegmentLabel segment_label_from_string(const std::string& text);

// Per-token negative log-likelihoods with a segment label per token.
struct SegmentedTokens {
  std::vector<double> token_nll;
  std::vector<SegmentLabel> labels;

  // Throws Error(length_mismatch) on ragged lists, Error(data) when empty,
  // Error(numeric) on NaN or negative NLL.
  void validate() const;
};

// Decomposes the summed NLL by segment. The three segment sums are each
// accumulated left to right over the token stream, and `total` is computed
// as format_sum + rationale_sum + answer_sum (never as an independent pass),
// so the decomposition identity holds exactly in floating point.
struct SegmentLossReport {
  double format_sum = 0.0;
  double rationale_sum = 0.0;
  double answer_sum = 0.0;
  double total = 0.0;
  std::size_t format_tokens = 0;
  std::size_t rationale_tokens = 0;
  std::size_t answer_tokens = 0;
  // Segment token counts divided by the answer segment count; absent when no
  // answer tokens exist.
  std::optional<std::array<double, 3>> token_ratio;

  nlohmann::ordered_json to_json() const;
  std::string to_table() const;
};

SegmentLossReport segment_loss_report(const SegmentedTokens& tokens);

}  // namespace cotforge
