#include "cotforge/signals.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "cotforge/error.hpp"

namespace cotforge {

int reward(bool format_correct, bool answer_correct) {
  return (format_correct ? 1 : 0) + (answer_correct ? 1 : 0);
}

namespace {

void check_finite(const std::vector<double>& values, const char* name) {
  for (double v : values) {
    if (std::isnan(v)) {
      throw Error(ErrorKind::numeric, fmt::format("{} contains NaN", name));
    }
  }
}

}  // namespace

std::vector<double> group_advantages(const std::vector<double>& rewards) {
  if (rewards.size() < 2) {
    throw Error(ErrorKind::group_too_small,
                fmt::format("advantage normalization needs a group of at least 2, got {}",
                            rewards.size()));
  }
  check_finite(rewards, "rewards");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(rewards.size());
  double variance = 0.0;
  for (double r : rewards) variance += (r - mean) * (r - mean);
  variance /= static_cast<double>(rewards.size());
  const double stddev = std::sqrt(variance);
  std::vector<double> advantages(rewards.size(), 0.0);
  if (stddev == 0.0) return advantages;  // identical rewards carry no signal
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    advantages[i] = (rewards[i] - mean) / stddev;
  }
  return advantages;
}

void GroupBatch::validate() const {
  if (rewards.size() != ratios.size() || rewards.size() != kl_terms.size()) {
    throw Error(ErrorKind::length_mismatch,
                fmt::format("group lists differ in length: rewards={}, ratios={}, kl_terms={}",
                            rewards.size(), ratios.size(), kl_terms.size()));
  }
  if (rewards.size() < 2) {
    throw Error(ErrorKind::group_too_small,
                fmt::format("group objective needs at least 2 trajectories, got {}",
                            rewards.size()));
  }
  check_finite(rewards, "rewards");
  check_finite(ratios, "ratios");
  check_finite(kl_terms, "kl_terms");
  for (double ratio : ratios) {
    if (ratio <= 0.0) {
      throw Error(ErrorKind::numeric,
                  fmt::format("probability ratios must be positive, got {}", ratio));
    }
  }
  for (double kl : kl_terms) {
    if (kl < 0.0) {
      throw Error(ErrorKind::numeric, fmt::format("KL terms must be non-negative, got {}", kl));
    }
  }
  if (!(epsilon > 0.0 && epsilon < 1.0)) {
    throw Error(ErrorKind::numeric,
                fmt::format("clip width must lie in (0, 1), got {}", epsilon));
  }
  if (std::isnan(beta)) throw Error(ErrorKind::numeric, "beta is NaN");
}

double grpo_loss(const GroupBatch& batch) {
  batch.validate();
  const std::vector<double> advantages = group_advantages(batch.rewards);
  double sum = 0.0;
  for (std::size_t i = 0; i < advantages.size(); ++i) {
    const double ratio = batch.ratios[i];
    const double clipped = std::clamp(ratio, 1.0 - batch.epsilon, 1.0 + batch.epsilon);
    const double term = std::min(ratio * advantages[i], clipped * advantages[i]);
    sum += term - batch.beta * batch.kl_terms[i];
  }
  return sum / static_cast<double>(advantages.size());
}

double kl_k3(double logprob_theta, double logprob_ref) {
  if (std::isnan(logprob_theta) || std::isnan(logprob_ref)) {
    throw Error(ErrorKind::numeric, "log-probabilities must not be NaN");
  }
  const double diff = logprob_ref - logprob_theta;
  return std::exp(diff) - diff - 1.0;
}

const char* to_string(SegmentLabel label) {
  switch (label) {
    case SegmentLabel::format: return "format";
    case SegmentLabel::rationale: return "rationale";
    case SegmentLabel::answer: return "answer";
  }
  return "unknown";
}

SegmentLabel segment_label_from_string(const std::string& text) {
  if (text == "format") return SegmentLabel::format;
  if (text == "rationale") return SegmentLabel::rationale;
  if (text == "answer") return SegmentLabel::answer;
  throw Error(ErrorKind::schema, fmt::format("unknown segment label \"{}\"", text));
}

void SegmentedTokens::validate() const {
  if (token_nll.size() != labels.size()) {
    throw Error(ErrorKind::length_mismatch,
                fmt::format("token lists differ in length: nll={}, labels={}", token_nll.size(),
                            labels.size()));
  }
  if (token_nll.empty()) {
    throw Error(ErrorKind::data, "segment report needs at least one token");
  }
  for (double nll : token_nll) {
    if (std::isnan(nll)) throw Error(ErrorKind::numeric, "token NLL contains NaN");
    if (nll < 0.0) {
      throw Error(ErrorKind::numeric,
                  fmt::format("token NLL must be non-negative, got {}", nll));
    }
  }
}

SegmentLossReport segment_loss_report(const SegmentedTokens& tokens) {
  tokens.validate();
  SegmentLossReport report;
  for (std::size_t i = 0; i < tokens.token_nll.size(); ++i) {
    switch (tokens.labels[i]) {
      case SegmentLabel::format:
        report.format_sum += tokens.token_nll[i];
        ++report.format_tokens;
        break;
      case SegmentLabel::rationale:
        report.rationale_sum += tokens.token_nll[i];
        ++report.rationale_tokens;
        break;
      case SegmentLabel::answer:
        report.answer_sum += tokens.token_nll[i];
        ++report.answer_tokens;
        break;
    }
  }
  report.total = report.format_sum + report.rationale_sum + report.answer_sum;
  if (report.answer_tokens > 0) {
    const double base = static_cast<double>(report.answer_tokens);
    report.token_ratio = {static_cast<double>(report.format_tokens) / base,
                          static_cast<double>(report.rationale_tokens) / base, 1.0};
  }
  return report;
}

nlohmann::ordered_json SegmentLossReport::to_json() const {
  nlohmann::ordered_json doc;
  doc["format_sum"] = format_sum;
  doc["rationale_sum"] = rationale_sum;
  doc["answer_sum"] = answer_sum;
  doc["total"] = total;
  doc["format_tokens"] = format_tokens;
  doc["rationale_tokens"] = rationale_tokens;
  doc["answer_tokens"] = answer_tokens;
  if (token_ratio) {
    doc["token_ratio"] = {(*token_ratio)[0], (*token_ratio)[1], (*token_ratio)[2]};
  } else {
    doc["token_ratio"] = nullptr;
  }
  return doc;
}

std::string SegmentLossReport::to_table() const {
  std::string out;
  out += fmt::format("{:<12} {:>8} {:>14}\n", "segment", "tokens", "loss_sum");
  out += fmt::format("{:<12} {:>8} {:>14.6f}\n", "format", format_tokens, format_sum);
  out += fmt::format("{:<12} {:>8} {:>14.6f}\n", "rationale", rationale_tokens, rationale_sum);
  out += fmt::format("{:<12} {:>8} {:>14.6f}\n", "answer", answer_tokens, answer_sum);
  out += fmt::format("{:<12} {:>8} {:>14.6f}\n", "total",
                     format_tokens + rationale_tokens + answer_tokens, total);
  return out;
}

}  // namespace cotforge
