#pragma once

#include <optional>
#include <regex>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotforge/format.hpp"
#include "cotforge/types.hpp"

namespace cotforge {

// Canonical comparison form for exact-match scoring. Total: any input maps to
// some string (an unrecognized shape falls back to normalized lowercase text).
// Numeric answers become reduced rationals ("0.5", "2/4", "$1,000", "\\frac{1}{2}"
// all canonicalize to their reduced fraction or integer), booleans become
// "true"/"false" (yes/no included), choice labels become a bare uppercase letter.
std::string canonicalize_answer(const std::string& raw, TaskKind task);

// True when `raw` names the same answer as the sample's gold answer after
// canonicalization; for multiple-choice, either the label or the option text
// may be given.
bool answers_match(const std::string& raw, const Sample& sample);

// Validates one structured output against the format spec and scores it. Never
// throws on bad model text; invalid text yields an all-false outcome.
EvalOutcome judge(const std::string& output_text, const Sample& sample, const FormatSpec& spec);

struct EvalReport {
  std::size_t n = 0;
  double format_accuracy = 0.0;   // fraction of outputs passing parse
  double content_accuracy = 0.0;  // fraction of outputs with the correct answer
  std::vector<EvalOutcome> per_sample;

  nlohmann::ordered_json to_json() const;
  std::string to_table() const;
};

EvalReport evaluate(const std::vector<std::pair<Sample, std::string>>& outputs,
                    const FormatSpec& spec);

// Prediction-file variant: rows are matched to samples by id. A missing or
// failed prediction scores as format-invalid; prediction ids not present in
// the samples are a data error, as are duplicate prediction ids.
EvalReport evaluate(const std::vector<Sample>& samples,
                    const std::vector<Prediction>& predictions, const FormatSpec& spec);

// Paired per-sample correctness before and after structuring: the four cells
// of the transition matrix, each divided by n, so the rates sum to one.
struct ConsistencyReport {
  std::size_t n = 0;
  std::size_t n_kept_correct = 0;     // correct before and after
  std::size_t n_gained = 0;           // wrong before, correct after
  std::size_t n_lost = 0;             // correct before, wrong after
  std::size_t n_kept_wrong = 0;       // wrong before and after
  double kept_correct_rate = 0.0;
  double gained_rate = 0.0;
  double lost_rate = 0.0;
  double kept_wrong_rate = 0.0;

  nlohmann::ordered_json to_json() const;
  std::string to_table() const;
};

ConsistencyReport consistency_report(const std::vector<bool>& correct_before,
                                     const std::vector<bool>& correct_after);

// Pulls a final answer out of freeform text: explicit answer markers first
// ("#### 42", "\\boxed{42}", "the answer is 42"), then a task-shaped fallback
// (last number, last yes/no, last standalone choice letter).
class FreeformExtractor {
 public:
  FreeformExtractor();
  // Custom extraction: each pattern is an ECMAScript regex whose first capture
  // group is the candidate answer. Patterns are tried in order; the first one
  // that matches wins, using its last occurrence in the text.
  explicit FreeformExtractor(const std::vector<std::string>& patterns);

  std::optional<std::string> extract(const std::string& text, TaskKind task) const;
  bool correct(const std::string& text, const Sample& sample) const;

 private:
  bool custom_ = false;
  std::vector<std::regex> patterns_;
};

}  // namespace cotforge
