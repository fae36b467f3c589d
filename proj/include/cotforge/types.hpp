#pragma once

#include <optional>
#include <string>
#include <vector>

namespace cotforge {

enum class TaskKind { numeric_qa, boolean_qa, multiple_choice };
enum class FormatKind { xml, json, yaml };
enum class Provenance { stage1, stage2 };

const char* to_string(TaskKind kind);
const char* to_string(FormatKind kind);
const char* to_string(Provenance provenance);

TaskKind task_kind_from_string(const std::string& text);
FormatKind format_kind_from_string(const std::string& text);
Provenance provenance_from_string(const std::string& text);

// Collapses runs of whitespace to single spaces and trims both ends.
std::string normalize_whitespace(const std::string& text);

std::string trim(const std::string& text);

struct OptionEntry {
  std::string label;  // single letter, A through E
  std::string text;

  bool operator==(const OptionEntry&) const = default;
};

struct Sample {
  std::string id;
  std::string question;
  std::string gold_answer;
  std::vector<OptionEntry> options;  // empty unless task == multiple_choice
  TaskKind task = TaskKind::numeric_qa;

  // Throws Error(invariant) when a field contract is violated.
  void validate() const;

  bool operator==(const Sample&) const = default;
};

// Label of the option whose text matches gold_answer (whitespace-normalized);
// falls back to treating a bare single-letter gold_answer as the label itself.
std::optional<std::string> resolve_gold_label(const Sample& sample);

struct StructuredRecord {
  std::string reasoning;
  std::optional<std::string> option_label;  // multiple-choice only
  std::string answer;
  FormatKind format_kind = FormatKind::xml;

  // Throws Error(invariant) when reasoning or answer is blank, or when a
  // present option_label is blank.
  static StructuredRecord create(std::string reasoning,
                                 std::optional<std::string> option_label,
                                 std::string answer, FormatKind format_kind);

  bool operator==(const StructuredRecord&) const = default;
};

struct AdaptationExample {
  std::string sample_id;
  std::string question;
  std::string llm_output;
  StructuredRecord target;
  Provenance provenance = Provenance::stage1;

  // Throws Error(invariant) unless target.answer equals the sample's
  // gold_answer byte-for-byte; training targets always carry the gold answer.
  static AdaptationExample create(const Sample& sample, std::string llm_output,
                                  StructuredRecord target,
                                  Provenance provenance);

  bool operator==(const AdaptationExample&) const = default;
};

struct EvalOutcome {
  std::string sample_id;
  bool format_valid = false;
  std::optional<std::string> extracted_answer;
  bool content_correct = false;
  // True when a multiple-choice output's option label and answer text point
  // at different options; correctness is judged on the label.
  bool label_text_conflict = false;

  // Throws Error(invariant) when the implication contracts are violated:
  // content_correct requires format_valid, extraction requires format_valid.
  void validate() const;

  bool operator==(const EvalOutcome&) const = default;
};

// One model response for a sample: the freeform generator's text plus the
// structuring model's refinement. `failed` marks rows whose backend calls
// did not complete; such rows carry the error text instead of being dropped.
struct Prediction {
  std::string sample_id;
  std::string llm_output;
  std::string structured_text;
  bool failed = false;
  std::string error;

  bool operator==(const Prediction&) const = default;
};

}  // namespace cotforge
