#include "cotforge/types.hpp"

#include <algorithm>
#include <cctype>

#include <fmt/format.h>

#include "cotforge/error.hpp"

namespace cotforge {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return "io";
    case ErrorKind::schema: return "schema";
    case ErrorKind::duplicate_id: return "duplicate-id";
    case ErrorKind::invariant: return "invariant";
    case ErrorKind::spec_mismatch: return "spec-mismatch";
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::auth: return "auth";
    case ErrorKind::exhausted_retries: return "exhausted-retries";
    case ErrorKind::script_miss: return "script-miss";
    case ErrorKind::transient: return "transient";
    case ErrorKind::length_mismatch: return "length-mismatch";
    case ErrorKind::group_too_small: return "group-too-small";
    case ErrorKind::numeric: return "numeric";
  }
  return "unknown";
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
      return 1;
    case ErrorKind::auth:
    case ErrorKind::exhausted_retries:
    case ErrorKind::script_miss:
    case ErrorKind::transient:
      return 2;
    default:
      return 3;
  }
}

const char* to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::numeric_qa: return "numeric-qa";
    case TaskKind::boolean_qa: return "boolean-qa";
    case TaskKind::multiple_choice: return "multiple-choice";
  }
  return "unknown";
}

const char* to_string(FormatKind kind) {
  switch (kind) {
    case FormatKind::xml: return "xml";
    case FormatKind::json: return "json";
    case FormatKind::yaml: return "yaml";
  }
  return "unknown";
}

const char* to_string(Provenance provenance) {
  switch (provenance) {
    case Provenance::stage1: return "stage1";
    case Provenance::stage2: return "stage2";
  }
  return "unknown";
}

TaskKind task_kind_from_string(const std::string& text) {
  if (text == "numeric-qa") return TaskKind::numeric_qa;
  if (text == "boolean-qa") return TaskKind::boolean_qa;
  if (text == "multiple-choice") return TaskKind::multiple_choice;
  throw Error(ErrorKind::schema, fmt::format("unknown task kind \"{}\"", text));
}

FormatKind format_kind_from_string(const std::string& text) {
  if (text == "xml") return FormatKind::xml;
  if (text == "json") return FormatKind::json;
  if (text == "yaml") return FormatKind::yaml;
  throw Error(ErrorKind::schema, fmt::format("unknown format kind \"{}\"", text));
}

Provenance provenance_from_string(const std::string& text) {
  if (text == "stage1") return Provenance::stage1;
  if (text == "stage2") return Provenance::stage2;
  throw Error(ErrorKind::schema, fmt::format("unknown provenance \"{}\"", text));
}

std::string trim(const std::string& text) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && is_space(static_cast<unsigned char>(text[begin]))) ++begin;
  while (end > begin && is_space(static_cast<unsigned char>(text[end - 1]))) --end;
  return text.substr(begin, end - begin);
}

std::string normalize_whitespace(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  bool in_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c) != 0) {
      in_space = true;
      continue;
    }
    if (in_space && !out.empty()) out.push_back(' ');
    in_space = false;
    out.push_back(static_cast<char>(c));
  }
  return out;
}

namespace {

bool is_blank(const std::string& text) { return trim(text).empty(); }

}  // namespace

void Sample::validate() const {
  if (is_blank(id)) throw Error(ErrorKind::invariant, "sample id must be non-empty");
  if (is_blank(question)) {
    throw Error(ErrorKind::invariant, fmt::format("sample \"{}\": question must be non-empty", id));
  }
  if (is_blank(gold_answer)) {
    throw Error(ErrorKind::invariant,
                fmt::format("sample \"{}\": gold_answer must be non-empty", id));
  }
  if (task == TaskKind::multiple_choice) {
    if (options.empty()) {
      throw Error(ErrorKind::invariant,
                  fmt::format("sample \"{}\": multiple-choice requires options", id));
    }
    std::string seen;
    for (const auto& option : options) {
      if (option.label.size() != 1 || option.label[0] < 'A' || option.label[0] > 'E') {
        throw Error(ErrorKind::invariant,
                    fmt::format("sample \"{}\": option label \"{}\" is not one of A..E", id,
                                option.label));
      }
      if (seen.find(option.label[0]) != std::string::npos) {
        throw Error(ErrorKind::invariant,
                    fmt::format("sample \"{}\": duplicate option label \"{}\"", id, option.label));
      }
      seen.push_back(option.label[0]);
      if (is_blank(option.text)) {
        throw Error(ErrorKind::invariant,
                    fmt::format("sample \"{}\": option \"{}\" has empty text", id, option.label));
      }
    }
    if (!resolve_gold_label(*this)) {
      throw Error(ErrorKind::invariant,
                  fmt::format("sample \"{}\": gold_answer matches no option label or text", id));
    }
  } else if (!options.empty()) {
    throw Error(ErrorKind::invariant,
                fmt::format("sample \"{}\": options are only valid for multiple-choice", id));
  }
}

std::optional<std::string> resolve_gold_label(const Sample& sample) {
  if (sample.task != TaskKind::multiple_choice) return std::nullopt;
  const std::string gold = normalize_whitespace(sample.gold_answer);
  for (const auto& option : sample.options) {
    if (normalize_whitespace(option.text) == gold) return option.label;
  }
  // Bare label, possibly wrapped like "(b)" or "B.".
  std::string stripped;
  for (char c : gold) {
    if (std::string("()[]{} .:").find(c) == std::string::npos) stripped.push_back(c);
  }
  if (stripped.size() == 1) {
    char upper = static_cast<char>(std::toupper(static_cast<unsigned char>(stripped[0])));
    for (const auto& option : sample.options) {
      if (option.label[0] == upper) return option.label;
    }
  }
  return std::nullopt;
}

StructuredRecord StructuredRecord::create(std::string reasoning,
                                          std::optional<std::string> option_label,
                                          std::string answer, FormatKind format_kind) {
  if (is_blank(reasoning)) {
    throw Error(ErrorKind::invariant, "structured record requires non-empty reasoning");
  }
  if (is_blank(answer)) {
    throw Error(ErrorKind::invariant, "structured record requires non-empty answer");
  }
  if (option_label && is_blank(*option_label)) {
    throw Error(ErrorKind::invariant, "structured record option label must be non-empty when present");
  }
  StructuredRecord record;
  record.reasoning = std::move(reasoning);
  record.option_label = std::move(option_label);
  record.answer = std::move(answer);
  record.format_kind = format_kind;
  return record;
}

AdaptationExample AdaptationExample::create(const Sample& sample, std::string llm_output,
                                            StructuredRecord target, Provenance provenance) {
  sample.validate();
  if (target.answer != sample.gold_answer) {
    throw Error(ErrorKind::invariant,
                fmt::format("sample \"{}\": training target answer \"{}\" differs from gold "
                            "answer \"{}\"",
                            sample.id, target.answer, sample.gold_answer));
  }
  if (is_blank(llm_output)) {
    throw Error(ErrorKind::invariant,
                fmt::format("sample \"{}\": llm_output must be non-empty", sample.id));
  }
  AdaptationExample example;
  example.sample_id = sample.id;
  example.question = sample.question;
  example.llm_output = std::move(llm_output);
  example.target = std::move(target);
  example.provenance = provenance;
  return example;
}

void EvalOutcome::validate() const {
  if (content_correct && !format_valid) {
    throw Error(ErrorKind::invariant,
                fmt::format("outcome \"{}\": content_correct requires format_valid", sample_id));
  }
  if (extracted_answer && !format_valid) {
    throw Error(ErrorKind::invariant,
                fmt::format("outcome \"{}\": extracted answer requires format_valid", sample_id));
  }
  if (content_correct && !extracted_answer) {
    throw Error(ErrorKind::invariant,
                fmt::format("outcome \"{}\": content_correct requires an extracted answer",
                            sample_id));
  }
}

}  // namespace cotforge
