#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotforge/types.hpp"

namespace cotforge {

// Describes one output-shape contract: which serialization to use, the keys
// it must carry, and aliases tolerated on input. Rendering always emits the
// canonical keys in declaration order.
struct FormatSpec {
  FormatKind kind = FormatKind::xml;
  TaskKind task = TaskKind::numeric_qa;
  std::string root = "response";                     // XML root element name
  std::vector<std::string> required_keys;            // canonical names, in order
  std::map<std::string, std::string> key_aliases;    // accepted name -> canonical

  // Throws Error(invariant): required_keys must hold "reasoning" and "answer"
  // (plus "option" iff task is multiple-choice), each exactly once; aliases
  // must map onto required keys and must not shadow them.
  void validate() const;

  static FormatSpec from_json(const nlohmann::ordered_json& doc);
  nlohmann::ordered_json to_json() const;

  bool operator==(const FormatSpec&) const = default;
};

FormatSpec default_spec(TaskKind task, FormatKind kind);

// Loads a template spec from a JSON file and validates it.
FormatSpec load_spec(const std::string& path);

enum class ParseFailure { unparseable, missing_key, wrong_nesting, duplicate_key, empty_answer };

const char* to_string(ParseFailure failure);

struct ParseReport {
  bool valid = false;
  std::optional<StructuredRecord> record;
  std::optional<ParseFailure> failure;
  std::string detail;  // which key or block caused the failure
};

// Serializes a record into the format spec's exact template shape. Throws
// Error(spec_mismatch) when the record does not fit the format spec (e.g. a
// multiple-choice spec with no option label).
std::string render(const StructuredRecord& record, const FormatSpec& spec);

// Total over arbitrary text: locates the single structured block (possibly
// surrounded by prose), validates it against the format spec, and extracts the
// record. Never throws on malformed input; failures land in the report.
ParseReport parse(const std::string& text, const FormatSpec& spec);

// Human-readable instruction block describing the expected output shape,
// suitable for system prompts. Deterministic for a given spec.
std::string instruction_template(const FormatSpec& spec);

}  // namespace cotforge
