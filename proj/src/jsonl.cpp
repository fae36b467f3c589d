#include "cotforge/jsonl.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "cotforge/error.hpp"

namespace cotforge {

namespace {

void check_keys(const ordered_json& row, const std::set<std::string>& allowed,
                const std::string& context, int line) {
  if (!row.is_object()) {
    throw SchemaError(line, "", fmt::format("{} row must be a JSON object", context));
  }
  for (const auto& item : row.items()) {
    if (allowed.find(item.key()) == allowed.end()) {
      throw SchemaError(line, item.key(),
                        fmt::format("unknown field \"{}\" in {} row", item.key(), context));
    }
  }
}

std::string require_string(const ordered_json& row, const std::string& key,
                           const std::string& context, int line) {
  auto it = row.find(key);
  if (it == row.end()) {
    throw SchemaError(line, key, fmt::format("{} row is missing field \"{}\"", context, key));
  }
  if (!it->is_string()) {
    throw SchemaError(line, key, fmt::format("{} field \"{}\" must be a string", context, key));
  }
  return it->get<std::string>();
}

bool optional_bool(const ordered_json& row, const std::string& key, bool fallback,
                   const std::string& context, int line) {
  auto it = row.find(key);
  if (it == row.end()) return fallback;
  if (!it->is_boolean()) {
    throw SchemaError(line, key, fmt::format("{} field \"{}\" must be a boolean", context, key));
  }
  return it->get<bool>();
}

std::vector<std::pair<int, ordered_json>> read_jsonl_numbered(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, fmt::format("cannot open \"{}\" for reading", path));
  std::vector<std::pair<int, ordered_json>> docs;
  std::string text;
  int line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (trim(text).empty()) continue;
    try {
      docs.emplace_back(line, ordered_json::parse(text));
    } catch (const nlohmann::json::exception& err) {
      throw SchemaError(line, "",
                        fmt::format("\"{}\" line {}: invalid JSON: {}", path, line, err.what()));
    }
  }
  return docs;
}

}  // namespace

ordered_json to_json(const Sample& sample) {
  ordered_json row;
  row["id"] = sample.id;
  row["question"] = sample.question;
  row["gold_answer"] = sample.gold_answer;
  row["task"] = to_string(sample.task);
  if (!sample.options.empty()) {
    ordered_json options = ordered_json::array();
    for (const auto& option : sample.options) {
      options.push_back({{"label", option.label}, {"text", option.text}});
    }
    row["options"] = std::move(options);
  }
  return row;
}

Sample sample_from_json(const ordered_json& row, int line) {
  check_keys(row, {"id", "question", "gold_answer", "task", "options"}, "sample", line);
  Sample sample;
  sample.id = require_string(row, "id", "sample", line);
  sample.question = require_string(row, "question", "sample", line);
  sample.gold_answer = require_string(row, "gold_answer", "sample", line);
  sample.task = task_kind_from_string(require_string(row, "task", "sample", line));
  if (auto it = row.find("options"); it != row.end()) {
    if (!it->is_array()) {
      throw SchemaError(line, "options", "sample field \"options\" must be an array");
    }
    for (const auto& entry : *it) {
      check_keys(entry, {"label", "text"}, "option", line);
      OptionEntry option;
      option.label = require_string(entry, "label", "option", line);
      option.text = require_string(entry, "text", "option", line);
      sample.options.push_back(std::move(option));
    }
  }
  try {
    sample.validate();
  } catch (const Error& err) {
    throw SchemaError(line, "", err.what());
  }
  return sample;
}

ordered_json to_json(const StructuredRecord& record) {
  ordered_json row;
  row["reasoning"] = record.reasoning;
  if (record.option_label) row["option_label"] = *record.option_label;
  row["answer"] = record.answer;
  row["format_kind"] = to_string(record.format_kind);
  return row;
}

StructuredRecord record_from_json(const ordered_json& row, int line) {
  check_keys(row, {"reasoning", "option_label", "answer", "format_kind"}, "target", line);
  std::optional<std::string> option_label;
  if (row.contains("option_label")) {
    option_label = require_string(row, "option_label", "target", line);
  }
  try {
    return StructuredRecord::create(
        require_string(row, "reasoning", "target", line), std::move(option_label),
        require_string(row, "answer", "target", line),
        format_kind_from_string(require_string(row, "format_kind", "target", line)));
  } catch (const SchemaError&) {
    throw;
  } catch (const Error& err) {
    throw SchemaError(line, "", err.what());
  }
}

ordered_json to_json(const AdaptationExample& example) {
  ordered_json row;
  row["sample_id"] = example.sample_id;
  row["question"] = example.question;
  row["llm_output"] = example.llm_output;
  row["target"] = to_json(example.target);
  row["provenance"] = to_string(example.provenance);
  return row;
}

AdaptationExample example_from_json(const ordered_json& row, int line) {
  check_keys(row, {"sample_id", "question", "llm_output", "target", "provenance"},
             "adaptation example", line);
  AdaptationExample example;
  example.sample_id = require_string(row, "sample_id", "adaptation example", line);
  example.question = require_string(row, "question", "adaptation example", line);
  example.llm_output = require_string(row, "llm_output", "adaptation example", line);
  auto it = row.find("target");
  if (it == row.end()) {
    throw SchemaError(line, "target", "adaptation example row is missing field \"target\"");
  }
  example.target = record_from_json(*it, line);
  example.provenance = provenance_from_string(
      require_string(row, "provenance", "adaptation example", line));
  if (example.sample_id.empty()) {
    throw SchemaError(line, "sample_id", "adaptation example sample_id must be non-empty");
  }
  return example;
}

ordered_json to_json(const Prediction& prediction) {
  ordered_json row;
  row["sample_id"] = prediction.sample_id;
  row["llm_output"] = prediction.llm_output;
  row["structured_text"] = prediction.structured_text;
  row["failed"] = prediction.failed;
  row["error"] = prediction.error;
  return row;
}

Prediction prediction_from_json(const ordered_json& row, int line) {
  check_keys(row, {"sample_id", "llm_output", "structured_text", "failed", "error"},
             "prediction", line);
  Prediction prediction;
  prediction.sample_id = require_string(row, "sample_id", "prediction", line);
  prediction.llm_output = require_string(row, "llm_output", "prediction", line);
  prediction.structured_text = require_string(row, "structured_text", "prediction", line);
  prediction.failed = optional_bool(row, "failed", false, "prediction", line);
  prediction.error = row.contains("error") ? require_string(row, "error", "prediction", line)
                                           : std::string{};
  if (prediction.sample_id.empty()) {
    throw SchemaError(line, "sample_id", "prediction sample_id must be non-empty");
  }
  return prediction;
}

std::vector<ordered_json> read_jsonl(const std::string& path) {
  std::vector<ordered_json> docs;
  for (auto& [line, doc] : read_jsonl_numbered(path)) {
    (void)line;
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::vector<Sample> read_samples(const std::string& path) {
  std::vector<Sample> samples;
  std::set<std::string> seen;
  for (const auto& [line, row] : read_jsonl_numbered(path)) {
    Sample sample = sample_from_json(row, line);
    if (!seen.insert(sample.id).second) {
      throw DuplicateIdError(sample.id,
                             fmt::format("\"{}\" line {}: duplicate sample id \"{}\"", path, line,
                                         sample.id));
    }
    samples.push_back(std::move(sample));
  }
  return samples;
}

std::vector<AdaptationExample> read_examples(const std::string& path) {
  std::vector<AdaptationExample> examples;
  for (const auto& [line, row] : read_jsonl_numbered(path)) {
    examples.push_back(example_from_json(row, line));
  }
  return examples;
}

std::vector<Prediction> read_predictions(const std::string& path) {
  std::vector<Prediction> predictions;
  for (const auto& [line, row] : read_jsonl_numbered(path)) {
    predictions.push_back(prediction_from_json(row, line));
  }
  return predictions;
}

namespace {

template <typename Row>
void write_rows(const std::string& path, const std::vector<Row>& rows) {
  std::string content;
  for (const auto& row : rows) {
    content += to_json(row).dump();
    content += '\n';
  }
  atomic_write_file(path, content);
}

}  // namespace

void write_samples(const std::string& path, const std::vector<Sample>& rows) {
  for (const auto& row : rows) row.validate();
  write_rows(path, rows);
}

void write_examples(const std::string& path, const std::vector<AdaptationExample>& rows) {
  write_rows(path, rows);
}

void write_predictions(const std::string& path, const std::vector<Prediction>& rows) {
  write_rows(path, rows);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, fmt::format("cannot open \"{}\" for reading", path));
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void atomic_write_file(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, fmt::format("cannot open \"{}\" for writing", tmp));
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw Error(ErrorKind::io, fmt::format("failed writing \"{}\"", tmp));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw Error(ErrorKind::io,
                fmt::format("failed renaming \"{}\" to \"{}\": {}", tmp, path, ec.message()));
  }
}

bool file_exists(const std::string& path) {
  std::error_code ec;
  return std::filesystem::exists(path, ec);
}

void ensure_writable(const std::string& path, bool overwrite) {
  if (!overwrite && file_exists(path)) {
    throw Error(ErrorKind::io,
                fmt::format("output \"{}\" already exists; enable overwrite to replace it", path));
  }
}

}  // namespace cotforge
