#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotforge/types.hpp"

namespace cotforge {

using ordered_json = nlohmann::ordered_json;

// Rows are serialized with a fixed field order so repeated runs produce
// byte-identical files.
ordered_json to_json(const Sample& sample);
ordered_json to_json(const StructuredRecord& record);
ordered_json to_json(const AdaptationExample& example);
ordered_json to_json(const Prediction& prediction);

// `line` is the 1-based JSONL line for error reporting; 0 when not from a file.
Sample sample_from_json(const ordered_json& row, int line = 0);
StructuredRecord record_from_json(const ordered_json& row, int line = 0);
AdaptationExample example_from_json(const ordered_json& row, int line = 0);
Prediction prediction_from_json(const ordered_json& row, int line = 0);

// Whole-file readers: any malformed row rejects the entire file with a
// SchemaError carrying the offending line and field; duplicate sample ids
// raise DuplicateIdError (predictions may repeat ids only as failed rows).
std::vector<Sample> read_samples(const std::string& path);
std::vector<AdaptationExample> read_examples(const std::string& path);
std::vector<Prediction> read_predictions(const std::string& path);

void write_samples(const std::string& path, const std::vector<Sample>& rows);
void write_examples(const std::string& path, const std::vector<AdaptationExample>& rows);
void write_predictions(const std::string& path, const std::vector<Prediction>& rows);

// Parses one JSONL document per non-empty line.
std::vector<ordered_json> read_jsonl(const std::string& path);

std::string read_file(const std::string& path);

// Writes to a sibling temp file, then renames over `path`; readers never see
// a half-written file.
void atomic_write_file(const std::string& path, const std::string& content);

bool file_exists(const std::string& path);

// Output guard: refuses to clobber an existing file unless overwrite is set.
void ensure_writable(const std::string& path, bool overwrite);

}  // namespace cotforge
