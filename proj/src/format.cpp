#include "cotforge/format.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <string_view>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "cotforge/error.hpp"
#include "cotforge/jsonl.hpp"

namespace cotforge {

namespace {

using nlohmann::json;

bool is_name(const std::string& text) {
  if (text.empty()) return false;
  if (std::isalpha(static_cast<unsigned char>(text[0])) == 0 && text[0] != '_') return false;
  return std::all_of(text.begin(), text.end(), [](unsigned char c) {
    return std::isalnum(c) != 0 || c == '_' || c == '-';
  });
}

const std::set<std::string> kCanonicalKeys = {"reasoning", "option", "answer"};

std::string xml_escape(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string xml_unescape(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '&') {
      out.push_back(text[i++]);
      continue;
    }
    std::size_t semi = text.find(';', i);
    if (semi == std::string::npos || semi - i > 10) {
      out.push_back(text[i++]);
      continue;
    }
    const std::string entity = text.substr(i + 1, semi - i - 1);
    if (entity == "amp") out.push_back('&');
    else if (entity == "lt") out.push_back('<');
    else if (entity == "gt") out.push_back('>');
    else if (entity == "quot") out.push_back('"');
    else if (entity == "apos") out.push_back('\'');
    else if (entity.size() > 1 && entity[0] == '#') {
      long code = -1;
      try {
        code = (entity[1] == 'x' || entity[1] == 'X') ? std::stol(entity.substr(2), nullptr, 16)
                                                      : std::stol(entity.substr(1), nullptr, 10);
      } catch (...) {
        code = -1;
      }
      if (code < 0 || code > 0x10FFFF) {
        out.push_back(text[i++]);
        continue;
      }
      // UTF-8 encode.
      unsigned long cp = static_cast<unsigned long>(code);
      if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
      } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
      } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
      } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
      }
    } else {
      out.push_back(text[i]);
      ++i;
      continue;
    }
    i = semi + 1;
  }
  return out;
}

std::string yaml_quote(const std::string& text) {
  std::string out = "\"";
  for (unsigned char c : text) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '"': out += "\\\""; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (c < 0x20) {
          out += fmt::format("\\x{:02x}", c);
        } else {
          out.push_back(static_cast<char>(c));
        }
    }
  }
  out.push_back('"');
  return out;
}

ParseReport fail(ParseFailure failure, std::string detail) {
  ParseReport report;
  report.valid = false;
  report.failure = failure;
  report.detail = std::move(detail);
  return report;
}

// Raw top-level entries of one candidate block. `value` is empty for
// structured (non-scalar) values, which only matters for required keys.
struct RawEntry {
  std::string key;
  std::optional<std::string> value;
};

std::string canonical_key(const std::string& raw, const FormatSpec& spec) {
  auto it = spec.key_aliases.find(raw);
  return it == spec.key_aliases.end() ? raw : it->second;
}

// Shared tail for JSON and YAML: enforce exactly-once keys, string values,
// and non-blank content, then assemble the record.
ParseReport finish(const std::vector<RawEntry>& entries, const FormatSpec& spec) {
  std::set<std::string> seen_raw;
  for (const auto& entry : entries) {
    if (!seen_raw.insert(entry.key).second) {
      return fail(ParseFailure::duplicate_key,
                  fmt::format("key \"{}\" appears more than once", entry.key));
    }
  }
  std::map<std::string, int> counts;
  std::map<std::string, RawEntry> by_canonical;
  for (const auto& entry : entries) {
    const std::string canonical = canonical_key(entry.key, spec);
    counts[canonical] += 1;
    by_canonical[canonical] = entry;
  }
  for (const auto& key : spec.required_keys) {
    if (counts[key] > 1) {
      return fail(ParseFailure::duplicate_key,
                  fmt::format("key \"{}\" appears more than once", key));
    }
  }
  for (const auto& key : spec.required_keys) {
    auto it = by_canonical.find(key);
    if (it == by_canonical.end()) {
      return fail(ParseFailure::missing_key, fmt::format("required key \"{}\" is missing", key));
    }
    if (!it->second.value) {
      return fail(ParseFailure::wrong_nesting,
                  fmt::format("value of \"{}\" must be a string", key));
    }
  }
  std::map<std::string, std::string> values;
  for (const auto& key : spec.required_keys) values[key] = *by_canonical[key].value;
  for (const auto& key : spec.required_keys) {
    if (!trim(values[key]).empty()) continue;
    if (key == "answer") return fail(ParseFailure::empty_answer, "answer value is blank");
    return fail(ParseFailure::missing_key, fmt::format("value of \"{}\" is blank", key));
  }
  std::optional<std::string> option_label;
  if (values.count("option") != 0) option_label = trim(values["option"]);
  ParseReport report;
  report.valid = true;
  report.record = StructuredRecord::create(values["reasoning"], std::move(option_label),
                                           values["answer"], spec.kind);
  return report;
}

// Positions of `<name ...>`/`</name ...>` occurrences; attribute-free tags
// with optional whitespace before '>'. Returns (tag_begin, after_gt) pairs.
std::vector<std::pair<std::size_t, std::size_t>> find_tags(const std::string& text,
                                                           const std::string& name, bool close) {
  const std::string needle = (close ? "</" : "<") + name;
  std::vector<std::pair<std::size_t, std::size_t>> found;
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    std::size_t cursor = pos + needle.size();
    while (cursor < text.size() && (text[cursor] == ' ' || text[cursor] == '\t')) ++cursor;
    if (cursor < text.size() && text[cursor] == '>') {
      found.emplace_back(pos, cursor + 1);
      pos = cursor + 1;
    } else {
      pos += 1;
    }
  }
  return found;
}

ParseReport parse_xml(const std::string& text, const FormatSpec& spec) {
  const auto opens = find_tags(text, spec.root, false);
  const auto closes = find_tags(text, spec.root, true);
  if (opens.empty() || closes.empty()) {
    return fail(ParseFailure::unparseable, fmt::format("no <{}> block found", spec.root));
  }
  if (opens.size() > 1 || closes.size() > 1) {
    return fail(ParseFailure::duplicate_key,
                fmt::format("multiple <{}> candidate blocks", spec.root));
  }
  if (closes[0].first < opens[0].second) {
    return fail(ParseFailure::unparseable, fmt::format("malformed <{}> block", spec.root));
  }
  const std::string content = text.substr(opens[0].second, closes[0].first - opens[0].second);

  struct Span {
    std::string key;
    std::size_t begin = 0;
    std::size_t end = 0;
    std::string value;
  };
  std::vector<Span> spans;
  std::vector<RawEntry> entries;
  for (const auto& key : spec.required_keys) {
    std::vector<std::string> names = {key};
    for (const auto& [alias, canonical] : spec.key_aliases) {
      if (canonical == key) names.push_back(alias);
    }
    std::size_t total_opens = 0;
    std::size_t total_closes = 0;
    std::optional<Span> found;
    for (const auto& name : names) {
      const auto key_opens = find_tags(content, name, false);
      const auto key_closes = find_tags(content, name, true);
      total_opens += key_opens.size();
      total_closes += key_closes.size();
      if (key_opens.size() == 1 && key_closes.size() == 1 &&
          key_closes[0].first >= key_opens[0].second) {
        Span span;
        span.key = key;
        span.begin = key_opens[0].first;
        span.end = key_closes[0].second;
        span.value = xml_unescape(
            content.substr(key_opens[0].second, key_closes[0].first - key_opens[0].second));
        found = std::move(span);
      }
    }
    if (total_opens == 0 && total_closes == 0) {
      return fail(ParseFailure::missing_key, fmt::format("required tag <{}> is missing", key));
    }
    if (total_opens > 1 || total_closes > 1) {
      return fail(ParseFailure::duplicate_key,
                  fmt::format("tag <{}> appears more than once", key));
    }
    if (total_opens != total_closes || !found) {
      return fail(ParseFailure::wrong_nesting, fmt::format("tag <{}> is not balanced", key));
    }
    spans.push_back(*found);
    entries.push_back({key, found->value});
  }
  for (std::size_t i = 0; i < spans.size(); ++i) {
    for (std::size_t j = i + 1; j < spans.size(); ++j) {
      const bool disjoint = spans[i].end <= spans[j].begin || spans[j].end <= spans[i].begin;
      if (!disjoint) {
        return fail(ParseFailure::wrong_nesting,
                    fmt::format("tags <{}> and <{}> overlap", spans[i].key, spans[j].key));
      }
    }
  }
  return finish(entries, spec);
}

struct JsonCandidate {
  json doc;
  bool has_duplicate = false;
};

// Balanced, string-aware scan from `begin` (which must index a '{').
// Returns one past the closing brace, or npos when unbalanced.
std::size_t scan_object(const std::string& text, std::size_t begin) {
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = begin; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}') {
      --depth;
      if (depth == 0) return i + 1;
    }
  }
  return std::string::npos;
}

std::optional<JsonCandidate> try_json_object(const std::string& text) {
  bool has_duplicate = false;
  std::vector<std::set<std::string>> stack;
  json::parser_callback_t callback = [&](int, json::parse_event_t event, json& parsed) {
    if (event == json::parse_event_t::object_start) {
      stack.emplace_back();
    } else if (event == json::parse_event_t::object_end) {
      stack.pop_back();
    } else if (event == json::parse_event_t::key) {
      if (!stack.back().insert(parsed.get<std::string>()).second) has_duplicate = true;
    }
    return true;
  };
  json doc = json::parse(text, callback, false);
  if (doc.is_discarded() || !doc.is_object()) return std::nullopt;
  return JsonCandidate{std::move(doc), has_duplicate};
}

ParseReport parse_json(const std::string& text, const FormatSpec& spec) {
  std::vector<JsonCandidate> candidates;
  std::size_t pos = 0;
  while ((pos = text.find('{', pos)) != std::string::npos) {
    const std::size_t end = scan_object(text, pos);
    if (end == std::string::npos) {
      ++pos;
      continue;
    }
    auto candidate = try_json_object(text.substr(pos, end - pos));
    if (candidate) {
      candidates.push_back(std::move(*candidate));
      pos = end;
    } else {
      ++pos;
    }
  }
  if (candidates.empty()) return fail(ParseFailure::unparseable, "no JSON object found");
  if (candidates.size() > 1) {
    return fail(ParseFailure::duplicate_key, "multiple JSON candidate blocks");
  }
  if (candidates[0].has_duplicate) {
    return fail(ParseFailure::duplicate_key, "duplicate key inside JSON object");
  }
  std::vector<RawEntry> entries;
  for (const auto& item : candidates[0].doc.items()) {
    RawEntry entry;
    entry.key = item.key();
    if (item.value().is_string()) entry.value = item.value().get<std::string>();
    entries.push_back(std::move(entry));
  }
  return finish(entries, spec);
}

bool node_mentions_contract(const YAML::Node& node, const FormatSpec& spec) {
  for (const auto& pair : node) {
    if (!pair.first.IsScalar()) continue;
    const std::string canonical = canonical_key(pair.first.as<std::string>(), spec);
    if (std::find(spec.required_keys.begin(), spec.required_keys.end(), canonical) !=
        spec.required_keys.end()) {
      return true;
    }
  }
  return false;
}

// Candidate texts: fenced code blocks when present, otherwise the whole text
// (YAML has no bracket anchor, so fences are the only prose separator).
std::vector<std::string> yaml_candidate_texts(const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = text.find("```", pos)) != std::string::npos) {
    std::size_t body = text.find('\n', pos + 3);
    if (body == std::string::npos) break;
    ++body;
    const std::size_t close = text.find("```", body);
    if (close == std::string::npos) break;
    out.push_back(text.substr(body, close - body));
    pos = close + 3;
  }
  if (out.empty()) out.push_back(text);
  return out;
}

// yaml-cpp 0.7 exhausts memory when a document's first content token is a
// flow entry: the root-level parser never consumes the comma. Comments,
// directives, document markers, tags, and anchors may all precede that token,
// so this walks line tokens until the first real node. A document can never
// legally open with ",", so rejecting the text early only changes how it
// fails, not whether.
bool flow_entry_opens_document(const std::string& text) {
  bool doc_start = true;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t line_end = text.find('\n', pos);
    if (line_end == std::string::npos) line_end = text.size();
    const std::string_view line(text.data() + pos, line_end - pos);
    const auto column0_marker = [&](std::string_view marker) {
      return line.substr(0, 3) == marker &&
             (line.size() == 3 || line[3] == ' ' || line[3] == '\t');
    };
    std::size_t cursor = 0;
    if (column0_marker("---") || column0_marker("...")) {
      doc_start = true;
      cursor = 3;
    }
    while (cursor < line.size() && doc_start) {
      while (cursor < line.size() && (line[cursor] == ' ' || line[cursor] == '\t')) ++cursor;
      if (cursor >= line.size()) break;
      const char head = line[cursor];
      if (head == '#') break;                 // comment runs to end of line
      if (head == ',') return true;           // the pathological token
      if (head == '%' && cursor == 0) break;  // directive line
      if (head == '&' || head == '!') {       // node property; root still pending
        while (cursor < line.size() && line[cursor] != ' ' && line[cursor] != '\t') ++cursor;
        continue;
      }
      doc_start = false;
    }
    pos = line_end + 1;
  }
  return false;
}

ParseReport parse_yaml(const std::string& text, const FormatSpec& spec) {
  std::vector<YAML::Node> maps;
  bool any_parse = false;
  for (const auto& candidate : yaml_candidate_texts(text)) {
    if (flow_entry_opens_document(candidate)) continue;
    std::vector<YAML::Node> docs;
    try {
      docs = YAML::LoadAll(candidate);
    } catch (const YAML::Exception&) {
      continue;
    }
    any_parse = true;
    for (const auto& doc : docs) {
      if (doc.IsMap() && node_mentions_contract(doc, spec)) maps.push_back(doc);
    }
  }
  if (maps.empty()) {
    return fail(ParseFailure::unparseable,
                any_parse ? "no YAML mapping with the expected keys found"
                          : "text is not parseable as YAML");
  }
  if (maps.size() > 1) return fail(ParseFailure::duplicate_key, "multiple YAML candidate blocks");
  std::vector<RawEntry> entries;
  for (const auto& pair : maps[0]) {
    if (!pair.first.IsScalar()) {
      return fail(ParseFailure::wrong_nesting, "YAML mapping has a non-scalar key");
    }
    RawEntry entry;
    entry.key = pair.first.as<std::string>();
    if (pair.second.IsScalar()) {
      entry.value = pair.second.as<std::string>();
    } else if (pair.second.IsNull()) {
      entry.value = std::string{};
    }
    entries.push_back(std::move(entry));
  }
  return finish(entries, spec);
}

std::string placeholder_for(const std::string& key, TaskKind task) {
  if (key == "reasoning") return "your step-by-step reasoning";
  if (key == "option") return "the letter of the selected option";
  if (task == TaskKind::multiple_choice) return "the text of the selected option";
  return "the final answer";
}

}  // namespace

const char* to_string(ParseFailure failure) {
  switch (failure) {
    case ParseFailure::unparseable: return "unparseable";
    case ParseFailure::missing_key: return "missing-key";
    case ParseFailure::wrong_nesting: return "wrong-nesting";
    case ParseFailure::duplicate_key: return "duplicate-key";
    case ParseFailure::empty_answer: return "empty-answer";
  }
  return "unknown";
}

void FormatSpec::validate() const {
  if (!is_name(root)) {
    throw Error(ErrorKind::invariant, fmt::format("invalid root element name \"{}\"", root));
  }
  if (required_keys.empty()) {
    throw Error(ErrorKind::invariant, "required_keys must be non-empty");
  }
  std::set<std::string> seen;
  for (const auto& key : required_keys) {
    if (kCanonicalKeys.find(key) == kCanonicalKeys.end()) {
      throw Error(ErrorKind::invariant,
                  fmt::format("required key \"{}\" is not one of reasoning/option/answer", key));
    }
    if (!seen.insert(key).second) {
      throw Error(ErrorKind::invariant, fmt::format("required key \"{}\" repeats", key));
    }
  }
  if (seen.find("reasoning") == seen.end() || seen.find("answer") == seen.end()) {
    throw Error(ErrorKind::invariant, "required_keys must include reasoning and answer");
  }
  const bool has_option = seen.find("option") != seen.end();
  if ((task == TaskKind::multiple_choice) != has_option) {
    throw Error(ErrorKind::invariant,
                "required_keys must include \"option\" exactly for multiple-choice tasks");
  }
  for (const auto& [alias, canonical] : key_aliases) {
    if (!is_name(alias)) {
      throw Error(ErrorKind::invariant, fmt::format("invalid alias \"{}\"", alias));
    }
    if (seen.find(alias) != seen.end()) {
      throw Error(ErrorKind::invariant,
                  fmt::format("alias \"{}\" shadows a required key", alias));
    }
    if (seen.find(canonical) == seen.end()) {
      throw Error(ErrorKind::invariant,
                  fmt::format("alias \"{}\" maps to unknown key \"{}\"", alias, canonical));
    }
  }
}

FormatSpec default_spec(TaskKind task, FormatKind kind) {
  FormatSpec spec;
  spec.kind = kind;
  spec.task = task;
  spec.root = "response";
  if (task == TaskKind::multiple_choice) {
    spec.required_keys = {"reasoning", "option", "answer"};
  } else {
    spec.required_keys = {"reasoning", "answer"};
  }
  spec.validate();
  return spec;
}

FormatSpec FormatSpec::from_json(const nlohmann::ordered_json& doc) {
  if (!doc.is_object()) throw Error(ErrorKind::schema, "format spec must be a JSON object");
  const std::set<std::string> allowed = {"kind", "task", "root", "required_keys", "key_aliases"};
  for (const auto& item : doc.items()) {
    if (allowed.find(item.key()) == allowed.end()) {
      throw Error(ErrorKind::schema,
                  fmt::format("unknown field \"{}\" in format spec", item.key()));
    }
  }
  auto require_str = [&](const char* key) {
    if (!doc.contains(key) || !doc[key].is_string()) {
      throw Error(ErrorKind::schema,
                  fmt::format("format spec field \"{}\" must be a string", key));
    }
    return doc[key].get<std::string>();
  };
  FormatSpec spec;
  spec.kind = format_kind_from_string(require_str("kind"));
  spec.task = task_kind_from_string(require_str("task"));
  spec.root = doc.contains("root") ? require_str("root") : std::string("response");
  if (doc.contains("required_keys")) {
    if (!doc["required_keys"].is_array()) {
      throw Error(ErrorKind::schema, "format spec field \"required_keys\" must be an array");
    }
    for (const auto& key : doc["required_keys"]) {
      if (!key.is_string()) {
        throw Error(ErrorKind::schema, "format spec required_keys entries must be strings");
      }
      spec.required_keys.push_back(key.get<std::string>());
    }
  } else {
    spec.required_keys = default_spec(spec.task, spec.kind).required_keys;
  }
  if (doc.contains("key_aliases")) {
    if (!doc["key_aliases"].is_object()) {
      throw Error(ErrorKind::schema, "format spec field \"key_aliases\" must be an object");
    }
    for (const auto& item : doc["key_aliases"].items()) {
      if (!item.value().is_string()) {
        throw Error(ErrorKind::schema, "format spec key_aliases values must be strings");
      }
      spec.key_aliases[item.key()] = item.value().get<std::string>();
    }
  }
  try {
    spec.validate();
  } catch (const Error& err) {
    throw Error(ErrorKind::schema, err.what());
  }
  return spec;
}

nlohmann::ordered_json FormatSpec::to_json() const {
  nlohmann::ordered_json doc;
  doc["kind"] = cotforge::to_string(kind);
  doc["task"] = cotforge::to_string(task);
  doc["root"] = root;
  doc["required_keys"] = required_keys;
  if (!key_aliases.empty()) {
    nlohmann::ordered_json aliases;
    for (const auto& [alias, canonical] : key_aliases) aliases[alias] = canonical;
    doc["key_aliases"] = std::move(aliases);
  }
  return doc;
}

FormatSpec load_spec(const std::string& path) {
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(read_file(path));
  } catch (const nlohmann::json::exception& err) {
    throw Error(ErrorKind::schema,
                fmt::format("template spec \"{}\" is not valid JSON: {}", path, err.what()));
  }
  return FormatSpec::from_json(doc);
}

std::string render(const StructuredRecord& record, const FormatSpec& spec) {
  spec.validate();
  if (record.format_kind != spec.kind) {
    throw Error(ErrorKind::spec_mismatch,
                fmt::format("record carries format \"{}\" but spec expects \"{}\"",
                            cotforge::to_string(record.format_kind),
                            cotforge::to_string(spec.kind)));
  }
  const bool wants_option =
      std::find(spec.required_keys.begin(), spec.required_keys.end(), "option") !=
      spec.required_keys.end();
  if (wants_option && !record.option_label) {
    throw Error(ErrorKind::spec_mismatch, "spec requires an option label but record has none");
  }
  if (!wants_option && record.option_label) {
    throw Error(ErrorKind::spec_mismatch, "record carries an option label the format spec cannot hold");
  }
  auto value_for = [&](const std::string& key) -> const std::string& {
    if (key == "reasoning") return record.reasoning;
    if (key == "option") return *record.option_label;
    return record.answer;
  };
  switch (spec.kind) {
    case FormatKind::xml: {
      std::string out = fmt::format("<{}>\n", spec.root);
      for (const auto& key : spec.required_keys) {
        out += fmt::format("<{}>{}</{}>\n", key, xml_escape(value_for(key)), key);
      }
      out += fmt::format("</{}>", spec.root);
      return out;
    }
    case FormatKind::json: {
      nlohmann::ordered_json doc;
      for (const auto& key : spec.required_keys) doc[key] = value_for(key);
      return doc.dump(2);
    }
    case FormatKind::yaml: {
      std::vector<std::string> lines;
      for (const auto& key : spec.required_keys) {
        lines.push_back(fmt::format("{}: {}", key, yaml_quote(value_for(key))));
      }
      return fmt::format("{}", fmt::join(lines, "\n"));
    }
  }
  throw Error(ErrorKind::invariant, "unreachable format kind");
}

ParseReport parse(const std::string& text, const FormatSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case FormatKind::xml: return parse_xml(text, spec);
    case FormatKind::json: return parse_json(text, spec);
    case FormatKind::yaml: return parse_yaml(text, spec);
  }
  throw Error(ErrorKind::invariant, "unreachable format kind");
}

std::string instruction_template(const FormatSpec& spec) {
  spec.validate();
  std::string skeleton;
  switch (spec.kind) {
    case FormatKind::xml: {
      skeleton = fmt::format("<{}>\n", spec.root);
      for (const auto& key : spec.required_keys) {
        skeleton += fmt::format("<{}>{}</{}>\n", key, placeholder_for(key, spec.task), key);
      }
      skeleton += fmt::format("</{}>", spec.root);
      return fmt::format(
          "Respond with exactly one XML block of this shape and no other text:\n{}", skeleton);
    }
    case FormatKind::json: {
      nlohmann::ordered_json doc;
      for (const auto& key : spec.required_keys) doc[key] = placeholder_for(key, spec.task);
      return fmt::format(
          "Respond with exactly one JSON object of this shape and no other text:\n{}",
          doc.dump(2));
    }
    case FormatKind::yaml: {
      std::vector<std::string> lines;
      for (const auto& key : spec.required_keys) {
        lines.push_back(fmt::format("{}: {}", key, yaml_quote(placeholder_for(key, spec.task))));
      }
      return fmt::format(
          "Respond with exactly one YAML mapping of this shape and no other text:\n{}",
          fmt::join(lines, "\n"));
    }
  }
  throw Error(ErrorKind::invariant, "unreachable format kind");
}

}  // namespace cotforge
