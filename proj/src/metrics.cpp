#include "cotforge/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "cotforge/error.hpp"

namespace cotforge {

namespace {

std::string to_lower(const std::string& text) {
  std::string out = text;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// Balanced-brace body following `prefix` (e.g. "\\boxed{"); innermost-last
// occurrence wins. Returns nullopt when absent or unbalanced.
std::optional<std::string> last_braced_body(const std::string& text, const std::string& prefix) {
  std::size_t best = std::string::npos;
  std::size_t pos = 0;
  while ((pos = text.find(prefix, pos)) != std::string::npos) {
    best = pos;
    pos += prefix.size();
  }
  if (best == std::string::npos) return std::nullopt;
  int depth = 1;
  const std::size_t body = best + prefix.size();
  for (std::size_t i = body; i < text.size(); ++i) {
    if (text[i] == '{') ++depth;
    else if (text[i] == '}') {
      --depth;
      if (depth == 0) return text.substr(body, i - body);
    }
  }
  return std::nullopt;
}

// "\\frac{a}{b}" (or \dfrac) as the whole value becomes "a/b".
std::string unwrap_fraction_macro(const std::string& text) {
  for (const char* macro : {"\\dfrac{", "\\frac{"}) {
    const std::string prefix(macro);
    if (text.rfind(prefix, 0) != 0) continue;
    int depth = 1;
    std::size_t i = prefix.size();
    std::size_t split = std::string::npos;
    for (; i < text.size(); ++i) {
      if (text[i] == '{') ++depth;
      else if (text[i] == '}') {
        --depth;
        if (depth == 0) {
          split = i;
          break;
        }
      }
    }
    if (split == std::string::npos || split + 1 >= text.size() || text[split + 1] != '{') continue;
    if (text.back() != '}') continue;
    const std::string numerator = text.substr(prefix.size(), split - prefix.size());
    const std::string denominator = text.substr(split + 2, text.size() - split - 3);
    return numerator + "/" + denominator;
  }
  return text;
}

std::string strip_math_wrappers(std::string s) {
  s = trim(s);
  if (auto boxed = last_braced_body(s, "\\boxed{")) s = trim(*boxed);
  if (s.size() >= 2 && s.front() == '$' && s.back() == '$') s = trim(s.substr(1, s.size() - 2));
  if (!s.empty() && s.front() == '$') s = trim(s.substr(1));
  if (!s.empty() && s.back() == '$') s = trim(s.substr(0, s.size() - 1));
  if (auto text_macro = last_braced_body(s, "\\text{"); text_macro && s.rfind("\\text{", 0) == 0) {
    // Answers sometimes arrive fully wrapped in \text{...}.
    if (s.size() == 7 + text_macro->size()) s = trim(*text_macro);
  }
  s = unwrap_fraction_macro(s);
  return s;
}

// A comma is a thousands separator only when exactly three digits follow it
// before the next non-digit; "1,234" loses the comma, "2,5" keeps it.
std::string drop_digit_group_commas(const std::string& s) {
  const auto is_digit = [&](std::size_t i) {
    return i < s.size() && std::isdigit(static_cast<unsigned char>(s[i])) != 0;
  };
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool grouped = s[i] == ',' && i > 0 && is_digit(i - 1) && is_digit(i + 1) &&
                         is_digit(i + 2) && is_digit(i + 3) && !is_digit(i + 4);
    if (!grouped) out.push_back(s[i]);
  }
  return out;
}

std::string strip_trailing_punct(std::string s) {
  const std::string punct = ".,;:!?";
  while (!s.empty() && punct.find(s.back()) != std::string::npos) s.pop_back();
  return trim(s);
}

struct Rational {
  std::int64_t numerator = 0;
  std::int64_t denominator = 1;
};

std::optional<std::int64_t> parse_digits(const std::string& s) {
  if (s.empty() || s.size() > 18) return std::nullopt;
  if (!std::all_of(s.begin(), s.end(),
                   [](unsigned char c) { return std::isdigit(c) != 0; })) {
    return std::nullopt;
  }
  std::int64_t value = 0;
  for (char c : s) value = value * 10 + (c - '0');
  return value;
}

Rational reduce(Rational r) {
  if (r.numerator == 0) return {0, 1};
  const std::int64_t g = std::gcd(r.numerator < 0 ? -r.numerator : r.numerator, r.denominator);
  return {r.numerator / g, r.denominator / g};
}

// Integer, finite decimal, or simple fraction; nullopt for anything else.
std::optional<Rational> parse_rational(std::string s) {
  bool negative = false;
  if (!s.empty() && (s[0] == '+' || s[0] == '-')) {
    negative = s[0] == '-';
    s = trim(s.substr(1));
  }
  if (s.empty()) return std::nullopt;

  if (const auto slash = s.find('/'); slash != std::string::npos) {
    const auto numerator = parse_digits(trim(s.substr(0, slash)));
    const auto denominator = parse_digits(trim(s.substr(slash + 1)));
    if (!numerator || !denominator || *denominator == 0) return std::nullopt;
    return reduce({negative ? -*numerator : *numerator, *denominator});
  }
  if (const auto dot = s.find('.'); dot != std::string::npos) {
    const std::string whole_part = s.substr(0, dot);
    const std::string frac_part = s.substr(dot + 1);
    if (whole_part.empty() && frac_part.empty()) return std::nullopt;
    const auto whole = whole_part.empty() ? std::optional<std::int64_t>(0)
                                          : parse_digits(whole_part);
    const auto frac = frac_part.empty() ? std::optional<std::int64_t>(0)
                                        : parse_digits(frac_part);
    if (!whole || !frac || frac_part.size() > 15) return std::nullopt;
    std::int64_t scale = 1;
    for (std::size_t i = 0; i < frac_part.size(); ++i) scale *= 10;
    if (*whole > (std::numeric_limits<std::int64_t>::max() - *frac) / scale) return std::nullopt;
    const std::int64_t numerator = *whole * scale + *frac;
    return reduce({negative ? -numerator : numerator, scale});
  }
  const auto whole = parse_digits(s);
  if (!whole) return std::nullopt;
  return Rational{negative ? -*whole : *whole, 1};
}

std::string canonicalize_numeric(const std::string& raw) {
  std::string s = strip_math_wrappers(raw);
  s = drop_digit_group_commas(s);
  s = strip_trailing_punct(s);
  if (!s.empty() && s.back() == '%') s = trim(s.substr(0, s.size() - 1));
  if (const auto rational = parse_rational(s)) {
    if (rational->denominator == 1) return fmt::format("{}", rational->numerator);
    return fmt::format("{}/{}", rational->numerator, rational->denominator);
  }
  return to_lower(normalize_whitespace(s));
}

std::string canonicalize_boolean(const std::string& raw) {
  std::string s = to_lower(strip_trailing_punct(strip_math_wrappers(raw)));
  if (s == "yes" || s == "true" || s == "y") return "true";
  if (s == "no" || s == "false" || s == "n") return "false";
  return to_lower(normalize_whitespace(s));
}

std::string canonicalize_choice(const std::string& raw) {
  std::string s = strip_math_wrappers(raw);
  std::string stripped;
  for (char c : s) {
    if (std::string("()[]{}<> .,:;!?*'\"").find(c) == std::string::npos) stripped.push_back(c);
  }
  if (stripped.size() == 1 && std::isalpha(static_cast<unsigned char>(stripped[0])) != 0) {
    return std::string(1, static_cast<char>(std::toupper(static_cast<unsigned char>(stripped[0]))));
  }
  if (stripped.size() == 7 && to_lower(stripped.substr(0, 6)) == "option" &&
      std::isalpha(static_cast<unsigned char>(stripped[6])) != 0) {
    return std::string(1, static_cast<char>(std::toupper(static_cast<unsigned char>(stripped[6]))));
  }
  return normalize_whitespace(s);
}

std::optional<std::string> last_group_match(const std::string& text, const std::regex& pattern) {
  std::optional<std::string> last;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), pattern);
       it != std::sregex_iterator(); ++it) {
    if (it->size() > 1 && (*it)[1].matched) last = (*it)[1].str();
  }
  return last;
}

}  // namespace

std::string canonicalize_answer(const std::string& raw, TaskKind task) {
  switch (task) {
    case TaskKind::numeric_qa: return canonicalize_numeric(raw);
    case TaskKind::boolean_qa: return canonicalize_boolean(raw);
    case TaskKind::multiple_choice: return canonicalize_choice(raw);
  }
  return normalize_whitespace(raw);
}

bool answers_match(const std::string& raw, const Sample& sample) {
  const std::string canonical = canonicalize_answer(raw, sample.task);
  if (canonical.empty()) return false;
  if (sample.task != TaskKind::multiple_choice) {
    return canonical == canonicalize_answer(sample.gold_answer, sample.task);
  }
  const auto gold_label = resolve_gold_label(sample);
  if (!gold_label) return false;
  if (canonical.size() == 1) return canonical == *gold_label;
  // The raw answer may be the option text rather than its label.
  for (const auto& option : sample.options) {
    if (normalize_whitespace(option.text) == normalize_whitespace(raw)) {
      return option.label == *gold_label;
    }
  }
  return false;
}

EvalOutcome judge(const std::string& output_text, const Sample& sample, const FormatSpec& spec) {
  sample.validate();
  EvalOutcome outcome;
  outcome.sample_id = sample.id;
  const ParseReport report = parse(output_text, spec);
  if (!report.valid) {
    outcome.validate();
    return outcome;
  }
  outcome.format_valid = true;
  const StructuredRecord& record = *report.record;
  if (sample.task == TaskKind::multiple_choice) {
    const std::string label = canonicalize_answer(*record.option_label, sample.task);
    outcome.extracted_answer = label;
    const auto gold_label = resolve_gold_label(sample);
    outcome.content_correct = gold_label.has_value() && label == *gold_label;
    for (const auto& option : sample.options) {
      if (option.label == label) {
        outcome.label_text_conflict =
            normalize_whitespace(option.text) != normalize_whitespace(record.answer);
      }
    }
  } else {
    const std::string canonical = canonicalize_answer(record.answer, sample.task);
    outcome.extracted_answer = canonical;
    outcome.content_correct =
        !canonical.empty() && canonical == canonicalize_answer(sample.gold_answer, sample.task);
  }
  outcome.validate();
  return outcome;
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json doc;
  doc["n"] = n;
  doc["format_accuracy"] = format_accuracy;
  doc["content_accuracy"] = content_accuracy;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& outcome : per_sample) {
    nlohmann::ordered_json row;
    row["sample_id"] = outcome.sample_id;
    row["format_valid"] = outcome.format_valid;
    if (outcome.extracted_answer) row["extracted_answer"] = *outcome.extracted_answer;
    else row["extracted_answer"] = nullptr;
    row["content_correct"] = outcome.content_correct;
    row["label_text_conflict"] = outcome.label_text_conflict;
    rows.push_back(std::move(row));
  }
  doc["per_sample"] = std::move(rows);
  return doc;
}

std::string EvalReport::to_table() const {
  std::string out;
  out += fmt::format("{:<18} {:>10}\n", "metric", "value");
  out += fmt::format("{:<18} {:>10}\n", "samples", n);
  out += fmt::format("{:<18} {:>10.4f}\n", "format_accuracy", format_accuracy);
  out += fmt::format("{:<18} {:>10.4f}\n", "content_accuracy", content_accuracy);
  return out;
}

namespace {

EvalReport finish_report(std::vector<EvalOutcome> outcomes) {
  EvalReport report;
  report.n = outcomes.size();
  std::size_t n_valid = 0;
  std::size_t n_correct = 0;
  for (const auto& outcome : outcomes) {
    outcome.validate();
    n_valid += outcome.format_valid ? 1 : 0;
    n_correct += outcome.content_correct ? 1 : 0;
  }
  report.format_accuracy = static_cast<double>(n_valid) / static_cast<double>(report.n);
  report.content_accuracy = static_cast<double>(n_correct) / static_cast<double>(report.n);
  report.per_sample = std::move(outcomes);
  return report;
}

}  // namespace

EvalReport evaluate(const std::vector<std::pair<Sample, std::string>>& outputs,
                    const FormatSpec& spec) {
  if (outputs.empty()) throw Error(ErrorKind::data, "nothing to evaluate: no outputs given");
  std::set<std::string> seen;
  std::vector<EvalOutcome> outcomes;
  outcomes.reserve(outputs.size());
  for (const auto& [sample, text] : outputs) {
    if (!seen.insert(sample.id).second) {
      throw DuplicateIdError(sample.id,
                             fmt::format("duplicate sample id \"{}\" in evaluation", sample.id));
    }
    outcomes.push_back(judge(text, sample, spec));
  }
  return finish_report(std::move(outcomes));
}

EvalReport evaluate(const std::vector<Sample>& samples,
                    const std::vector<Prediction>& predictions, const FormatSpec& spec) {
  if (samples.empty()) throw Error(ErrorKind::data, "nothing to evaluate: no samples given");
  std::set<std::string> sample_ids;
  for (const auto& sample : samples) sample_ids.insert(sample.id);
  std::map<std::string, const Prediction*> by_id;
  for (const auto& prediction : predictions) {
    if (sample_ids.find(prediction.sample_id) == sample_ids.end()) {
      throw Error(ErrorKind::data,
                  fmt::format("prediction id \"{}\" does not match any sample",
                              prediction.sample_id));
    }
    if (!by_id.emplace(prediction.sample_id, &prediction).second) {
      throw DuplicateIdError(prediction.sample_id,
                             fmt::format("duplicate prediction id \"{}\"", prediction.sample_id));
    }
  }
  std::vector<EvalOutcome> outcomes;
  outcomes.reserve(samples.size());
  for (const auto& sample : samples) {
    const auto it = by_id.find(sample.id);
    if (it == by_id.end() || it->second->failed) {
      // Absent or failed rows still occupy the denominator.
      EvalOutcome outcome;
      outcome.sample_id = sample.id;
      outcomes.push_back(std::move(outcome));
      continue;
    }
    outcomes.push_back(judge(it->second->structured_text, sample, spec));
  }
  return finish_report(std::move(outcomes));
}

nlohmann::ordered_json ConsistencyReport::to_json() const {
  nlohmann::ordered_json doc;
  doc["n"] = n;
  doc["n_kept_correct"] = n_kept_correct;
  doc["n_gained"] = n_gained;
  doc["n_lost"] = n_lost;
  doc["n_kept_wrong"] = n_kept_wrong;
  doc["kept_correct_rate"] = kept_correct_rate;
  doc["gained_rate"] = gained_rate;
  doc["lost_rate"] = lost_rate;
  doc["kept_wrong_rate"] = kept_wrong_rate;
  return doc;
}

std::string ConsistencyReport::to_table() const {
  std::string out;
  out += fmt::format("{:<20} {:>8} {:>10}\n", "transition", "count", "rate");
  out += fmt::format("{:<20} {:>8} {:>10.4f}\n", "kept_correct", n_kept_correct,
                     kept_correct_rate);
  out += fmt::format("{:<20} {:>8} {:>10.4f}\n", "gained", n_gained, gained_rate);
  out += fmt::format("{:<20} {:>8} {:>10.4f}\n", "lost", n_lost, lost_rate);
  out += fmt::format("{:<20} {:>8} {:>10.4f}\n", "kept_wrong", n_kept_wrong, kept_wrong_rate);
  return out;
}

ConsistencyReport consistency_report(const std::vector<bool>& correct_before,
                                     const std::vector<bool>& correct_after) {
  if (correct_before.size() != correct_after.size()) {
    throw Error(ErrorKind::length_mismatch,
                fmt::format("paired correctness lists differ in length: {} vs {}",
                            correct_before.size(), correct_after.size()));
  }
  if (correct_before.empty()) {
    throw Error(ErrorKind::data, "consistency report needs at least one pair");
  }
  ConsistencyReport report;
  report.n = correct_before.size();
  for (std::size_t i = 0; i < correct_before.size(); ++i) {
    const bool before = correct_before[i];
    const bool after = correct_after[i];
    if (before && after) ++report.n_kept_correct;
    else if (!before && after) ++report.n_gained;
    else if (before && !after) ++report.n_lost;
    else ++report.n_kept_wrong;
  }
  const auto rate = [&](std::size_t count) {
    return static_cast<double>(count) / static_cast<double>(report.n);
  };
  report.kept_correct_rate = rate(report.n_kept_correct);
  report.gained_rate = rate(report.n_gained);
  report.lost_rate = rate(report.n_lost);
  report.kept_wrong_rate = rate(report.n_kept_wrong);
  return report;
}

FreeformExtractor::FreeformExtractor() = default;

FreeformExtractor::FreeformExtractor(const std::vector<std::string>& patterns) : custom_(true) {
  if (patterns.empty()) {
    throw Error(ErrorKind::config, "custom extractor needs at least one pattern");
  }
  for (const auto& source : patterns) {
    try {
      patterns_.emplace_back(source, std::regex::ECMAScript | std::regex::icase);
    } catch (const std::regex_error& err) {
      throw Error(ErrorKind::config,
                  fmt::format("invalid extractor pattern \"{}\": {}", source, err.what()));
    }
  }
}

std::optional<std::string> FreeformExtractor::extract(const std::string& text,
                                                      TaskKind task) const {
  if (custom_) {
    for (const auto& pattern : patterns_) {
      if (auto match = last_group_match(text, pattern)) return trim(*match);
    }
    return std::nullopt;
  }
  static const std::regex hash_marker(R"(####\s*([^\n]+))", std::regex::ECMAScript);
  if (auto match = last_group_match(text, hash_marker)) return trim(*match);
  if (auto boxed = last_braced_body(text, "\\boxed{")) return trim(*boxed);
  static const std::regex verbal(
      R"((?:final answer|answer|result)\s*(?:is|:|=|was)\s*([^\n]+))",
      std::regex::ECMAScript | std::regex::icase);
  if (auto match = last_group_match(text, verbal)) return strip_trailing_punct(trim(*match));
  switch (task) {
    case TaskKind::numeric_qa: {
      static const std::regex number(
          R"(([-+]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?(?:\s*/\s*\d+)?))",
          std::regex::ECMAScript);
      if (auto match = last_group_match(text, number)) return trim(*match);
      break;
    }
    case TaskKind::boolean_qa: {
      static const std::regex word(R"(\b(yes|no|true|false)\b)",
                                   std::regex::ECMAScript | std::regex::icase);
      if (auto match = last_group_match(text, word)) return trim(*match);
      break;
    }
    case TaskKind::multiple_choice: {
      static const std::regex letter(R"((?:^|[\s(\[])([A-Ea-e])(?:[)\].,:;!?]|\s|$))",
                                     std::regex::ECMAScript);
      if (auto match = last_group_match(text, letter)) return trim(*match);
      break;
    }
  }
  return std::nullopt;
}

bool FreeformExtractor::correct(const std::string& text, const Sample& sample) const {
  const auto extracted = extract(text, sample.task);
  return extracted.has_value() && answers_match(*extracted, sample);
}

}  // namespace cotforge
