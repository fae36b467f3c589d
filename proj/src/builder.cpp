#include "cotforge/builder.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "cotforge/error.hpp"
#include "cotforge/jsonl.hpp"
#include "cotforge/log.hpp"
#include "cotforge/metrics.hpp"

namespace cotforge {

void ConstructionConfig::validate() const {
  llm.validate();
  slm.validate();
  spec.validate();
  if (responses_per_sample < 1) {
    throw Error(ErrorKind::config, "responses_per_sample must be >= 1");
  }
  for (const auto* demos : {&llm_demonstrations, &slm_demonstrations}) {
    if (demos->size() != 0 && demos->size() != 2) {
      throw Error(ErrorKind::config,
                  fmt::format("demonstrations must number 0 or 2, got {}", demos->size()));
    }
  }
}

void ConstructionStats::validate() const {
  if (n_stage1_kept + n_stage2_kept + n_discarded != n_rows) {
    throw Error(ErrorKind::invariant,
                fmt::format("stats do not partition the rows: {} kept + {} recovered + {} "
                            "discarded != {} generated",
                            n_stage1_kept, n_stage2_kept, n_discarded, n_rows));
  }
  if (n_stage2_kept > n_stage2_attempted) {
    throw Error(ErrorKind::invariant, "more rows recovered than attempted");
  }
}

nlohmann::ordered_json ConstructionStats::to_json() const {
  nlohmann::ordered_json doc;
  doc["n_input"] = n_input;
  doc["n_rows"] = n_rows;
  doc["n_stage1_kept"] = n_stage1_kept;
  doc["n_stage2_attempted"] = n_stage2_attempted;
  doc["n_stage2_kept"] = n_stage2_kept;
  doc["n_discarded"] = n_discarded;
  doc["retention"] = retention;
  return doc;
}

std::string ConstructionStats::to_table() const {
  std::string out;
  out += fmt::format("{:<20} {:>10}\n", "stat", "value");
  out += fmt::format("{:<20} {:>10}\n", "input_samples", n_input);
  out += fmt::format("{:<20} {:>10}\n", "generated_rows", n_rows);
  out += fmt::format("{:<20} {:>10}\n", "stage1_kept", n_stage1_kept);
  out += fmt::format("{:<20} {:>10}\n", "stage2_attempted", n_stage2_attempted);
  out += fmt::format("{:<20} {:>10}\n", "stage2_kept", n_stage2_kept);
  out += fmt::format("{:<20} {:>10}\n", "discarded", n_discarded);
  out += fmt::format("{:<20} {:>10.4f}\n", "retention", retention);
  return out;
}

void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& body) {
  if (count == 0) return;
  const int n_threads = static_cast<int>(
      std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, workers))));
  if (n_threads == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(n_threads));
  for (int t = 0; t < n_threads; ++t) {
    pool.emplace_back([&] {
      while (!stop.load()) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          stop.store(true);
          return;
        }
      }
    });
  }
  for (auto& thread : pool) thread.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::string default_freeform_system() {
  return "You are a careful problem solver. Work through the question step by step and state "
         "your final answer at the end.";
}

std::string default_structuring_system(const FormatSpec& spec) {
  return fmt::format(
      "You rewrite a model's answer into a fixed structure. Read the question and the model "
      "response, reason briefly about what the final answer is, then reply in the required "
      "shape.\n\n{}",
      instruction_template(spec));
}

namespace {

constexpr const char* kGenCheckpoint = "generated.jsonl";
constexpr const char* kStage1Checkpoint = "stage1.jsonl";
constexpr const char* kStage2Checkpoint = "stage2.jsonl";

using RowKey = std::pair<std::string, int>;

// Append-only progress files; a torn final line from a crash is ignored on
// reload, complete rows are never re-run.
class Checkpoint {
 public:
  Checkpoint(const std::string& dir, const char* name) {
    if (dir.empty()) return;
    std::filesystem::create_directories(dir);
    path_ = (std::filesystem::path(dir) / name).string();
  }

  bool enabled() const { return !path_.empty(); }

  std::map<RowKey, nlohmann::ordered_json> load(const std::set<RowKey>& expected) const {
    std::map<RowKey, nlohmann::ordered_json> rows;
    if (!enabled() || !file_exists(path_)) return rows;
    std::ifstream in(path_, std::ios::binary);
    std::string text;
    int line = 0;
    while (std::getline(in, text)) {
      ++line;
      if (trim(text).empty()) continue;
      nlohmann::ordered_json doc;
      try {
        doc = nlohmann::ordered_json::parse(text);
      } catch (const nlohmann::json::exception&) {
        // A torn trailing line is the expected crash artifact; anything
        // before the end means the file is corrupt.
        if (in.peek() == std::ifstream::traits_type::eof()) {
          log_event("warn", "checkpoint-torn-line", {{"path", path_}, {"line", line}});
          break;
        }
        throw Error(ErrorKind::data,
                    fmt::format("checkpoint \"{}\" line {} is not valid JSON", path_, line));
      }
      if (!doc.is_object() || !doc.contains("sample_id") || !doc.contains("response_index") ||
          !doc["sample_id"].is_string() || !doc["response_index"].is_number_integer()) {
        throw Error(ErrorKind::data,
                    fmt::format("checkpoint \"{}\" line {} lacks a row key", path_, line));
      }
      RowKey key{doc["sample_id"].get<std::string>(), doc["response_index"].get<int>()};
      if (expected.find(key) == expected.end()) {
        throw Error(ErrorKind::data,
                    fmt::format("checkpoint \"{}\" line {} references unknown row ({}, {}); "
                                "the checkpoint belongs to a different input",
                                path_, line, key.first, key.second));
      }
      rows[key] = std::move(doc);
    }
    return rows;
  }

  void append(const nlohmann::ordered_json& row) {
    if (!enabled()) return;
    std::lock_guard<std::mutex> lock(mutex_);
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) throw Error(ErrorKind::io, fmt::format("cannot append to \"{}\"", path_));
    out << row.dump() << '\n';
    out.flush();
    if (!out) throw Error(ErrorKind::io, fmt::format("failed writing \"{}\"", path_));
  }

 private:
  std::string path_;
  std::mutex mutex_;
};

std::map<std::string, const Sample*> index_samples(const std::vector<Sample>& samples) {
  std::map<std::string, const Sample*> by_id;
  for (const auto& sample : samples) {
    sample.validate();
    if (!by_id.emplace(sample.id, &sample).second) {
      throw DuplicateIdError(sample.id, fmt::format("duplicate sample id \"{}\"", sample.id));
    }
  }
  return by_id;
}

}  // namespace

DatasetBuilder::DatasetBuilder(ConstructionConfig config, std::shared_ptr<ChatBackend> llm_backend,
                               std::shared_ptr<ChatBackend> slm_backend)
    : config_((config.validate(), config)),
      llm_(config.llm, std::move(llm_backend)),
      slm_(config.slm, std::move(slm_backend)) {}

std::vector<GeneratedRow> DatasetBuilder::generate_llm_outputs(
    const std::vector<Sample>& samples) {
  const auto by_id = index_samples(samples);
  const int per_sample = config_.responses_per_sample;

  std::set<RowKey> expected;
  for (const auto& sample : samples) {
    for (int i = 0; i < per_sample; ++i) expected.insert({sample.id, i});
  }
  Checkpoint checkpoint(config_.checkpoint_dir, kGenCheckpoint);
  const auto done = checkpoint.load(expected);

  const PromptRecipe recipe = PromptRecipe::create(
      PromptMode::llm_freeform,
      config_.llm_system.empty() ? default_freeform_system() : config_.llm_system,
      config_.llm_demonstrations);

  std::vector<std::vector<std::string>> outputs(samples.size());
  parallel_for(samples.size(), config_.llm.concurrency_limit, [&](std::size_t i) {
    const Sample& sample = samples[i];
    std::vector<std::string> texts(static_cast<std::size_t>(per_sample));
    bool all_done = true;
    for (int r = 0; r < per_sample; ++r) {
      const auto it = done.find({sample.id, r});
      if (it == done.end()) {
        all_done = false;
        break;
      }
      texts[static_cast<std::size_t>(r)] = it->second.value("llm_output", "");
    }
    if (!all_done) {
      texts = llm_.sample(recipe, sample.question, std::nullopt, per_sample);
      for (int r = 0; r < per_sample; ++r) {
        if (done.find({sample.id, r}) != done.end()) continue;
        checkpoint.append({{"sample_id", sample.id},
                           {"response_index", r},
                           {"llm_output", texts[static_cast<std::size_t>(r)]}});
      }
    }
    outputs[i] = std::move(texts);
  });

  std::vector<GeneratedRow> rows;
  rows.reserve(samples.size() * static_cast<std::size_t>(per_sample));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (int r = 0; r < per_sample; ++r) {
      rows.push_back({samples[i].id, r, outputs[i][static_cast<std::size_t>(r)]});
    }
  }
  log_event("info", "generated-rows", {{"rows", rows.size()}, {"samples", samples.size()}});
  return rows;
}

namespace {

struct PassOutcome {
  bool kept = false;
  std::string reasoning;
  std::optional<std::string> option_label;
};

}  // namespace

// Shared machinery for both structuring passes; the hint is what separates
// them.
static std::pair<std::vector<BuiltRow>, std::vector<GeneratedRow>> structuring_pass(
    const ConstructionConfig& config, Gateway& slm, const std::vector<Sample>& samples,
    const std::vector<GeneratedRow>& rows, bool with_hint, const char* checkpoint_name) {
  const auto by_id = index_samples(samples);
  std::set<RowKey> expected;
  for (const auto& row : rows) {
    if (by_id.find(row.sample_id) == by_id.end()) {
      throw Error(ErrorKind::data,
                  fmt::format("row references unknown sample \"{}\"", row.sample_id));
    }
    if (!expected.insert({row.sample_id, row.response_index}).second) {
      throw DuplicateIdError(row.sample_id,
                             fmt::format("duplicate row ({}, {})", row.sample_id,
                                         row.response_index));
    }
  }
  Checkpoint checkpoint(config.checkpoint_dir, checkpoint_name);
  const auto done = checkpoint.load(expected);

  const std::string system =
      config.slm_system.empty() ? default_structuring_system(config.spec) : config.slm_system;

  std::vector<PassOutcome> outcomes(rows.size());
  parallel_for(rows.size(), config.slm.concurrency_limit, [&](std::size_t i) {
    const GeneratedRow& row = rows[i];
    const Sample& sample = *by_id.at(row.sample_id);
    if (const auto it = done.find({row.sample_id, row.response_index}); it != done.end()) {
      PassOutcome outcome;
      outcome.kept = it->second.value("kept", false);
      outcome.reasoning = it->second.value("reasoning", "");
      if (it->second.contains("option_label") && it->second["option_label"].is_string()) {
        outcome.option_label = it->second["option_label"].get<std::string>();
      }
      outcomes[i] = std::move(outcome);
      return;
    }
    PassOutcome outcome;
    if (!trim(row.llm_output).empty()) {
      const PromptRecipe recipe = PromptRecipe::create(
          PromptMode::slm_analyze, system, config.slm_demonstrations,
          with_hint ? std::optional<std::string>(sample.gold_answer) : std::nullopt);
      const std::string text = slm.sample(recipe, sample.question, row.llm_output, 1).front();
      const ParseReport report = parse(text, config.spec);
      if (report.valid) {
        const StructuredRecord& record = *report.record;
        const std::string& answer_field = sample.task == TaskKind::multiple_choice
                                              ? *record.option_label
                                              : record.answer;
        if (answers_match(answer_field, sample)) {
          outcome.kept = true;
          outcome.reasoning = record.reasoning;
          outcome.option_label = resolve_gold_label(sample);
        }
      }
    }
    nlohmann::ordered_json checkpoint_row{{"sample_id", row.sample_id},
                                          {"response_index", row.response_index},
                                          {"kept", outcome.kept},
                                          {"reasoning", outcome.reasoning}};
    if (outcome.option_label) checkpoint_row["option_label"] = *outcome.option_label;
    checkpoint.append(checkpoint_row);
    outcomes[i] = std::move(outcome);
  });

  std::vector<BuiltRow> kept;
  std::vector<GeneratedRow> rejected;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const GeneratedRow& row = rows[i];
    PassOutcome& outcome = outcomes[i];
    if (!outcome.kept) {
      rejected.push_back(row);
      continue;
    }
    const Sample& sample = *by_id.at(row.sample_id);
    StructuredRecord target =
        StructuredRecord::create(outcome.reasoning, outcome.option_label, sample.gold_answer,
                                 config.spec.kind);
    AdaptationExample example = AdaptationExample::create(
        sample, row.llm_output, std::move(target),
        with_hint ? Provenance::stage2 : Provenance::stage1);
    kept.push_back({row, std::move(example)});
  }
  return {std::move(kept), std::move(rejected)};
}

Stage1Result DatasetBuilder::stage1(const std::vector<Sample>& samples,
                                    const std::vector<GeneratedRow>& rows) {
  auto [kept, rejected] =
      structuring_pass(config_, slm_, samples, rows, /*with_hint=*/false, kStage1Checkpoint);
  log_event("info", "stage1-done", {{"kept", kept.size()}, {"rejected", rejected.size()}});
  return {std::move(kept), std::move(rejected)};
}

Stage2Result DatasetBuilder::stage2(const std::vector<Sample>& samples,
                                    const std::vector<GeneratedRow>& rejected) {
  auto [kept, discarded] =
      structuring_pass(config_, slm_, samples, rejected, /*with_hint=*/true, kStage2Checkpoint);
  log_event("info", "stage2-done", {{"kept", kept.size()}, {"discarded", discarded.size()}});
  return {std::move(kept), std::move(discarded)};
}

BuildResult DatasetBuilder::assemble(std::vector<BuiltRow> kept, std::size_t n_input,
                                     std::size_t n_rows, std::size_t n_stage2_attempted) const {
  std::sort(kept.begin(), kept.end(), [](const BuiltRow& a, const BuiltRow& b) {
    if (a.row.sample_id != b.row.sample_id) return a.row.sample_id < b.row.sample_id;
    return a.row.response_index < b.row.response_index;
  });
  BuildResult result;
  result.stats.n_input = n_input;
  result.stats.n_rows = n_rows;
  result.stats.n_stage2_attempted = n_stage2_attempted;
  for (auto& built : kept) {
    // Every target must survive its own render-parse cycle before it may be
    // written as training data.
    const std::string rendered = render(built.example.target, config_.spec);
    const ParseReport report = parse(rendered, config_.spec);
    if (!report.valid || !(*report.record == built.example.target)) {
      throw Error(ErrorKind::invariant,
                  fmt::format("target for ({}, {}) does not round-trip through its render",
                              built.row.sample_id, built.row.response_index));
    }
    if (built.example.provenance == Provenance::stage1) ++result.stats.n_stage1_kept;
    else ++result.stats.n_stage2_kept;
    result.dataset.push_back(std::move(built.example));
  }
  result.stats.n_discarded = n_rows - result.stats.n_stage1_kept - result.stats.n_stage2_kept;
  result.stats.retention =
      n_rows == 0 ? 0.0
                  : static_cast<double>(result.stats.n_stage1_kept + result.stats.n_stage2_kept) /
                        static_cast<double>(n_rows);
  result.stats.validate();
  return result;
}

BuildResult DatasetBuilder::run(const std::vector<Sample>& samples) {
  if (samples.empty()) {
    log_event("warn", "construction-empty-input", {});
    return assemble({}, 0, 0, 0);
  }
  const std::vector<GeneratedRow> rows = generate_llm_outputs(samples);
  Stage1Result first = stage1(samples, rows);
  Stage2Result second;
  if (config_.keep_stage2) {
    second = stage2(samples, first.rejected);
  } else {
    second.discarded = first.rejected;
  }
  std::vector<BuiltRow> kept = std::move(first.kept);
  for (auto& built : second.kept) kept.push_back(std::move(built));
  return assemble(std::move(kept), samples.size(), rows.size(),
                  config_.keep_stage2 ? first.rejected.size() : 0);
}

}  // namespace cotforge
