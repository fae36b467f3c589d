#include "cotforge/cli.hpp"

#include <chrono>
#include <cstdio>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "cotforge/error.hpp"
#include "cotforge/jsonl.hpp"
#include "cotforge/log.hpp"
#include "cotforge/metrics.hpp"
#include "cotforge/signals.hpp"

namespace cotforge {

namespace {

using nlohmann::ordered_json;

[[noreturn]] void config_error(const std::string& message) {
  throw Error(ErrorKind::config, message);
}

void check_section_keys(const ordered_json& section, const std::set<std::string>& allowed,
                        const std::string& where) {
  if (!section.is_object()) config_error(fmt::format("config section \"{}\" must be an object", where));
  for (const auto& item : section.items()) {
    if (allowed.find(item.key()) == allowed.end()) {
      config_error(fmt::format("unknown config key \"{}\" in {}", item.key(), where));
    }
  }
}

std::string get_string(const ordered_json& section, const char* key, const std::string& where) {
  if (!section[key].is_string()) {
    config_error(fmt::format("config key \"{}\" in {} must be a string", key, where));
  }
  return section[key].get<std::string>();
}

long get_integer(const ordered_json& section, const char* key, const std::string& where) {
  if (!section[key].is_number_integer()) {
    config_error(fmt::format("config key \"{}\" in {} must be an integer", key, where));
  }
  return section[key].get<long>();
}

double get_number(const ordered_json& section, const char* key, const std::string& where) {
  if (!section[key].is_number()) {
    config_error(fmt::format("config key \"{}\" in {} must be a number", key, where));
  }
  return section[key].get<double>();
}

bool get_boolean(const ordered_json& section, const char* key, const std::string& where) {
  if (!section[key].is_boolean()) {
    config_error(fmt::format("config key \"{}\" in {} must be a boolean", key, where));
  }
  return section[key].get<bool>();
}

BackendConfig parse_backend(const ordered_json& section, const std::string& where) {
  check_section_keys(section,
                     {"base_url", "model_name", "api_key_env_var", "temperature", "max_tokens",
                      "n_samples", "timeout_ms", "max_retries", "concurrency_limit",
                      "retry_backoff_ms"},
                     where);
  BackendConfig backend;
  if (!section.contains("base_url") || !section.contains("model_name")) {
    config_error(fmt::format("{} needs base_url and model_name", where));
  }
  backend.base_url = get_string(section, "base_url", where);
  backend.model_name = get_string(section, "model_name", where);
  if (section.contains("api_key_env_var")) {
    backend.api_key_env_var = get_string(section, "api_key_env_var", where);
  }
  if (section.contains("temperature")) backend.temperature = get_number(section, "temperature", where);
  if (section.contains("max_tokens")) {
    backend.max_tokens = static_cast<int>(get_integer(section, "max_tokens", where));
  }
  if (section.contains("n_samples")) {
    backend.n_samples = static_cast<int>(get_integer(section, "n_samples", where));
  }
  if (section.contains("timeout_ms")) {
    backend.timeout = std::chrono::milliseconds(get_integer(section, "timeout_ms", where));
  }
  if (section.contains("max_retries")) {
    backend.max_retries = static_cast<int>(get_integer(section, "max_retries", where));
  }
  if (section.contains("concurrency_limit")) {
    backend.concurrency_limit = static_cast<int>(get_integer(section, "concurrency_limit", where));
  }
  if (section.contains("retry_backoff_ms")) {
    backend.retry_backoff =
        std::chrono::milliseconds(get_integer(section, "retry_backoff_ms", where));
  }
  try {
    backend.validate();
  } catch (const Error& err) {
    config_error(fmt::format("{}: {}", where, err.what()));
  }
  return backend;
}

std::vector<std::pair<std::string, std::string>> parse_demonstrations(const ordered_json& value,
                                                                      const std::string& where) {
  if (!value.is_array()) config_error(fmt::format("{} must be an array of [input, output] pairs", where));
  std::vector<std::pair<std::string, std::string>> demos;
  for (const auto& pair : value) {
    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string() || !pair[1].is_string()) {
      config_error(fmt::format("each entry in {} must be a [input, output] string pair", where));
    }
    demos.emplace_back(pair[0].get<std::string>(), pair[1].get<std::string>());
  }
  if (demos.size() != 0 && demos.size() != 2) {
    config_error(fmt::format("{} must hold 0 or 2 pairs, got {}", where, demos.size()));
  }
  return demos;
}

}  // namespace

RunConfig RunConfig::load(const std::string& path) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(read_file(path));
  } catch (const Error& err) {
    config_error(fmt::format("cannot read config: {}", err.what()));
  } catch (const nlohmann::json::exception& err) {
    config_error(fmt::format("config \"{}\" is not valid JSON: {}", path, err.what()));
  }
  check_section_keys(doc,
                     {"seed", "overwrite", "llm", "slm", "format", "prompts", "construction",
                      "extractor", "signals", "latency", "paths"},
                     "the top level");
  RunConfig config;
  if (doc.contains("seed")) config.seed = get_integer(doc, "seed", "the top level");
  if (doc.contains("overwrite")) config.overwrite = get_boolean(doc, "overwrite", "the top level");
  if (doc.contains("llm")) config.llm = parse_backend(doc["llm"], "llm");
  if (doc.contains("slm")) config.slm = parse_backend(doc["slm"], "slm");
  if (doc.contains("format")) {
    const auto& section = doc["format"];
    check_section_keys(section, {"task", "kind", "template_file"}, "format");
    if (section.contains("template_file")) {
      if (section.contains("task") || section.contains("kind")) {
        config_error("format.template_file replaces task/kind; give one or the other");
      }
      try {
        config.spec = load_spec(get_string(section, "template_file", "format"));
      } catch (const Error& err) {
        config_error(fmt::format("format.template_file: {}", err.what()));
      }
    } else {
      if (!section.contains("task") || !section.contains("kind")) {
        config_error("format needs task and kind (or a template_file)");
      }
      try {
        config.spec = default_spec(task_kind_from_string(get_string(section, "task", "format")),
                                   format_kind_from_string(get_string(section, "kind", "format")));
      } catch (const Error& err) {
        config_error(fmt::format("format: {}", err.what()));
      }
    }
  }
  if (doc.contains("prompts")) {
    const auto& section = doc["prompts"];
    check_section_keys(
        section, {"llm_system", "slm_system", "llm_demonstrations", "slm_demonstrations"},
        "prompts");
    if (section.contains("llm_system")) config.llm_system = get_string(section, "llm_system", "prompts");
    if (section.contains("slm_system")) config.slm_system = get_string(section, "slm_system", "prompts");
    if (section.contains("llm_demonstrations")) {
      config.llm_demonstrations =
          parse_demonstrations(section["llm_demonstrations"], "prompts.llm_demonstrations");
    }
    if (section.contains("slm_demonstrations")) {
      config.slm_demonstrations =
          parse_demonstrations(section["slm_demonstrations"], "prompts.slm_demonstrations");
    }
  }
  if (doc.contains("construction")) {
    const auto& section = doc["construction"];
    check_section_keys(section, {"responses_per_sample", "keep_stage2", "checkpoint_dir"},
                       "construction");
    if (section.contains("responses_per_sample")) {
      config.responses_per_sample =
          static_cast<int>(get_integer(section, "responses_per_sample", "construction"));
    }
    if (section.contains("keep_stage2")) {
      config.keep_stage2 = get_boolean(section, "keep_stage2", "construction");
    }
    if (section.contains("checkpoint_dir")) {
      config.checkpoint_dir = get_string(section, "checkpoint_dir", "construction");
    }
  }
  if (doc.contains("extractor")) {
    const auto& section = doc["extractor"];
    check_section_keys(section, {"patterns"}, "extractor");
    if (section.contains("patterns")) {
      if (!section["patterns"].is_array()) config_error("extractor.patterns must be an array");
      std::vector<std::string> patterns;
      for (const auto& pattern : section["patterns"]) {
        if (!pattern.is_string()) config_error("extractor.patterns entries must be strings");
        patterns.push_back(pattern.get<std::string>());
      }
      config.extractor_patterns = std::move(patterns);
    }
  }
  if (doc.contains("signals")) {
    const auto& section = doc["signals"];
    check_section_keys(section, {"epsilon", "beta"}, "signals");
    if (section.contains("epsilon")) config.epsilon = get_number(section, "epsilon", "signals");
    if (section.contains("beta")) config.beta = get_number(section, "beta", "signals");
  }
  if (doc.contains("latency")) {
    const auto& section = doc["latency"];
    check_section_keys(section, {"runs"}, "latency");
    if (section.contains("runs")) {
      config.latency_runs = static_cast<int>(get_integer(section, "runs", "latency"));
      if (config.latency_runs < 1) config_error("latency.runs must be >= 1");
    }
  }
  if (doc.contains("paths")) {
    const auto& section = doc["paths"];
    check_section_keys(section,
                       {"samples", "dataset", "stats", "predictions", "report", "consistency",
                        "groups", "signals_report", "latency_report"},
                       "paths");
    for (const auto& item : section.items()) {
      if (!item.value().is_string()) {
        config_error(fmt::format("config key \"{}\" in paths must be a string", item.key()));
      }
      config.paths[item.key()] = item.value().get<std::string>();
    }
  }
  return config;
}

const BackendConfig& RunConfig::need_llm(const char* verb) const {
  if (!llm) config_error(fmt::format("{} needs an \"llm\" backend section", verb));
  return *llm;
}

const BackendConfig& RunConfig::need_slm(const char* verb) const {
  if (!slm) config_error(fmt::format("{} needs an \"slm\" backend section", verb));
  return *slm;
}

const FormatSpec& RunConfig::need_spec(const char* verb) const {
  if (!spec) config_error(fmt::format("{} needs a \"format\" section", verb));
  return *spec;
}

const std::string& RunConfig::need_path(const char* key, const char* verb) const {
  const auto it = paths.find(key);
  if (it == paths.end() || it->second.empty()) {
    config_error(fmt::format("{} needs paths.{}", verb, key));
  }
  return it->second;
}

std::optional<std::string> RunConfig::optional_path(const char* key) const {
  const auto it = paths.find(key);
  if (it == paths.end() || it->second.empty()) return std::nullopt;
  return it->second;
}

nlohmann::ordered_json LatencyReport::to_json() const {
  ordered_json doc;
  doc["n_samples"] = n_samples;
  doc["runs"] = runs;
  doc["mean_seconds_per_sample"] = mean_seconds_per_sample;
  doc["per_run_means"] = per_run_means;
  return doc;
}

std::string LatencyReport::to_table() const {
  std::string out;
  out += fmt::format("{:<24} {:>12}\n", "metric", "value");
  out += fmt::format("{:<24} {:>12}\n", "samples", n_samples);
  out += fmt::format("{:<24} {:>12}\n", "runs", runs);
  out += fmt::format("{:<24} {:>12}\n", "completed_runs", per_run_means.size());
  out += fmt::format("{:<24} {:>12.4f}\n", "seconds_per_sample", mean_seconds_per_sample);
  return out;
}

namespace {

struct CliContext {
  RunConfig config;
  std::string mock_script_path;

  std::shared_ptr<ChatBackend> backend_for(const BackendConfig& backend_config) const {
    if (mock_script_path.empty()) return nullptr;  // Gateway builds the HTTP client
    if (!script) script = std::make_shared<const MockScript>(MockScript::load(mock_script_path));
    return std::make_shared<ScriptedMockBackend>(backend_config.model_name, script);
  }

 private:
  mutable std::shared_ptr<const MockScript> script;
};

void apply_seed(CliContext& context) {
  if (!context.config.seed) return;
  if (context.config.llm) context.config.llm->seed = *context.config.seed;
  if (context.config.slm) context.config.slm->seed = *context.config.seed;
}

ConstructionConfig construction_config(const RunConfig& config, const char* verb) {
  ConstructionConfig construction;
  construction.llm = config.need_llm(verb);
  construction.slm = config.need_slm(verb);
  construction.spec = config.need_spec(verb);
  construction.responses_per_sample = config.responses_per_sample;
  construction.keep_stage2 = config.keep_stage2;
  construction.llm_system = config.llm_system;
  construction.slm_system = config.slm_system;
  construction.llm_demonstrations = config.llm_demonstrations;
  construction.slm_demonstrations = config.slm_demonstrations;
  construction.checkpoint_dir = config.checkpoint_dir;
  construction.validate();
  return construction;
}

int cmd_construct(CliContext& context) {
  const RunConfig& config = context.config;
  const std::string& samples_path = config.need_path("samples", "construct");
  const std::string& dataset_path = config.need_path("dataset", "construct");
  const auto stats_path = config.optional_path("stats");
  ensure_writable(dataset_path, config.overwrite);
  if (stats_path) ensure_writable(*stats_path, config.overwrite);

  const ConstructionConfig construction = construction_config(config, "construct");
  DatasetBuilder builder(construction, context.backend_for(construction.llm),
                         context.backend_for(construction.slm));
  const std::vector<Sample> samples = read_samples(samples_path);
  const BuildResult result = builder.run(samples);
  write_examples(dataset_path, result.dataset);
  if (result.dataset.empty()) {
    log_event("warn", "empty-dataset", {{"path", dataset_path}});
  }
  if (stats_path) atomic_write_file(*stats_path, result.stats.to_json().dump(2) + "\n");
  log_event("info", "construct-done", result.stats.to_json());
  std::fputs(result.stats.to_table().c_str(), stdout);
  return 0;
}

// Single-completion freeform + structuring pass over the samples; shared by
// infer and latency.
std::vector<Prediction> infer_once(CliContext& context, const std::vector<Sample>& samples,
                                   Gateway& llm, Gateway& slm, const FormatSpec& spec) {
  const RunConfig& config = context.config;
  const PromptRecipe freeform = PromptRecipe::create(
      PromptMode::llm_freeform,
      config.llm_system.empty() ? default_freeform_system() : config.llm_system,
      config.llm_demonstrations);
  const std::string slm_system =
      config.slm_system.empty() ? default_structuring_system(spec) : config.slm_system;

  std::vector<Prediction> predictions(samples.size());
  parallel_for(samples.size(), llm.config().concurrency_limit, [&](std::size_t i) {
    const Sample& sample = samples[i];
    Prediction prediction;
    prediction.sample_id = sample.id;
    try {
      prediction.llm_output = llm.sample(freeform, sample.question, std::nullopt, 1).front();
      const PromptRecipe structuring =
          PromptRecipe::create(PromptMode::slm_analyze, slm_system, config.slm_demonstrations);
      prediction.structured_text =
          slm.sample(structuring, sample.question, prediction.llm_output, 1).front();
    } catch (const Error& err) {
      prediction.failed = true;
      prediction.error = err.what();
      log_event("warn", "infer-row-failed", {{"sample_id", sample.id}, {"error", err.what()}});
    }
    predictions[i] = std::move(prediction);
  });
  return predictions;
}

int cmd_infer(CliContext& context) {
  const RunConfig& config = context.config;
  const std::string& samples_path = config.need_path("samples", "infer");
  const std::string& predictions_path = config.need_path("predictions", "infer");
  ensure_writable(predictions_path, config.overwrite);
  const FormatSpec& spec = config.need_spec("infer");
  Gateway llm(config.need_llm("infer"), context.backend_for(config.need_llm("infer")));
  Gateway slm(config.need_slm("infer"), context.backend_for(config.need_slm("infer")));

  const std::vector<Sample> samples = read_samples(samples_path);
  const std::vector<Prediction> predictions = infer_once(context, samples, llm, slm, spec);
  write_predictions(predictions_path, predictions);

  const std::size_t n_failed = static_cast<std::size_t>(
      std::count_if(predictions.begin(), predictions.end(),
                    [](const Prediction& p) { return p.failed; }));
  log_event("info", "infer-done", {{"rows", predictions.size()}, {"failed", n_failed}});
  std::fputs(fmt::format("{:<12} {:>8}\n{:<12} {:>8}\n{:<12} {:>8}\n", "metric", "value", "rows",
                         predictions.size(), "failed", n_failed)
                 .c_str(),
             stdout);
  if (!predictions.empty() && n_failed == predictions.size()) {
    throw Error(ErrorKind::exhausted_retries, "every row failed; backend unreachable or script incomplete");
  }
  return 0;
}

int cmd_evaluate(CliContext& context) {
  const RunConfig& config = context.config;
  const std::vector<Sample> samples = read_samples(config.need_path("samples", "evaluate"));
  const std::vector<Prediction> predictions =
      read_predictions(config.need_path("predictions", "evaluate"));
  const EvalReport report = evaluate(samples, predictions, config.need_spec("evaluate"));
  if (const auto report_path = config.optional_path("report")) {
    ensure_writable(*report_path, config.overwrite);
    atomic_write_file(*report_path, report.to_json().dump(2) + "\n");
  }
  log_event("info", "evaluate-done",
            {{"n", report.n},
             {"format_accuracy", report.format_accuracy},
             {"content_accuracy", report.content_accuracy}});
  std::fputs(report.to_table().c_str(), stdout);
  return 0;
}

int cmd_consistency(CliContext& context) {
  const RunConfig& config = context.config;
  const std::vector<Sample> samples = read_samples(config.need_path("samples", "consistency"));
  const std::vector<Prediction> predictions =
      read_predictions(config.need_path("predictions", "consistency"));
  const FormatSpec& spec = config.need_spec("consistency");
  const FreeformExtractor extractor = config.extractor_patterns
                                          ? FreeformExtractor(*config.extractor_patterns)
                                          : FreeformExtractor();

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
  std::vector<bool> before;
  std::vector<bool> after;
  for (const auto& sample : samples) {
    const auto it = by_id.find(sample.id);
    const bool have = it != by_id.end() && !it->second->failed;
    before.push_back(have && extractor.correct(it->second->llm_output, sample));
    after.push_back(have && judge(it->second->structured_text, sample, spec).content_correct);
  }
  const ConsistencyReport report = consistency_report(before, after);
  if (const auto out_path = config.optional_path("consistency")) {
    ensure_writable(*out_path, config.overwrite);
    atomic_write_file(*out_path, report.to_json().dump(2) + "\n");
  }
  log_event("info", "consistency-done", report.to_json());
  std::fputs(report.to_table().c_str(), stdout);
  return 0;
}

int cmd_signals(CliContext& context) {
  const RunConfig& config = context.config;
  const std::string& groups_path = config.need_path("groups", "signals");
  const std::string& out_path = config.need_path("signals_report", "signals");
  ensure_writable(out_path, config.overwrite);

  std::string out_content;
  std::size_t n_groups = 0;
  std::size_t n_token_rows = 0;
  int line = 0;
  for (const auto& row : read_jsonl(groups_path)) {
    ++line;
    if (!row.is_object()) throw SchemaError(line, "", "signals rows must be JSON objects");
    auto check_row_keys = [&](const std::set<std::string>& allowed) {
      for (const auto& item : row.items()) {
        if (allowed.find(item.key()) == allowed.end()) {
          throw SchemaError(line, item.key(),
                            fmt::format("unknown field \"{}\" in signals row {}", item.key(),
                                        line));
        }
      }
    };
    ordered_json result;
    if (row.contains("token_nll") || row.contains("labels")) {
      check_row_keys({"token_nll", "labels"});
      SegmentedTokens tokens;
      if (!row.contains("token_nll") || !row["token_nll"].is_array() || !row.contains("labels") ||
          !row["labels"].is_array()) {
        throw SchemaError(line, "token_nll", "token rows need token_nll and labels arrays");
      }
      for (const auto& value : row["token_nll"]) {
        if (!value.is_number()) throw SchemaError(line, "token_nll", "token_nll must be numeric");
        tokens.token_nll.push_back(value.get<double>());
      }
      for (const auto& label : row["labels"]) {
        if (!label.is_string()) throw SchemaError(line, "labels", "labels must be strings");
        tokens.labels.push_back(segment_label_from_string(label.get<std::string>()));
      }
      result = segment_loss_report(tokens).to_json();
      ++n_token_rows;
    } else {
      check_row_keys({"rewards", "ratios", "kl_terms", "epsilon", "beta"});
      if (!row.contains("rewards") || !row["rewards"].is_array()) {
        throw SchemaError(line, "rewards", "group rows need a rewards array");
      }
      auto doubles_from = [&](const char* key) {
        std::vector<double> values;
        if (!row[key].is_array()) {
          throw SchemaError(line, key, fmt::format("{} must be an array", key));
        }
        for (const auto& value : row[key]) {
          if (!value.is_number()) {
            throw SchemaError(line, key, fmt::format("{} must be numeric", key));
          }
          values.push_back(value.get<double>());
        }
        return values;
      };
      const std::vector<double> rewards = doubles_from("rewards");
      result["advantages"] = group_advantages(rewards);
      if (row.contains("ratios") != row.contains("kl_terms")) {
        throw SchemaError(line, "ratios", "group rows need both ratios and kl_terms, or neither");
      }
      if (row.contains("ratios")) {
        auto number_or = [&](const char* key, double fallback) {
          if (!row.contains(key)) return fallback;
          if (!row[key].is_number()) {
            throw SchemaError(line, key, fmt::format("{} must be numeric", key));
          }
          return row[key].get<double>();
        };
        GroupBatch batch;
        batch.rewards = rewards;
        batch.ratios = doubles_from("ratios");
        batch.kl_terms = doubles_from("kl_terms");
        batch.epsilon = number_or("epsilon", config.epsilon);
        batch.beta = number_or("beta", config.beta);
        result["loss"] = grpo_loss(batch);
      } else {
        result["loss"] = nullptr;
      }
      ++n_groups;
    }
    out_content += result.dump();
    out_content += '\n';
  }
  if (n_groups + n_token_rows == 0) throw Error(ErrorKind::data, "signals input holds no rows");
  atomic_write_file(out_path, out_content);
  log_event("info", "signals-done", {{"groups", n_groups}, {"token_rows", n_token_rows}});
  std::fputs(fmt::format("{:<12} {:>8}\n{:<12} {:>8}\n{:<12} {:>8}\n", "metric", "value", "groups",
                         n_groups, "token_rows", n_token_rows)
                 .c_str(),
             stdout);
  return 0;
}

int cmd_latency(CliContext& context) {
  const RunConfig& config = context.config;
  const std::vector<Sample> samples = read_samples(config.need_path("samples", "latency"));
  if (samples.empty()) throw Error(ErrorKind::data, "latency needs at least one sample");
  const FormatSpec& spec = config.need_spec("latency");
  // Timing wants an uncontended pipeline: one request at a time.
  BackendConfig llm_config = config.need_llm("latency");
  BackendConfig slm_config = config.need_slm("latency");
  llm_config.concurrency_limit = 1;
  slm_config.concurrency_limit = 1;
  Gateway llm(llm_config, context.backend_for(llm_config));
  Gateway slm(slm_config, context.backend_for(slm_config));

  LatencyReport report;
  report.n_samples = samples.size();
  report.runs = config.latency_runs;
  for (int run = 0; run < config.latency_runs; ++run) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<Prediction> predictions;
    try {
      predictions = infer_once(context, samples, llm, slm, spec);
    } catch (const Error& err) {
      log_event("warn", "latency-run-failed", {{"run", run}, {"error", err.what()}});
      continue;
    }
    const bool any_failed =
        std::any_of(predictions.begin(), predictions.end(),
                    [](const Prediction& p) { return p.failed; });
    if (any_failed) {
      log_event("warn", "latency-run-failed", {{"run", run}, {"error", "row failures"}});
      continue;
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    report.per_run_means.push_back(elapsed.count() / static_cast<double>(samples.size()));
  }
  if (report.per_run_means.empty()) {
    throw Error(ErrorKind::exhausted_retries, "every latency run failed");
  }
  double sum = 0.0;
  for (double mean : report.per_run_means) sum += mean;
  report.mean_seconds_per_sample = sum / static_cast<double>(report.per_run_means.size());
  if (const auto out_path = config.optional_path("latency_report")) {
    ensure_writable(*out_path, config.overwrite);
    atomic_write_file(*out_path, report.to_json().dump(2) + "\n");
  }
  log_event("info", "latency-done", report.to_json());
  std::fputs(report.to_table().c_str(), stdout);
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"structured chain-of-thought dataset and evaluation toolkit"};
  app.require_subcommand(0, 1);
  std::string config_path;
  std::string mock_script_path;
  long seed = 0;
  bool seed_given = false;
  app.add_option("--config", config_path, "JSON run configuration")->expected(1);
  app.add_option("--mock-script", mock_script_path,
                 "replay completions from a scripted mock instead of a live backend");
  auto* seed_option = app.add_option("--seed", seed, "override the config seed");

  static const std::vector<std::pair<std::string, int (*)(CliContext&)>> verbs = {
      {"construct", cmd_construct}, {"infer", cmd_infer},       {"evaluate", cmd_evaluate},
      {"consistency", cmd_consistency}, {"signals", cmd_signals}, {"latency", cmd_latency}};
  static const std::map<std::string, const char*> descriptions = {
      {"construct", "build an adaptation dataset from samples via two filtered passes"},
      {"infer", "run the freeform + structuring pipeline over samples"},
      {"evaluate", "score structured predictions for format and content accuracy"},
      {"consistency", "compare correctness before and after structuring"},
      {"signals", "compute advantages, objective values, and segment losses"},
      {"latency", "measure seconds per sample over repeated timed runs"}};
  for (const auto& [name, handler] : verbs) {
    (void)handler;
    // Global flags stay valid after the verb: `construct --config ...`.
    app.add_subcommand(name, descriptions.at(name))->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 1;  // malformed invocation is a config error
  }

  try {
    const auto* chosen = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front();
    if (chosen == nullptr) {
      throw Error(ErrorKind::config, "no command given; expected one of construct, infer, "
                                     "evaluate, consistency, signals, latency");
    }
    if (config_path.empty()) {
      throw Error(ErrorKind::config, "--config is required");
    }
    CliContext context;
    context.config = RunConfig::load(config_path);
    context.mock_script_path = mock_script_path;
    seed_given = seed_option->count() > 0;
    if (seed_given) context.config.seed = seed;
    apply_seed(context);
    log_event("info", "start",
              {{"command", chosen->get_name()},
               {"config", config_path},
               {"mock", !mock_script_path.empty()},
               {"seed", context.config.seed ? ordered_json(*context.config.seed)
                                            : ordered_json(nullptr)}});
    for (const auto& [name, handler] : verbs) {
      if (name == chosen->get_name()) return handler(context);
    }
    throw Error(ErrorKind::config, fmt::format("unknown command \"{}\"", chosen->get_name()));
  } catch (const Error& err) {
    log_event("error", to_string(err.kind()),
              {{"message", err.what()}, {"exit_code", exit_code_for(err.kind())}});
    return exit_code_for(err.kind());
  } catch (const std::exception& err) {
    log_event("error", "unexpected", {{"message", err.what()}, {"exit_code", 3}});
    return 3;
  }
}

}  // namespace cotforge
