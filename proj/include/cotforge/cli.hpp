#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotforge/builder.hpp"
#include "cotforge/format.hpp"
#include "cotforge/gateway.hpp"

namespace cotforge {

// One experiment configuration, loaded from a strict JSON file: unknown keys
// anywhere are a config error so typos surface immediately instead of
// silently running with defaults.
struct RunConfig {
  std::optional<long> seed;
  bool overwrite = false;
  std::optional<BackendConfig> llm;
  std::optional<BackendConfig> slm;
  std::optional<FormatSpec> spec;
  std::string llm_system;
  std::string slm_system;
  std::vector<std::pair<std::string, std::string>> llm_demonstrations;
  std::vector<std::pair<std::string, std::string>> slm_demonstrations;
  int responses_per_sample = 5;
  bool keep_stage2 = true;
  std::string checkpoint_dir;
  std::optional<std::vector<std::string>> extractor_patterns;
  double epsilon = 0.2;
  double beta = 0.04;
  int latency_runs = 5;
  std::map<std::string, std::string> paths;

  static RunConfig load(const std::string& path);

  // Throws Error(config) naming the verb and the missing piece.
  const BackendConfig& need_llm(const char* verb) const;
  const BackendConfig& need_slm(const char* verb) const;
  const FormatSpec& need_spec(const char* verb) const;
  const std::string& need_path(const char* key, const char* verb) const;
  std::optional<std::string> optional_path(const char* key) const;
};

struct LatencyReport {
  std::size_t n_samples = 0;
  int runs = 0;  // requested measurement repetitions
  double mean_seconds_per_sample = 0.0;
  std::vector<double> per_run_means;  // one entry per completed run

  nlohmann::ordered_json to_json() const;
  std::string to_table() const;
};

// Entry point used by the binary; returns the process exit code
// (0 success, 1 config error, 2 backend failure, 3 data error).
int run_cli(int argc, const char* const* argv);

}  // namespace cotforge
