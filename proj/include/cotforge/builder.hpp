#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotforge/format.hpp"
#include "cotforge/gateway.hpp"
#include "cotforge/types.hpp"

namespace cotforge {

struct ConstructionConfig {
  BackendConfig llm;
  BackendConfig slm;
  FormatSpec spec;
  int responses_per_sample = 5;
  // When false, rows rejected on the first pass are discarded instead of
  // being retried with the reference answer shown.
  bool keep_stage2 = true;
  std::string llm_system;  // empty picks the built-in freeform prompt
  std::string slm_system;  // empty derives one from the format spec
  std::vector<std::pair<std::string, std::string>> llm_demonstrations;
  std::vector<std::pair<std::string, std::string>> slm_demonstrations;
  // Directory for per-row progress files; empty disables checkpointing.
  std::string checkpoint_dir;

  void validate() const;
};

// One freeform completion awaiting structuring.
struct GeneratedRow {
  std::string sample_id;
  int response_index = 0;
  std::string llm_output;

  bool operator==(const GeneratedRow&) const = default;
};

// A row that survived filtering, still carrying its position for canonical
// output ordering.
struct BuiltRow {
  GeneratedRow row;
  AdaptationExample example;
};

struct Stage1Result {
  std::vector<BuiltRow> kept;
  std::vector<GeneratedRow> rejected;
};

struct Stage2Result {
  std::vector<BuiltRow> kept;
  std::vector<GeneratedRow> discarded;
};

struct ConstructionStats {
  std::size_t n_input = 0;             // samples read
  std::size_t n_rows = 0;              // freeform completions generated
  std::size_t n_stage1_kept = 0;
  std::size_t n_stage2_attempted = 0;
  std::size_t n_stage2_kept = 0;
  std::size_t n_discarded = 0;
  double retention = 0.0;              // kept rows / generated rows

  // Throws Error(invariant) unless kept + discarded partitions the rows.
  void validate() const;

  nlohmann::ordered_json to_json() const;
  std::string to_table() const;
};

struct BuildResult {
  std::vector<AdaptationExample> dataset;
  ConstructionStats stats;
};

// Two-model dataset construction: a freeform generator proposes solutions, a
// structuring model rewrites each into the contract shape, and only rewrites
// whose answer matches the gold answer survive. Rows rejected once are given
// a second chance with the reference answer shown; rows that still fail are
// dropped. Checkpoints make interrupted runs resumable row by row.
class DatasetBuilder {
 public:
  explicit DatasetBuilder(ConstructionConfig config,
                          std::shared_ptr<ChatBackend> llm_backend = nullptr,
                          std::shared_ptr<ChatBackend> slm_backend = nullptr);

  // responses_per_sample completions per input sample, in canonical
  // (sample order, response_index) order.
  std::vector<GeneratedRow> generate_llm_outputs(const std::vector<Sample>& samples);

  // First pass: structure each row without showing the answer; keep rows
  // whose structured answer matches gold. Blank completions are rejected
  // without a model call.
  Stage1Result stage1(const std::vector<Sample>& samples, const std::vector<GeneratedRow>& rows);

  // Second pass over rejected rows with the reference answer in the prompt;
  // rows that still fail are discarded.
  Stage2Result stage2(const std::vector<Sample>& samples,
                      const std::vector<GeneratedRow>& rejected);

  // Orders kept rows by (sample_id, response_index), re-renders every target
  // to prove it parses, and derives the stats block.
  BuildResult assemble(std::vector<BuiltRow> kept, std::size_t n_input, std::size_t n_rows,
                       std::size_t n_stage2_attempted) const;

  // The full pipeline over validated samples.
  BuildResult run(const std::vector<Sample>& samples);

  const ConstructionConfig& config() const { return config_; }

 private:
  ConstructionConfig config_;
  Gateway llm_;
  Gateway slm_;
};

// Runs `body(i)` for i in [0, count) on up to `workers` threads. The first
// exception wins: remaining work is abandoned and the exception rethrown on
// the calling thread.
void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& body);

// Built-in system prompts, used whenever the config leaves them empty. Public
// so scripted runs can reconstruct the exact request messages.
std::string default_freeform_system();
std::string default_structuring_system(const FormatSpec& spec);

}  // namespace cotforge
