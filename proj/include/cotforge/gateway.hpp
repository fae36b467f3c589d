#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotforge/types.hpp"

namespace cotforge {

struct Message {
  std::string role;  // "system", "user", or "assistant"
  std::string content;

  bool operator==(const Message&) const = default;
};

struct BackendConfig {
  std::string base_url;         // e.g. http://localhost:8000/v1
  std::string model_name;
  std::string api_key_env_var;  // empty means no Authorization header
  double temperature = 0.8;
  int max_tokens = 1024;
  int n_samples = 5;
  std::chrono::milliseconds timeout{30000};
  int max_retries = 3;
  int concurrency_limit = 4;
  std::chrono::milliseconds retry_backoff{250};  // doubles per retry
  std::optional<long> seed;  // forwarded to backends that accept one

  void validate() const;  // throws Error(config)
};

enum class PromptMode {
  llm_freeform,  // question in, unstructured reasoning out
  slm_analyze,   // question plus freeform response in, structured block out
};

const char* to_string(PromptMode mode);

struct PromptRecipe {
  PromptMode mode = PromptMode::llm_freeform;
  std::string system_text;  // empty omits the system message
  // In-context demonstration turns, rendered as alternating user/assistant
  // messages before the real request.
  std::vector<std::pair<std::string, std::string>> demonstrations;
  std::optional<std::string> hint;  // reference answer, slm_analyze only

  // Throws Error(invariant): demonstrations must number 0 or 2; hints are
  // only meaningful when a structuring model re-reads a freeform response.
  static PromptRecipe create(PromptMode mode, std::string system_text,
                             std::vector<std::pair<std::string, std::string>> demonstrations = {},
                             std::optional<std::string> hint = std::nullopt);
};

// Deterministic message list for one request. `context` carries the freeform
// response being structured; it is required for slm_analyze and forbidden
// for llm_freeform.
std::vector<Message> build_prompt(const PromptRecipe& recipe, const std::string& question,
                                  const std::optional<std::string>& context = std::nullopt);

// Stable digest of everything that shapes a completion request; scripted
// replays key on it.
std::string request_fingerprint(const std::string& model_name,
                                const std::vector<Message>& messages, int n);

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  // Returns exactly `n` completions or throws.
  virtual std::vector<std::string> complete(const std::vector<Message>& messages, int n) = 0;
};

// Canned request->completions table keyed by request fingerprint. A request
// with no entry, or an entry holding fewer completions than requested, is an
// error; identical requests always replay identical completions, so results
// are independent of scheduling.
struct MockScript {
  std::chrono::milliseconds delay{0};
  std::map<std::string, std::vector<std::string>> entries;

  void add(const std::string& model_name, const std::vector<Message>& messages, int n,
           std::vector<std::string> completions);

  static MockScript load(const std::string& path);
  void save(const std::string& path) const;
};

class ScriptedMockBackend : public ChatBackend {
 public:
  ScriptedMockBackend(std::string model_name, std::shared_ptr<const MockScript> script);

  std::vector<std::string> complete(const std::vector<Message>& messages, int n) override;

 private:
  std::string model_name_;
  std::shared_ptr<const MockScript> script_;
};

struct RequestStats {
  long requests = 0;  // HTTP requests actually sent
  long retries = 0;   // requests beyond the first attempt
};

// OpenAI-style chat-completions client: POST {base_url}/chat/completions.
// Transient failures (timeouts, 408/429/5xx) retry with exponential backoff
// up to max_retries; auth problems and malformed replies fail immediately.
// A server that returns fewer than `n` choices is topped up with sequential
// single-completion requests.
class HttpBackend : public ChatBackend {
 public:
  explicit HttpBackend(BackendConfig config);

  std::vector<std::string> complete(const std::vector<Message>& messages, int n) override;

  RequestStats stats() const;

 private:
  nlohmann::ordered_json post_with_retries(const std::string& body);

  BackendConfig config_;
  std::string host_base_;    // scheme://host:port
  std::string path_prefix_;  // anything after the authority, e.g. /v1
  std::string auth_token_;   // resolved once at construction
  std::atomic<long> requests_{0};
  std::atomic<long> retries_{0};
};

// Front door for one model endpoint: builds prompts, bounds in-flight
// requests to config.concurrency_limit, and delegates transport to the
// backend (an HttpBackend by default, or an injected test double).
class Gateway {
 public:
  explicit Gateway(BackendConfig config, std::shared_ptr<ChatBackend> backend = nullptr);

  // n == 0 means config.n_samples.
  std::vector<std::string> sample(const PromptRecipe& recipe, const std::string& question,
                                  const std::optional<std::string>& context = std::nullopt,
                                  int n = 0);

  const BackendConfig& config() const { return config_; }

 private:
  BackendConfig config_;
  std::shared_ptr<ChatBackend> backend_;
  std::counting_semaphore<> slots_;
};

}  // namespace cotforge
