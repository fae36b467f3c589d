#include "cotforge/gateway.hpp"

#include <cstdint>
#include <cstdlib>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <fmt/format.h>

#include "cotforge/error.hpp"
#include "cotforge/jsonl.hpp"
#include "cotforge/log.hpp"

namespace cotforge {

void BackendConfig::validate() const {
  if (base_url.empty()) throw Error(ErrorKind::config, "base_url must be non-empty");
  if (model_name.empty()) throw Error(ErrorKind::config, "model_name must be non-empty");
  if (temperature < 0.0) throw Error(ErrorKind::config, "temperature must be >= 0");
  if (max_tokens < 1) throw Error(ErrorKind::config, "max_tokens must be >= 1");
  if (n_samples < 1) throw Error(ErrorKind::config, "n_samples must be >= 1");
  if (timeout.count() <= 0) throw Error(ErrorKind::config, "timeout must be positive");
  if (max_retries < 0) throw Error(ErrorKind::config, "max_retries must be >= 0");
  if (concurrency_limit < 1) throw Error(ErrorKind::config, "concurrency_limit must be >= 1");
  if (retry_backoff.count() < 0) throw Error(ErrorKind::config, "retry_backoff must be >= 0");
}

const char* to_string(PromptMode mode) {
  switch (mode) {
    case PromptMode::llm_freeform: return "llm-freeform";
    case PromptMode::slm_analyze: return "slm-analyze";
  }
  return "unknown";
}

PromptRecipe PromptRecipe::create(PromptMode mode, std::string system_text,
                                  std::vector<std::pair<std::string, std::string>> demonstrations,
                                  std::optional<std::string> hint) {
  if (demonstrations.size() != 0 && demonstrations.size() != 2) {
    throw Error(ErrorKind::invariant,
                fmt::format("demonstrations must number 0 or 2, got {}", demonstrations.size()));
  }
  if (hint && mode != PromptMode::slm_analyze) {
    throw Error(ErrorKind::invariant, "a reference-answer hint requires slm-analyze mode");
  }
  if (hint && trim(*hint).empty()) {
    throw Error(ErrorKind::invariant, "a reference-answer hint must be non-empty when present");
  }
  PromptRecipe recipe;
  recipe.mode = mode;
  recipe.system_text = std::move(system_text);
  recipe.demonstrations = std::move(demonstrations);
  recipe.hint = std::move(hint);
  return recipe;
}

std::vector<Message> build_prompt(const PromptRecipe& recipe, const std::string& question,
                                  const std::optional<std::string>& context) {
  if (trim(question).empty()) {
    throw Error(ErrorKind::invariant, "prompt question must be non-empty");
  }
  if (recipe.mode == PromptMode::slm_analyze) {
    if (!context || trim(*context).empty()) {
      throw Error(ErrorKind::invariant, "slm-analyze prompts need the freeform response text");
    }
  } else if (context) {
    throw Error(ErrorKind::invariant, "llm-freeform prompts take no response context");
  }
  std::vector<Message> messages;
  if (!recipe.system_text.empty()) messages.push_back({"system", recipe.system_text});
  for (const auto& [shown_input, shown_output] : recipe.demonstrations) {
    messages.push_back({"user", shown_input});
    messages.push_back({"assistant", shown_output});
  }
  if (recipe.mode == PromptMode::llm_freeform) {
    messages.push_back({"user", question});
  } else {
    std::string content = fmt::format("Question:\n{}\n\nModel response:\n{}", question, *context);
    if (recipe.hint) content += fmt::format("\n\nReference answer: {}", *recipe.hint);
    messages.push_back({"user", std::move(content)});
  }
  return messages;
}

std::string request_fingerprint(const std::string& model_name,
                                const std::vector<Message>& messages, int n) {
  std::uint64_t hash = 1469598103934665603ULL;  // FNV-1a 64-bit
  auto mix = [&hash](const std::string& text) {
    for (unsigned char c : text) {
      hash ^= c;
      hash *= 1099511628211ULL;
    }
    hash ^= 0x1f;
    hash *= 1099511628211ULL;
  };
  mix(model_name);
  for (const auto& message : messages) {
    mix(message.role);
    mix(message.content);
  }
  mix(fmt::format("n={}", n));
  return fmt::format("{:016x}", hash);
}

void MockScript::add(const std::string& model_name, const std::vector<Message>& messages, int n,
                     std::vector<std::string> completions) {
  entries[request_fingerprint(model_name, messages, n)] = std::move(completions);
}

MockScript MockScript::load(const std::string& path) {
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(read_file(path));
  } catch (const nlohmann::json::exception& err) {
    throw Error(ErrorKind::config,
                fmt::format("mock script \"{}\" is not valid JSON: {}", path, err.what()));
  }
  if (!doc.is_object() || !doc.contains("entries") || !doc["entries"].is_object()) {
    throw Error(ErrorKind::config,
                fmt::format("mock script \"{}\" must be an object with an \"entries\" map", path));
  }
  MockScript script;
  if (doc.contains("delay_ms")) {
    if (!doc["delay_ms"].is_number_integer() || doc["delay_ms"].get<long>() < 0) {
      throw Error(ErrorKind::config, "mock script delay_ms must be a non-negative integer");
    }
    script.delay = std::chrono::milliseconds(doc["delay_ms"].get<long>());
  }
  for (const auto& item : doc["entries"].items()) {
    if (!item.value().is_array()) {
      throw Error(ErrorKind::config, "mock script entries must map fingerprints to arrays");
    }
    std::vector<std::string> completions;
    for (const auto& completion : item.value()) {
      if (!completion.is_string()) {
        throw Error(ErrorKind::config, "mock script completions must be strings");
      }
      completions.push_back(completion.get<std::string>());
    }
    script.entries[item.key()] = std::move(completions);
  }
  return script;
}

void MockScript::save(const std::string& path) const {
  nlohmann::ordered_json doc;
  doc["delay_ms"] = delay.count();
  nlohmann::ordered_json entries_doc = nlohmann::ordered_json::object();
  for (const auto& [fingerprint, completions] : entries) entries_doc[fingerprint] = completions;
  doc["entries"] = std::move(entries_doc);
  atomic_write_file(path, doc.dump(2) + "\n");
}

ScriptedMockBackend::ScriptedMockBackend(std::string model_name,
                                         std::shared_ptr<const MockScript> script)
    : model_name_(std::move(model_name)), script_(std::move(script)) {
  if (!script_) throw Error(ErrorKind::config, "scripted backend needs a script");
}

std::vector<std::string> ScriptedMockBackend::complete(const std::vector<Message>& messages,
                                                       int n) {
  if (script_->delay.count() > 0) std::this_thread::sleep_for(script_->delay);
  const std::string fingerprint = request_fingerprint(model_name_, messages, n);
  const auto it = script_->entries.find(fingerprint);
  if (it == script_->entries.end()) {
    const std::string& shown =
        messages.empty() ? std::string("<no messages>") : messages.back().content;
    throw Error(ErrorKind::script_miss,
                fmt::format("no scripted completion for fingerprint {} (model \"{}\", n={}, "
                            "last message: {})",
                            fingerprint, model_name_, n,
                            shown.size() > 160 ? shown.substr(0, 160) + "..." : shown));
  }
  if (it->second.size() < static_cast<std::size_t>(n)) {
    throw Error(ErrorKind::script_miss,
                fmt::format("scripted entry {} holds {} completions but {} were requested",
                            fingerprint, it->second.size(), n));
  }
  return {it->second.begin(), it->second.begin() + n};
}

HttpBackend::HttpBackend(BackendConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto scheme_end = config_.base_url.find("://");
  if (scheme_end == std::string::npos ||
      (config_.base_url.rfind("http://", 0) != 0 && config_.base_url.rfind("https://", 0) != 0)) {
    throw Error(ErrorKind::config,
                fmt::format("base_url \"{}\" must start with http:// or https://",
                            config_.base_url));
  }
  const auto path_begin = config_.base_url.find('/', scheme_end + 3);
  if (path_begin == std::string::npos) {
    host_base_ = config_.base_url;
  } else {
    host_base_ = config_.base_url.substr(0, path_begin);
    path_prefix_ = config_.base_url.substr(path_begin);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  }
  if (!config_.api_key_env_var.empty()) {
    const char* token = std::getenv(config_.api_key_env_var.c_str());
    if (token == nullptr || *token == '\0') {
      throw Error(ErrorKind::auth,
                  fmt::format("environment variable \"{}\" is not set; refusing to send "
                              "unauthenticated requests",
                              config_.api_key_env_var));
    }
    auth_token_ = token;
  }
}

RequestStats HttpBackend::stats() const { return {requests_.load(), retries_.load()}; }

nlohmann::ordered_json HttpBackend::post_with_retries(const std::string& body) {
  const std::string path = path_prefix_ + "/chat/completions";
  int last_status = 0;
  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      const auto backoff = config_.retry_backoff * (1L << (attempt - 1));
      log_event("warn", "backend-retry",
                {{"attempt", attempt}, {"backoff_ms", backoff.count()}, {"status", last_status}});
      retries_.fetch_add(1);
      std::this_thread::sleep_for(backoff);
    }
    httplib::Client client(host_base_);
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    client.set_write_timeout(config_.timeout);
    if (!auth_token_.empty()) client.set_bearer_token_auth(auth_token_);
    requests_.fetch_add(1);
    auto result = client.Post(path, body, "application/json");
    if (!result) {
      last_status = 0;
      last_error = httplib::to_string(result.error());
      continue;  // transport failure, retryable
    }
    const int status = result->status;
    if (status == 200) {
      try {
        return nlohmann::ordered_json::parse(result->body);
      } catch (const nlohmann::json::exception& err) {
        throw Error(ErrorKind::data,
                    fmt::format("backend returned unparseable JSON: {}", err.what()));
      }
    }
    if (status == 401 || status == 403) {
      throw Error(ErrorKind::auth, fmt::format("backend rejected credentials (HTTP {})", status));
    }
    if (status == 408 || status == 429 || (status >= 500 && status < 600)) {
      last_status = status;
      last_error = fmt::format("HTTP {}", status);
      continue;
    }
    throw Error(ErrorKind::data,
                fmt::format("backend returned unexpected HTTP {}: {}", status,
                            result->body.size() > 200 ? result->body.substr(0, 200) + "..."
                                                      : result->body));
  }
  throw RetryExhaustedError(
      last_status, fmt::format("backend still failing after {} retries (last: {})",
                               config_.max_retries, last_error));
}

std::vector<std::string> HttpBackend::complete(const std::vector<Message>& messages, int n) {
  if (n < 1) throw Error(ErrorKind::invariant, "completion count must be >= 1");
  auto body_for = [&](int count) {
    nlohmann::ordered_json body;
    body["model"] = config_.model_name;
    nlohmann::ordered_json rendered = nlohmann::ordered_json::array();
    for (const auto& message : messages) {
      rendered.push_back({{"role", message.role}, {"content", message.content}});
    }
    body["messages"] = std::move(rendered);
    body["temperature"] = config_.temperature;
    body["max_tokens"] = config_.max_tokens;
    if (config_.seed) body["seed"] = *config_.seed;
    if (count > 1) body["n"] = count;
    return body.dump();
  };
  auto texts_from = [](const nlohmann::ordered_json& doc) {
    if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty()) {
      throw Error(ErrorKind::data, "backend reply carries no choices");
    }
    std::vector<std::string> texts;
    for (const auto& choice : doc["choices"]) {
      if (!choice.contains("message") || !choice["message"].contains("content") ||
          !choice["message"]["content"].is_string()) {
        throw Error(ErrorKind::data, "backend choice carries no message content");
      }
      texts.push_back(choice["message"]["content"].get<std::string>());
    }
    return texts;
  };
  std::vector<std::string> completions = texts_from(post_with_retries(body_for(n)));
  if (completions.size() > static_cast<std::size_t>(n)) completions.resize(n);
  // Servers without native multi-sampling return one choice; top up one by one.
  while (completions.size() < static_cast<std::size_t>(n)) {
    auto extra = texts_from(post_with_retries(body_for(1)));
    completions.push_back(std::move(extra.front()));
  }
  return completions;
}

Gateway::Gateway(BackendConfig config, std::shared_ptr<ChatBackend> backend)
    : config_(std::move(config)),
      backend_(std::move(backend)),
      slots_(std::max(1, config_.concurrency_limit)) {
  config_.validate();
  if (!backend_) backend_ = std::make_shared<HttpBackend>(config_);
}

std::vector<std::string> Gateway::sample(const PromptRecipe& recipe, const std::string& question,
                                         const std::optional<std::string>& context, int n) {
  const int count = n == 0 ? config_.n_samples : n;
  if (count < 1) throw Error(ErrorKind::invariant, "completion count must be >= 1");
  const std::vector<Message> messages = build_prompt(recipe, question, context);
  slots_.acquire();
  struct Release {
    std::counting_semaphore<>& slots;
    ~Release() { slots.release(); }
  } release{slots_};
  return backend_->complete(messages, count);
}

}  // namespace cotforge
