#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <fmt/format.h>

#include "cotforge/error.hpp"
#include "cotforge/gateway.hpp"
#include "cotforge/log.hpp"
#include "test_util.hpp"

using namespace cotforge;
using testutil::TempDir;

namespace {

BackendConfig fast_config(const std::string& base_url) {
  BackendConfig config;
  config.base_url = base_url;
  config.model_name = "test-model";
  config.timeout = std::chrono::milliseconds(2000);
  config.max_retries = 3;
  config.retry_backoff = std::chrono::milliseconds(1);
  return config;
}

// Loopback chat server for exercising the real HTTP path.
struct TestServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;

  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    thread = std::thread([this] { server.listen_after_bind(); });
    while (!server.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  ~TestServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
};

std::string one_choice(const std::string& content) {
  nlohmann::ordered_json doc;
  doc["choices"] = {{{"message", {{"content", content}}}}};
  return doc.dump();
}

// Port that nothing listens on: bind an ephemeral port, note it, release it.
int closed_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(fd >= 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  REQUIRE(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
  socklen_t len = sizeof(addr);
  REQUIRE(::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) == 0);
  const int port = ntohs(addr.sin_port);
  ::close(fd);
  return port;
}

class CountingBackend : public ChatBackend {
 public:
  std::vector<std::string> complete(const std::vector<Message>&, int n) override {
    const int now = in_flight.fetch_add(1) + 1;
    int seen = max_in_flight.load();
    while (now > seen && !max_in_flight.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    in_flight.fetch_sub(1);
    calls.fetch_add(1);
    return std::vector<std::string>(static_cast<std::size_t>(n), "ok");
  }

  std::atomic<int> in_flight{0};
  std::atomic<int> max_in_flight{0};
  std::atomic<int> calls{0};
};

}  // namespace

TEST_SUITE("model-gateway") {

TEST_CASE("freeform prompts are the bare question after the system text") {
  const auto recipe = PromptRecipe::create(PromptMode::llm_freeform, "Solve carefully.");
  const auto messages = build_prompt(recipe, "What is 2 + 2?");
  REQUIRE(messages.size() == 2);
  CHECK(messages[0] == Message{"system", "Solve carefully."});
  CHECK(messages[1] == Message{"user", "What is 2 + 2?"});

  const auto bare = build_prompt(PromptRecipe::create(PromptMode::llm_freeform, ""), "Q?");
  REQUIRE(bare.size() == 1);
  CHECK(bare[0].role == "user");
}

TEST_CASE("structuring prompts interleave demonstrations and carry the response context") {
  const auto recipe = PromptRecipe::create(
      PromptMode::slm_analyze, "Rewrite.",
      {{"shown question", "shown reply"}, {"other question", "other reply"}});
  const auto messages = build_prompt(recipe, "What is 2 + 2?",
                                     std::optional<std::string>("It is four."));
  REQUIRE(messages.size() == 6);
  CHECK(messages[0] == Message{"system", "Rewrite."});
  CHECK(messages[1] == Message{"user", "shown question"});
  CHECK(messages[2] == Message{"assistant", "shown reply"});
  CHECK(messages[3] == Message{"user", "other question"});
  CHECK(messages[4] == Message{"assistant", "other reply"});
  CHECK(messages[5] ==
        Message{"user", "Question:\nWhat is 2 + 2?\n\nModel response:\nIt is four."});
}

TEST_CASE("a reference-answer hint is appended to the structuring prompt") {
  const auto recipe = PromptRecipe::create(PromptMode::slm_analyze, "", {},
                                           std::optional<std::string>("4"));
  const auto messages =
      build_prompt(recipe, "What is 2 + 2?", std::optional<std::string>("It is four."));
  REQUIRE(messages.size() == 1);
  CHECK(messages[0].content ==
        "Question:\nWhat is 2 + 2?\n\nModel response:\nIt is four.\n\nReference answer: 4");
}

TEST_CASE("recipe and prompt invariants") {
  CHECK_THROWS_AS(PromptRecipe::create(PromptMode::llm_freeform, "", {{"only", "one"}}), Error);
  CHECK_THROWS_AS(PromptRecipe::create(PromptMode::llm_freeform, "", {},
                                       std::optional<std::string>("4")),
                  Error);
  CHECK_THROWS_AS(PromptRecipe::create(PromptMode::slm_analyze, "", {},
                                       std::optional<std::string>("  ")),
                  Error);

  const auto freeform = PromptRecipe::create(PromptMode::llm_freeform, "");
  const auto analyze = PromptRecipe::create(PromptMode::slm_analyze, "");
  CHECK_THROWS_AS(build_prompt(freeform, "  "), Error);
  CHECK_THROWS_AS(build_prompt(freeform, "Q?", std::optional<std::string>("ctx")), Error);
  CHECK_THROWS_AS(build_prompt(analyze, "Q?"), Error);
  CHECK_THROWS_AS(build_prompt(analyze, "Q?", std::optional<std::string>(" ")), Error);
}

TEST_CASE("request fingerprints are stable and sensitive to every input") {
  const std::vector<Message> messages = {{"system", "S"}, {"user", "Q"}};
  const std::string base = request_fingerprint("m", messages, 5);
  CHECK(base.size() == 16);
  CHECK(base == request_fingerprint("m", messages, 5));

  CHECK(base != request_fingerprint("m2", messages, 5));
  CHECK(base != request_fingerprint("m", messages, 4));
  CHECK(base != request_fingerprint("m", {{"system", "S"}, {"user", "Q!"}}, 5));
  CHECK(base != request_fingerprint("m", {{"system", "S"}, {"assistant", "Q"}}, 5));
  CHECK(base != request_fingerprint("m", {{"system", "S"}}, 5));
}

TEST_CASE("scripted backends replay canned completions as a pure function") {
  auto script = std::make_shared<MockScript>();
  const std::vector<Message> messages = {{"user", "hello"}};
  script->add("test-model", messages, 3, {"a", "b", "c", "d"});
  ScriptedMockBackend backend("test-model", script);

  const auto first = backend.complete(messages, 3);
  CHECK(first == std::vector<std::string>{"a", "b", "c"});
  CHECK(backend.complete(messages, 3) == first);  // replay, not consumption

  SUBCASE("an unknown request is a scripted miss") {
    try {
      backend.complete({{"user", "unexpected"}}, 1);
      FAIL("expected a scripted miss");
    } catch (const Error& err) {
      CHECK(err.kind() == ErrorKind::script_miss);
      CHECK(exit_code_for(err.kind()) == 2);
      CHECK(std::string(err.what()).find("unexpected") != std::string::npos);
    }
  }
  SUBCASE("an entry shorter than the request is a scripted miss") {
    script->add("test-model", messages, 9, {"only", "two"});
    CHECK_THROWS_AS(backend.complete(messages, 9), Error);
  }
}

TEST_CASE("mock scripts round-trip through their on-disk form") {
  TempDir tmp("gw-script");
  MockScript script;
  script.delay = std::chrono::milliseconds(25);
  script.add("m", {{"user", "q1"}}, 2, {"x", "y"});
  script.add("m", {{"user", "q2"}}, 1, {"z"});
  const std::string path = tmp.file("script.json");
  script.save(path);

  const MockScript loaded = MockScript::load(path);
  CHECK(loaded.delay == script.delay);
  CHECK(loaded.entries == script.entries);

  const std::string bad = tmp.file("bad.json");
  atomic_write_file(bad, "{\"delay_ms\": -3, \"entries\": {}}");
  CHECK_THROWS_AS(MockScript::load(bad), Error);
}

TEST_CASE("a scripted delay is actually slept") {
  auto script = std::make_shared<MockScript>();
  script->delay = std::chrono::milliseconds(20);
  const std::vector<Message> messages = {{"user", "hello"}};
  script->add("m", messages, 1, {"ok"});
  ScriptedMockBackend backend("m", script);
  const auto start = std::chrono::steady_clock::now();
  backend.complete(messages, 1);
  CHECK(std::chrono::steady_clock::now() - start >= std::chrono::milliseconds(20));
}

TEST_CASE("transient statuses retry with backoff until the backend recovers") {
  set_log_quiet(true);
  TestServer server;
  std::atomic<int> hits{0};
  std::string seen_auth;
  server.server.Post("/v1/chat/completions",
                     [&](const httplib::Request& req, httplib::Response& res) {
                       if (hits.fetch_add(1) + 1 <= 2) {
                         res.status = 429;
                         res.set_content("slow down", "text/plain");
                         return;
                       }
                       seen_auth = req.get_header_value("Authorization");
                       res.set_content(one_choice("hi"), "application/json");
                     });
  server.start();

  ::setenv("COTFORGE_TEST_KEY_SET", "sk-test", 1);
  auto config = fast_config(fmt::format("http://127.0.0.1:{}/v1", server.port));
  config.api_key_env_var = "COTFORGE_TEST_KEY_SET";
  HttpBackend backend(config);
  const auto texts = backend.complete({{"user", "hello"}}, 1);
  CHECK(texts == std::vector<std::string>{"hi"});
  CHECK(hits.load() == 3);
  CHECK(backend.stats().requests == 3);
  CHECK(backend.stats().retries == 2);
  CHECK(seen_auth == "Bearer sk-test");
}

TEST_CASE("a backend that never recovers exhausts its retries") {
  set_log_quiet(true);
  TestServer server;
  std::atomic<int> hits{0};
  server.server.Post("/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    hits.fetch_add(1);
    res.status = 503;
  });
  server.start();

  auto config = fast_config(fmt::format("http://127.0.0.1:{}", server.port));
  config.max_retries = 2;
  HttpBackend backend(config);
  try {
    backend.complete({{"user", "hello"}}, 1);
    FAIL("expected retry exhaustion");
  } catch (const RetryExhaustedError& err) {
    CHECK(err.last_status() == 503);
    CHECK(exit_code_for(err.kind()) == 2);
  }
  CHECK(hits.load() == 3);  // initial attempt plus two retries
}

TEST_CASE("a connection that cannot be opened exhausts as a transport failure") {
  set_log_quiet(true);
  auto config = fast_config(fmt::format("http://127.0.0.1:{}", closed_port()));
  config.max_retries = 1;
  HttpBackend backend(config);
  try {
    backend.complete({{"user", "hello"}}, 1);
    FAIL("expected retry exhaustion");
  } catch (const RetryExhaustedError& err) {
    CHECK(err.last_status() == 0);
  }
  CHECK(backend.stats().requests == 2);
}

TEST_CASE("auth problems fail fast") {
  SUBCASE("a named but unset key refuses to construct, before any request") {
    ::unsetenv("COTFORGE_TEST_KEY_MISSING");
    auto config = fast_config("http://127.0.0.1:1/v1");
    config.api_key_env_var = "COTFORGE_TEST_KEY_MISSING";
    try {
      HttpBackend backend(config);
      FAIL("expected an auth error");
    } catch (const Error& err) {
      CHECK(err.kind() == ErrorKind::auth);
      CHECK(exit_code_for(err.kind()) == 2);
    }
  }
  SUBCASE("a 401 is not retried") {
    TestServer server;
    std::atomic<int> hits{0};
    server.server.Post("/chat/completions",
                       [&](const httplib::Request&, httplib::Response& res) {
                         hits.fetch_add(1);
                         res.status = 401;
                       });
    server.start();
    HttpBackend backend(fast_config(fmt::format("http://127.0.0.1:{}", server.port)));
    try {
      backend.complete({{"user", "hello"}}, 1);
      FAIL("expected an auth error");
    } catch (const Error& err) {
      CHECK(err.kind() == ErrorKind::auth);
    }
    CHECK(hits.load() == 1);
  }
}

TEST_CASE("non-retryable statuses and malformed bodies are data errors") {
  TestServer server;
  std::atomic<int> hits{0};
  server.server.Post("/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    if (hits.fetch_add(1) == 0) {
      res.status = 404;
      return;
    }
    res.set_content("not json at all", "application/json");
  });
  server.start();
  HttpBackend backend(fast_config(fmt::format("http://127.0.0.1:{}", server.port)));

  try {
    backend.complete({{"user", "hello"}}, 1);
    FAIL("expected a data error");
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::data);
    CHECK(exit_code_for(err.kind()) == 3);
  }
  CHECK(hits.load() == 1);

  CHECK_THROWS_AS(backend.complete({{"user", "hello"}}, 1), Error);  // malformed 200
  CHECK(hits.load() == 2);
}

TEST_CASE("single-choice servers are topped up to the requested sample count") {
  TestServer server;
  std::atomic<int> hits{0};
  std::vector<bool> saw_n;
  std::mutex mutex;
  server.server.Post("/chat/completions",
                     [&](const httplib::Request& req, httplib::Response& res) {
                       const int hit = hits.fetch_add(1) + 1;
                       const auto body = nlohmann::json::parse(req.body);
                       {
                         std::lock_guard<std::mutex> lock(mutex);
                         saw_n.push_back(body.contains("n"));
                       }
                       CHECK(body["model"] == "test-model");
                       res.set_content(one_choice(fmt::format("r{}", hit)), "application/json");
                     });
  server.start();
  HttpBackend backend(fast_config(fmt::format("http://127.0.0.1:{}", server.port)));

  const auto texts = backend.complete({{"user", "hello"}}, 3);
  CHECK(texts == std::vector<std::string>{"r1", "r2", "r3"});
  CHECK(hits.load() == 3);
  REQUIRE(saw_n.size() == 3);
  CHECK(saw_n[0]);         // the first request asks for all three at once
  CHECK_FALSE(saw_n[1]);   // top-ups are single completions
  CHECK_FALSE(saw_n[2]);
}

TEST_CASE("surplus choices are truncated to the requested count") {
  TestServer server;
  server.server.Post("/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    nlohmann::ordered_json doc;
    doc["choices"] = {{{"message", {{"content", "a"}}}},
                      {{"message", {{"content", "b"}}}},
                      {{"message", {{"content", "c"}}}}};
    res.set_content(doc.dump(), "application/json");
  });
  server.start();
  HttpBackend backend(fast_config(fmt::format("http://127.0.0.1:{}", server.port)));
  CHECK(backend.complete({{"user", "hello"}}, 2) == std::vector<std::string>{"a", "b"});
}

TEST_CASE("backend configuration is validated up front") {
  BackendConfig config = fast_config("http://127.0.0.1:1");
  config.base_url = "";
  CHECK_THROWS_AS(config.validate(), Error);

  config = fast_config("ftp://example.test");
  CHECK_THROWS_AS(HttpBackend{config}, Error);

  config = fast_config("http://127.0.0.1:1");
  config.n_samples = 0;
  CHECK_THROWS_AS(config.validate(), Error);
  config = fast_config("http://127.0.0.1:1");
  config.concurrency_limit = 0;
  CHECK_THROWS_AS(config.validate(), Error);
}

TEST_CASE("the gateway bounds in-flight requests to the configured limit") {
  BackendConfig config = fast_config("http://unused.invalid");
  config.concurrency_limit = 2;
  auto backend = std::make_shared<CountingBackend>();
  Gateway gateway(config, backend);
  const auto recipe = PromptRecipe::create(PromptMode::llm_freeform, "");

  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&] {
      const auto texts = gateway.sample(recipe, "What is 2 + 2?", std::nullopt, 2);
      CHECK(texts.size() == 2);
    });
  }
  for (auto& thread : threads) thread.join();
  CHECK(backend->calls.load() == 8);
  CHECK(backend->max_in_flight.load() <= 2);
  CHECK(backend->max_in_flight.load() >= 1);
}

TEST_CASE("the gateway fills in the configured sample count") {
  BackendConfig config = fast_config("http://unused.invalid");
  config.n_samples = 4;
  auto backend = std::make_shared<CountingBackend>();
  Gateway gateway(config, backend);
  const auto recipe = PromptRecipe::create(PromptMode::llm_freeform, "");
  CHECK(gateway.sample(recipe, "Q?").size() == 4);
  CHECK(gateway.sample(recipe, "Q?", std::nullopt, 1).size() == 1);
}

}  // TEST_SUITE
