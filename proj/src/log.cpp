#include "cotforge/log.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <mutex>

#include <fmt/chrono.h>
#include <fmt/format.h>

namespace cotforge {

namespace {

std::atomic<bool> g_quiet{false};
std::mutex g_log_mutex;

}  // namespace

void set_log_quiet(bool quiet) { g_quiet.store(quiet); }

void log_event(const char* level, const char* event, nlohmann::ordered_json fields) {
  if (g_quiet.load()) return;
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()) %
                  std::chrono::seconds(1);
  nlohmann::ordered_json line;
  line["ts"] = fmt::format("{:%FT%T}.{:03d}Z", fmt::gmtime(std::chrono::system_clock::to_time_t(now)),
                           static_cast<int>(ms.count()));
  line["level"] = level;
  line["event"] = event;
  for (auto& item : fields.items()) line[item.key()] = std::move(item.value());
  const std::string text = line.dump();
  std::lock_guard<std::mutex> lock(g_log_mutex);
  std::fputs(text.c_str(), stderr);
  std::fputc('\n', stderr);
}

}  // namespace cotforge
