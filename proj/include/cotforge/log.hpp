#pragma once

#include <nlohmann/json.hpp>

namespace cotforge {

// Structured run logs: one JSON object per line on stderr, so stdout stays
// reserved for result tables. Timestamps appear only here, never in
// artifacts.
void set_log_quiet(bool quiet);
void log_event(const char* level, const char* event,
               nlohmann::ordered_json fields = nlohmann::ordered_json::object());

}  // namespace cotforge
