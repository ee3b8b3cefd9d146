#pragma once

// One JSON object per line, for the test harness and for debugging.
// Controlled by BB_LOG (path or "-" for stderr); silent when unset.

#include <string>

#include <nlohmann/json.hpp>

namespace bb::log {

using Fields = nlohmann::json;

void open(const std::string& target);  // path, "-" (stderr), or "" (off)
void open_from_env();
bool enabled();

void event(const std::string& component, const std::string& what, Fields fields = {});

}  // namespace bb::log
