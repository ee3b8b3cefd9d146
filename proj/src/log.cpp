#include "bb/log.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <mutex>

namespace bb::log {

namespace {
std::mutex g_mu;
FILE* g_out = nullptr;
bool g_owned = false;
}  // namespace

void open(const std::string& target) {
    std::lock_guard lk(g_mu);
    if (g_out && g_owned) std::fclose(g_out);
    g_out = nullptr;
    g_owned = false;
    if (target.empty()) return;
    if (target == "-") {
        g_out = stderr;
    } else {
        g_out = std::fopen(target.c_str(), "a");
        g_owned = g_out != nullptr;
    }
}

void open_from_env() {
    if (const char* v = std::getenv("BB_LOG"))
        open(v);
}

bool enabled() {
    std::lock_guard lk(g_mu);
    return g_out != nullptr;
}

void event(const std::string& component, const std::string& what, Fields fields) {
    std::lock_guard lk(g_mu);
    if (!g_out) return;
    auto now = std::chrono::duration_cast<std::chrono::microseconds>(
                   std::chrono::system_clock::now().time_since_epoch())
                   .count();
    fields["ts_us"] = now;
    fields["component"] = component;
    fields["event"] = what;
    std::string line = fields.dump();
    std::fwrite(line.data(), 1, line.size(), g_out);
    std::fputc('\n', g_out);
    std::fflush(g_out);
}

}  // namespace bb::log
