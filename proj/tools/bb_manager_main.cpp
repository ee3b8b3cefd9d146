#include <csignal>
#include <cstdio>

#include <CLI11.hpp>

#include "bb/log.hpp"
#include "bb/manager.hpp"
#include "bb/transport.hpp"

namespace {
volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }
}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"burst buffer manager"};
    std::string manager_addr = "127.0.0.1:9800";
    uint32_t expected_servers = 0;
    int wait_ms = 3000;
    int flush_timeout_ms = 120000;
    app.add_option("--manager-addr", manager_addr, "listen address (host:port)");
    app.add_option("--expected-servers", expected_servers,
                   "form the ring as soon as this many servers register");
    app.add_option("--wait-ms", wait_ms, "registration window in ms");
    app.add_option("--flush-timeout-ms", flush_timeout_ms,
                   "per-phase flush timeout in ms");
    CLI11_PARSE(app, argc, argv);

    bb::log::open_from_env();
    bb::manager::ManagerConfig cfg;
    cfg.listen_port = bb::transport::split_address(manager_addr).second;
    cfg.expected_servers = expected_servers;
    cfg.wait_ms = wait_ms;
    cfg.flush_phase_timeout_ms = flush_timeout_ms;

    bb::manager::ManagerNode node(cfg);
    try {
        node.start();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "manager: %s\n", e.what());
        return 1;
    }
    std::printf("manager listening on %s\n", node.address().c_str());
    std::fflush(stdout);

    if (!node.wait_ring_up(-1)) {
        std::fprintf(stderr, "manager: no servers registered within %d ms\n", wait_ms);
        return 1;
    }
    std::printf("ring formed with %zu servers (version %llu)\n",
                node.members().size(), (unsigned long long)node.version());
    std::fflush(stdout);

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop)
        std::this_thread::sleep_for(std::chrono::milliseconds(200));
    node.stop();
    return 0;
}
