#include <csignal>
#include <cstdio>

#include <CLI11.hpp>

#include "bb/log.hpp"
#include "bb/server.hpp"
#include "bb/transport.hpp"

namespace {
volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }

uint64_t parse_size(const std::string& s) {
    size_t idx = 0;
    double v = std::stod(s, &idx);
    std::string unit = s.substr(idx);
    if (unit == "" || unit == "B") return uint64_t(v);
    if (unit == "K" || unit == "KiB" || unit == "k") return uint64_t(v * 1024);
    if (unit == "M" || unit == "MiB" || unit == "m") return uint64_t(v * 1024 * 1024);
    if (unit == "G" || unit == "GiB" || unit == "g")
        return uint64_t(v * 1024 * 1024 * 1024);
    throw CLI::ValidationError("size", "unknown unit '" + unit + "'");
}
}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"burst buffer server daemon"};
    std::string listen_addr = "127.0.0.1:0";
    std::string manager_addr = "127.0.0.1:9800";
    std::string mem_capacity = "1G";
    bb::server::ServerConfig cfg;
    bool no_redirect = false;
    app.add_option("--listen-addr", listen_addr, "listen address (host:port, port 0 = auto)");
    app.add_option("--manager-addr", manager_addr, "manager address");
    app.add_option("--mem-capacity", mem_capacity, "memory tier budget (e.g. 512M, 2G)");
    app.add_option("--spill-dir", cfg.spill_dir, "directory for the spill log");
    app.add_option("--pfs-dir", cfg.pfs_dir, "backing filesystem directory");
    app.add_option("--replicas", cfg.replicas, "replica count r");
    app.add_option("--successors", cfg.successors, "successor list length k");
    app.add_option("--stabilize-ms", cfg.stabilize_ms, "stabilization period");
    app.add_flag("--no-redirect", no_redirect, "spill instead of redirecting overload");
    app.add_flag("--spill-sync", cfg.spill_sync, "O_DSYNC spill writes");
    app.add_option("--join-predecessor", cfg.join_predecessor,
                   "join an existing ring behind this server address");
    CLI11_PARSE(app, argc, argv);

    bb::log::open_from_env();
    cfg.listen_port = bb::transport::split_address(listen_addr).second;
    cfg.manager_addr = manager_addr;
    cfg.mem_capacity = parse_size(mem_capacity);
    cfg.redirect = !no_redirect;

    bb::server::ServerNode node(cfg);
    try {
        node.start();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "server: %s\n", e.what());
        return 1;
    }
    std::printf("server listening on %s\n", node.address().c_str());
    std::fflush(stdout);
    if (!node.wait_ready(60000)) {
        std::fprintf(stderr, "server: no ring update from manager\n");
        return 1;
    }
    std::printf("ring joined, ordinal %u\n", node.ring_view().self.ordinal);
    std::fflush(stdout);

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop)
        std::this_thread::sleep_for(std::chrono::milliseconds(200));
    node.stop();
    return 0;
}
