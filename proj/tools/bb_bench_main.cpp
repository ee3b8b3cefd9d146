#include <cstdio>

#include <CLI11.hpp>

#include "bb/bench.hpp"
#include "bb/log.hpp"

namespace {
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
    CLI::App app{"IOR-style bursty checkpoint benchmark"};
    std::string mode = "sf", backend = "bb", placement = "ketama";
    std::string transfer_size = "1M", data_per_client = "4G";
    std::string manager_addr = "127.0.0.1:9800";
    std::string direct_dir = "./direct_out", verify_dir, out_csv;
    bb::bench::BenchConfig cfg;

    app.add_option("--mode", mode, "sf (shared file) | sfp (file per process)");
    app.add_option("--clients", cfg.clients, "number of client workers");
    app.add_option("--transfer-size", transfer_size, "bytes per write (e.g. 1M)");
    app.add_option("--data-per-client", data_per_client, "bytes per client per iteration");
    app.add_option("--iterations", cfg.iterations, "checkpoint iterations");
    app.add_option("--inter-test-delay", cfg.inter_test_delay_s,
                   "seconds of compute-phase idle between iterations");
    app.add_option("--backend", backend, "bb | direct");
    app.add_option("--placement", placement, "ketama | iso");
    app.add_option("--manager-addr", manager_addr, "manager address (bb backend)");
    app.add_option("--direct-dir", direct_dir, "target dir (direct backend)");
    app.add_option("--verify-dir", verify_dir, "flushed-file dir for --verify (bb backend)");
    app.add_flag("--verify", cfg.verify, "check flushed files against the oracle digest");
    app.add_option("--out", out_csv, "CSV report path");
    app.add_option("--window", cfg.window, "client ACK window W");
    CLI11_PARSE(app, argc, argv);

    bb::log::open_from_env();
    try {
        cfg.mode = mode == "sfp" ? bb::bench::Mode::SFP : bb::bench::Mode::SF;
        cfg.backend = backend == "direct" ? bb::bench::Backend::Direct
                                          : bb::bench::Backend::BB;
        cfg.strategy = bb::placement::strategy_from_string(placement);
        cfg.transfer_size = parse_size(transfer_size);
        cfg.data_per_client = parse_size(data_per_client);
        cfg.manager_addr = manager_addr;
        cfg.direct_dir = direct_dir;
        cfg.verify_dir = verify_dir;

        auto report = bb::bench::run_workload(cfg);
        bb::bench::print_summary(cfg, report);
        if (!out_csv.empty()) {
            bb::bench::emit_report(report, out_csv);
            std::printf("report written to %s\n", out_csv.c_str());
        }
        if (report.failed || (report.verify_ran && !report.verified))
            return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "bb-bench: %s\n", e.what());
        return 1;
    }
    return 0;
}
