#include <cstdio>
#include <fstream>

#include <CLI11.hpp>

#include "bb/client.hpp"
#include "bb/log.hpp"

int main(int argc, char** argv) {
    CLI::App app{"burst buffer debugging client"};
    std::string manager_addr = "127.0.0.1:9800";
    uint32_t rank = 0;
    std::string placement = "ketama";
    app.add_option("--manager-addr", manager_addr, "manager address");
    app.add_option("--rank", rank, "client rank");
    app.add_option("--placement", placement, "ketama|iso");

    std::string file_id, data, out_path;
    uint64_t offset = 0, length = 0;
    uint32_t epoch = 0;

    auto* put = app.add_subcommand("put", "write one record");
    put->add_option("file", file_id)->required();
    put->add_option("offset", offset)->required();
    put->add_option("data", data, "payload string")->required();

    auto* get = app.add_subcommand("get", "read a byte range");
    get->add_option("file", file_id)->required();
    get->add_option("offset", offset)->required();
    get->add_option("length", length)->required();
    get->add_option("--out", out_path, "write payload to a file instead of stdout");

    auto* flush = app.add_subcommand("flush", "flush an epoch to the backing fs");
    flush->add_option("--epoch", epoch, "epoch to flush (0 = last completed)");

    app.require_subcommand(1);
    CLI11_PARSE(app, argc, argv);

    bb::log::open_from_env();
    try {
        bb::client::ClientConfig cfg;
        cfg.manager_addr = manager_addr;
        cfg.rank = rank;
        cfg.strategy = bb::placement::strategy_from_string(placement);
        bb::client::ClientSession session(cfg);

        if (put->parsed()) {
            bb::Bytes payload(data.begin(), data.end());
            uint64_t seq = session.write(file_id, offset, std::move(payload));
            session.wait();
            std::printf("acked seq=%llu epoch=%u\n", (unsigned long long)seq,
                        session.last_completed_epoch());
        } else if (get->parsed()) {
            bb::Bytes bytes = session.read(file_id, offset, length);
            if (out_path.empty()) {
                fwrite(bytes.data(), 1, bytes.size(), stdout);
            } else {
                std::ofstream out(out_path, std::ios::binary);
                out.write(reinterpret_cast<const char*>(bytes.data()),
                          std::streamsize(bytes.size()));
            }
        } else if (flush->parsed()) {
            // Flushing an explicit epoch needs no prior writes in this session.
            if (epoch == 0) {
                std::fprintf(stderr, "flush: --epoch required for bb-cli\n");
                return 2;
            }
            session.flush(epoch);
            std::printf("flushed epoch %u\n", epoch);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "bb-cli: %s\n", e.what());
        return 1;
    }
    return 0;
}
