#include "bb/bench.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <barrier>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "bb/client.hpp"
#include "bb/digest.hpp"

namespace bb::bench {

using namespace std::chrono_literals;

void BenchConfig::validate() const {
    if (clients < 1)
        throw std::invalid_argument("clients must be >= 1");
    if (transfer_size == 0 || data_per_client % transfer_size != 0)
        throw std::invalid_argument("transfer_size must divide data_per_client");
    if (backend == Backend::BB && manager_addr.empty())
        throw std::invalid_argument("BB backend needs a manager address");
    if (backend == Backend::Direct && direct_dir.empty())
        throw std::invalid_argument("direct backend needs a target directory");
}

std::string file_name(const BenchConfig& cfg, uint32_t rank) {
    if (cfg.mode == Mode::SF)
        return cfg.file_prefix + "_shared.dat";
    return cfg.file_prefix + "_rank" + std::to_string(rank) + ".dat";
}

uint64_t block_offset(const BenchConfig& cfg, uint32_t rank, uint64_t block) {
    if (cfg.mode == Mode::SF)
        // Strided: segment i holds one transfer from every client in rank order.
        return block * cfg.clients * cfg.transfer_size + rank * cfg.transfer_size;
    return block * cfg.transfer_size;
}

uint64_t file_size(const BenchConfig& cfg) {
    return cfg.mode == Mode::SF ? uint64_t(cfg.clients) * cfg.data_per_client
                                : cfg.data_per_client;
}

namespace {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

}  // namespace

Bytes payload_bytes(uint32_t rank, uint32_t iteration, uint64_t offset, uint64_t len) {
    Bytes out(len);
    uint64_t seed = (uint64_t(rank) << 40) ^ (uint64_t(iteration) << 8) ^ offset;
    size_t words = size_t(len / 8);
    auto* p = out.data();
    for (size_t i = 0; i < words; i++) {
        uint64_t v = splitmix64(seed + i);
        std::memcpy(p + i * 8, &v, 8);
    }
    for (size_t i = words * 8; i < len; i++)
        out[i] = uint8_t(splitmix64(seed + i) & 0xff);
    return out;
}

Bytes expected_file_bytes(const BenchConfig& cfg, uint32_t rank, uint32_t iteration) {
    Bytes out(file_size(cfg), 0);
    uint64_t blocks = cfg.data_per_client / cfg.transfer_size;
    if (cfg.mode == Mode::SF) {
        for (uint32_t r = 0; r < cfg.clients; r++)
            for (uint64_t b = 0; b < blocks; b++) {
                uint64_t off = block_offset(cfg, r, b);
                Bytes data = payload_bytes(r, iteration, off, cfg.transfer_size);
                std::memcpy(out.data() + off, data.data(), data.size());
            }
    } else {
        for (uint64_t b = 0; b < blocks; b++) {
            uint64_t off = block_offset(cfg, rank, b);
            Bytes data = payload_bytes(rank, iteration, off, cfg.transfer_size);
            std::memcpy(out.data() + off, data.data(), data.size());
        }
    }
    return out;
}

namespace {

struct SharedState {
    std::mutex mu;
    BenchReport report;
    std::vector<double> flush_seconds;  // by iteration index
};

void direct_worker(const BenchConfig& cfg, uint32_t rank, std::barrier<>& barrier,
                   SharedState& shared) {
    std::string path = cfg.direct_dir + "/" + file_name(cfg, rank);
    uint64_t blocks = cfg.data_per_client / cfg.transfer_size;

    for (uint32_t it = 1; it <= cfg.iterations; it++) {
        auto t0 = std::chrono::steady_clock::now();
        int fd = ::open(path.c_str(), O_CREAT | O_WRONLY, 0644);
        if (fd < 0)
            throw std::runtime_error("open " + path + ": " + std::strerror(errno));
        for (uint64_t b = 0; b < blocks; b++) {
            uint64_t off = block_offset(cfg, rank, b);
            Bytes data = payload_bytes(rank, it, off, cfg.transfer_size);
            size_t done = 0;
            while (done < data.size()) {
                ssize_t n = ::pwrite(fd, data.data() + done, data.size() - done,
                                     off_t(off + done));
                if (n < 0) {
                    if (errno == EINTR) continue;
                    ::close(fd);
                    throw std::runtime_error("pwrite: " + std::string(std::strerror(errno)));
                }
                done += size_t(n);
            }
        }
        ::fdatasync(fd);
        ::close(fd);
        auto t1 = std::chrono::steady_clock::now();
        double secs = std::chrono::duration<double>(t1 - t0).count();
        {
            std::lock_guard lk(shared.mu);
            shared.report.samples.push_back({it, rank, cfg.data_per_client, secs});
        }
        barrier.arrive_and_wait();  // writes done
        barrier.arrive_and_wait();  // (no flush phase)
        if (it != cfg.iterations && cfg.inter_test_delay_s > 0)
            std::this_thread::sleep_for(
                std::chrono::duration<double>(cfg.inter_test_delay_s));
    }
}

void bb_worker(const BenchConfig& cfg, uint32_t rank, std::barrier<>& barrier,
               SharedState& shared) {
    client::ClientConfig cc;
    cc.manager_addr = cfg.manager_addr;
    cc.rank = rank;
    cc.strategy = cfg.strategy;
    cc.window = cfg.window;
    cc.ack_timeout_ms = cfg.ack_timeout_ms;
    cc.flush_timeout_ms = cfg.flush_timeout_ms;
    client::ClientSession session(cc);

    std::string file = file_name(cfg, rank);
    uint64_t blocks = cfg.data_per_client / cfg.transfer_size;

    for (uint32_t it = 1; it <= cfg.iterations; it++) {
        auto t0 = std::chrono::steady_clock::now();
        for (uint64_t b = 0; b < blocks; b++) {
            uint64_t off = block_offset(cfg, rank, b);
            session.write(file, off, payload_bytes(rank, it, off, cfg.transfer_size));
        }
        session.wait();
        auto t1 = std::chrono::steady_clock::now();
        double secs = std::chrono::duration<double>(t1 - t0).count();
        {
            std::lock_guard lk(shared.mu);
            shared.report.samples.push_back({it, rank, cfg.data_per_client, secs});
        }
        barrier.arrive_and_wait();  // every client's epoch it is complete
        if (rank == 0) {
            auto f0 = std::chrono::steady_clock::now();
            session.flush(it);
            auto f1 = std::chrono::steady_clock::now();
            std::lock_guard lk(shared.mu);
            shared.flush_seconds[it - 1] =
                std::chrono::duration<double>(f1 - f0).count();
        }
        barrier.arrive_and_wait();  // flush visible to everyone
        if (it != cfg.iterations && cfg.inter_test_delay_s > 0)
            std::this_thread::sleep_for(
                std::chrono::duration<double>(cfg.inter_test_delay_s));
    }
}

}  // namespace

BenchReport run_workload(const BenchConfig& cfg) {
    cfg.validate();
    if (cfg.backend == Backend::Direct)
        std::filesystem::create_directories(cfg.direct_dir);

    SharedState shared;
    shared.flush_seconds.assign(cfg.iterations, 0.0);
    std::barrier barrier(std::ptrdiff_t(cfg.clients));

    std::vector<std::thread> workers;
    for (uint32_t rank = 0; rank < cfg.clients; rank++) {
        workers.emplace_back([&, rank] {
            try {
                if (cfg.backend == Backend::BB)
                    bb_worker(cfg, rank, barrier, shared);
                else
                    direct_worker(cfg, rank, barrier, shared);
            } catch (const std::exception& e) {
                {
                    std::lock_guard lk(shared.mu);
                    shared.report.failed = true;
                    if (shared.report.error.empty())
                        shared.report.error =
                            "rank " + std::to_string(rank) + ": " + e.what();
                }
                barrier.arrive_and_drop();
            }
        });
    }
    for (auto& w : workers)
        w.join();

    BenchReport& rep = shared.report;
    for (uint32_t it = 1; it <= cfg.iterations; it++) {
        IterationStats s;
        s.iteration = it;
        for (const auto& c : rep.samples) {
            if (c.iteration != it) continue;
            s.bytes += c.bytes;
            s.seconds = std::max(s.seconds, c.seconds);
        }
        s.bandwidth_bps = s.seconds > 0 ? double(s.bytes) / s.seconds : 0;
        s.flush_seconds = shared.flush_seconds[it - 1];
        rep.iterations.push_back(s);
        rep.total_bytes += s.bytes;
        rep.total_seconds += s.seconds;
    }
    rep.aggregate_bandwidth_bps =
        rep.total_seconds > 0 ? double(rep.total_bytes) / rep.total_seconds : 0;

    if (cfg.verify && !rep.failed) {
        rep.verify_ran = true;
        rep.verified = true;
        std::string dir = cfg.backend == Backend::Direct ? cfg.direct_dir
                                                         : cfg.verify_dir;
        uint32_t files = cfg.mode == Mode::SF ? 1 : cfg.clients;
        for (uint32_t rank = 0; rank < files; rank++) {
            Bytes expect = expected_file_bytes(cfg, rank, cfg.iterations);
            std::string path = dir + "/" + file_name(cfg, rank);
            std::string want = digest::sha256_hex(expect);
            std::string got;
            try {
                got = digest::sha256_file_hex(path);
            } catch (const std::exception& e) {
                rep.verified = false;
                rep.error = e.what();
                break;
            }
            if (want != got) {
                rep.verified = false;
                rep.error = "digest mismatch for " + path;
                break;
            }
        }
    }
    return rep;
}

void emit_report(const BenchReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write " + path);
    out << "kind,iteration,client,bytes,seconds,bandwidth_bps,flush_seconds,verified\n";
    out.precision(9);
    for (const auto& s : report.samples)
        out << "sample," << s.iteration << ',' << s.client << ',' << s.bytes << ','
            << s.seconds << ",,,\n";
    for (const auto& s : report.iterations)
        out << "iteration," << s.iteration << ",," << s.bytes << ',' << s.seconds
            << ',' << s.bandwidth_bps << ',' << s.flush_seconds << ",\n";
    if (!report.samples.empty() || !report.iterations.empty())
        out << "aggregate,,," << report.total_bytes << ',' << report.total_seconds
            << ',' << report.aggregate_bandwidth_bps << ",,"
            << (report.verify_ran ? (report.verified ? "pass" : "fail") : "") << "\n";
    if (!out)
        throw std::runtime_error("write failed for " + path);
}

BenchReport parse_report(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot read " + path);
    BenchReport rep;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ','))
            cols.push_back(col);
        cols.resize(8);
        if (cols[0] == "sample") {
            ClientSample s;
            s.iteration = uint32_t(std::stoul(cols[1]));
            s.client = uint32_t(std::stoul(cols[2]));
            s.bytes = std::stoull(cols[3]);
            s.seconds = std::stod(cols[4]);
            rep.samples.push_back(s);
        } else if (cols[0] == "iteration") {
            IterationStats s;
            s.iteration = uint32_t(std::stoul(cols[1]));
            s.bytes = std::stoull(cols[3]);
            s.seconds = std::stod(cols[4]);
            s.bandwidth_bps = std::stod(cols[5]);
            s.flush_seconds = std::stod(cols[6]);
            rep.iterations.push_back(s);
        } else if (cols[0] == "aggregate") {
            rep.total_bytes = std::stoull(cols[3]);
            rep.total_seconds = std::stod(cols[4]);
            rep.aggregate_bandwidth_bps = std::stod(cols[5]);
            rep.verify_ran = !cols[7].empty();
            rep.verified = cols[7] == "pass";
        }
    }
    return rep;
}

void print_summary(const BenchConfig& cfg, const BenchReport& report) {
    std::printf("mode=%s backend=%s placement=%s clients=%u transfer=%llu data/client=%llu iterations=%u\n",
                cfg.mode == Mode::SF ? "sf" : "sfp",
                cfg.backend == Backend::BB ? "bb" : "direct",
                placement::strategy_name(cfg.strategy), cfg.clients,
                (unsigned long long)cfg.transfer_size,
                (unsigned long long)cfg.data_per_client, cfg.iterations);
    for (const auto& s : report.iterations)
        std::printf("  iter %2u: %8.2f MB/s  (%.3fs ingest, %.3fs flush)\n",
                    s.iteration, s.bandwidth_bps / 1e6, s.seconds, s.flush_seconds);
    std::printf("aggregate: %.2f MB/s over %llu bytes\n",
                report.aggregate_bandwidth_bps / 1e6,
                (unsigned long long)report.total_bytes);
    if (report.verify_ran)
        std::printf("verify: %s\n", report.verified ? "pass" : "FAIL");
    if (report.failed)
        std::printf("FAILED: %s\n", report.error.c_str());
}

}  // namespace bb::bench
