#pragma once

// IOR-style bursty checkpoint workload driver. Each iteration every client
// writes its data in transfer-size units, drains the ACK window, rank 0
// triggers the flush, then everyone idles for the inter-test delay.

#include <cstdint>
#include <string>
#include <vector>

#include "bb/bytes.hpp"
#include "bb/placement.hpp"

namespace bb::bench {

enum class Mode { SF, SFP };         // shared file / separate file per process
enum class Backend { BB, Direct };   // burst buffer or straight to the dir

struct BenchConfig {
    Mode mode = Mode::SF;
    uint32_t clients = 1;
    uint64_t transfer_size = 1ull << 20;       // 1 MiB units
    uint64_t data_per_client = 4ull << 30;     // 4 GiB
    uint32_t iterations = 10;
    double inter_test_delay_s = 20.0;
    Backend backend = Backend::BB;
    placement::Strategy strategy = placement::Strategy::Ketama;
    bool verify = false;
    std::string manager_addr;   // BB backend
    std::string direct_dir;     // Direct backend target
    std::string verify_dir;     // where flushed files appear (BB: the pfs dir)
    std::string file_prefix = "ior";
    unsigned window = 16;
    int ack_timeout_ms = 5000;
    int flush_timeout_ms = 180000;

    void validate() const;  // transfer_size divides data_per_client; clients >= 1
};

struct ClientSample {
    uint32_t iteration = 0;
    uint32_t client = 0;
    uint64_t bytes = 0;
    double seconds = 0;
};

struct IterationStats {
    uint32_t iteration = 0;
    uint64_t bytes = 0;
    double seconds = 0;  // max client wall time in the iteration
    double bandwidth_bps = 0;
    double flush_seconds = 0;
};

struct BenchReport {
    std::vector<ClientSample> samples;
    std::vector<IterationStats> iterations;
    uint64_t total_bytes = 0;
    double total_seconds = 0;
    double aggregate_bandwidth_bps = 0;
    bool verified = false;      // verification ran and passed
    bool verify_ran = false;
    bool failed = false;
    std::string error;
};

// Workload geometry, shared with the verification oracle.
std::string file_name(const BenchConfig& cfg, uint32_t rank);
uint64_t block_offset(const BenchConfig& cfg, uint32_t rank, uint64_t block);
uint64_t file_size(const BenchConfig& cfg);
Bytes payload_bytes(uint32_t rank, uint32_t iteration, uint64_t offset, uint64_t len);

// Oracle assembly: the file contents after iteration `iteration` completes.
Bytes expected_file_bytes(const BenchConfig& cfg, uint32_t rank, uint32_t iteration);

BenchReport run_workload(const BenchConfig& cfg);

void emit_report(const BenchReport& report, const std::string& path);
BenchReport parse_report(const std::string& path);
void print_summary(const BenchConfig& cfg, const BenchReport& report);

}  // namespace bb::bench
