#pragma once

// Per-server log-structured storage: a bounded memory tier plus an
// append-only spill file, fronted by a (file, offset, epoch) index.
// Tier choice happens once, at append time; there is no later eviction.

#include <cstdint>
#include <map>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "bb/bytes.hpp"
#include "bb/placement.hpp"

namespace bb::store {

enum class Tier : uint8_t { MEMORY = 0, SPILL = 1 };

struct StorageLocation {
    Tier tier = Tier::MEMORY;
    uint64_t log_offset = 0;  // payload start within the tier log
    uint32_t length = 0;

    bool operator==(const StorageLocation&) const = default;
};

struct MemBudget {
    uint64_t capacity_bytes = 0;
    uint64_t used_bytes = 0;
    uint64_t free() const { return capacity_bytes - used_bytes; }
};

struct WriteRecord {
    std::string file_id;
    uint64_t offset = 0;
    Bytes payload;
    uint32_t epoch = 0;
    uint64_t seq = 0;
    uint32_t client_id = 0;
    std::string primary_addr;  // origin primary server; replicas keep the origin's

    uint32_t length() const { return uint32_t(payload.size()); }
    placement::RecordKey key() const { return {file_id, offset}; }
};

struct SegmentInfo {
    uint64_t offset = 0;
    uint32_t length = 0;
    StorageLocation location;
    uint32_t epoch = 0;
    uint64_t seq = 0;
    uint32_t client_id = 0;
    std::string primary_addr;
};

struct StorageExhausted : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StoreConfig {
    uint64_t mem_capacity_bytes = 1ull << 30;  // --mem-capacity, default 1 GiB
    std::string spill_dir = ".";
    std::string store_id = "0";
    bool spill_sync = false;  // O_DSYNC on the spill file
};

// Spill record layout: key_len u32 | payload_len u32 | epoch u32 |
// offset u64 | file_id_len u32 | file_id | payload. Memory-tier records
// are charged the same header size against the budget.
constexpr uint32_t kRecordHeaderBase = 24;

inline uint32_t record_header_size(const std::string& file_id) {
    return kRecordHeaderBase + uint32_t(file_id.size());
}

class StoreEngine {
public:
    explicit StoreEngine(StoreConfig cfg);
    ~StoreEngine();

    StoreEngine(const StoreEngine&) = delete;
    StoreEngine& operator=(const StoreEngine&) = delete;

    // Appends and indexes one record. Duplicate (client_id, seq) pairs are
    // absorbed without a second copy. Within one (file, offset), the index
    // keeps the highest (epoch, seq).
    StorageLocation append(const WriteRecord& rec);

    bool contains_put(uint32_t client_id, uint64_t seq) const;

    // Re-marks an already-stored record as primary-owned by `new_primary`
    // (used when a resend lands on a server that held it as a replica).
    void adopt_primary(uint32_t client_id, uint64_t seq, const std::string& new_primary);

    // epoch 0 means "latest". Payload is read back from its tier.
    std::optional<WriteRecord> get(const placement::RecordKey& key, uint32_t epoch = 0) const;

    MemBudget usage() const;

    // All buffered segments of the file with epoch <= epoch_limit, one per
    // distinct offset (highest epoch, then highest seq, wins), sorted by offset.
    std::vector<SegmentInfo> scan_file(const std::string& file_id,
                                       uint32_t epoch_limit = UINT32_MAX) const;

    std::vector<std::string> files() const;

    Bytes read(const StorageLocation& loc) const;

    // Unindexed staging appends for the flush shuffle; same tier budget.
    StorageLocation append_raw(ByteView data);
    void release_raw(const StorageLocation& loc);

    // Drops every indexed record with epoch < min_epoch and frees the
    // memory-tier space it held.
    void purge_epochs_below(uint32_t min_epoch);

    // Accounting accessors for the consistency checks. staged_mem_bytes
    // counts only memory-tier staging, so at all times
    //   used_bytes == indexed_mem_bytes_with_headers() + staged_mem_bytes().
    uint64_t spill_file_size() const;
    uint64_t staged_mem_bytes() const;
    uint64_t indexed_mem_bytes_with_headers() const;

private:
    struct Entry {
        StorageLocation loc;
        uint64_t seq = 0;
        uint32_t client_id = 0;
        std::string primary_addr;
    };

    StorageLocation append_locked(const std::string& file_id, uint64_t offset,
                                  uint32_t epoch, ByteView payload, bool headered);
    Bytes read_locked(const StorageLocation& loc) const;

    StoreConfig cfg_;
    int spill_fd_ = -1;
    uint64_t spill_tail_ = 0;
    uint64_t mem_tail_ = 0;
    uint64_t used_bytes_ = 0;
    uint64_t staged_bytes_ = 0;

    std::unordered_map<uint64_t, Bytes> mem_log_;  // payload offset -> bytes
    // file -> offset -> epoch -> entry
    std::unordered_map<std::string, std::map<uint64_t, std::map<uint32_t, Entry>>> index_;
    struct PutId {
        uint32_t client_id;
        uint64_t seq;
        bool operator<(const PutId& o) const {
            return client_id != o.client_id ? client_id < o.client_id : seq < o.seq;
        }
    };
    struct PutRef {
        std::string file_id;
        uint64_t offset;
        uint32_t epoch;
    };
    std::map<PutId, PutRef> seen_puts_;

    mutable std::shared_mutex mu_;
};

}  // namespace bb::store
