#pragma once

// Domain partitioning for the two-phase flush, and the lookup table that
// lets any server (or client) recompute a byte's owner from nothing but
// (global_size, n, server ordering) -- the restart index.

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bb::flushplan {

struct FileMeta {
    std::string file_id;
    uint64_t global_size = 0;  // max over all servers of offset+length
    uint32_t epoch = 0;
};

// File split into n fixed-width domains, D = ceil(global_size / n);
// domain i covers [i*D, min((i+1)*D, global_size)). Trailing domains may
// be empty. Owner of domain i is ordering[i].
struct FlushPlan {
    std::string file_id;
    uint64_t global_size = 0;
    uint32_t n = 0;
    uint64_t domain_width = 0;

    struct Domain {
        uint64_t begin = 0;
        uint64_t end = 0;  // half-open; begin == end for an empty domain
        bool empty() const { return begin >= end; }
    };

    Domain domain(uint32_t i) const;

    // Domain index owning byte `offset`; offset must be < global_size.
    uint32_t owner_of(uint64_t offset) const;
};

FlushPlan build_plan(const FileMeta& meta, uint32_t num_servers);

struct Range {
    uint64_t offset = 0;
    uint64_t length = 0;
};

struct OwnedPiece {
    uint32_t owner_index = 0;  // position in the shuffle-time ordering
    Range range;
};

// Splits [offset, offset+length) at domain boundaries.
std::vector<OwnedPiece> split_range(const FlushPlan& plan, uint64_t offset,
                                    uint64_t length);

struct RangeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NotFound : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LookupEntry {
    std::string file_id;
    uint64_t global_size = 0;
    uint32_t n = 0;
    std::vector<std::string> ordering;  // server addresses at shuffle time
    uint32_t epoch = 0;
};

struct OwnerRange {
    std::string server;
    Range range;
};

// Pure function of the entry: recomputes the domains and maps the request
// onto owners. Throws RangeError if offset+length > global_size.
std::vector<OwnerRange> lookup_owner(const LookupEntry& entry, uint64_t offset,
                                     uint64_t length);

class LookupTable {
public:
    void put(LookupEntry entry);
    std::optional<LookupEntry> find(const std::string& file_id) const;
    std::vector<LookupEntry> all() const;

private:
    std::map<std::string, LookupEntry> entries_;
    mutable std::mutex mu_;
};

// Metadata-exchange merge: global size is the max of the per-server extents.
std::vector<FileMeta> merge_metadata(
    const std::vector<std::vector<FileMeta>>& per_server, uint32_t epoch);

}  // namespace bb::flushplan
