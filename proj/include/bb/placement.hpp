#pragma once

// Maps each write record to its primary server. Two strategies:
//  - ketama: classic consistent hashing, 160 virtual points per server,
//    MD5 point derivation (4 points per digest, little-endian dwords).
//  - iso: rank-isolated, servers[rank mod n]; all of one client's traffic
//    goes to a single server.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace bb::placement {

constexpr unsigned kDefaultPointsPerServer = 160;

enum class Strategy { Ketama, Iso };

Strategy strategy_from_string(const std::string& s);
const char* strategy_name(Strategy s);

struct RecordKey {
    std::string file_id;
    uint64_t offset = 0;

    // Canonical string form, "<file_id>@<offset-decimal>".
    std::string str() const { return file_id + "@" + std::to_string(offset); }
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Immutable after build; membership changes produce a new ring.
class HashRing {
public:
    HashRing() = default;

    // Point derivation: for each server identity s and i in
    // [0, points_per_server/4), the MD5 digest of "<s>-<i>" yields four
    // points, point j being digest bytes [4j, 4j+4) read little-endian.
    static HashRing build(const std::vector<std::string>& servers,
                          unsigned points_per_server = kDefaultPointsPerServer);

    // Hashes the key string with MD5 (first four digest bytes, little-endian)
    // and returns the identity at the first point with point_hash >= h,
    // wrapping to the first point.
    const std::string& locate(const RecordKey& key) const;
    const std::string& locate_hash(uint32_t h) const;

    static uint32_t key_hash(const RecordKey& key);

    size_t point_count() const { return points_.size(); }
    const std::vector<std::string>& servers() const { return servers_; }

private:
    struct Point {
        uint32_t hash;
        uint32_t server_index;
        bool operator<(const Point& o) const {
            return hash != o.hash ? hash < o.hash : server_index < o.server_index;
        }
    };
    std::vector<Point> points_;
    std::vector<std::string> servers_;
};

// servers[rank mod servers.size()], the manager-assigned ring order.
size_t locate_isolated_index(uint64_t client_rank, size_t num_servers);

template <typename T>
const T& locate_isolated(uint64_t client_rank, const std::vector<T>& servers) {
    if (servers.empty())
        throw ConfigError("isolated placement needs at least one server");
    return servers[locate_isolated_index(client_rank, servers.size())];
}

}  // namespace bb::placement
