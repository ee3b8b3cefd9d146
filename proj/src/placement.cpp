#include "bb/placement.hpp"

#include <algorithm>

#include "bb/md5.hpp"

namespace bb::placement {

Strategy strategy_from_string(const std::string& s) {
    if (s == "ketama") return Strategy::Ketama;
    if (s == "iso") return Strategy::Iso;
    throw ConfigError("unknown placement strategy '" + s + "' (want ketama|iso)");
}

const char* strategy_name(Strategy s) {
    return s == Strategy::Ketama ? "ketama" : "iso";
}

HashRing HashRing::build(const std::vector<std::string>& servers,
                         unsigned points_per_server) {
    if (servers.empty())
        throw ConfigError("cannot build a hash ring from an empty server list");
    for (size_t i = 0; i < servers.size(); i++)
        for (size_t j = i + 1; j < servers.size(); j++)
            if (servers[i] == servers[j])
                throw ConfigError("duplicate server identity '" + servers[i] + "'");

    HashRing ring;
    ring.servers_ = servers;
    ring.points_.reserve(servers.size() * points_per_server);
    for (size_t s = 0; s < servers.size(); s++) {
        for (unsigned i = 0; i < points_per_server / 4; i++) {
            auto d = md5::digest(servers[s] + "-" + std::to_string(i));
            for (unsigned j = 0; j < 4; j++) {
                uint32_t h = uint32_t(d[4 * j]) | uint32_t(d[4 * j + 1]) << 8 |
                             uint32_t(d[4 * j + 2]) << 16 | uint32_t(d[4 * j + 3]) << 24;
                ring.points_.push_back({h, uint32_t(s)});
            }
        }
    }
    std::sort(ring.points_.begin(), ring.points_.end());
    return ring;
}

uint32_t HashRing::key_hash(const RecordKey& key) {
    auto d = md5::digest(key.str());
    return uint32_t(d[0]) | uint32_t(d[1]) << 8 | uint32_t(d[2]) << 16 |
           uint32_t(d[3]) << 24;
}

const std::string& HashRing::locate_hash(uint32_t h) const {
    if (points_.empty())
        throw ConfigError("hash ring not built");
    auto it = std::lower_bound(points_.begin(), points_.end(), h,
                               [](const Point& p, uint32_t v) { return p.hash < v; });
    if (it == points_.end())
        it = points_.begin();  // wraparound
    return servers_[it->server_index];
}

const std::string& HashRing::locate(const RecordKey& key) const {
    return locate_hash(key_hash(key));
}

size_t locate_isolated_index(uint64_t client_rank, size_t num_servers) {
    if (num_servers == 0)
        throw ConfigError("isolated placement needs at least one server");
    return size_t(client_rank % num_servers);
}

}  // namespace bb::placement
