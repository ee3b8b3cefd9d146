#pragma once

// In-process cluster harness: one manager plus n server daemons on
// loopback ports, with per-test scratch directories and fault injection
// by abrupt node kill.

#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "bb/client.hpp"
#include "bb/manager.hpp"
#include "bb/messages.hpp"
#include "bb/server.hpp"
#include "bb/transport.hpp"

namespace bb::testutil {

struct TempTree {
    std::filesystem::path root;
    TempTree() {
        root = std::filesystem::temp_directory_path() /
               ("bb_cluster_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(root);
    }
    ~TempTree() {
        std::error_code ec;
        std::filesystem::remove_all(root, ec);
    }
    std::string sub(const std::string& name) const {
        auto p = root / name;
        std::filesystem::create_directories(p);
        return p.string();
    }
};

struct ClusterOptions {
    size_t servers = 4;
    unsigned replicas = 2;
    unsigned successors = 2;
    uint64_t mem_capacity = 256ull << 20;
    int stabilize_ms = 50;
    bool redirect = true;
    bool spill_sync = false;
    bool flush_fsync = true;
    int put_pending_timeout_ms = 4000;
    int flush_phase_timeout_ms = 60000;
};

class Cluster {
public:
    explicit Cluster(ClusterOptions opt = {}) : opt_(opt) {
        manager::ManagerConfig mc;
        mc.expected_servers = uint32_t(opt.servers);
        mc.wait_ms = 30000;
        mc.flush_phase_timeout_ms = opt.flush_phase_timeout_ms;
        mgr_ = std::make_unique<manager::ManagerNode>(mc);
        mgr_->start();
        for (size_t i = 0; i < opt.servers; i++)
            servers_.push_back(start_server(i));
        if (!mgr_->wait_ring_up(30000))
            throw std::runtime_error("ring did not form");
        for (auto& s : servers_)
            if (!s->wait_ready(30000))
                throw std::runtime_error("server never became ready");
    }

    server::ServerConfig server_config(size_t i) {
        server::ServerConfig sc;
        sc.manager_addr = mgr_->address();
        sc.mem_capacity = opt_.mem_capacity;
        sc.spill_dir = tree_.sub("spill" + std::to_string(i));
        sc.pfs_dir = pfs_dir();
        sc.replicas = opt_.replicas;
        sc.successors = opt_.successors;
        sc.stabilize_ms = opt_.stabilize_ms;
        sc.redirect = opt_.redirect;
        sc.spill_sync = opt_.spill_sync;
        sc.flush_fsync = opt_.flush_fsync;
        sc.put_pending_timeout_ms = opt_.put_pending_timeout_ms;
        sc.flush_phase_timeout_ms = opt_.flush_phase_timeout_ms;
        return sc;
    }

    std::unique_ptr<server::ServerNode> start_server(size_t i) {
        auto node = std::make_unique<server::ServerNode>(server_config(i));
        node->start();
        return node;
    }

    // pfs_dir is shared by every server, standing in for the mounted
    // parallel filesystem.
    std::string pfs_dir() { return tree_.sub("pfs"); }
    std::string scratch(const std::string& name) { return tree_.sub(name); }

    client::ClientSession client(uint32_t rank,
                                 placement::Strategy strategy,
                                 int ack_timeout_ms = 5000, unsigned window = 16) {
        client::ClientConfig cc;
        cc.manager_addr = mgr_->address();
        cc.rank = rank;
        cc.strategy = strategy;
        cc.ack_timeout_ms = ack_timeout_ms;
        cc.window = window;
        return client::ClientSession(cc);
    }

    client::ClientConfig client_config(uint32_t rank, placement::Strategy strategy) {
        client::ClientConfig cc;
        cc.manager_addr = mgr_->address();
        cc.rank = rank;
        cc.strategy = strategy;
        return cc;
    }

    void kill_server(size_t i) { servers_.at(i)->kill(); }

    server::ServerNode& server(size_t i) { return *servers_.at(i); }
    size_t server_count() const { return servers_.size(); }
    manager::ManagerNode& manager() { return *mgr_; }
    std::string manager_addr() const { return mgr_->address(); }

    size_t index_of(const std::string& address) const {
        for (size_t i = 0; i < servers_.size(); i++)
            if (servers_[i]->address() == address)
                return i;
        throw std::runtime_error("no server at " + address);
    }

    ~Cluster() {
        for (auto& s : servers_)
            s->stop();
        if (mgr_) mgr_->stop();
    }

    TempTree tree_;

private:
    ClusterOptions opt_;
    std::unique_ptr<manager::ManagerNode> mgr_;
    std::vector<std::unique_ptr<server::ServerNode>> servers_;
};

// Raw single-shot GET against one server, bypassing the client library.
inline msg::GetResp direct_get(const std::string& addr, const std::string& file,
                               uint64_t offset, uint64_t length) {
    auto conn = transport::dial(addr, 2000);
    auto resp = conn->rpc(wire::MsgType::GET, 1,
                          msg::Get{file, offset, length, 0}.encode(), 5000);
    if (resp.msg_type != wire::MsgType::GET_RESP)
        throw std::runtime_error("unexpected reply to GET");
    return msg::GetResp::decode(resp.payload);
}

inline size_t count_copies(const std::vector<std::string>& addrs,
                           const std::string& file, uint64_t offset,
                           uint64_t length) {
    size_t copies = 0;
    for (const auto& a : addrs) {
        try {
            auto resp = direct_get(a, file, offset, length);
            uint64_t covered = 0;
            for (const auto& p : resp.pieces)
                covered += p.data.size();
            if (covered >= length)
                copies++;
        } catch (const transport::TransportError&) {
        }
    }
    return copies;
}

inline bool dir_has_files(const std::string& dir) {
    std::error_code ec;
    for (auto it = std::filesystem::recursive_directory_iterator(dir, ec);
         it != std::filesystem::recursive_directory_iterator(); ++it)
        if (it->is_regular_file())
            return true;
    return false;
}

template <typename Pred>
bool eventually(Pred pred, int timeout_ms, int poll_ms = 25) {
    auto deadline = std::chrono::steady_clock::now() +
                    std::chrono::milliseconds(timeout_ms);
    while (std::chrono::steady_clock::now() < deadline) {
        if (pred())
            return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(poll_ms));
    }
    return pred();
}

}  // namespace bb::testutil
