#pragma once

// The burst buffer server daemon: composes the store engine, ring
// membership, chained replication and the two-phase flush, and serves
// the client ingest/read paths including overload redirect.

#include <atomic>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "bb/flushplan.hpp"
#include "bb/messages.hpp"
#include "bb/ring.hpp"
#include "bb/store.hpp"
#include "bb/transport.hpp"

namespace bb::server {

struct ServerConfig {
    uint16_t listen_port = 0;  // 0 = pick a free port
    std::string manager_addr;
    uint64_t mem_capacity = 1ull << 30;  // --mem-capacity
    std::string spill_dir = ".";
    std::string pfs_dir = "./pfs";
    unsigned replicas = 2;    // r
    unsigned successors = 2;  // k
    int stabilize_ms = 500;
    unsigned ping_miss_limit = 3;
    bool redirect = true;           // --no-redirect turns this off
    bool spill_sync = false;        // O_DSYNC spill writes
    bool flush_fsync = true;        // fdatasync files in the I/O phase
    uint32_t retain_epochs = 2;     // R: checkpoints kept after a flush
    int rpc_timeout_ms = 2000;
    int mem_query_cache_ms = 1000;  // redirect query result cache
    int put_pending_timeout_ms = 8000;
    int flush_phase_timeout_ms = 60000;
    std::string join_predecessor;  // join an existing ring behind this server
};

// Redirect target selection: maximum free bytes, ties broken by the
// lowest ordinal.
std::optional<msg::MemInfo> select_least_utilized(const std::vector<msg::MemInfo>& infos);

class ServerNode {
public:
    explicit ServerNode(ServerConfig cfg);
    ~ServerNode();

    void start();
    bool wait_ready(int timeout_ms = 10000);  // first ring update applied
    void stop();
    // Abrupt termination for fault-injection: connections just die.
    void kill() { stop(); }

    std::string address() const;
    ring::RingView ring_view() const { return ring_state_.view(); }
    store::MemBudget usage() const { return store_->usage(); }
    uint64_t membership_version() const { return ring_state_.version(); }

private:
    struct PendingPut {
        uint32_t client_id = 0;
        uint64_t seq = 0;
        size_t acks_needed = 0;
        std::set<std::string> acks;
        transport::ConnPtr client_conn;
        std::chrono::steady_clock::time_point deadline;
    };

    struct HolderInfo {
        std::string file_id;
        uint64_t offset = 0;
        uint32_t epoch = 0;
        std::set<std::string> holders;
    };

    struct StagedPiece {
        std::string file_id;
        uint64_t offset = 0;
        uint32_t epoch = 0;
        uint64_t seq = 0;
        uint32_t client_id = 0;
        store::StorageLocation loc;
    };

    struct FlushSession {
        uint32_t epoch = 0;
        uint32_t attempt = 0;
        std::set<std::string> meta_addrs;
        std::set<std::string> eos_addrs;
        std::vector<msg::ShuffleMeta> metas;
        std::vector<StagedPiece> staged;
        bool aborted = false;
        std::mutex mu;
        std::condition_variable cv;
    };
    using SessionPtr = std::shared_ptr<FlushSession>;

    class RealPeerCom;

    void accept_loop();
    void conn_loop(transport::ConnPtr conn);
    void manager_loop();
    void stabilize_loop();
    void sweep_loop();

    void handle_put(const transport::ConnPtr& conn, const wire::Frame& f);
    void handle_repl_put(const wire::Frame& f);
    void handle_repl_ack(const wire::Frame& f);
    void handle_get(const transport::ConnPtr& conn, const wire::Frame& f);
    void handle_lookup(const transport::ConnPtr& conn, const wire::Frame& f);
    void handle_mem_query(const wire::Frame& f);
    void handle_fail_confirm(const transport::ConnPtr& conn, const wire::Frame& f);
    void handle_shuffle_meta(const wire::Frame& f);
    void handle_shuffle_data(const wire::Frame& f);

    void run_flush(msg::FlushCmd cmd);
    void finish_flush(const msg::FlushCmd& cmd, bool ok, uint32_t files, uint64_t bytes);
    SessionPtr get_session(uint32_t epoch, uint32_t attempt);
    void release_session_staging(FlushSession& s);
    void prune_sessions(uint32_t completed_epoch, uint32_t winning_attempt);

    std::optional<msg::MemInfo> query_min_utilization();
    size_t resync_replicas();

    // Outbound connections. Async conns carry one-way traffic; rpc conns
    // serialize request/response exchanges.
    transport::ConnPtr async_conn(const std::string& addr);
    transport::ConnPtr rpc_conn(const std::string& addr);
    void drop_async_conn(const std::string& addr);
    void drop_rpc_conn(const std::string& addr);
    bool send_async(const std::string& addr, wire::MsgType t, uint64_t seq,
                    const Bytes& payload);
    std::optional<wire::Frame> rpc(const std::string& addr, wire::MsgType t,
                                   uint64_t seq, const Bytes& payload, int timeout_ms,
                                   bool* refused = nullptr);

    void send_error(const transport::ConnPtr& conn, uint64_t seq, uint16_t code,
                    bool retryable, const std::string& message);

    bool is_flushing_epoch(uint32_t epoch) const;
    int ping_timeout_ms() const;
    std::vector<msg::GetResp::Piece> local_pieces(const std::string& file_id,
                                                  uint64_t offset, uint64_t length,
                                                  uint32_t epoch_limit, bool* known);

    ServerConfig cfg_;
    std::unique_ptr<transport::Listener> listener_;
    std::unique_ptr<store::StoreEngine> store_;
    ring::RingState ring_state_;
    std::unique_ptr<RealPeerCom> peer_com_;
    std::unique_ptr<ring::Stabilizer> stabilizer_;
    transport::ConnPtr mgr_conn_;

    std::thread accept_thread_;
    std::thread mgr_thread_;
    std::thread stabilize_thread_;
    std::thread sweep_thread_;
    std::vector<std::thread> worker_threads_;
    std::mutex workers_mu_;

    std::vector<transport::ConnPtr> inbound_conns_;
    std::mutex inbound_mu_;

    std::map<std::string, transport::ConnPtr> async_conns_;
    std::map<std::string, transport::ConnPtr> rpc_conns_;
    std::mutex conns_mu_;

    std::map<std::pair<uint32_t, uint64_t>, PendingPut> pending_puts_;
    std::mutex pending_mu_;

    std::map<std::pair<uint32_t, uint64_t>, HolderInfo> holders_;
    std::mutex holders_mu_;

    std::map<std::pair<uint32_t, uint32_t>, SessionPtr> sessions_;
    std::set<uint32_t> flushing_epochs_;
    std::map<uint32_t, std::vector<StagedPiece>> staged_by_epoch_;
    mutable std::mutex flush_mu_;

    flushplan::LookupTable lookup_table_;

    // Outstanding ring-walk memory query (at most one in flight).
    std::mutex memq_mu_;
    std::condition_variable memq_cv_;
    bool memq_inflight_ = false;
    std::optional<std::vector<msg::MemInfo>> memq_result_;
    std::optional<msg::MemInfo> memq_cache_;
    std::chrono::steady_clock::time_point memq_cache_time_;

    std::mutex ready_mu_;
    std::condition_variable ready_cv_;
    bool ready_ = false;
    bool join_failed_ = false;

    std::atomic<bool> not_serving_{false};
    std::atomic<bool> resync_needed_{false};
    std::atomic<uint64_t> last_resync_version_{0};
    std::atomic<bool> stopping_{false};
};

}  // namespace bb::server
