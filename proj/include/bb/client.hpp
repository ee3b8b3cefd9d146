#pragma once

// Client-side API: placement, the asynchronous ACK window, restart reads,
// and client-driven failure detection with server-list refresh.

#include <atomic>
#include <condition_variable>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "bb/messages.hpp"
#include "bb/placement.hpp"
#include "bb/ring.hpp"
#include "bb/store.hpp"
#include "bb/transport.hpp"

namespace bb::client {

struct ClientConfig {
    std::string manager_addr;
    uint32_t rank = 0;
    placement::Strategy strategy = placement::Strategy::Ketama;
    unsigned window = 16;  // W: max unacked writes
    int ack_timeout_ms = 5000;
    int rpc_timeout_ms = 3000;
    int list_wait_ms = 15000;     // first server list
    int flush_timeout_ms = 180000;
    uint64_t read_chunk = 4ull << 20;  // fan-out request granularity
};

struct SessionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NotFoundError : SessionError {
    using SessionError::SessionError;
};

class ClientSession {
public:
    explicit ClientSession(ClientConfig cfg);  // bb_open
    ~ClientSession();                          // bb_close

    ClientSession(const ClientSession&) = delete;
    ClientSession& operator=(const ClientSession&) = delete;

    // Sends one record and returns its sequence ticket immediately; blocks
    // only while the ACK window is full.
    uint64_t write(const std::string& file_id, uint64_t offset, Bytes payload);

    // Drains the ACK window and marks the epoch boundary.
    void wait();

    // Reassembles [offset, offset+length) from the buffer tier; never
    // touches the backing filesystem. Unwritten ranges read as zeros.
    Bytes read(const std::string& file_id, uint64_t offset, uint64_t length);

    // Asks the manager to run the two-phase flush for an epoch
    // (0 = the last completed epoch). Blocks until it finishes.
    void flush(uint32_t epoch = 0);

    uint32_t epoch() const { return epoch_.load(); }
    uint32_t last_completed_epoch() const { return epoch_.load() - 1; }

    uint64_t server_list_version() const;
    std::vector<ring::ServerId> server_list() const;
    size_t pending_count() const;
    uint64_t redirects_followed() const { return redirects_.load(); }

private:
    struct Pending {
        store::WriteRecord record;
        std::string target;
        uint8_t hop = 0;  // 0 home, 1 redirected, 2 forced home
        std::chrono::steady_clock::time_point deadline;
        std::optional<std::chrono::steady_clock::time_point> retry_at;
    };

    struct PutChannel {
        transport::ConnPtr conn;
        std::thread reader;
    };

    void manager_loop();
    void scan_loop();
    void ack_loop(std::string addr, transport::ConnPtr conn);

    void apply_server_list(const msg::RingUpdate& upd);
    std::string place(const placement::RecordKey& key) const;
    transport::ConnPtr put_conn(const std::string& addr);
    void send_put(uint64_t seq);  // pending_mu_ must be held

    void handle_server_failure(const std::string& addr);
    bool confirm_failure(const std::string& suspect);
    void report_failure(const std::string& suspect);
    void resend_after_membership_change();

    std::optional<wire::Frame> server_rpc(const std::string& addr, wire::MsgType t,
                                          uint64_t seq, const Bytes& payload);

    Bytes assemble(const std::string& file_id, uint64_t offset, uint64_t length,
                   const std::vector<msg::GetResp::Piece>& pieces) const;

    ClientConfig cfg_;
    transport::ConnPtr mgr_conn_;
    std::thread mgr_thread_;
    std::thread scan_thread_;

    mutable std::mutex list_mu_;
    std::condition_variable list_cv_;
    std::vector<ring::ServerId> servers_;
    uint64_t list_version_ = 0;
    std::optional<placement::HashRing> ketama_;

    std::map<std::string, PutChannel> put_channels_;
    std::vector<std::thread> dead_readers_;
    std::mutex channels_mu_;
    std::map<std::string, transport::ConnPtr> rpc_conns_;
    std::mutex rpc_mu_;

    std::map<uint64_t, Pending> pending_;
    mutable std::mutex pending_mu_;
    std::condition_variable pending_cv_;

    std::mutex failure_mu_;

    std::map<uint64_t, std::shared_ptr<std::promise<wire::Frame>>> mgr_rpcs_;
    std::mutex mgr_rpc_mu_;

    std::atomic<uint64_t> redirects_{0};
    std::atomic<uint64_t> next_seq_{1};
    std::atomic<uint32_t> epoch_{1};
    std::atomic<bool> fatal_{false};
    std::string fatal_reason_;
    std::atomic<bool> stopping_{false};
};

}  // namespace bb::client
