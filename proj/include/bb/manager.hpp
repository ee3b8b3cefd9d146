#pragma once

// The manager: a singular coordinator that bootstraps the server ring,
// applies membership reports, pushes server-list updates to servers and
// clients, and drives the two-phase flush epoch protocol.

#include <atomic>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "bb/messages.hpp"
#include "bb/ring.hpp"
#include "bb/transport.hpp"

namespace bb::manager {

struct ManagerConfig {
    uint16_t listen_port = 0;
    uint32_t expected_servers = 0;  // 0: rely on the wait window alone
    int wait_ms = 3000;             // registration window
    int flush_phase_timeout_ms = 120000;
    int flush_retry_limit = 5;
    int rpc_timeout_ms = 3000;
};

class ManagerNode {
public:
    explicit ManagerNode(ManagerConfig cfg);
    ~ManagerNode();

    void start();
    void stop();

    // True once the ring formed; false if the window expired with zero
    // registrations (startup failure).
    bool wait_ring_up(int timeout_ms = -1);

    std::string address() const { return listener_->address(); }
    std::vector<ring::ServerId> members() const { return membership_.members(); }
    uint64_t version() const { return membership_.version(); }

private:
    struct Peer {
        transport::ConnPtr conn;
        msg::Role role;
        std::string server_address;  // servers only
    };

    struct FlushWait {
        uint32_t epoch = 0;
        uint32_t attempt = 0;
        std::set<std::string> pending;  // addresses yet to report
        bool failed = false;
        uint64_t bytes_written = 0;
    };

    void accept_loop();
    void conn_loop(transport::ConnPtr conn);
    void registration_window();
    void form_ring();
    void broadcast_ring_locked();
    void push_ring_to(const transport::ConnPtr& conn);
    void handle_fail_report(const transport::ConnPtr& conn, const wire::Frame& f);
    void handle_join(const transport::ConnPtr& conn, const wire::Frame& f);
    void handle_flush_request(const transport::ConnPtr& conn, const wire::Frame& f);
    void handle_flush_done(const wire::Frame& f);
    bool run_flush_epoch(uint32_t epoch, std::string* error, uint64_t* bytes);

    ManagerConfig cfg_;
    std::unique_ptr<transport::Listener> listener_;
    std::thread accept_thread_;
    std::thread window_thread_;
    std::vector<std::thread> conn_threads_;
    std::mutex threads_mu_;

    ring::ManagerMembership membership_;
    std::vector<std::string> registration_order_;
    std::map<std::string, transport::ConnPtr> server_conns_;  // by server address
    std::vector<transport::ConnPtr> client_conns_;
    bool ring_formed_ = false;
    bool startup_failed_ = false;

    std::mutex flush_serial_mu_;  // one flush epoch in flight at a time
    std::mutex mu_;
    std::condition_variable cv_;
    FlushWait* flush_wait_ = nullptr;

    std::atomic<bool> stopping_{false};
};

}  // namespace bb::manager
