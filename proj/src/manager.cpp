#include "bb/manager.hpp"

#include <algorithm>
#include <chrono>

#include "bb/log.hpp"

namespace bb::manager {

using namespace std::chrono_literals;
using transport::ConnPtr;
using wire::MsgType;

ManagerNode::ManagerNode(ManagerConfig cfg) : cfg_(cfg) {}

ManagerNode::~ManagerNode() { stop(); }

void ManagerNode::start() {
    listener_ = std::make_unique<transport::Listener>(cfg_.listen_port);
    accept_thread_ = std::thread([this] { accept_loop(); });
    window_thread_ = std::thread([this] { registration_window(); });
    log::event("manager", "start", {{"address", listener_->address()}});
}

void ManagerNode::stop() {
    bool expected = false;
    if (!stopping_.compare_exchange_strong(expected, true))
        return;
    if (listener_) listener_->close();
    {
        std::lock_guard lk(mu_);
        for (auto& [_, c] : server_conns_) c->shutdown();
        for (auto& c : client_conns_) c->shutdown();
        cv_.notify_all();
    }
    if (window_thread_.joinable()) window_thread_.join();
    if (accept_thread_.joinable()) accept_thread_.join();
    std::vector<std::thread> threads;
    {
        std::lock_guard lk(threads_mu_);
        threads.swap(conn_threads_);
    }
    for (auto& t : threads)
        if (t.joinable()) t.join();
}

bool ManagerNode::wait_ring_up(int timeout_ms) {
    std::unique_lock lk(mu_);
    auto pred = [this] { return ring_formed_ || startup_failed_; };
    if (timeout_ms < 0)
        cv_.wait(lk, pred);
    else if (!cv_.wait_for(lk, timeout_ms * 1ms, pred))
        return false;
    return ring_formed_;
}

void ManagerNode::registration_window() {
    auto deadline = std::chrono::steady_clock::now() + cfg_.wait_ms * 1ms;
    std::unique_lock lk(mu_);
    cv_.wait_until(lk, deadline, [this] {
        return stopping_.load() ||
               (cfg_.expected_servers > 0 &&
                registration_order_.size() >= cfg_.expected_servers);
    });
    if (stopping_.load() || ring_formed_)
        return;
    if (registration_order_.empty()) {
        startup_failed_ = true;
        cv_.notify_all();
        log::event("manager", "startup_failed", {{"reason", "no registrations"}});
        return;
    }
    lk.unlock();
    form_ring();
}

void ManagerNode::form_ring() {
    std::lock_guard lk(mu_);
    if (ring_formed_) return;
    membership_.init(registration_order_);
    ring_formed_ = true;
    broadcast_ring_locked();
    cv_.notify_all();
    log::event("manager", "ring_formed",
               {{"servers", registration_order_.size()},
                {"version", membership_.version()}});
}

void ManagerNode::push_ring_to(const ConnPtr& conn) {
    msg::RingUpdate upd{membership_.version(), membership_.members()};
    try {
        conn->send(MsgType::RING_UPDATE, 0, upd.encode());
    } catch (const transport::TransportError&) {
        // Dead peers learn the hard way; membership changes only on reports.
    }
}

void ManagerNode::broadcast_ring_locked() {
    msg::RingUpdate upd{membership_.version(), membership_.members()};
    Bytes payload = upd.encode();
    auto push = [&](const ConnPtr& c) {
        try {
            c->send(MsgType::RING_UPDATE, 0, payload);
        } catch (const transport::TransportError&) {
        }
    };
    for (auto& [_, c] : server_conns_) push(c);
    for (auto& c : client_conns_) push(c);
}

void ManagerNode::accept_loop() {
    while (!stopping_.load()) {
        ConnPtr conn = listener_->accept();
        if (!conn) break;
        std::lock_guard lk(threads_mu_);
        conn_threads_.emplace_back([this, conn] { conn_loop(conn); });
    }
}

void ManagerNode::conn_loop(ConnPtr conn) {
    try {
        for (;;) {
            wire::Frame f = conn->recv();
            switch (f.msg_type) {
                case MsgType::REGISTER: {
                    auto reg = msg::Register::decode(f.payload);
                    std::unique_lock lk(mu_);
                    if (reg.role == msg::Role::Server) {
                        if (ring_formed_) {
                            // Late REGISTER on a formed ring: treat as a
                            // failed joiner unless it comes back via JOIN_REQ.
                            msg::Error e{msg::kErrJoinRejected, false,
                                         "ring already formed; use join"};
                            conn->send(MsgType::ERROR, f.seq, e.encode());
                            break;
                        }
                        if (std::find(registration_order_.begin(),
                                      registration_order_.end(),
                                      reg.address) == registration_order_.end())
                            registration_order_.push_back(reg.address);
                        server_conns_[reg.address] = conn;
                        bool complete = cfg_.expected_servers > 0 &&
                                        registration_order_.size() >= cfg_.expected_servers;
                        cv_.notify_all();
                        log::event("manager", "register_server",
                                   {{"address", reg.address}});
                        lk.unlock();
                        if (complete) form_ring();
                    } else {
                        client_conns_.push_back(conn);
                        log::event("manager", "register_client", {{"rank", reg.rank}});
                        if (ring_formed_)
                            push_ring_to(conn);
                        // Otherwise the formation broadcast reaches them.
                    }
                    break;
                }
                case MsgType::FAIL_REPORT:
                    handle_fail_report(conn, f);
                    break;
                case MsgType::JOIN_REQ:
                    handle_join(conn, f);
                    break;
                case MsgType::FLUSH_CMD:
                    handle_flush_request(conn, f);
                    break;
                case MsgType::FLUSH_DONE:
                    handle_flush_done(f);
                    break;
                case MsgType::PING:
                    conn->send(MsgType::PING_ACK, f.seq,
                               msg::PingAck{membership_.version()}.encode());
                    break;
                default: {
                    msg::Error e{msg::kErrBadRequest, false,
                                 std::string("unexpected message ") +
                                     wire::msg_type_name(f.msg_type)};
                    conn->send(MsgType::ERROR, f.seq, e.encode());
                }
            }
        }
    } catch (const transport::TransportError&) {
        // connection gone
    } catch (const wire::ProtocolError&) {
        conn->shutdown();
    }
}

void ManagerNode::handle_fail_report(const ConnPtr& conn, const wire::Frame& f) {
    auto report = msg::FailReport::decode(f.payload);
    const auto& subject = report.event.subject.address;
    auto new_version = membership_.fail(subject, report.event.version);
    std::lock_guard lk(mu_);
    if (new_version) {
        auto it = server_conns_.find(subject);
        if (it != server_conns_.end()) {
            it->second->shutdown();
            server_conns_.erase(it);
        }
        log::event("manager", "member_failed",
                   {{"subject", subject},
                    {"reporter", report.event.reporter.address},
                    {"version", *new_version}});
        broadcast_ring_locked();
        cv_.notify_all();  // flush loop re-checks membership
    } else {
        // Already removed this incarnation; give the reporter the current
        // list so it can move on.
        push_ring_to(conn);
    }
}

void ManagerNode::handle_join(const ConnPtr& conn, const wire::Frame& f) {
    auto req = msg::JoinReq::decode(f.payload);
    // The desired predecessor must be a live member.
    if (!membership_.contains(req.predecessor_address)) {
        msg::Error e{msg::kErrJoinRejected, false,
                     "predecessor " + req.predecessor_address + " not in ring"};
        conn->send(MsgType::ERROR, f.seq, e.encode());
        return;
    }
    auto joined = membership_.join(req.joiner_address, req.predecessor_address);
    if (!joined) {
        msg::Error e{msg::kErrJoinRejected, false, "join refused"};
        conn->send(MsgType::ERROR, f.seq, e.encode());
        return;
    }
    std::lock_guard lk(mu_);
    server_conns_[req.joiner_address] = conn;
    log::event("manager", "member_joined",
               {{"joiner", req.joiner_address},
                {"predecessor", req.predecessor_address},
                {"version", joined->second}});
    broadcast_ring_locked();
}

void ManagerNode::handle_flush_done(const wire::Frame& f) {
    auto done = msg::FlushDone::decode(f.payload);
    std::lock_guard lk(mu_);
    if (!flush_wait_ || flush_wait_->epoch != done.epoch ||
        flush_wait_->attempt != done.attempt)
        return;  // stale attempt
    flush_wait_->pending.erase(done.server.address);
    if (!done.ok) flush_wait_->failed = true;
    flush_wait_->bytes_written += done.bytes_written;
    cv_.notify_all();
}

bool ManagerNode::run_flush_epoch(uint32_t epoch, std::string* error, uint64_t* bytes) {
    std::lock_guard serial(flush_serial_mu_);
    for (int attempt = 1; attempt <= cfg_.flush_retry_limit; attempt++) {
        auto participants = membership_.members();
        if (participants.empty()) {
            *error = "no live servers";
            return false;
        }
        uint64_t version_at_start = membership_.version();

        FlushWait wait;
        wait.epoch = epoch;
        wait.attempt = uint32_t(attempt);
        for (const auto& p : participants)
            wait.pending.insert(p.address);

        msg::FlushCmd cmd;
        cmd.epoch = epoch;
        cmd.attempt = uint32_t(attempt);
        cmd.participants = participants;
        {
            std::unique_lock lk(mu_);
            flush_wait_ = &wait;
            bool send_failed = false;
            for (const auto& p : participants) {
                auto it = server_conns_.find(p.address);
                if (it == server_conns_.end()) {
                    send_failed = true;
                    continue;
                }
                try {
                    it->second->send(MsgType::FLUSH_CMD, 0, cmd.encode());
                } catch (const transport::TransportError&) {
                    send_failed = true;
                }
            }
            log::event("manager", "flush_start",
                       {{"epoch", epoch}, {"attempt", attempt}});

            auto deadline = std::chrono::steady_clock::now() +
                            cfg_.flush_phase_timeout_ms * 1ms;
            bool complete = cv_.wait_until(lk, deadline, [&] {
                return stopping_.load() || wait.pending.empty() || wait.failed ||
                       membership_.version() != version_at_start;
            });
            flush_wait_ = nullptr;

            bool membership_changed = membership_.version() != version_at_start;
            if (!stopping_.load() && complete && wait.pending.empty() &&
                !wait.failed && !membership_changed && !send_failed) {
                if (bytes) *bytes = wait.bytes_written;
                log::event("manager", "flush_done",
                           {{"epoch", epoch}, {"attempt", attempt}});
                return true;
            }
            if (stopping_.load()) {
                *error = "manager stopping";
                return false;
            }

            // Abort this attempt everywhere, wait for the ring to settle,
            // then retry with the refreshed membership.
            msg::FlushCmd abort = cmd;
            abort.abort = true;
            for (const auto& p : membership_.members()) {
                auto it = server_conns_.find(p.address);
                if (it == server_conns_.end()) continue;
                try {
                    it->second->send(MsgType::FLUSH_CMD, 0, abort.encode());
                } catch (const transport::TransportError&) {
                }
            }
            log::event("manager", "flush_retry",
                       {{"epoch", epoch},
                        {"attempt", attempt},
                        {"membership_changed", membership_changed},
                        {"timed_out", !complete}});
        }
        std::this_thread::sleep_for(200ms);
    }
    *error = "flush retry limit exceeded for epoch " + std::to_string(epoch);
    return false;
}

void ManagerNode::handle_flush_request(const ConnPtr& conn, const wire::Frame& f) {
    // A flush can take a while and must not block this connection's reader
    // (failure reports may need to land meanwhile).
    auto cmd = msg::FlushCmd::decode(f.payload);
    uint64_t req_seq = f.seq;
    std::lock_guard lk(threads_mu_);
    conn_threads_.emplace_back([this, conn, cmd, req_seq] {
        std::string error;
        uint64_t bytes = 0;
        try {
            if (run_flush_epoch(cmd.epoch, &error, &bytes)) {
                msg::FlushDone done;
                done.epoch = cmd.epoch;
                done.ok = true;
                done.bytes_written = bytes;
                conn->send(MsgType::FLUSH_DONE, req_seq, done.encode());
            } else {
                msg::Error e{msg::kErrFlushFailed, true, error};
                conn->send(MsgType::ERROR, req_seq, e.encode());
            }
        } catch (const transport::TransportError&) {
            // initiator went away
        }
    });
}

}  // namespace bb::manager
