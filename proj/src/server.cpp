#include "bb/server.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <filesystem>

#include "bb/log.hpp"

namespace bb::server {

using namespace std::chrono_literals;
using ring::ServerId;
using store::StorageLocation;
using store::WriteRecord;
using transport::ConnPtr;
using wire::MsgType;

std::optional<msg::MemInfo> select_least_utilized(const std::vector<msg::MemInfo>& infos) {
    std::optional<msg::MemInfo> best;
    for (const auto& m : infos) {
        if (!best || m.free_bytes > best->free_bytes ||
            (m.free_bytes == best->free_bytes &&
             m.server.ordinal < best->server.ordinal))
            best = m;
    }
    return best;
}

namespace {

bool file_id_ok(const std::string& file_id) {
    if (file_id.empty() || file_id.front() == '/') return false;
    return file_id.find("..") == std::string::npos;
}

}  // namespace

class ServerNode::RealPeerCom : public ring::PeerCom {
public:
    explicit RealPeerCom(ServerNode& node) : node_(node) {}

    PingResult ping(const ServerId& target) override {
        bool refused = false;
        auto resp = node_.rpc(target.address, MsgType::PING, 0,
                              msg::Ping{node_.ring_state_.view().self}.encode(),
                              node_.ping_timeout_ms(), &refused);
        if (resp && resp->msg_type == MsgType::PING_ACK)
            return PingResult::Ack;
        return refused ? PingResult::Refused : PingResult::Timeout;
    }

    std::optional<ring::NeighborInfo> neighbor_query(const ServerId& target) override {
        auto resp = node_.rpc(target.address, MsgType::NEIGHBOR_QUERY, 0, {},
                              node_.cfg_.rpc_timeout_ms);
        if (!resp || resp->msg_type != MsgType::NEIGHBOR_RESP)
            return std::nullopt;
        auto nr = msg::NeighborResp::decode(resp->payload);
        return ring::NeighborInfo{nr.predecessor, nr.successors, nr.events, nr.version};
    }

    void send_fail_report(const ServerId& target,
                          const ring::MembershipEvent& event) override {
        node_.send_async(target.address, MsgType::FAIL_REPORT, 0,
                         msg::FailReport{event}.encode());
    }

    void report_to_manager(const ring::MembershipEvent& event) override {
        if (!node_.mgr_conn_) return;
        try {
            node_.mgr_conn_->send(MsgType::FAIL_REPORT, 0,
                                  msg::FailReport{event}.encode());
        } catch (const transport::TransportError&) {
        }
    }

private:
    ServerNode& node_;
};

ServerNode::ServerNode(ServerConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.replicas > cfg_.successors)
        throw std::runtime_error("replicas (r) must be <= successors (k)");
}

ServerNode::~ServerNode() { stop(); }

std::string ServerNode::address() const { return listener_->address(); }

int ServerNode::ping_timeout_ms() const {
    return std::clamp(cfg_.stabilize_ms, 50, 1000);
}

void ServerNode::start() {
    listener_ = std::make_unique<transport::Listener>(cfg_.listen_port);

    store::StoreConfig sc;
    sc.mem_capacity_bytes = cfg_.mem_capacity;
    sc.spill_dir = cfg_.spill_dir;
    sc.store_id = std::to_string(listener_->port());
    sc.spill_sync = cfg_.spill_sync;
    store_ = std::make_unique<store::StoreEngine>(sc);

    ring_state_.configure(ServerId{0, address()}, cfg_.successors);
    peer_com_ = std::make_unique<RealPeerCom>(*this);
    stabilizer_ = std::make_unique<ring::Stabilizer>(ring_state_, *peer_com_,
                                                     cfg_.ping_miss_limit);
    stabilizer_->set_isolated_callback([this] {
        not_serving_.store(true);
        log::event("server", "isolated", {{"address", address()}});
    });

    // The manager may come up after us.
    for (int i = 0;; i++) {
        try {
            mgr_conn_ = transport::dial(cfg_.manager_addr, cfg_.rpc_timeout_ms);
            break;
        } catch (const transport::TransportError&) {
            if (i >= 40 || stopping_.load())
                throw;
            std::this_thread::sleep_for(250ms);
        }
    }

    if (cfg_.join_predecessor.empty()) {
        msg::Register reg{msg::Role::Server, address(), 0};
        mgr_conn_->send(MsgType::REGISTER, 0, reg.encode());
    } else {
        msg::JoinReq jr{address(), cfg_.join_predecessor};
        mgr_conn_->send(MsgType::JOIN_REQ, 0, jr.encode());
    }

    mgr_thread_ = std::thread([this] { manager_loop(); });
    accept_thread_ = std::thread([this] { accept_loop(); });
    stabilize_thread_ = std::thread([this] { stabilize_loop(); });
    sweep_thread_ = std::thread([this] { sweep_loop(); });
    log::event("server", "start", {{"address", address()}});
}

bool ServerNode::wait_ready(int timeout_ms) {
    std::unique_lock lk(ready_mu_);
    ready_cv_.wait_for(lk, timeout_ms * 1ms,
                       [this] { return ready_ || join_failed_ || stopping_.load(); });
    return ready_;
}

void ServerNode::stop() {
    bool expected = false;
    if (!stopping_.compare_exchange_strong(expected, true))
        return;
    if (listener_) listener_->close();
    if (mgr_conn_) mgr_conn_->shutdown();
    {
        std::lock_guard lk(inbound_mu_);
        for (auto& c : inbound_conns_) c->shutdown();
    }
    {
        std::lock_guard lk(conns_mu_);
        for (auto& [_, c] : async_conns_) c->shutdown();
        for (auto& [_, c] : rpc_conns_) c->shutdown();
    }
    {
        std::lock_guard lk(flush_mu_);
        for (auto& [_, s] : sessions_) {
            std::lock_guard slk(s->mu);
            s->aborted = true;
            s->cv.notify_all();
        }
    }
    memq_cv_.notify_all();
    ready_cv_.notify_all();

    if (accept_thread_.joinable()) accept_thread_.join();
    if (mgr_thread_.joinable()) mgr_thread_.join();
    if (stabilize_thread_.joinable()) stabilize_thread_.join();
    if (sweep_thread_.joinable()) sweep_thread_.join();
    std::vector<std::thread> workers;
    {
        std::lock_guard lk(workers_mu_);
        workers.swap(worker_threads_);
    }
    for (auto& t : workers)
        if (t.joinable()) t.join();
    log::event("server", "stop", {{"address", listener_ ? address() : ""}});
}

// ---------------------------------------------------------------- transport

ConnPtr ServerNode::async_conn(const std::string& addr) {
    std::lock_guard lk(conns_mu_);
    auto it = async_conns_.find(addr);
    if (it != async_conns_.end() && !it->second->closed())
        return it->second;
    auto conn = transport::dial(addr, cfg_.rpc_timeout_ms);
    async_conns_[addr] = conn;
    return conn;
}

ConnPtr ServerNode::rpc_conn(const std::string& addr) {
    std::lock_guard lk(conns_mu_);
    auto it = rpc_conns_.find(addr);
    if (it != rpc_conns_.end() && !it->second->closed())
        return it->second;
    auto conn = transport::dial(addr, cfg_.rpc_timeout_ms);
    rpc_conns_[addr] = conn;
    return conn;
}

void ServerNode::drop_async_conn(const std::string& addr) {
    std::lock_guard lk(conns_mu_);
    async_conns_.erase(addr);
}

void ServerNode::drop_rpc_conn(const std::string& addr) {
    std::lock_guard lk(conns_mu_);
    rpc_conns_.erase(addr);
}

bool ServerNode::send_async(const std::string& addr, MsgType t, uint64_t seq,
                            const Bytes& payload) {
    Bytes frame = wire::encode_frame(t, seq, payload);
    for (int attempt = 0; attempt < 2; attempt++) {
        try {
            async_conn(addr)->send_frame(frame);
            return true;
        } catch (const transport::TransportError&) {
            drop_async_conn(addr);
        }
    }
    return false;
}

std::optional<wire::Frame> ServerNode::rpc(const std::string& addr, MsgType t,
                                           uint64_t seq, const Bytes& payload,
                                           int timeout_ms, bool* refused) {
    if (refused) *refused = false;
    for (int attempt = 0; attempt < 2; attempt++) {
        ConnPtr conn;
        try {
            conn = rpc_conn(addr);
        } catch (const transport::ConnectRefused&) {
            if (refused) *refused = true;
            return std::nullopt;
        } catch (const transport::TransportError&) {
            return std::nullopt;
        }
        try {
            return conn->rpc(t, seq, payload, timeout_ms);
        } catch (const transport::Timeout&) {
            return std::nullopt;
        } catch (const transport::TransportError&) {
            drop_rpc_conn(addr);  // stale conn; one fresh retry
        }
    }
    return std::nullopt;
}

void ServerNode::send_error(const ConnPtr& conn, uint64_t seq, uint16_t code,
                            bool retryable, const std::string& message) {
    try {
        conn->send(MsgType::ERROR, seq, msg::Error{code, retryable, message}.encode());
    } catch (const transport::TransportError&) {
    }
}

// ------------------------------------------------------------------- loops

void ServerNode::accept_loop() {
    while (!stopping_.load()) {
        ConnPtr conn = listener_->accept();
        if (!conn) break;
        {
            std::lock_guard lk(inbound_mu_);
            inbound_conns_.push_back(conn);
        }
        std::lock_guard lk(workers_mu_);
        worker_threads_.emplace_back([this, conn] { conn_loop(conn); });
    }
}

void ServerNode::conn_loop(ConnPtr conn) {
    try {
        for (;;) {
            wire::Frame f = conn->recv();
            switch (f.msg_type) {
                case MsgType::PUT:
                    handle_put(conn, f);
                    break;
                case MsgType::REPL_PUT:
                    handle_repl_put(f);
                    break;
                case MsgType::REPL_ACK:
                    handle_repl_ack(f);
                    break;
                case MsgType::GET:
                    handle_get(conn, f);
                    break;
                case MsgType::LOOKUP_REQ:
                    handle_lookup(conn, f);
                    break;
                case MsgType::MEM_QUERY:
                    handle_mem_query(f);
                    break;
                case MsgType::MEM_RESP: {
                    auto resp = msg::MemResp::decode(f.payload);
                    std::lock_guard lk(memq_mu_);
                    memq_result_ = resp.collected;
                    memq_inflight_ = false;
                    memq_cv_.notify_all();
                    break;
                }
                case MsgType::PING:
                    conn->send(MsgType::PING_ACK, f.seq,
                               msg::PingAck{ring_state_.version()}.encode());
                    break;
                case MsgType::NEIGHBOR_QUERY: {
                    auto view = ring_state_.view();
                    msg::NeighborResp nr{view.predecessor, view.successors,
                                         ring_state_.pending_events(),
                                         view.version};
                    conn->send(MsgType::NEIGHBOR_RESP, f.seq, nr.encode());
                    break;
                }
                case MsgType::FAIL_REPORT: {
                    auto report = msg::FailReport::decode(f.payload);
                    if (ring_state_.apply_event(report.event)) {
                        resync_needed_.store(true);
                        log::event("server", "peer_failure_learned",
                                   {{"self", address()},
                                    {"subject", report.event.subject.address}});
                    }
                    break;
                }
                case MsgType::FAIL_CONFIRM_REQ:
                    handle_fail_confirm(conn, f);
                    break;
                case MsgType::SHUFFLE_META:
                    handle_shuffle_meta(f);
                    break;
                case MsgType::SHUFFLE_DATA:
                    handle_shuffle_data(f);
                    break;
                case MsgType::RING_UPDATE: {
                    auto upd = msg::RingUpdate::decode(f.payload);
                    if (ring_state_.apply_ring_update(upd.version, upd.members))
                        resync_needed_.store(true);
                    break;
                }
                default:
                    send_error(conn, f.seq, msg::kErrBadRequest, false,
                               std::string("unexpected ") +
                                   wire::msg_type_name(f.msg_type));
            }
        }
    } catch (const transport::TransportError&) {
    } catch (const wire::ProtocolError&) {
        conn->shutdown();
    } catch (const std::exception& e) {
        log::event("server", "conn_error", {{"what", e.what()}});
        conn->shutdown();
    }
}

void ServerNode::manager_loop() {
    try {
        for (;;) {
            wire::Frame f = mgr_conn_->recv();
            switch (f.msg_type) {
                case MsgType::RING_UPDATE: {
                    auto upd = msg::RingUpdate::decode(f.payload);
                    if (ring_state_.apply_ring_update(upd.version, upd.members)) {
                        resync_needed_.store(true);
                        log::event("server", "ring_update",
                                   {{"self", address()},
                                    {"version", upd.version},
                                    {"members", upd.members.size()}});
                    }
                    {
                        std::lock_guard lk(ready_mu_);
                        ready_ = true;
                    }
                    ready_cv_.notify_all();
                    break;
                }
                case MsgType::FLUSH_CMD: {
                    auto cmd = msg::FlushCmd::decode(f.payload);
                    std::lock_guard lk(workers_mu_);
                    worker_threads_.emplace_back([this, cmd] { run_flush(cmd); });
                    break;
                }
                case MsgType::PING:
                    mgr_conn_->send(MsgType::PING_ACK, f.seq,
                                    msg::PingAck{ring_state_.version()}.encode());
                    break;
                case MsgType::ERROR: {
                    auto err = msg::Error::decode(f.payload);
                    log::event("server", "manager_error", {{"message", err.message}});
                    {
                        std::lock_guard lk(ready_mu_);
                        if (!ready_) join_failed_ = true;
                    }
                    ready_cv_.notify_all();
                    break;
                }
                default:
                    break;
            }
        }
    } catch (const transport::TransportError&) {
        // manager gone; keep serving with the last known ring
    }
}

void ServerNode::stabilize_loop() {
    auto next = std::chrono::steady_clock::now();
    while (!stopping_.load()) {
        next += cfg_.stabilize_ms * 1ms;
        while (!stopping_.load() && std::chrono::steady_clock::now() < next)
            std::this_thread::sleep_for(10ms);
        if (stopping_.load()) break;
        if (!ready_) continue;

        stabilizer_->tick();

        uint64_t v = ring_state_.version();
        if (resync_needed_.exchange(false) || v != last_resync_version_.load()) {
            last_resync_version_.store(v);
            size_t shipped = resync_replicas();
            if (shipped > 0)
                log::event("server", "resync",
                           {{"self", address()}, {"records", shipped}});
        }
    }
}

void ServerNode::sweep_loop() {
    while (!stopping_.load()) {
        std::this_thread::sleep_for(100ms);
        auto now = std::chrono::steady_clock::now();
        std::vector<std::pair<ConnPtr, uint64_t>> expired;
        {
            std::lock_guard lk(pending_mu_);
            for (auto it = pending_puts_.begin(); it != pending_puts_.end();) {
                if (it->second.deadline <= now) {
                    expired.emplace_back(it->second.client_conn, it->second.seq);
                    it = pending_puts_.erase(it);
                } else {
                    ++it;
                }
            }
        }
        for (auto& [conn, seq] : expired)
            send_error(conn, seq, msg::kErrReplicationFailed, true,
                       "replication acknowledgments timed out");
    }
}

// -------------------------------------------------------------- ingest path

bool ServerNode::is_flushing_epoch(uint32_t epoch) const {
    std::lock_guard lk(flush_mu_);
    return flushing_epochs_.count(epoch) > 0;
}

void ServerNode::handle_put(const ConnPtr& conn, const wire::Frame& f) {
    if (not_serving_.load() || !ready_) {
        send_error(conn, f.seq, msg::kErrNotServing, true, "server not serving");
        return;
    }
    auto put = msg::Put::decode(f.payload);
    WriteRecord& rec = put.record;
    if (!file_id_ok(rec.file_id)) {
        send_error(conn, f.seq, msg::kErrBadRequest, false, "bad file id");
        return;
    }
    if (is_flushing_epoch(rec.epoch)) {
        send_error(conn, f.seq, msg::kErrBadRequest, true,
                   "epoch is being flushed");
        return;
    }
    rec.primary_addr = address();

    uint64_t need = store::record_header_size(rec.file_id) + rec.payload.size();
    auto live = ring_state_.live_members();
    bool fits = store_->usage().free() >= need;

    if (!fits && cfg_.redirect && put.redirect_hop == 0 && live.size() > 1) {
        auto best = query_min_utilization();
        if (best && best->server.address != address()) {
            msg::Redirect rd{best->server, best->free_bytes};
            log::event("server", "redirect",
                       {{"self", address()},
                        {"target", best->server.address},
                        {"free", best->free_bytes},
                        {"seq", f.seq}});
            try {
                conn->send(MsgType::REDIRECT, f.seq, rd.encode());
            } catch (const transport::TransportError&) {
            }
            return;
        }
    }

    bool duplicate = store_->contains_put(rec.client_id, rec.seq);
    try {
        store_->append(rec);
    } catch (const store::StorageExhausted& e) {
        send_error(conn, f.seq, msg::kErrStorageExhausted, true, e.what());
        return;
    }
    if (duplicate)
        store_->adopt_primary(rec.client_id, rec.seq, address());

    {
        std::lock_guard lk(holders_mu_);
        auto [it, inserted] = holders_.try_emplace(
            std::make_pair(rec.client_id, rec.seq),
            HolderInfo{rec.file_id, rec.offset, rec.epoch, {}});
        (void)it;
        (void)inserted;
    }

    size_t r_eff = std::min<size_t>(cfg_.replicas, live.size() > 0 ? live.size() - 1 : 0);
    if (r_eff == 0) {
        try {
            conn->send(MsgType::PUT_ACK, f.seq, {});
        } catch (const transport::TransportError&) {
        }
        return;
    }

    {
        std::lock_guard lk(pending_mu_);
        PendingPut p;
        p.client_id = rec.client_id;
        p.seq = rec.seq;
        p.acks_needed = r_eff;
        p.client_conn = conn;
        p.deadline = std::chrono::steady_clock::now() +
                     cfg_.put_pending_timeout_ms * 1ms;
        pending_puts_.insert_or_assign(std::make_pair(rec.client_id, rec.seq),
                                       std::move(p));
    }

    auto view = ring_state_.view();
    const ServerId& next = view.successors[0];
    msg::ReplPut rp{rec, view.self, uint8_t(r_eff - 1)};
    if (same_server(next, view.self) ||
        !send_async(next.address, MsgType::REPL_PUT, f.seq, rp.encode())) {
        {
            std::lock_guard lk(pending_mu_);
            pending_puts_.erase(std::make_pair(rec.client_id, rec.seq));
        }
        stabilizer_->suspect(next);
        send_error(conn, f.seq, msg::kErrReplicationFailed, true,
                   "successor unreachable");
    }
}

void ServerNode::handle_repl_put(const wire::Frame& f) {
    auto rp = msg::ReplPut::decode(f.payload);
    try {
        store_->append(rp.record);
    } catch (const store::StorageExhausted&) {
        // No ack; the primary times the put out and the client retries.
        return;
    }

    auto view = ring_state_.view();
    msg::ReplAck ack{view.self, rp.record.client_id};
    send_async(rp.origin.address, MsgType::REPL_ACK, f.seq, ack.encode());

    if (rp.remaining_hops > 0 && !view.successors.empty()) {
        const ServerId& next = view.successors[0];
        if (!same_server(next, view.self) && !same_server(next, rp.origin)) {
            msg::ReplPut fwd{rp.record, rp.origin, uint8_t(rp.remaining_hops - 1)};
            if (!send_async(next.address, MsgType::REPL_PUT, f.seq, fwd.encode()))
                stabilizer_->suspect(next);
        }
    }
}

void ServerNode::handle_repl_ack(const wire::Frame& f) {
    auto ack = msg::ReplAck::decode(f.payload);
    auto key = std::make_pair(ack.client_id, f.seq);
    {
        std::lock_guard lk(holders_mu_);
        auto it = holders_.find(key);
        if (it != holders_.end())
            it->second.holders.insert(ack.acker.address);
    }
    ConnPtr ack_conn;
    {
        std::lock_guard lk(pending_mu_);
        auto it = pending_puts_.find(key);
        if (it == pending_puts_.end())
            return;
        it->second.acks.insert(ack.acker.address);
        if (it->second.acks.size() < it->second.acks_needed)
            return;
        ack_conn = it->second.client_conn;
        pending_puts_.erase(it);
    }
    try {
        ack_conn->send(MsgType::PUT_ACK, f.seq, {});
    } catch (const transport::TransportError&) {
    }
}

// ---------------------------------------------------------------- read path

std::vector<msg::GetResp::Piece> ServerNode::local_pieces(const std::string& file_id,
                                                          uint64_t offset,
                                                          uint64_t length,
                                                          uint32_t epoch_limit,
                                                          bool* known) {
    std::vector<msg::GetResp::Piece> out;
    uint64_t req_end = offset + length;

    auto segs = store_->scan_file(file_id, epoch_limit);
    if (!segs.empty()) *known = true;
    for (const auto& s : segs) {
        uint64_t seg_end = s.offset + s.length;
        if (seg_end <= offset || s.offset >= req_end) continue;
        uint64_t lo = std::max(s.offset, offset);
        uint64_t hi = std::min(seg_end, req_end);
        Bytes data = store_->read(s.location);
        msg::GetResp::Piece p;
        p.offset = lo;
        p.epoch = s.epoch;
        p.seq = s.seq;
        p.client_id = s.client_id;
        p.data.assign(data.begin() + (lo - s.offset), data.begin() + (hi - s.offset));
        out.push_back(std::move(p));
    }

    {
        std::lock_guard lk(flush_mu_);
        for (const auto& [flush_epoch, pieces] : staged_by_epoch_) {
            for (const auto& sp : pieces) {
                if (sp.file_id != file_id) continue;
                *known = true;
                if (sp.epoch > epoch_limit) continue;
                uint64_t sp_end = sp.offset + sp.loc.length;
                if (sp_end <= offset || sp.offset >= req_end) continue;
                uint64_t lo = std::max(sp.offset, offset);
                uint64_t hi = std::min(sp_end, req_end);
                Bytes data = store_->read(sp.loc);
                msg::GetResp::Piece p;
                p.offset = lo;
                p.epoch = sp.epoch;
                p.seq = sp.seq;
                p.client_id = sp.client_id;
                p.data.assign(data.begin() + (lo - sp.offset),
                              data.begin() + (hi - sp.offset));
                out.push_back(std::move(p));
            }
        }
    }

    if (lookup_table_.find(file_id))
        *known = true;
    return out;
}

void ServerNode::handle_get(const ConnPtr& conn, const wire::Frame& f) {
    auto get = msg::Get::decode(f.payload);
    uint32_t limit = get.epoch_limit == 0 ? UINT32_MAX : get.epoch_limit;
    bool known = false;
    msg::GetResp resp;
    resp.pieces = local_pieces(get.file_id, get.offset, get.length, limit, &known);
    resp.found = known;
    conn->send(MsgType::GET_RESP, f.seq, resp.encode());
}

void ServerNode::handle_lookup(const ConnPtr& conn, const wire::Frame& f) {
    auto req = msg::LookupReq::decode(f.payload);
    auto entry = lookup_table_.find(req.file_id);
    msg::LookupResp resp;
    if (!entry) {
        resp.found = false;
        conn->send(MsgType::LOOKUP_RESP, f.seq, resp.encode());
        return;
    }
    resp.found = true;
    resp.global_size = entry->global_size;
    resp.epoch = entry->epoch;
    resp.n = entry->n;
    for (size_t i = 0; i < entry->ordering.size(); i++)
        resp.ordering.push_back({uint32_t(i), entry->ordering[i]});
    if (req.length > 0) {
        if (req.offset + req.length > entry->global_size) {
            send_error(conn, f.seq, msg::kErrBadRequest, false,
                       "request beyond global size");
            return;
        }
        for (const auto& o : flushplan::lookup_owner(*entry, req.offset, req.length))
            resp.owners.push_back({o.server, o.range.offset, o.range.length});
    }
    conn->send(MsgType::LOOKUP_RESP, f.seq, resp.encode());
}

// ----------------------------------------------------------- balance module

void ServerNode::handle_mem_query(const wire::Frame& f) {
    auto q = msg::MemQuery::decode(f.payload);
    auto view = ring_state_.view();
    q.collected.push_back({view.self, store_->usage().free()});

    const ServerId& next = view.successors.empty() ? view.self : view.successors[0];
    bool walk_done = q.hops_left == 0 || same_server(next, q.origin) ||
                     same_server(next, view.self);
    if (!walk_done) {
        msg::MemQuery fwd = q;
        fwd.hops_left--;
        if (send_async(next.address, MsgType::MEM_QUERY, f.seq, fwd.encode()))
            return;
        // Broken traversal: give the origin what we have.
    }
    msg::MemResp resp{q.collected};
    send_async(q.origin.address, MsgType::MEM_RESP, f.seq, resp.encode());
}

std::optional<msg::MemInfo> ServerNode::query_min_utilization() {
    auto view = ring_state_.view();
    auto live = ring_state_.live_members();
    if (live.size() <= 1)
        return msg::MemInfo{view.self, store_->usage().free()};

    std::unique_lock lk(memq_mu_);
    auto now = std::chrono::steady_clock::now();
    if (memq_cache_ &&
        now - memq_cache_time_ < cfg_.mem_query_cache_ms * 1ms)
        return memq_cache_;

    if (!memq_inflight_) {
        memq_inflight_ = true;
        memq_result_.reset();
        msg::MemQuery q;
        q.origin = view.self;
        q.hops_left = uint32_t(live.size());
        lk.unlock();
        bool sent = send_async(view.successors[0].address, MsgType::MEM_QUERY, 0,
                               q.encode());
        lk.lock();
        if (!sent) {
            memq_inflight_ = false;
            return msg::MemInfo{view.self, store_->usage().free()};
        }
    }
    memq_cv_.wait_for(lk, cfg_.rpc_timeout_ms * 1ms,
                      [this] { return memq_result_.has_value() || stopping_.load(); });
    memq_inflight_ = false;
    if (!memq_result_ || memq_result_->empty())
        return msg::MemInfo{view.self, store_->usage().free()};

    auto best = select_least_utilized(*memq_result_);
    memq_cache_ = best;
    memq_cache_time_ = std::chrono::steady_clock::now();
    return best;
}

void ServerNode::handle_fail_confirm(const ConnPtr& conn, const wire::Frame& f) {
    auto req = msg::FailConfirmReq::decode(f.payload);
    bool refused = false;
    auto resp = rpc(req.suspect.address, MsgType::PING, 0,
                    msg::Ping{ring_state_.view().self}.encode(),
                    std::max(250, ping_timeout_ms()), &refused);
    bool alive = resp && resp->msg_type == MsgType::PING_ACK;
    if (!alive)
        stabilizer_->suspect(req.suspect);  // kick our own repair
    log::event("server", "fail_confirm",
               {{"self", address()},
                {"suspect", req.suspect.address},
                {"confirmed", !alive}});
    try {
        conn->send(MsgType::FAIL_CONFIRM_RESP, f.seq,
                   msg::FailConfirmResp{!alive}.encode());
    } catch (const transport::TransportError&) {
    }
}

// ------------------------------------------------------------- replication

size_t ServerNode::resync_replicas() {
    auto view = ring_state_.view();
    auto live = ring_state_.live_members();
    size_t r_eff = std::min<size_t>(cfg_.replicas, live.size() > 0 ? live.size() - 1 : 0);
    if (r_eff == 0) return 0;

    std::vector<std::string> targets;
    for (const auto& s : view.successors) {
        if (same_server(s, view.self)) continue;
        if (targets.size() >= r_eff) break;
        targets.push_back(s.address);
    }

    struct Ship {
        std::string target;
        WriteRecord record;
    };
    std::vector<Ship> ships;
    {
        std::lock_guard lk(holders_mu_);
        for (const auto& [key, info] : holders_) {
            for (const auto& t : targets) {
                if (info.holders.count(t)) continue;
                auto rec = store_->get({info.file_id, info.offset}, info.epoch);
                if (!rec || rec->client_id != key.first || rec->seq != key.second)
                    continue;  // superseded or purged
                ships.push_back({t, std::move(*rec)});
            }
        }
    }

    size_t shipped = 0;
    for (auto& s : ships) {
        msg::ReplPut rp{s.record, view.self, 0};
        if (send_async(s.target, MsgType::REPL_PUT, s.record.seq, rp.encode()))
            shipped++;
    }
    return shipped;
}

// ------------------------------------------------------------------- flush

ServerNode::SessionPtr ServerNode::get_session(uint32_t epoch, uint32_t attempt) {
    std::lock_guard lk(flush_mu_);
    auto key = std::make_pair(epoch, attempt);
    auto it = sessions_.find(key);
    if (it != sessions_.end())
        return it->second;
    auto s = std::make_shared<FlushSession>();
    s->epoch = epoch;
    s->attempt = attempt;
    sessions_[key] = s;
    return s;
}

void ServerNode::handle_shuffle_meta(const wire::Frame& f) {
    auto meta = msg::ShuffleMeta::decode(f.payload);
    auto s = get_session(meta.epoch, meta.attempt);
    std::lock_guard lk(s->mu);
    if (!s->meta_addrs.count(meta.sender.address)) {
        s->meta_addrs.insert(meta.sender.address);
        s->metas.push_back(std::move(meta));
    }
    s->cv.notify_all();
}

void ServerNode::handle_shuffle_data(const wire::Frame& f) {
    auto data = msg::ShuffleData::decode(f.payload);
    auto s = get_session(data.epoch, data.attempt);
    if (data.end_of_stream) {
        std::lock_guard lk(s->mu);
        s->eos_addrs.insert(data.sender_address);
        s->cv.notify_all();
        return;
    }
    StorageLocation loc;
    try {
        loc = store_->append_raw(data.data);
    } catch (const store::StorageExhausted&) {
        std::lock_guard lk(s->mu);
        s->aborted = true;
        s->cv.notify_all();
        return;
    }
    std::lock_guard lk(s->mu);
    s->staged.push_back({data.file_id, data.offset, data.record_epoch, data.seq,
                         data.client_id, loc});
}

void ServerNode::release_session_staging(FlushSession& s) {
    for (const auto& p : s.staged)
        store_->release_raw(p.loc);
    s.staged.clear();
}

void ServerNode::prune_sessions(uint32_t completed_epoch, uint32_t winning_attempt) {
    std::lock_guard lk(flush_mu_);
    for (auto it = sessions_.begin(); it != sessions_.end();) {
        bool stale = it->first.first < completed_epoch ||
                     (it->first.first == completed_epoch &&
                      it->first.second <= winning_attempt);
        if (stale) {
            std::lock_guard slk(it->second->mu);
            release_session_staging(*it->second);
            it = sessions_.erase(it);
        } else {
            ++it;
        }
    }
}

void ServerNode::finish_flush(const msg::FlushCmd& cmd, bool ok, uint32_t files,
                              uint64_t bytes) {
    {
        std::lock_guard lk(flush_mu_);
        flushing_epochs_.erase(cmd.epoch);
    }
    auto view = ring_state_.view();
    msg::FlushDone done{cmd.epoch, cmd.attempt, view.self, ok, files, bytes};
    if (mgr_conn_) {
        try {
            mgr_conn_->send(MsgType::FLUSH_DONE, 0, done.encode());
        } catch (const transport::TransportError&) {
        }
    }
    log::event("server", "flush_finish",
               {{"self", address()},
                {"epoch", cmd.epoch},
                {"attempt", cmd.attempt},
                {"ok", ok},
                {"bytes", bytes}});
}

void ServerNode::run_flush(msg::FlushCmd cmd) {
    auto session = get_session(cmd.epoch, cmd.attempt);
    if (cmd.abort) {
        std::lock_guard lk(session->mu);
        session->aborted = true;
        session->cv.notify_all();
        return;
    }

    auto participants = cmd.participants;
    std::sort(participants.begin(), participants.end(),
              [](const ServerId& a, const ServerId& b) {
                  return a.ordinal != b.ordinal ? a.ordinal < b.ordinal
                                                : a.address < b.address;
              });
    size_t self_index = participants.size();
    std::vector<std::string> others;
    for (size_t i = 0; i < participants.size(); i++) {
        if (participants[i].address == address())
            self_index = i;
        else
            others.push_back(participants[i].address);
    }
    if (self_index == participants.size()) {
        finish_flush(cmd, false, 0, 0);
        return;
    }

    {
        std::lock_guard lk(flush_mu_);
        flushing_epochs_.insert(cmd.epoch);
    }
    log::event("server", "flush_start",
               {{"self", address()}, {"epoch", cmd.epoch}, {"attempt", cmd.attempt}});

    auto in_participants = [&](const std::string& addr) {
        return std::any_of(participants.begin(), participants.end(),
                           [&](const ServerId& p) { return p.address == addr; });
    };
    auto eligible = [&](const store::SegmentInfo& s) {
        // Ship once: by the origin primary if it is still around, otherwise
        // by every surviving replica holder (duplicates are byte-identical).
        return s.primary_addr == address() || !in_participants(s.primary_addr);
    };

    // --- communication phase: metadata exchange
    std::vector<std::pair<std::string, uint64_t>> extents;
    for (const auto& file : store_->files()) {
        uint64_t extent = 0;
        for (const auto& s : store_->scan_file(file, cmd.epoch))
            if (eligible(s))
                extent = std::max(extent, s.offset + s.length);
        if (extent > 0)
            extents.emplace_back(file, extent);
    }

    auto view = ring_state_.view();
    msg::ShuffleMeta my_meta{cmd.epoch, cmd.attempt, view.self, extents};
    for (const auto& o : others) {
        if (!send_async(o, MsgType::SHUFFLE_META, 0, my_meta.encode())) {
            finish_flush(cmd, false, 0, 0);
            return;
        }
    }

    auto wait_on_session = [&](auto pred) {
        auto deadline = std::chrono::steady_clock::now() +
                        cfg_.flush_phase_timeout_ms * 1ms;
        std::unique_lock lk(session->mu);
        while (!pred() && !session->aborted && !stopping_.load() &&
               std::chrono::steady_clock::now() < deadline)
            session->cv.wait_for(lk, 50ms);
        return pred() && !session->aborted && !stopping_.load();
    };

    bool metas_in = wait_on_session([&] {
        for (const auto& o : others)
            if (!session->meta_addrs.count(o)) return false;
        return true;
    });
    if (!metas_in) {
        finish_flush(cmd, false, 0, 0);
        return;
    }

    // Identical inputs on every server -> identical plans.
    std::map<std::string, uint64_t> global_sizes;
    for (const auto& [file, extent] : extents)
        global_sizes[file] = std::max(global_sizes[file], extent);
    {
        std::lock_guard lk(session->mu);
        for (const auto& m : session->metas)
            for (const auto& [file, extent] : m.extents)
                global_sizes[file] = std::max(global_sizes[file], extent);
    }
    std::map<std::string, flushplan::FlushPlan> plans;
    for (const auto& [file, size] : global_sizes)
        plans[file] = flushplan::build_plan({file, size, cmd.epoch},
                                            uint32_t(participants.size()));

    // --- shuffle phase
    for (const auto& [file, plan] : plans) {
        for (const auto& s : store_->scan_file(file, cmd.epoch)) {
            if (!eligible(s)) continue;
            Bytes data = store_->read(s.location);
            for (const auto& piece : flushplan::split_range(plan, s.offset, s.length)) {
                size_t begin = size_t(piece.range.offset - s.offset);
                size_t end = begin + size_t(piece.range.length);
                if (piece.owner_index == self_index) {
                    StorageLocation loc;
                    try {
                        loc = store_->append_raw(
                            ByteView(data.data() + begin, end - begin));
                    } catch (const store::StorageExhausted&) {
                        finish_flush(cmd, false, 0, 0);
                        return;
                    }
                    std::lock_guard lk(session->mu);
                    session->staged.push_back({file, piece.range.offset, s.epoch,
                                               s.seq, s.client_id, loc});
                } else {
                    msg::ShuffleData sd{cmd.epoch,
                                        cmd.attempt,
                                        address(),
                                        false,
                                        file,
                                        piece.range.offset,
                                        s.epoch,
                                        s.seq,
                                        s.client_id,
                                        Bytes(data.begin() + begin, data.begin() + end)};
                    if (!send_async(participants[piece.owner_index].address,
                                    MsgType::SHUFFLE_DATA, 0, sd.encode())) {
                        finish_flush(cmd, false, 0, 0);
                        return;
                    }
                }
            }
        }
    }
    msg::ShuffleData eos;
    eos.epoch = cmd.epoch;
    eos.attempt = cmd.attempt;
    eos.sender_address = address();
    eos.end_of_stream = true;
    for (const auto& o : others) {
        if (!send_async(o, MsgType::SHUFFLE_DATA, 0, eos.encode())) {
            finish_flush(cmd, false, 0, 0);
            return;
        }
    }

    bool data_in = wait_on_session([&] {
        for (const auto& o : others)
            if (!session->eos_addrs.count(o)) return false;
        return true;
    });
    if (!data_in) {
        finish_flush(cmd, false, 0, 0);
        return;
    }

    // --- I/O phase: one writer per domain, contiguous extents
    std::vector<StagedPiece> staged;
    {
        std::lock_guard lk(session->mu);
        staged = session->staged;
    }
    std::sort(staged.begin(), staged.end(), [](const StagedPiece& a, const StagedPiece& b) {
        if (a.file_id != b.file_id) return a.file_id < b.file_id;
        if (a.epoch != b.epoch) return a.epoch < b.epoch;
        if (a.seq != b.seq) return a.seq < b.seq;
        return a.client_id < b.client_id;
    });

    uint32_t files_written = 0;
    uint64_t bytes_written = 0;
    for (const auto& [file, size] : global_sizes) {
        if (!file_id_ok(file)) {
            log::event("server", "flush_bad_file_id", {{"file", file}});
            continue;
        }
        std::filesystem::path path = std::filesystem::path(cfg_.pfs_dir) / file;
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        int fd = ::open(path.c_str(), O_CREAT | O_WRONLY, 0644);
        if (fd < 0 || ::ftruncate(fd, off_t(size)) != 0) {
            if (fd >= 0) ::close(fd);
            finish_flush(cmd, false, files_written, bytes_written);
            return;
        }
        bool io_error = false;
        for (const auto& p : staged) {
            if (p.file_id != file) continue;
            Bytes data = store_->read(p.loc);
            size_t done = 0;
            while (done < data.size()) {
                ssize_t n = ::pwrite(fd, data.data() + done, data.size() - done,
                                     off_t(p.offset + done));
                if (n < 0) {
                    if (errno == EINTR) continue;
                    io_error = true;
                    break;
                }
                done += size_t(n);
            }
            if (io_error) break;
            bytes_written += data.size();
        }
        if (!io_error && cfg_.flush_fsync && ::fdatasync(fd) != 0)
            io_error = true;
        ::close(fd);
        if (io_error) {
            finish_flush(cmd, false, files_written, bytes_written);
            return;
        }
        files_written++;
    }

    // The lookup table is written after the shuffle; from here on reads can
    // be routed by domain owner with no further communication.
    std::vector<std::string> ordering;
    for (const auto& p : participants)
        ordering.push_back(p.address);
    for (const auto& [file, size] : global_sizes)
        lookup_table_.put({file, size, uint32_t(participants.size()), ordering,
                           cmd.epoch});

    {
        std::lock_guard lk(flush_mu_);
        auto& keep = staged_by_epoch_[cmd.epoch];
        std::lock_guard slk(session->mu);
        keep.insert(keep.end(), session->staged.begin(), session->staged.end());
        session->staged.clear();
    }

    // Retain the last R checkpoints; purge the rest.
    uint32_t min_keep = cmd.epoch >= cfg_.retain_epochs
                            ? cmd.epoch - cfg_.retain_epochs + 1
                            : 0;
    store_->purge_epochs_below(min_keep);
    {
        std::lock_guard lk(flush_mu_);
        for (auto it = staged_by_epoch_.begin(); it != staged_by_epoch_.end();) {
            if (it->first < min_keep) {
                for (const auto& p : it->second)
                    store_->release_raw(p.loc);
                it = staged_by_epoch_.erase(it);
            } else {
                ++it;
            }
        }
    }
    {
        std::lock_guard lk(holders_mu_);
        for (auto it = holders_.begin(); it != holders_.end();) {
            it = it->second.epoch < min_keep ? holders_.erase(it) : std::next(it);
        }
    }

    finish_flush(cmd, true, files_written, bytes_written);
    prune_sessions(cmd.epoch, cmd.attempt);
}

}  // namespace bb::server
