#include "bb/client.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <future>

#include "bb/flushplan.hpp"
#include "bb/log.hpp"

namespace bb::client {

using namespace std::chrono_literals;
using ring::ServerId;
using transport::ConnPtr;
using wire::MsgType;

ClientSession::ClientSession(ClientConfig cfg) : cfg_(std::move(cfg)) {
    for (int i = 0;; i++) {
        try {
            mgr_conn_ = transport::dial(cfg_.manager_addr, cfg_.rpc_timeout_ms);
            break;
        } catch (const transport::TransportError&) {
            if (i >= 20)
                throw SessionError("cannot reach manager at " + cfg_.manager_addr);
            std::this_thread::sleep_for(250ms);
        }
    }
    msg::Register reg{msg::Role::Client, "", cfg_.rank};
    mgr_conn_->send(MsgType::REGISTER, 0, reg.encode());

    mgr_thread_ = std::thread([this] { manager_loop(); });
    scan_thread_ = std::thread([this] { scan_loop(); });

    std::unique_lock lk(list_mu_);
    if (!list_cv_.wait_for(lk, cfg_.list_wait_ms * 1ms,
                           [this] { return list_version_ > 0 || fatal_.load(); }) ||
        fatal_.load())
        throw SessionError("no server list from manager (ring not up?)");
}

ClientSession::~ClientSession() {
    stopping_.store(true);
    if (mgr_conn_) mgr_conn_->shutdown();
    {
        std::lock_guard lk(channels_mu_);
        for (auto& [_, ch] : put_channels_)
            ch.conn->shutdown();
    }
    {
        std::lock_guard lk(rpc_mu_);
        for (auto& [_, c] : rpc_conns_)
            c->shutdown();
    }
    pending_cv_.notify_all();
    list_cv_.notify_all();
    if (mgr_thread_.joinable()) mgr_thread_.join();
    if (scan_thread_.joinable()) scan_thread_.join();
    std::lock_guard lk(channels_mu_);
    for (auto& [_, ch] : put_channels_)
        if (ch.reader.joinable()) ch.reader.join();
    for (auto& t : dead_readers_)
        if (t.joinable()) t.join();
}

uint64_t ClientSession::server_list_version() const {
    std::lock_guard lk(list_mu_);
    return list_version_;
}

std::vector<ServerId> ClientSession::server_list() const {
    std::lock_guard lk(list_mu_);
    return servers_;
}

size_t ClientSession::pending_count() const {
    std::lock_guard lk(pending_mu_);
    return pending_.size();
}

void ClientSession::apply_server_list(const msg::RingUpdate& upd) {
    {
        std::lock_guard lk(list_mu_);
        if (upd.version <= list_version_)
            return;  // never apply an older list
        list_version_ = upd.version;
        servers_ = upd.members;
        std::sort(servers_.begin(), servers_.end(),
                  [](const ServerId& a, const ServerId& b) {
                      return a.ordinal != b.ordinal ? a.ordinal < b.ordinal
                                                    : a.address < b.address;
                  });
        if (cfg_.strategy == placement::Strategy::Ketama) {
            std::vector<std::string> ids;
            for (const auto& s : servers_)
                ids.push_back(s.address);
            ketama_ = servers_.empty() ? std::optional<placement::HashRing>()
                                       : placement::HashRing::build(ids);
        }
        log::event("client", "server_list",
                   {{"rank", cfg_.rank},
                    {"version", upd.version},
                    {"servers", servers_.size()}});
    }
    list_cv_.notify_all();
    resend_after_membership_change();
}

void ClientSession::manager_loop() {
    try {
        for (;;) {
            wire::Frame f = mgr_conn_->recv();
            switch (f.msg_type) {
                case MsgType::RING_UPDATE:
                    apply_server_list(msg::RingUpdate::decode(f.payload));
                    break;
                case MsgType::FLUSH_DONE:
                case MsgType::ERROR: {
                    std::shared_ptr<std::promise<wire::Frame>> p;
                    {
                        std::lock_guard lk(mgr_rpc_mu_);
                        auto it = mgr_rpcs_.find(f.seq);
                        if (it != mgr_rpcs_.end()) {
                            p = it->second;
                            mgr_rpcs_.erase(it);
                        }
                    }
                    if (p)
                        p->set_value(f);
                    else if (f.msg_type == MsgType::ERROR)
                        log::event("client", "manager_error",
                                   {{"rank", cfg_.rank},
                                    {"message",
                                     msg::Error::decode(f.payload).message}});
                    break;
                }
                default:
                    break;
            }
        }
    } catch (const transport::TransportError&) {
        if (!stopping_.load()) {
            fatal_.store(true);
            fatal_reason_ = "manager connection lost";
            pending_cv_.notify_all();
            list_cv_.notify_all();
        }
    }
}

std::string ClientSession::place(const placement::RecordKey& key) const {
    std::lock_guard lk(list_mu_);
    if (servers_.empty())
        throw SessionError("empty server list");
    if (cfg_.strategy == placement::Strategy::Iso)
        return placement::locate_isolated(cfg_.rank, servers_).address;
    return ketama_->locate(key);
}

ConnPtr ClientSession::put_conn(const std::string& addr) {
    std::lock_guard lk(channels_mu_);
    auto it = put_channels_.find(addr);
    if (it != put_channels_.end()) {
        if (!it->second.conn->closed())
            return it->second.conn;
        // The reader may itself be waiting on pending_mu_, which our caller
        // can hold; park the thread and join it at close instead.
        dead_readers_.push_back(std::move(it->second.reader));
        put_channels_.erase(it);
    }
    ConnPtr conn = transport::dial(addr, cfg_.rpc_timeout_ms);
    PutChannel ch;
    ch.conn = conn;
    ch.reader = std::thread([this, addr, conn] { ack_loop(addr, conn); });
    put_channels_.emplace(addr, std::move(ch));
    return conn;
}

void ClientSession::send_put(uint64_t seq) {
    auto it = pending_.find(seq);
    if (it == pending_.end()) return;
    Pending& p = it->second;
    p.deadline = std::chrono::steady_clock::now() + cfg_.ack_timeout_ms * 1ms;
    msg::Put put{p.record, p.hop};
    try {
        put_conn(p.target)->send(MsgType::PUT, seq, put.encode());
    } catch (const transport::TransportError&) {
        // Retried by the scanner, which also runs failure detection.
        p.retry_at = std::chrono::steady_clock::now() + 100ms;
    }
}

uint64_t ClientSession::write(const std::string& file_id, uint64_t offset,
                              Bytes payload) {
    if (fatal_.load())
        throw SessionError("session failed: " + fatal_reason_);
    if (payload.size() > wire::kDefaultMaxPayload - 4096)
        throw SessionError("payload larger than one frame allows");

    std::unique_lock lk(pending_mu_);
    pending_cv_.wait(lk, [this] {
        return pending_.size() < cfg_.window || fatal_.load() || stopping_.load();
    });
    if (fatal_.load())
        throw SessionError("session failed: " + fatal_reason_);
    if (stopping_.load())
        throw SessionError("session closed");

    uint64_t seq = next_seq_.fetch_add(1);
    store::WriteRecord rec;
    rec.file_id = file_id;
    rec.offset = offset;
    rec.payload = std::move(payload);
    rec.epoch = epoch_.load();
    rec.seq = seq;
    rec.client_id = cfg_.rank;

    Pending p;
    p.record = std::move(rec);
    p.target = place({file_id, offset});
    pending_.emplace(seq, std::move(p));
    send_put(seq);
    return seq;
}

void ClientSession::wait() {
    std::unique_lock lk(pending_mu_);
    pending_cv_.wait(lk, [this] { return pending_.empty() || fatal_.load(); });
    if (fatal_.load())
        throw SessionError("session failed: " + fatal_reason_);
    epoch_.fetch_add(1);
}

void ClientSession::ack_loop(std::string addr, ConnPtr conn) {
    try {
        for (;;) {
            wire::Frame f = conn->recv();
            switch (f.msg_type) {
                case MsgType::PUT_ACK: {
                    std::lock_guard lk(pending_mu_);
                    pending_.erase(f.seq);
                    pending_cv_.notify_all();
                    break;
                }
                case MsgType::REDIRECT: {
                    auto rd = msg::Redirect::decode(f.payload);
                    std::lock_guard lk(pending_mu_);
                    auto it = pending_.find(f.seq);
                    if (it == pending_.end()) break;
                    Pending& p = it->second;
                    redirects_.fetch_add(1);
                    if (p.hop == 0) {
                        // Follow the redirect once, then fall back home.
                        p.hop = 1;
                        p.target = rd.target.address;
                    } else {
                        p.hop = 2;
                        p.target = place(
                            {p.record.file_id, p.record.offset});
                    }
                    log::event("client", "redirect",
                               {{"rank", cfg_.rank},
                                {"seq", f.seq},
                                {"hop", p.hop},
                                {"target", p.target}});
                    send_put(f.seq);
                    break;
                }
                case MsgType::ERROR: {
                    auto err = msg::Error::decode(f.payload);
                    std::lock_guard lk(pending_mu_);
                    auto it = pending_.find(f.seq);
                    if (it == pending_.end()) break;
                    if (err.retryable) {
                        it->second.retry_at =
                            std::chrono::steady_clock::now() + 200ms;
                    } else {
                        fatal_.store(true);
                        fatal_reason_ = "write " + std::to_string(f.seq) +
                                        " rejected: " + err.message;
                        pending_cv_.notify_all();
                    }
                    break;
                }
                default:
                    break;
            }
        }
    } catch (const transport::TransportError&) {
        // Server gone or connection torn down; the scanner notices pending
        // deadlines and runs failure detection.
        (void)addr;
    }
}

void ClientSession::scan_loop() {
    while (!stopping_.load()) {
        std::this_thread::sleep_for(50ms);
        if (fatal_.load()) continue;

        std::vector<std::string> timed_out;
        {
            std::lock_guard lk(pending_mu_);
            auto now = std::chrono::steady_clock::now();
            for (auto& [seq, p] : pending_) {
                if (p.retry_at && *p.retry_at <= now) {
                    p.retry_at.reset();
                    p.target = place({p.record.file_id, p.record.offset});
                    send_put(seq);
                } else if (p.deadline <= now) {
                    if (std::find(timed_out.begin(), timed_out.end(), p.target) ==
                        timed_out.end())
                        timed_out.push_back(p.target);
                    // Push the deadline out so one detection round handles it.
                    p.deadline = now + cfg_.ack_timeout_ms * 1ms;
                }
            }
        }
        for (const auto& addr : timed_out)
            handle_server_failure(addr);
    }
}

bool ClientSession::confirm_failure(const std::string& suspect) {
    ServerId suspect_id;
    ServerId pred_id;
    bool have_pred = false;
    {
        std::lock_guard lk(list_mu_);
        for (size_t i = 0; i < servers_.size(); i++) {
            if (servers_[i].address == suspect) {
                suspect_id = servers_[i];
                if (servers_.size() > 1) {
                    pred_id = servers_[(i + servers_.size() - 1) % servers_.size()];
                    have_pred = true;
                }
                break;
            }
        }
    }
    if (!have_pred)
        return true;  // nobody to ask; report directly

    auto resp = server_rpc(pred_id.address, MsgType::FAIL_CONFIRM_REQ, 0,
                           msg::FailConfirmReq{suspect_id}.encode());
    if (!resp || resp->msg_type != MsgType::FAIL_CONFIRM_RESP)
        return true;  // predecessor also unreachable -> report directly
    return msg::FailConfirmResp::decode(resp->payload).confirmed;
}

void ClientSession::report_failure(const std::string& suspect) {
    ServerId subject;
    uint64_t version;
    {
        std::lock_guard lk(list_mu_);
        version = list_version_;
        for (const auto& s : servers_)
            if (s.address == suspect) subject = s;
    }
    ring::MembershipEvent ev{ring::EventKind::FAILED, subject,
                             {cfg_.rank, "client:" + std::to_string(cfg_.rank)},
                             version + 1};
    try {
        mgr_conn_->send(MsgType::FAIL_REPORT, 0, msg::FailReport{ev}.encode());
    } catch (const transport::TransportError&) {
        fatal_.store(true);
        fatal_reason_ = "manager unreachable during failure handling";
        pending_cv_.notify_all();
        return;
    }
    // The manager answers with a ring update either way.
    std::unique_lock lk(list_mu_);
    list_cv_.wait_for(lk, cfg_.rpc_timeout_ms * 2ms, [&] {
        return list_version_ > version || fatal_.load() || stopping_.load();
    });
}

void ClientSession::resend_after_membership_change() {
    std::lock_guard lk(pending_mu_);
    bool live_target;
    for (auto& [seq, p] : pending_) {
        {
            std::lock_guard llk(list_mu_);
            live_target = std::any_of(
                servers_.begin(), servers_.end(),
                [&](const ServerId& s) { return s.address == p.target; });
        }
        std::string fresh = place({p.record.file_id, p.record.offset});
        if (fresh != p.target || !live_target) {
            p.target = fresh;
            p.hop = 0;
            p.retry_at.reset();
            send_put(seq);
        }
    }
}

void ClientSession::handle_server_failure(const std::string& addr) {
    std::lock_guard serial(failure_mu_);
    if (fatal_.load() || stopping_.load())
        return;
    bool still_member;
    {
        std::lock_guard lk(list_mu_);
        still_member = std::any_of(
            servers_.begin(), servers_.end(),
            [&](const ServerId& s) { return s.address == addr; });
    }
    if (!still_member) {
        // Somebody else already got it removed; just re-place.
        resend_after_membership_change();
        return;
    }

    log::event("client", "suspect_server", {{"rank", cfg_.rank}, {"target", addr}});
    if (!confirm_failure(addr)) {
        // Spurious timeout: the predecessor says it is alive; retry in place.
        std::lock_guard lk(pending_mu_);
        for (auto& [seq, p] : pending_)
            if (p.target == addr)
                send_put(seq);
        return;
    }

    report_failure(addr);
    if (fatal_.load())
        return;
    resend_after_membership_change();
}

std::optional<wire::Frame> ClientSession::server_rpc(const std::string& addr,
                                                     MsgType t, uint64_t seq,
                                                     const Bytes& payload) {
    for (int attempt = 0; attempt < 2; attempt++) {
        ConnPtr conn;
        {
            std::lock_guard lk(rpc_mu_);
            auto it = rpc_conns_.find(addr);
            if (it != rpc_conns_.end() && !it->second->closed()) {
                conn = it->second;
            } else {
                try {
                    conn = transport::dial(addr, cfg_.rpc_timeout_ms);
                } catch (const transport::TransportError&) {
                    return std::nullopt;
                }
                rpc_conns_[addr] = conn;
            }
        }
        try {
            return conn->rpc(t, seq, payload, cfg_.rpc_timeout_ms);
        } catch (const transport::Timeout&) {
            return std::nullopt;
        } catch (const transport::TransportError&) {
            std::lock_guard lk(rpc_mu_);
            rpc_conns_.erase(addr);
        }
    }
    return std::nullopt;
}

Bytes ClientSession::assemble(const std::string& file_id, uint64_t offset,
                              uint64_t length,
                              const std::vector<msg::GetResp::Piece>& pieces) const {
    (void)file_id;
    Bytes out(length, 0);
    std::vector<const msg::GetResp::Piece*> ordered;
    ordered.reserve(pieces.size());
    for (const auto& p : pieces)
        ordered.push_back(&p);
    std::sort(ordered.begin(), ordered.end(),
              [](const msg::GetResp::Piece* a, const msg::GetResp::Piece* b) {
                  if (a->epoch != b->epoch) return a->epoch < b->epoch;
                  if (a->seq != b->seq) return a->seq < b->seq;
                  return a->client_id < b->client_id;
              });
    for (const auto* p : ordered) {
        if (p->offset + p->data.size() <= offset || p->offset >= offset + length)
            continue;
        uint64_t lo = std::max(p->offset, offset);
        uint64_t hi = std::min(p->offset + p->data.size(), offset + length);
        std::memcpy(out.data() + (lo - offset), p->data.data() + (lo - p->offset),
                    size_t(hi - lo));
    }
    return out;
}

Bytes ClientSession::read(const std::string& file_id, uint64_t offset,
                          uint64_t length) {
    Bytes out(length, 0);
    bool file_known = false;
    uint64_t pos = offset;
    size_t server_cursor = 0;

    while (pos < offset + length) {
        uint64_t chunk = std::min<uint64_t>(cfg_.read_chunk, offset + length - pos);
        std::vector<msg::GetResp::Piece> pieces;

        auto servers = server_list();
        if (servers.empty())
            throw SessionError("empty server list");

        // First try the lookup table (post-shuffle route: ask any server,
        // fan out to the domain owners it names).
        bool routed = false;
        for (size_t i = 0; i < servers.size() && !routed; i++) {
            const auto& s = servers[(server_cursor + i) % servers.size()];
            auto resp = server_rpc(s.address, MsgType::LOOKUP_REQ, 0,
                                   msg::LookupReq{file_id, 0, 0}.encode());
            if (!resp || resp->msg_type != MsgType::LOOKUP_RESP)
                continue;
            auto lookup = msg::LookupResp::decode(resp->payload);
            if (!lookup.found)
                break;  // table miss: fall back to broadcast below
            file_known = true;
            routed = true;
            if (pos >= lookup.global_size)
                break;  // hole beyond what was flushed
            uint64_t lk_len = std::min(chunk, lookup.global_size - pos);
            flushplan::LookupEntry entry;
            entry.file_id = file_id;
            entry.global_size = lookup.global_size;
            entry.n = lookup.n;
            entry.epoch = lookup.epoch;
            for (const auto& o : lookup.ordering)
                entry.ordering.push_back(o.address);
            for (const auto& owner : flushplan::lookup_owner(entry, pos, lk_len)) {
                auto get = server_rpc(
                    owner.server, MsgType::GET, 0,
                    msg::Get{file_id, owner.range.offset, owner.range.length, 0}
                        .encode());
                if (!get || get->msg_type != MsgType::GET_RESP)
                    continue;
                auto gr = msg::GetResp::decode(get->payload);
                for (auto& piece : gr.pieces)
                    pieces.push_back(std::move(piece));
            }
        }
        server_cursor++;

        if (!routed) {
            // Pre-flush route: no lookup table anywhere yet, so ask every
            // server for its locally buffered overlaps.
            for (const auto& s : servers) {
                auto get = server_rpc(s.address, MsgType::GET, 0,
                                      msg::Get{file_id, pos, chunk, 0}.encode());
                if (!get || get->msg_type != MsgType::GET_RESP)
                    continue;
                auto gr = msg::GetResp::decode(get->payload);
                if (gr.found) file_known = true;
                for (auto& piece : gr.pieces)
                    pieces.push_back(std::move(piece));
            }
        }

        Bytes part = assemble(file_id, pos, chunk, pieces);
        std::memcpy(out.data() + (pos - offset), part.data(), part.size());
        pos += chunk;
    }

    if (!file_known)
        throw NotFoundError("file " + file_id + " is not buffered anywhere");
    return out;
}

void ClientSession::flush(uint32_t epoch) {
    if (fatal_.load())
        throw SessionError("session failed: " + fatal_reason_);
    uint32_t e = epoch != 0 ? epoch : last_completed_epoch();
    if (e == 0)
        throw SessionError("no completed epoch to flush");

    uint64_t seq = next_seq_.fetch_add(1);
    auto promise = std::make_shared<std::promise<wire::Frame>>();
    auto future = promise->get_future();
    {
        std::lock_guard lk(mgr_rpc_mu_);
        mgr_rpcs_[seq] = promise;
    }
    msg::FlushCmd cmd;
    cmd.epoch = e;
    try {
        mgr_conn_->send(MsgType::FLUSH_CMD, seq, cmd.encode());
    } catch (const transport::TransportError&) {
        throw SessionError("manager unreachable");
    }
    if (future.wait_for(cfg_.flush_timeout_ms * 1ms) != std::future_status::ready)
        throw SessionError("flush timed out for epoch " + std::to_string(e));
    wire::Frame f = future.get();
    if (f.msg_type == MsgType::ERROR)
        throw SessionError("flush failed: " + msg::Error::decode(f.payload).message);
    log::event("client", "flush_complete", {{"rank", cfg_.rank}, {"epoch", e}});
}

}  // namespace bb::client
