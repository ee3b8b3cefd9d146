#include "bb/messages.hpp"

namespace bb::msg {

using wire::PayloadReader;
using wire::PayloadWriter;

void put_server_id(PayloadWriter& w, const ServerId& s) {
    w.u32(s.ordinal).str(s.address);
}

ServerId get_server_id(PayloadReader& r) {
    ServerId s;
    s.ordinal = r.u32();
    s.address = r.str();
    return s;
}

void put_event(PayloadWriter& w, const MembershipEvent& e) {
    w.u8(uint8_t(e.kind));
    put_server_id(w, e.subject);
    put_server_id(w, e.reporter);
    w.u64(e.version);
}

MembershipEvent get_event(PayloadReader& r) {
    MembershipEvent e;
    e.kind = ring::EventKind(r.u8());
    e.subject = get_server_id(r);
    e.reporter = get_server_id(r);
    e.version = r.u64();
    return e;
}

namespace {

void put_record(PayloadWriter& w, const store::WriteRecord& rec) {
    w.str(rec.file_id)
        .u64(rec.offset)
        .u32(rec.epoch)
        .u64(rec.seq)
        .u32(rec.client_id)
        .str(rec.primary_addr)
        .bytes(rec.payload);
}

store::WriteRecord get_record(PayloadReader& r) {
    store::WriteRecord rec;
    rec.file_id = r.str();
    rec.offset = r.u64();
    rec.epoch = r.u32();
    rec.seq = r.u64();
    rec.client_id = r.u32();
    rec.primary_addr = r.str();
    rec.payload = r.bytes();
    return rec;
}

}  // namespace

Bytes Put::encode() const {
    PayloadWriter w;
    w.u8(redirect_hop);
    put_record(w, record);
    return w.take();
}

Put Put::decode(ByteView payload) {
    PayloadReader r(payload);
    Put p;
    p.redirect_hop = r.u8();
    p.record = get_record(r);
    return p;
}

Bytes ReplPut::encode() const {
    PayloadWriter w;
    put_server_id(w, origin);
    w.u8(remaining_hops);
    put_record(w, record);
    return w.take();
}

ReplPut ReplPut::decode(ByteView payload) {
    PayloadReader r(payload);
    ReplPut p;
    p.origin = get_server_id(r);
    p.remaining_hops = r.u8();
    p.record = get_record(r);
    return p;
}

Bytes ReplAck::encode() const {
    PayloadWriter w;
    put_server_id(w, acker);
    w.u32(client_id);
    return w.take();
}

ReplAck ReplAck::decode(ByteView payload) {
    PayloadReader r(payload);
    ReplAck a;
    a.acker = get_server_id(r);
    a.client_id = r.u32();
    return a;
}

Bytes Redirect::encode() const {
    PayloadWriter w;
    put_server_id(w, target);
    w.u64(free_bytes);
    return w.take();
}

Redirect Redirect::decode(ByteView payload) {
    PayloadReader r(payload);
    Redirect d;
    d.target = get_server_id(r);
    d.free_bytes = r.u64();
    return d;
}

Bytes Get::encode() const {
    PayloadWriter w;
    w.str(file_id).u64(offset).u64(length).u32(epoch_limit);
    return w.take();
}

Get Get::decode(ByteView payload) {
    PayloadReader r(payload);
    Get g;
    g.file_id = r.str();
    g.offset = r.u64();
    g.length = r.u64();
    g.epoch_limit = r.u32();
    return g;
}

Bytes GetResp::encode() const {
    PayloadWriter w;
    w.u8(found ? 1 : 0).u32(uint32_t(pieces.size()));
    for (const auto& p : pieces)
        w.u64(p.offset).u32(p.epoch).u64(p.seq).u32(p.client_id).bytes(p.data);
    return w.take();
}

GetResp GetResp::decode(ByteView payload) {
    PayloadReader r(payload);
    GetResp g;
    g.found = r.u8() != 0;
    uint32_t n = r.u32();
    g.pieces.reserve(n);
    for (uint32_t i = 0; i < n; i++) {
        Piece p;
        p.offset = r.u64();
        p.epoch = r.u32();
        p.seq = r.u64();
        p.client_id = r.u32();
        p.data = r.bytes();
        g.pieces.push_back(std::move(p));
    }
    return g;
}

namespace {

void put_mem_infos(PayloadWriter& w, const std::vector<MemInfo>& infos) {
    w.u32(uint32_t(infos.size()));
    for (const auto& m : infos) {
        put_server_id(w, m.server);
        w.u64(m.free_bytes);
    }
}

std::vector<MemInfo> get_mem_infos(PayloadReader& r) {
    uint32_t n = r.u32();
    std::vector<MemInfo> out;
    out.reserve(n);
    for (uint32_t i = 0; i < n; i++) {
        MemInfo m;
        m.server = get_server_id(r);
        m.free_bytes = r.u64();
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace

Bytes MemQuery::encode() const {
    PayloadWriter w;
    put_server_id(w, origin);
    w.u32(hops_left);
    put_mem_infos(w, collected);
    return w.take();
}

MemQuery MemQuery::decode(ByteView payload) {
    PayloadReader r(payload);
    MemQuery q;
    q.origin = get_server_id(r);
    q.hops_left = r.u32();
    q.collected = get_mem_infos(r);
    return q;
}

Bytes MemResp::encode() const {
    PayloadWriter w;
    put_mem_infos(w, collected);
    return w.take();
}

MemResp MemResp::decode(ByteView payload) {
    PayloadReader r(payload);
    MemResp m;
    m.collected = get_mem_infos(r);
    return m;
}

Bytes Ping::encode() const {
    PayloadWriter w;
    put_server_id(w, sender);
    return w.take();
}

Ping Ping::decode(ByteView payload) {
    PayloadReader r(payload);
    Ping p;
    p.sender = get_server_id(r);
    return p;
}

Bytes PingAck::encode() const {
    PayloadWriter w;
    w.u64(version);
    return w.take();
}

PingAck PingAck::decode(ByteView payload) {
    PayloadReader r(payload);
    PingAck a;
    a.version = r.u64();
    return a;
}

Bytes NeighborResp::encode() const {
    PayloadWriter w;
    put_server_id(w, predecessor);
    w.u32(uint32_t(successors.size()));
    for (const auto& s : successors)
        put_server_id(w, s);
    w.u32(uint32_t(events.size()));
    for (const auto& e : events)
        put_event(w, e);
    w.u64(version);
    return w.take();
}

NeighborResp NeighborResp::decode(ByteView payload) {
    PayloadReader r(payload);
    NeighborResp n;
    n.predecessor = get_server_id(r);
    uint32_t ns = r.u32();
    for (uint32_t i = 0; i < ns; i++)
        n.successors.push_back(get_server_id(r));
    uint32_t ne = r.u32();
    for (uint32_t i = 0; i < ne; i++)
        n.events.push_back(get_event(r));
    n.version = r.u64();
    return n;
}

Bytes FailReport::encode() const {
    PayloadWriter w;
    put_event(w, event);
    return w.take();
}

FailReport FailReport::decode(ByteView payload) {
    PayloadReader r(payload);
    FailReport f;
    f.event = get_event(r);
    return f;
}

Bytes FailConfirmReq::encode() const {
    PayloadWriter w;
    put_server_id(w, suspect);
    return w.take();
}

FailConfirmReq FailConfirmReq::decode(ByteView payload) {
    PayloadReader r(payload);
    FailConfirmReq f;
    f.suspect = get_server_id(r);
    return f;
}

Bytes FailConfirmResp::encode() const {
    PayloadWriter w;
    w.u8(confirmed ? 1 : 0);
    return w.take();
}

FailConfirmResp FailConfirmResp::decode(ByteView payload) {
    PayloadReader r(payload);
    FailConfirmResp f;
    f.confirmed = r.u8() != 0;
    return f;
}

Bytes JoinReq::encode() const {
    PayloadWriter w;
    w.str(joiner_address).str(predecessor_address);
    return w.take();
}

JoinReq JoinReq::decode(ByteView payload) {
    PayloadReader r(payload);
    JoinReq j;
    j.joiner_address = r.str();
    j.predecessor_address = r.str();
    return j;
}

Bytes RingUpdate::encode() const {
    PayloadWriter w;
    w.u64(version).u32(uint32_t(members.size()));
    for (const auto& m : members)
        put_server_id(w, m);
    return w.take();
}

RingUpdate RingUpdate::decode(ByteView payload) {
    PayloadReader r(payload);
    RingUpdate u;
    u.version = r.u64();
    uint32_t n = r.u32();
    for (uint32_t i = 0; i < n; i++)
        u.members.push_back(get_server_id(r));
    return u;
}

Bytes Register::encode() const {
    PayloadWriter w;
    w.u8(uint8_t(role)).str(address).u32(rank);
    return w.take();
}

Register Register::decode(ByteView payload) {
    PayloadReader r(payload);
    Register reg;
    reg.role = Role(r.u8());
    reg.address = r.str();
    reg.rank = r.u32();
    return reg;
}

Bytes FlushCmd::encode() const {
    PayloadWriter w;
    w.u32(epoch).u32(attempt).u8(abort ? 1 : 0).u32(uint32_t(participants.size()));
    for (const auto& p : participants)
        put_server_id(w, p);
    return w.take();
}

FlushCmd FlushCmd::decode(ByteView payload) {
    PayloadReader r(payload);
    FlushCmd c;
    c.epoch = r.u32();
    c.attempt = r.u32();
    c.abort = r.u8() != 0;
    uint32_t n = r.u32();
    for (uint32_t i = 0; i < n; i++)
        c.participants.push_back(get_server_id(r));
    return c;
}

Bytes ShuffleMeta::encode() const {
    PayloadWriter w;
    w.u32(epoch).u32(attempt);
    put_server_id(w, sender);
    w.u32(uint32_t(extents.size()));
    for (const auto& [file, extent] : extents)
        w.str(file).u64(extent);
    return w.take();
}

ShuffleMeta ShuffleMeta::decode(ByteView payload) {
    PayloadReader r(payload);
    ShuffleMeta m;
    m.epoch = r.u32();
    m.attempt = r.u32();
    m.sender = get_server_id(r);
    uint32_t n = r.u32();
    for (uint32_t i = 0; i < n; i++) {
        std::string file = r.str();
        uint64_t extent = r.u64();
        m.extents.emplace_back(std::move(file), extent);
    }
    return m;
}

Bytes ShuffleData::encode() const {
    PayloadWriter w;
    w.u32(epoch)
        .u32(attempt)
        .str(sender_address)
        .u8(end_of_stream ? 1 : 0)
        .str(file_id)
        .u64(offset)
        .u32(record_epoch)
        .u64(seq)
        .u32(client_id)
        .bytes(data);
    return w.take();
}

ShuffleData ShuffleData::decode(ByteView payload) {
    PayloadReader r(payload);
    ShuffleData d;
    d.epoch = r.u32();
    d.attempt = r.u32();
    d.sender_address = r.str();
    d.end_of_stream = r.u8() != 0;
    d.file_id = r.str();
    d.offset = r.u64();
    d.record_epoch = r.u32();
    d.seq = r.u64();
    d.client_id = r.u32();
    d.data = r.bytes();
    return d;
}

Bytes FlushDone::encode() const {
    PayloadWriter w;
    w.u32(epoch).u32(attempt);
    put_server_id(w, server);
    w.u8(ok ? 1 : 0).u32(files).u64(bytes_written);
    return w.take();
}

FlushDone FlushDone::decode(ByteView payload) {
    PayloadReader r(payload);
    FlushDone d;
    d.epoch = r.u32();
    d.attempt = r.u32();
    d.server = get_server_id(r);
    d.ok = r.u8() != 0;
    d.files = r.u32();
    d.bytes_written = r.u64();
    return d;
}

Bytes LookupReq::encode() const {
    PayloadWriter w;
    w.str(file_id).u64(offset).u64(length);
    return w.take();
}

LookupReq LookupReq::decode(ByteView payload) {
    PayloadReader r(payload);
    LookupReq q;
    q.file_id = r.str();
    q.offset = r.u64();
    q.length = r.u64();
    return q;
}

Bytes LookupResp::encode() const {
    PayloadWriter w;
    w.u8(found ? 1 : 0).u64(global_size).u32(epoch).u32(n);
    w.u32(uint32_t(ordering.size()));
    for (const auto& s : ordering)
        put_server_id(w, s);
    w.u32(uint32_t(owners.size()));
    for (const auto& o : owners)
        w.str(o.address).u64(o.offset).u64(o.length);
    return w.take();
}

LookupResp LookupResp::decode(ByteView payload) {
    PayloadReader r(payload);
    LookupResp l;
    l.found = r.u8() != 0;
    l.global_size = r.u64();
    l.epoch = r.u32();
    l.n = r.u32();
    uint32_t no = r.u32();
    for (uint32_t i = 0; i < no; i++)
        l.ordering.push_back(get_server_id(r));
    uint32_t nw = r.u32();
    for (uint32_t i = 0; i < nw; i++) {
        Owner o;
        o.address = r.str();
        o.offset = r.u64();
        o.length = r.u64();
        l.owners.push_back(std::move(o));
    }
    return l;
}

Bytes Error::encode() const {
    PayloadWriter w;
    w.u16(code).u8(retryable ? 1 : 0).str(message);
    return w.take();
}

Error Error::decode(ByteView payload) {
    PayloadReader r(payload);
    Error e;
    e.code = r.u16();
    e.retryable = r.u8() != 0;
    e.message = r.str();
    return e;
}

}  // namespace bb::msg
