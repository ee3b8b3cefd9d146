#pragma once

// Typed payloads for every MsgType. Layouts are documented in PROTOCOL.md;
// integers big-endian, strings and byte blocks length-prefixed.

#include <cstdint>
#include <string>
#include <vector>

#include "bb/ring.hpp"
#include "bb/store.hpp"
#include "bb/wire.hpp"

namespace bb::msg {

using ring::MembershipEvent;
using ring::ServerId;

void put_server_id(wire::PayloadWriter& w, const ServerId& s);
ServerId get_server_id(wire::PayloadReader& r);

void put_event(wire::PayloadWriter& w, const MembershipEvent& e);
MembershipEvent get_event(wire::PayloadReader& r);

// PUT / REPL_PUT carry a WriteRecord; frame.seq duplicates rec.seq.
struct Put {
    store::WriteRecord record;
    uint8_t redirect_hop = 0;  // 0 original, 1 redirected, 2 forced home

    Bytes encode() const;
    static Put decode(ByteView payload);
};

struct ReplPut {
    store::WriteRecord record;
    ServerId origin;         // primary to ACK back to
    uint8_t remaining_hops = 0;

    Bytes encode() const;
    static ReplPut decode(ByteView payload);
};

struct ReplAck {
    ServerId acker;
    uint32_t client_id = 0;

    Bytes encode() const;
    static ReplAck decode(ByteView payload);
};

struct Redirect {
    ServerId target;
    uint64_t free_bytes = 0;

    Bytes encode() const;
    static Redirect decode(ByteView payload);
};

struct Get {
    std::string file_id;
    uint64_t offset = 0;
    uint64_t length = 0;
    uint32_t epoch_limit = 0;  // 0 = latest

    Bytes encode() const;
    static Get decode(ByteView payload);
};

struct GetResp {
    struct Piece {
        uint64_t offset = 0;
        uint32_t epoch = 0;
        uint64_t seq = 0;
        uint32_t client_id = 0;
        Bytes data;
    };
    bool found = false;
    std::vector<Piece> pieces;

    Bytes encode() const;
    static GetResp decode(ByteView payload);
};

struct MemInfo {
    ServerId server;
    uint64_t free_bytes = 0;
};

struct MemQuery {
    ServerId origin;
    uint32_t hops_left = 0;
    std::vector<MemInfo> collected;

    Bytes encode() const;
    static MemQuery decode(ByteView payload);
};

struct MemResp {
    std::vector<MemInfo> collected;

    Bytes encode() const;
    static MemResp decode(ByteView payload);
};

struct Ping {
    ServerId sender;

    Bytes encode() const;
    static Ping decode(ByteView payload);
};

struct PingAck {
    uint64_t version = 0;

    Bytes encode() const;
    static PingAck decode(ByteView payload);
};

struct NeighborResp {
    ServerId predecessor;
    std::vector<ServerId> successors;
    std::vector<MembershipEvent> events;
    uint64_t version = 0;

    Bytes encode() const;
    static NeighborResp decode(ByteView payload);
};

struct FailReport {
    MembershipEvent event;

    Bytes encode() const;
    static FailReport decode(ByteView payload);
};

struct FailConfirmReq {
    ServerId suspect;

    Bytes encode() const;
    static FailConfirmReq decode(ByteView payload);
};

struct FailConfirmResp {
    bool confirmed = false;

    Bytes encode() const;
    static FailConfirmResp decode(ByteView payload);
};

struct JoinReq {
    std::string joiner_address;
    std::string predecessor_address;

    Bytes encode() const;
    static JoinReq decode(ByteView payload);
};

struct RingUpdate {
    uint64_t version = 0;
    std::vector<ServerId> members;

    Bytes encode() const;
    static RingUpdate decode(ByteView payload);
};

enum class Role : uint8_t { Server = 0, Client = 1 };

struct Register {
    Role role = Role::Server;
    std::string address;  // server listen address; empty for clients
    uint32_t rank = 0;    // client rank

    Bytes encode() const;
    static Register decode(ByteView payload);
};

struct FlushCmd {
    uint32_t epoch = 0;
    uint32_t attempt = 0;
    bool abort = false;
    std::vector<ServerId> participants;

    Bytes encode() const;
    static FlushCmd decode(ByteView payload);
};

struct ShuffleMeta {
    uint32_t epoch = 0;
    uint32_t attempt = 0;
    ServerId sender;
    std::vector<std::pair<std::string, uint64_t>> extents;  // file -> local extent

    Bytes encode() const;
    static ShuffleMeta decode(ByteView payload);
};

struct ShuffleData {
    uint32_t epoch = 0;
    uint32_t attempt = 0;
    std::string sender_address;
    bool end_of_stream = false;
    std::string file_id;
    uint64_t offset = 0;
    uint32_t record_epoch = 0;
    uint64_t seq = 0;
    uint32_t client_id = 0;
    Bytes data;

    Bytes encode() const;
    static ShuffleData decode(ByteView payload);
};

struct FlushDone {
    uint32_t epoch = 0;
    uint32_t attempt = 0;
    ServerId server;
    bool ok = false;
    uint32_t files = 0;
    uint64_t bytes_written = 0;

    Bytes encode() const;
    static FlushDone decode(ByteView payload);
};

struct LookupReq {
    std::string file_id;
    uint64_t offset = 0;
    uint64_t length = 0;

    Bytes encode() const;
    static LookupReq decode(ByteView payload);
};

struct LookupResp {
    bool found = false;
    uint64_t global_size = 0;
    uint32_t epoch = 0;
    uint32_t n = 0;
    std::vector<ServerId> ordering;
    struct Owner {
        std::string address;
        uint64_t offset = 0;
        uint64_t length = 0;
    };
    std::vector<Owner> owners;

    Bytes encode() const;
    static LookupResp decode(ByteView payload);
};

struct Error {
    uint16_t code = 0;
    bool retryable = false;
    std::string message;

    Bytes encode() const;
    static Error decode(ByteView payload);
};

// Error codes.
constexpr uint16_t kErrNotFound = 1;
constexpr uint16_t kErrStorageExhausted = 2;
constexpr uint16_t kErrNotServing = 3;
constexpr uint16_t kErrReplicationFailed = 4;
constexpr uint16_t kErrBadRequest = 5;
constexpr uint16_t kErrFlushFailed = 6;
constexpr uint16_t kErrJoinRejected = 7;

}  // namespace bb::msg
