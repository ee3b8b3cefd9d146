#pragma once

// Framed binary message protocol shared by clients, servers and the manager.
// Layout (all integers big-endian):
//
//   magic      4 bytes   0x42424D31 ("BBM1")
//   msg_type   1 byte
//   seq        8 bytes
//   payload_len 4 bytes
//   payload    payload_len bytes
//
// See PROTOCOL.md for the per-message payload layouts.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "bb/bytes.hpp"

namespace bb::wire {

constexpr uint32_t kMagic = 0x42424D31;  // "BBM1"
constexpr size_t kHeaderSize = 17;
constexpr uint32_t kDefaultMaxPayload = 16u * 1024 * 1024;

enum class MsgType : uint8_t {
    PUT = 1,
    PUT_ACK = 2,
    REPL_PUT = 3,
    REPL_ACK = 4,
    GET = 5,
    GET_RESP = 6,
    REDIRECT = 7,
    MEM_QUERY = 8,
    MEM_RESP = 9,
    PING = 10,
    PING_ACK = 11,
    NEIGHBOR_QUERY = 12,
    NEIGHBOR_RESP = 13,
    FAIL_REPORT = 14,
    FAIL_CONFIRM_REQ = 15,
    FAIL_CONFIRM_RESP = 16,
    JOIN_REQ = 17,
    RING_UPDATE = 18,
    REGISTER = 19,
    FLUSH_CMD = 20,
    SHUFFLE_META = 21,
    SHUFFLE_DATA = 22,
    FLUSH_DONE = 23,
    LOOKUP_REQ = 24,
    LOOKUP_RESP = 25,
    ERROR = 26,
};

bool msg_type_valid(uint8_t code);
const char* msg_type_name(MsgType t);

struct Frame {
    MsgType msg_type{MsgType::ERROR};
    uint64_t seq = 0;
    Bytes payload;

    bool operator==(const Frame&) const = default;
};

struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EncodingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Serializes one frame. Throws EncodingError if the payload exceeds max_payload.
Bytes encode_frame(MsgType msg_type, uint64_t seq, ByteView payload,
                   uint32_t max_payload = kDefaultMaxPayload);

// Incremental decoder for a byte stream carrying concatenated frames.
// Feed arbitrary chunks; frames come out in order and are self-delimiting.
class FrameDecoder {
public:
    explicit FrameDecoder(uint32_t max_payload = kDefaultMaxPayload)
        : max_payload_(max_payload) {}

    void feed(ByteView data);

    // Returns the next complete frame, or nullopt if more bytes are needed.
    // Throws ProtocolError on bad magic, unknown msg_type or oversize length;
    // the connection must be dropped after that.
    std::optional<Frame> next();

    size_t buffered() const { return buf_.size() - pos_; }

private:
    Bytes buf_;
    size_t pos_ = 0;
    uint32_t max_payload_;
};

// Little writer/reader pair for message payloads (big-endian integers,
// length-prefixed strings and byte blocks).
class PayloadWriter {
public:
    PayloadWriter& u8(uint8_t v) { put_u8(buf_, v); return *this; }
    PayloadWriter& u16(uint16_t v) { put_u16(buf_, v); return *this; }
    PayloadWriter& u32(uint32_t v) { put_u32(buf_, v); return *this; }
    PayloadWriter& u64(uint64_t v) { put_u64(buf_, v); return *this; }
    PayloadWriter& str(const std::string& s) {
        put_u32(buf_, uint32_t(s.size()));
        buf_.insert(buf_.end(), s.begin(), s.end());
        return *this;
    }
    PayloadWriter& bytes(ByteView b) {
        put_u32(buf_, uint32_t(b.size()));
        buf_.insert(buf_.end(), b.begin(), b.end());
        return *this;
    }
    Bytes take() { return std::move(buf_); }

private:
    Bytes buf_;
};

class PayloadReader {
public:
    explicit PayloadReader(ByteView data) : data_(data) {}

    uint8_t u8() { need(1); return data_[pos_++]; }
    uint16_t u16() { need(2); auto v = get_u16(&data_[pos_]); pos_ += 2; return v; }
    uint32_t u32() { need(4); auto v = get_u32(&data_[pos_]); pos_ += 4; return v; }
    uint64_t u64() { need(8); auto v = get_u64(&data_[pos_]); pos_ += 8; return v; }
    std::string str() {
        uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(&data_[pos_]), n);
        pos_ += n;
        return s;
    }
    Bytes bytes() {
        uint32_t n = u32();
        need(n);
        Bytes b(data_.begin() + pos_, data_.begin() + pos_ + n);
        pos_ += n;
        return b;
    }
    bool done() const { return pos_ == data_.size(); }
    size_t remaining() const { return data_.size() - pos_; }

private:
    void need(size_t n) const {
        if (pos_ + n > data_.size())
            throw ProtocolError("payload truncated");
    }
    ByteView data_;
    size_t pos_ = 0;
};

}  // namespace bb::wire
