#include "bb/wire.hpp"

namespace bb::wire {

bool msg_type_valid(uint8_t code) {
    return code >= uint8_t(MsgType::PUT) && code <= uint8_t(MsgType::ERROR);
}

const char* msg_type_name(MsgType t) {
    switch (t) {
        case MsgType::PUT: return "PUT";
        case MsgType::PUT_ACK: return "PUT_ACK";
        case MsgType::REPL_PUT: return "REPL_PUT";
        case MsgType::REPL_ACK: return "REPL_ACK";
        case MsgType::GET: return "GET";
        case MsgType::GET_RESP: return "GET_RESP";
        case MsgType::REDIRECT: return "REDIRECT";
        case MsgType::MEM_QUERY: return "MEM_QUERY";
        case MsgType::MEM_RESP: return "MEM_RESP";
        case MsgType::PING: return "PING";
        case MsgType::PING_ACK: return "PING_ACK";
        case MsgType::NEIGHBOR_QUERY: return "NEIGHBOR_QUERY";
        case MsgType::NEIGHBOR_RESP: return "NEIGHBOR_RESP";
        case MsgType::FAIL_REPORT: return "FAIL_REPORT";
        case MsgType::FAIL_CONFIRM_REQ: return "FAIL_CONFIRM_REQ";
        case MsgType::FAIL_CONFIRM_RESP: return "FAIL_CONFIRM_RESP";
        case MsgType::JOIN_REQ: return "JOIN_REQ";
        case MsgType::RING_UPDATE: return "RING_UPDATE";
        case MsgType::REGISTER: return "REGISTER";
        case MsgType::FLUSH_CMD: return "FLUSH_CMD";
        case MsgType::SHUFFLE_META: return "SHUFFLE_META";
        case MsgType::SHUFFLE_DATA: return "SHUFFLE_DATA";
        case MsgType::FLUSH_DONE: return "FLUSH_DONE";
        case MsgType::LOOKUP_REQ: return "LOOKUP_REQ";
        case MsgType::LOOKUP_RESP: return "LOOKUP_RESP";
        case MsgType::ERROR: return "ERROR";
    }
    return "UNKNOWN";
}

Bytes encode_frame(MsgType msg_type, uint64_t seq, ByteView payload, uint32_t max_payload) {
    if (payload.size() > max_payload)
        throw EncodingError("payload exceeds max frame payload (" +
                            std::to_string(payload.size()) + " > " +
                            std::to_string(max_payload) + ")");
    Bytes out;
    out.reserve(kHeaderSize + payload.size());
    put_u32(out, kMagic);
    put_u8(out, uint8_t(msg_type));
    put_u64(out, seq);
    put_u32(out, uint32_t(payload.size()));
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

void FrameDecoder::feed(ByteView data) {
    // Compact the consumed prefix before growing.
    if (pos_ > 0 && pos_ == buf_.size()) {
        buf_.clear();
        pos_ = 0;
    } else if (pos_ > 4096 && pos_ > buf_.size() / 2) {
        buf_.erase(buf_.begin(), buf_.begin() + pos_);
        pos_ = 0;
    }
    buf_.insert(buf_.end(), data.begin(), data.end());
}

std::optional<Frame> FrameDecoder::next() {
    if (buffered() < kHeaderSize)
        return std::nullopt;
    const uint8_t* hdr = &buf_[pos_];
    uint32_t magic = get_u32(hdr);
    if (magic != kMagic)
        throw ProtocolError("bad frame magic");
    uint8_t code = hdr[4];
    if (!msg_type_valid(code))
        throw ProtocolError("unknown msg_type " + std::to_string(code));
    uint64_t seq = get_u64(hdr + 5);
    uint32_t payload_len = get_u32(hdr + 13);
    if (payload_len > max_payload_)
        throw ProtocolError("frame payload too large");
    if (buffered() < kHeaderSize + payload_len)
        return std::nullopt;
    Frame f;
    f.msg_type = MsgType(code);
    f.seq = seq;
    f.payload.assign(buf_.begin() + pos_ + kHeaderSize,
                     buf_.begin() + pos_ + kHeaderSize + payload_len);
    pos_ += kHeaderSize + payload_len;
    return f;
}

}  // namespace bb::wire
