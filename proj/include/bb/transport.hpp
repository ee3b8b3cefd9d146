#pragma once

// Blocking TCP transport carrying wire frames. One Conn is readable by
// exactly one consumer at a time; writes are serialized internally so
// any thread may send.

#include <atomic>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>

#include "bb/wire.hpp"

namespace bb::transport {

struct TransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConnClosed : TransportError {
    using TransportError::TransportError;
};
struct Timeout : TransportError {
    using TransportError::TransportError;
};
struct ConnectRefused : TransportError {
    using TransportError::TransportError;
};

// "host:port" with a numeric IPv4 host (or "localhost").
std::pair<std::string, uint16_t> split_address(const std::string& addr);

class Conn {
public:
    explicit Conn(int fd, std::string peer = "");
    ~Conn();

    Conn(const Conn&) = delete;
    Conn& operator=(const Conn&) = delete;

    // Thread-safe; frames from concurrent senders never interleave.
    void send(wire::MsgType type, uint64_t seq, ByteView payload);
    void send_frame(const Bytes& encoded);

    // Single-consumer. timeout_ms < 0 blocks; 0 polls. Throws ConnClosed
    // when the peer is gone, Timeout when the deadline passes, and
    // wire::ProtocolError on a malformed stream.
    wire::Frame recv(int timeout_ms = -1);

    // Sends a request and waits for the next inbound frame. Serializes
    // callers, so this must be an rpc-only connection.
    wire::Frame rpc(wire::MsgType type, uint64_t seq, ByteView payload,
                    int timeout_ms);

    void shutdown();  // unblocks any reader; idempotent
    bool closed() const { return closed_.load(); }
    const std::string& peer() const { return peer_; }

private:
    int fd_;
    std::string peer_;
    std::atomic<bool> closed_{false};
    std::mutex write_mu_;
    std::mutex rpc_mu_;
    std::mutex read_mu_;
    wire::FrameDecoder decoder_;
};

using ConnPtr = std::shared_ptr<Conn>;

// Throws ConnectRefused immediately if nothing listens there.
ConnPtr dial(const std::string& address, int timeout_ms = 5000);

class Listener {
public:
    // Binds 127.0.0.1; port 0 picks a free port.
    explicit Listener(uint16_t port = 0);
    ~Listener();

    Listener(const Listener&) = delete;
    Listener& operator=(const Listener&) = delete;

    uint16_t port() const { return port_; }
    std::string address() const { return "127.0.0.1:" + std::to_string(port_); }

    // Returns nullptr once close() has been called.
    ConnPtr accept();

    void close();

private:
    int fd_ = -1;
    uint16_t port_ = 0;
    std::atomic<bool> closed_{false};
};

}  // namespace bb::transport
