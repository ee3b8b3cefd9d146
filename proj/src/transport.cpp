#include "bb/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace bb::transport {

namespace {

void close_quiet(int fd) {
    if (fd >= 0) ::close(fd);
}

}  // namespace

std::pair<std::string, uint16_t> split_address(const std::string& addr) {
    auto pos = addr.rfind(':');
    if (pos == std::string::npos)
        throw TransportError("address '" + addr + "' is not host:port");
    std::string host = addr.substr(0, pos);
    int port = std::stoi(addr.substr(pos + 1));
    if (port <= 0 || port > 65535)
        throw TransportError("bad port in '" + addr + "'");
    if (host == "localhost") host = "127.0.0.1";
    return {host, uint16_t(port)};
}

Conn::Conn(int fd, std::string peer) : fd_(fd), peer_(std::move(peer)) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

Conn::~Conn() {
    shutdown();
    close_quiet(fd_);
}

void Conn::shutdown() {
    bool expected = false;
    if (closed_.compare_exchange_strong(expected, true))
        ::shutdown(fd_, SHUT_RDWR);
}

void Conn::send_frame(const Bytes& encoded) {
    std::lock_guard lk(write_mu_);
    if (closed_.load())
        throw ConnClosed("send on closed connection to " + peer_);
    size_t sent = 0;
    while (sent < encoded.size()) {
        ssize_t n = ::send(fd_, encoded.data() + sent, encoded.size() - sent,
                           MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            closed_.store(true);
            throw ConnClosed("send to " + peer_ + " failed: " + std::strerror(errno));
        }
        sent += size_t(n);
    }
}

void Conn::send(wire::MsgType type, uint64_t seq, ByteView payload) {
    send_frame(wire::encode_frame(type, seq, payload));
}

wire::Frame Conn::recv(int timeout_ms) {
    std::lock_guard lk(read_mu_);
    for (;;) {
        if (auto f = decoder_.next())
            return *f;
        if (closed_.load())
            throw ConnClosed("recv on closed connection to " + peer_);

        struct pollfd pfd{fd_, POLLIN, 0};
        int pr = ::poll(&pfd, 1, timeout_ms);
        if (pr < 0) {
            if (errno == EINTR) continue;
            throw TransportError(std::string("poll failed: ") + std::strerror(errno));
        }
        if (pr == 0)
            throw Timeout("recv timeout from " + peer_);

        uint8_t buf[64 * 1024];
        ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
        if (n < 0) {
            if (errno == EINTR) continue;
            closed_.store(true);
            throw ConnClosed("recv from " + peer_ + " failed: " + std::strerror(errno));
        }
        if (n == 0) {
            closed_.store(true);
            throw ConnClosed("connection closed by " + peer_);
        }
        decoder_.feed(ByteView(buf, size_t(n)));
    }
}

wire::Frame Conn::rpc(wire::MsgType type, uint64_t seq, ByteView payload,
                      int timeout_ms) {
    std::lock_guard lk(rpc_mu_);
    send(type, seq, payload);
    return recv(timeout_ms);
}

ConnPtr dial(const std::string& address, int timeout_ms) {
    auto [host, port] = split_address(address);
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0)
        throw TransportError(std::string("socket: ") + std::strerror(errno));

    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &sa.sin_addr) != 1) {
        close_quiet(fd);
        throw TransportError("bad host '" + host + "'");
    }

    // Loopback connects either succeed or get refused immediately;
    // the timeout guards the general case.
    struct timeval tv{timeout_ms / 1000, (timeout_ms % 1000) * 1000};
    ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) {
        int err = errno;
        close_quiet(fd);
        if (err == ECONNREFUSED)
            throw ConnectRefused("connection refused by " + address);
        throw TransportError("connect to " + address + " failed: " +
                             std::strerror(err));
    }
    return std::make_shared<Conn>(fd, address);
}

Listener::Listener(uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0)
        throw TransportError(std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);

    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    sa.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) {
        int err = errno;
        close_quiet(fd_);
        throw TransportError("bind 127.0.0.1:" + std::to_string(port) +
                             " failed: " + std::strerror(err));
    }
    if (::listen(fd_, 128) != 0) {
        int err = errno;
        close_quiet(fd_);
        throw TransportError(std::string("listen: ") + std::strerror(err));
    }

    socklen_t len = sizeof sa;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&sa), &len);
    port_ = ntohs(sa.sin_port);
}

Listener::~Listener() {
    close();
    // The fd itself is released here, after any accept() caller has been
    // joined by the owner, so a woken accept never sees a reused fd.
    close_quiet(fd_);
    fd_ = -1;
}

ConnPtr Listener::accept() {
    while (!closed_.load()) {
        struct pollfd pfd{fd_, POLLIN, 0};
        int pr = ::poll(&pfd, 1, 100);
        if (pr < 0) {
            if (errno == EINTR) continue;
            return nullptr;
        }
        if (pr == 0 || (pfd.revents & (POLLERR | POLLHUP | POLLNVAL)))
            continue;

        sockaddr_in peer{};
        socklen_t len = sizeof peer;
        int fd = ::accept(fd_, reinterpret_cast<sockaddr*>(&peer), &len);
        if (fd < 0) {
            if (errno == EINTR || errno == EAGAIN) continue;
            return nullptr;
        }
        char ip[INET_ADDRSTRLEN] = {0};
        ::inet_ntop(AF_INET, &peer.sin_addr, ip, sizeof ip);
        return std::make_shared<Conn>(
            fd, std::string(ip) + ":" + std::to_string(ntohs(peer.sin_port)));
    }
    return nullptr;
}

void Listener::close() {
    bool expected = false;
    if (closed_.compare_exchange_strong(expected, true))
        ::shutdown(fd_, SHUT_RDWR);
}

}  // namespace bb::transport
