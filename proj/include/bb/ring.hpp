#pragma once

// Ring membership: the manager-owned authoritative member list, each
// server's local view (predecessor + k successors), and the periodic
// stabilization protocol that repairs views after failures and joins.
//
// Views are always derived from (base list at some manager version) plus
// a last-writer-wins set of membership events keyed by subject, applied
// in version order. That makes event application idempotent and
// order-insensitive, which is what lets concurrently-repairing servers
// converge.

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace bb::ring {

struct ServerId {
    uint32_t ordinal = 0;
    std::string address;

    bool operator==(const ServerId&) const = default;
};

// Identity is the address; ordinals are ring positions and may be
// reassigned by the manager on joins.
inline bool same_server(const ServerId& a, const ServerId& b) {
    return a.address == b.address;
}

struct RingView {
    ServerId self;
    ServerId predecessor;
    std::vector<ServerId> successors;
    uint64_t version = 0;
};

enum class EventKind : uint8_t { FAILED = 0, JOINED = 1 };

struct MembershipEvent {
    EventKind kind = EventKind::FAILED;
    ServerId subject;
    ServerId reporter;
    uint64_t version = 0;

    bool operator==(const MembershipEvent&) const = default;
};

class RingState {
public:
    RingState() = default;
    RingState(ServerId self, unsigned successor_count)
        : self_(std::move(self)), k_(successor_count) {}

    // Authoritative snapshot from the manager; supersedes events at or
    // below its version.
    bool apply_ring_update(uint64_t version, std::vector<ServerId> members);

    // Single membership event (local detection, gossip, FAIL_REPORT).
    // Stale or duplicate events leave the state unchanged.
    bool apply_event(const MembershipEvent& event);

    RingView view() const;
    std::vector<ServerId> live_members() const;
    std::vector<MembershipEvent> pending_events() const;
    uint64_t version() const;
    uint64_t base_version() const;
    const ServerId& self() const { return self_; }
    unsigned successor_count() const { return k_; }

    void set_self(ServerId self) { std::lock_guard lk(mu_); self_ = std::move(self); }
    void configure(ServerId self, unsigned successor_count) {
        std::lock_guard lk(mu_);
        self_ = std::move(self);
        k_ = successor_count;
    }

private:
    std::vector<ServerId> derive_locked() const;
    uint64_t version_locked() const;

    ServerId self_;
    unsigned k_ = 2;
    uint64_t base_version_ = 0;
    std::vector<ServerId> base_;
    std::map<std::string, MembershipEvent> events_;  // subject address -> latest
    mutable std::mutex mu_;
};

// Predecessor + successors computed from an ordered live list, wrapping;
// a single server is its own predecessor and sole successor.
RingView derive_view(const ServerId& self, const std::vector<ServerId>& live,
                     unsigned k, uint64_t version);

struct NeighborInfo {
    ServerId predecessor;
    std::vector<ServerId> successors;
    std::vector<MembershipEvent> events;
    uint64_t version = 0;
};

// Transport seam for the stabilization protocol. Production backs this
// with the wire transport; the convergence tests back it with a
// simulated network and clock.
class PeerCom {
public:
    enum class PingResult { Ack, Refused, Timeout };

    virtual ~PeerCom() = default;
    virtual PingResult ping(const ServerId& target) = 0;
    virtual std::optional<NeighborInfo> neighbor_query(const ServerId& target) = 0;
    virtual void send_fail_report(const ServerId& target, const MembershipEvent& event) = 0;
    virtual void report_to_manager(const MembershipEvent& event) = 0;
};

// One instance per server. tick() runs one stabilization period:
// ping successors[0]; on ack refresh the successor tail via a neighbor
// query (merging gossiped events); on refusal, or after miss_limit
// silent periods, declare the successor failed, inform the next
// successor so it adopts us as predecessor, rebuild the tail from it,
// and report to the manager.
class Stabilizer {
public:
    Stabilizer(RingState& state, PeerCom& com, unsigned miss_limit = 3)
        : state_(state), com_(com), miss_limit_(miss_limit) {}

    std::vector<MembershipEvent> tick();

    // Ingest-path suspicion (e.g. a replication forward failed): treated
    // like a refused ping on the next tick.
    void suspect(const ServerId& target);

    void set_isolated_callback(std::function<void()> cb) { on_isolated_ = std::move(cb); }
    bool isolated() const { return isolated_; }

private:
    void declare_failed(const ServerId& target, std::vector<MembershipEvent>& out);

    RingState& state_;
    PeerCom& com_;
    unsigned miss_limit_;
    unsigned misses_ = 0;
    std::string last_target_;
    std::string suspected_;
    bool isolated_ = false;
    std::function<void()> on_isolated_;
    std::mutex mu_;
};

// The manager's authoritative membership. Versions advance on every
// change; fail() folds in the reporter's version so authoritative
// updates always supersede local repairs.
class ManagerMembership {
public:
    // Ordinals 0..n-1 in registration order.
    uint64_t init(const std::vector<std::string>& addresses);

    std::optional<uint64_t> fail(const std::string& address, uint64_t reported_version);

    // Joiner takes the slot right after its predecessor; later ordinals
    // shift up. Returns the joiner's id and the new version.
    std::optional<std::pair<ServerId, uint64_t>> join(const std::string& joiner_addr,
                                                      const std::string& predecessor_addr);

    std::vector<ServerId> members() const;
    uint64_t version() const;
    bool contains(const std::string& address) const;

private:
    std::vector<ServerId> members_;
    uint64_t version_ = 0;
    mutable std::mutex mu_;
};

}  // namespace bb::ring
