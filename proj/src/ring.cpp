#include "bb/ring.hpp"

#include <algorithm>

namespace bb::ring {

RingView derive_view(const ServerId& self, const std::vector<ServerId>& live,
                     unsigned k, uint64_t version) {
    RingView v;
    v.self = self;
    v.version = version;

    size_t self_pos = live.size();
    for (size_t i = 0; i < live.size(); i++) {
        if (same_server(live[i], self)) {
            self_pos = i;
            v.self = live[i];  // pick up the current ordinal
            break;
        }
    }
    if (live.empty() || self_pos == live.size()) {
        v.predecessor = self;
        v.successors = {self};
        return v;
    }

    size_t n = live.size();
    v.predecessor = live[(self_pos + n - 1) % n];
    for (size_t step = 1; step <= std::min<size_t>(k, n - 1); step++)
        v.successors.push_back(live[(self_pos + step) % n]);
    if (v.successors.empty())
        v.successors.push_back(v.self);  // degenerate single-server ring
    return v;
}

bool RingState::apply_ring_update(uint64_t version, std::vector<ServerId> members) {
    std::lock_guard lk(mu_);
    if (version <= base_version_)
        return false;
    base_version_ = version;
    base_ = std::move(members);
    std::sort(base_.begin(), base_.end(), [](const ServerId& a, const ServerId& b) {
        return a.ordinal != b.ordinal ? a.ordinal < b.ordinal : a.address < b.address;
    });
    // The snapshot supersedes any event it already reflects.
    for (auto it = events_.begin(); it != events_.end();) {
        it = it->second.version <= version ? events_.erase(it) : std::next(it);
    }
    return true;
}

bool RingState::apply_event(const MembershipEvent& event) {
    std::lock_guard lk(mu_);
    if (event.version <= base_version_)
        return false;
    auto it = events_.find(event.subject.address);
    if (it != events_.end() && it->second.version >= event.version)
        return false;
    if (event.kind == EventKind::FAILED) {
        // A failure of a server nobody knows about is a no-op.
        bool known = std::any_of(base_.begin(), base_.end(), [&](const ServerId& s) {
            return s.address == event.subject.address;
        });
        if (!known && it == events_.end())
            return false;
    }
    events_[event.subject.address] = event;
    return true;
}

std::vector<ServerId> RingState::derive_locked() const {
    std::vector<ServerId> live = base_;

    // Apply events in version order so replicas that saw different
    // interleavings agree.
    std::vector<const MembershipEvent*> ordered;
    ordered.reserve(events_.size());
    for (const auto& [_, e] : events_)
        ordered.push_back(&e);
    std::sort(ordered.begin(), ordered.end(),
              [](const MembershipEvent* a, const MembershipEvent* b) {
                  return a->version < b->version;
              });

    for (const MembershipEvent* e : ordered) {
        if (e->kind == EventKind::FAILED) {
            live.erase(std::remove_if(live.begin(), live.end(),
                                      [&](const ServerId& s) {
                                          return s.address == e->subject.address;
                                      }),
                       live.end());
        } else {
            for (auto& s : live)
                if (s.ordinal >= e->subject.ordinal) s.ordinal++;
            live.push_back(e->subject);
            std::sort(live.begin(), live.end(),
                      [](const ServerId& a, const ServerId& b) {
                          return a.ordinal != b.ordinal ? a.ordinal < b.ordinal
                                                        : a.address < b.address;
                      });
        }
    }
    return live;
}

uint64_t RingState::version_locked() const {
    uint64_t v = base_version_;
    for (const auto& [_, e] : events_)
        v = std::max(v, e.version);
    return v;
}

RingView RingState::view() const {
    std::lock_guard lk(mu_);
    return derive_view(self_, derive_locked(), k_, version_locked());
}

std::vector<ServerId> RingState::live_members() const {
    std::lock_guard lk(mu_);
    return derive_locked();
}

std::vector<MembershipEvent> RingState::pending_events() const {
    std::lock_guard lk(mu_);
    std::vector<MembershipEvent> out;
    out.reserve(events_.size());
    for (const auto& [_, e] : events_)
        out.push_back(e);
    return out;
}

uint64_t RingState::version() const {
    std::lock_guard lk(mu_);
    return version_locked();
}

uint64_t RingState::base_version() const {
    std::lock_guard lk(mu_);
    return base_version_;
}

std::vector<MembershipEvent> Stabilizer::tick() {
    std::lock_guard lk(mu_);
    std::vector<MembershipEvent> emitted;

    // One period may have to walk past several dead successors; if every
    // live successor is unreachable while other servers exist, this node
    // is the one that is cut off.
    for (size_t round = 0;; round++) {
        RingView v = state_.view();
        ServerId target = v.successors.empty() ? v.self : v.successors[0];
        if (same_server(target, state_.self())) {
            misses_ = 0;
            last_target_.clear();
            return emitted;  // degenerate single-server ring
        }
        if (target.address != last_target_) {
            last_target_ = target.address;
            misses_ = 0;
        }

        bool suspect_hit = (suspected_ == target.address);
        suspected_.clear();

        auto result = com_.ping(target);
        if (result == PeerCom::PingResult::Ack && !suspect_hit) {
            misses_ = 0;
            if (auto info = com_.neighbor_query(target)) {
                for (const auto& e : info->events)
                    if (state_.apply_event(e))
                        emitted.push_back(e);
            }
            return emitted;
        }

        if (result == PeerCom::PingResult::Timeout && !suspect_hit) {
            // A hang burns miss_limit_ whole periods before it is declared.
            if (++misses_ < miss_limit_)
                return emitted;
        }
        declare_failed(target, emitted);

        if (state_.live_members().size() <= 1)
            return emitted;  // we are the last one standing; keep serving
        if (round + 1 >= state_.successor_count() && !isolated_) {
            // Walked the whole successor list without reaching anyone.
            isolated_ = true;
            if (on_isolated_) on_isolated_();
            return emitted;
        }
    }
}

void Stabilizer::declare_failed(const ServerId& target,
                                std::vector<MembershipEvent>& out) {
    misses_ = 0;
    last_target_.clear();

    MembershipEvent ev{EventKind::FAILED, target, state_.self(),
                       state_.version() + 1};
    if (!state_.apply_event(ev))
        return;  // already known
    out.push_back(ev);

    RingView after = state_.view();
    if (!after.successors.empty() &&
        !same_server(after.successors[0], state_.self())) {
        const ServerId& next = after.successors[0];
        // The next successor adopts us as predecessor when it applies this.
        com_.send_fail_report(next, ev);
        if (auto info = com_.neighbor_query(next)) {
            for (const auto& e : info->events)
                if (state_.apply_event(e))
                    out.push_back(e);
        }
    }
    com_.report_to_manager(ev);
}

void Stabilizer::suspect(const ServerId& target) {
    std::lock_guard lk(mu_);
    suspected_ = target.address;
}

uint64_t ManagerMembership::init(const std::vector<std::string>& addresses) {
    std::lock_guard lk(mu_);
    members_.clear();
    for (size_t i = 0; i < addresses.size(); i++)
        members_.push_back({uint32_t(i), addresses[i]});
    version_ = 1;
    return version_;
}

std::optional<uint64_t> ManagerMembership::fail(const std::string& address,
                                                uint64_t reported_version) {
    std::lock_guard lk(mu_);
    auto it = std::find_if(members_.begin(), members_.end(),
                           [&](const ServerId& s) { return s.address == address; });
    if (it == members_.end())
        return std::nullopt;  // already removed this incarnation
    members_.erase(it);
    version_ = std::max(version_, reported_version) + 1;
    return version_;
}

std::optional<std::pair<ServerId, uint64_t>> ManagerMembership::join(
    const std::string& joiner_addr, const std::string& predecessor_addr) {
    std::lock_guard lk(mu_);
    if (std::any_of(members_.begin(), members_.end(),
                    [&](const ServerId& s) { return s.address == joiner_addr; }))
        return std::nullopt;
    auto pred = std::find_if(members_.begin(), members_.end(), [&](const ServerId& s) {
        return s.address == predecessor_addr;
    });
    if (pred == members_.end())
        return std::nullopt;

    size_t pos = size_t(pred - members_.begin());
    uint32_t pred_ordinal = pred->ordinal;
    ServerId joiner{pred_ordinal + 1, joiner_addr};
    bool collision = std::any_of(members_.begin(), members_.end(), [&](const ServerId& s) {
        return s.ordinal == joiner.ordinal;
    });
    if (collision) {
        for (auto& s : members_)
            if (s.ordinal > pred_ordinal) s.ordinal++;
    }
    members_.insert(members_.begin() + pos + 1, joiner);
    version_++;
    return std::make_pair(joiner, version_);
}

std::vector<ServerId> ManagerMembership::members() const {
    std::lock_guard lk(mu_);
    return members_;
}

uint64_t ManagerMembership::version() const {
    std::lock_guard lk(mu_);
    return version_;
}

bool ManagerMembership::contains(const std::string& address) const {
    std::lock_guard lk(mu_);
    return std::any_of(members_.begin(), members_.end(),
                       [&](const ServerId& s) { return s.address == address; });
}

}  // namespace bb::ring
