#include "bb/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <mutex>

namespace bb::store {

StoreEngine::StoreEngine(StoreConfig cfg) : cfg_(std::move(cfg)) {
    std::filesystem::create_directories(cfg_.spill_dir);
    std::string path = cfg_.spill_dir + "/bb_spill_" + cfg_.store_id + ".log";
    int flags = O_CREAT | O_RDWR | O_TRUNC;
#ifdef O_DSYNC
    if (cfg_.spill_sync) flags |= O_DSYNC;
#endif
    spill_fd_ = ::open(path.c_str(), flags, 0644);
    if (spill_fd_ < 0)
        throw std::runtime_error("cannot open spill file " + path + ": " +
                                 std::strerror(errno));
}

StoreEngine::~StoreEngine() {
    if (spill_fd_ >= 0) ::close(spill_fd_);
}

StorageLocation StoreEngine::append_locked(const std::string& file_id, uint64_t offset,
                                           uint32_t epoch, ByteView payload,
                                           bool headered) {
    uint32_t header = headered ? record_header_size(file_id) : 0;
    uint64_t total = uint64_t(header) + payload.size();

    if (used_bytes_ + total <= cfg_.mem_capacity_bytes) {
        uint64_t payload_off = mem_tail_ + header;
        mem_log_.emplace(payload_off, Bytes(payload.begin(), payload.end()));
        mem_tail_ += total;
        used_bytes_ += total;
        return {Tier::MEMORY, payload_off, uint32_t(payload.size())};
    }

    Bytes buf;
    buf.reserve(total);
    if (headered) {
        placement::RecordKey key{file_id, offset};
        put_u32(buf, uint32_t(key.str().size()));
        put_u32(buf, uint32_t(payload.size()));
        put_u32(buf, epoch);
        put_u64(buf, offset);
        put_u32(buf, uint32_t(file_id.size()));
        buf.insert(buf.end(), file_id.begin(), file_id.end());
    }
    buf.insert(buf.end(), payload.begin(), payload.end());

    uint64_t record_start = spill_tail_;
    size_t written = 0;
    while (written < buf.size()) {
        ssize_t n = ::pwrite(spill_fd_, buf.data() + written, buf.size() - written,
                             off_t(record_start + written));
        if (n < 0) {
            if (errno == EINTR) continue;
            throw StorageExhausted(std::string("spill write failed: ") +
                                   std::strerror(errno));
        }
        written += size_t(n);
    }
    spill_tail_ += buf.size();
    return {Tier::SPILL, record_start + header, uint32_t(payload.size())};
}

StorageLocation StoreEngine::append(const WriteRecord& rec) {
    std::unique_lock lk(mu_);
    PutId pid{rec.client_id, rec.seq};
    if (auto it = seen_puts_.find(pid); it != seen_puts_.end()) {
        // Duplicate delivery; hand back the existing location.
        auto& entry = index_[it->second.file_id][it->second.offset][it->second.epoch];
        return entry.loc;
    }

    StorageLocation loc =
        append_locked(rec.file_id, rec.offset, rec.epoch, rec.payload, /*headered=*/true);

    auto free_mem_entry = [&](const StorageLocation& l) {
        if (l.tier != Tier::MEMORY) return;
        auto m = mem_log_.find(l.log_offset);
        if (m != mem_log_.end()) {
            used_bytes_ -= record_header_size(rec.file_id) + m->second.size();
            mem_log_.erase(m);
        }
    };

    auto& per_epoch = index_[rec.file_id][rec.offset];
    auto it = per_epoch.find(rec.epoch);
    if (it == per_epoch.end() || it->second.seq < rec.seq) {
        if (it != per_epoch.end())
            free_mem_entry(it->second.loc);
        per_epoch[rec.epoch] = Entry{loc, rec.seq, rec.client_id, rec.primary_addr};
    } else {
        // Superseded on arrival (an older seq for this offset/epoch): the
        // bytes stay in the spill log as garbage, but a memory-tier copy is
        // dropped right away so the budget tracks indexed data only.
        free_mem_entry(loc);
        loc = it->second.loc;
    }
    seen_puts_.emplace(pid, PutRef{rec.file_id, rec.offset, rec.epoch});
    return loc;
}

bool StoreEngine::contains_put(uint32_t client_id, uint64_t seq) const {
    std::shared_lock lk(mu_);
    return seen_puts_.count(PutId{client_id, seq}) > 0;
}

void StoreEngine::adopt_primary(uint32_t client_id, uint64_t seq,
                                const std::string& new_primary) {
    std::unique_lock lk(mu_);
    auto it = seen_puts_.find(PutId{client_id, seq});
    if (it == seen_puts_.end()) return;
    auto fi = index_.find(it->second.file_id);
    if (fi == index_.end()) return;
    auto oi = fi->second.find(it->second.offset);
    if (oi == fi->second.end()) return;
    auto ei = oi->second.find(it->second.epoch);
    if (ei != oi->second.end() && ei->second.client_id == client_id &&
        ei->second.seq == seq)
        ei->second.primary_addr = new_primary;
}

Bytes StoreEngine::read_locked(const StorageLocation& loc) const {
    if (loc.tier == Tier::MEMORY) {
        auto it = mem_log_.find(loc.log_offset);
        if (it == mem_log_.end())
            throw std::runtime_error("dangling memory-tier location");
        return it->second;
    }
    Bytes out(loc.length);
    size_t got = 0;
    while (got < out.size()) {
        ssize_t n = ::pread(spill_fd_, out.data() + got, out.size() - got,
                            off_t(loc.log_offset + got));
        if (n < 0) {
            if (errno == EINTR) continue;
            throw std::runtime_error(std::string("spill read failed: ") +
                                     std::strerror(errno));
        }
        if (n == 0)
            throw std::runtime_error("spill read past end of log");
        got += size_t(n);
    }
    return out;
}

Bytes StoreEngine::read(const StorageLocation& loc) const {
    std::shared_lock lk(mu_);
    return read_locked(loc);
}

std::optional<WriteRecord> StoreEngine::get(const placement::RecordKey& key,
                                            uint32_t epoch) const {
    std::shared_lock lk(mu_);
    auto fi = index_.find(key.file_id);
    if (fi == index_.end()) return std::nullopt;
    auto oi = fi->second.find(key.offset);
    if (oi == fi->second.end() || oi->second.empty()) return std::nullopt;

    const Entry* entry = nullptr;
    uint32_t found_epoch = 0;
    if (epoch == 0) {
        auto last = std::prev(oi->second.end());
        entry = &last->second;
        found_epoch = last->first;
    } else {
        auto ei = oi->second.find(epoch);
        if (ei == oi->second.end()) return std::nullopt;
        entry = &ei->second;
        found_epoch = epoch;
    }

    WriteRecord rec;
    rec.file_id = key.file_id;
    rec.offset = key.offset;
    rec.epoch = found_epoch;
    rec.seq = entry->seq;
    rec.client_id = entry->client_id;
    rec.primary_addr = entry->primary_addr;
    rec.payload = read_locked(entry->loc);
    return rec;
}

MemBudget StoreEngine::usage() const {
    std::shared_lock lk(mu_);
    return {cfg_.mem_capacity_bytes, used_bytes_};
}

std::vector<SegmentInfo> StoreEngine::scan_file(const std::string& file_id,
                                                uint32_t epoch_limit) const {
    std::shared_lock lk(mu_);
    std::vector<SegmentInfo> out;
    auto fi = index_.find(file_id);
    if (fi == index_.end()) return out;
    for (const auto& [offset, per_epoch] : fi->second) {
        // Highest epoch within the limit wins for this offset.
        auto ei = per_epoch.upper_bound(epoch_limit);
        if (ei == per_epoch.begin()) continue;
        --ei;
        const Entry& e = ei->second;
        out.push_back({offset, e.loc.length, e.loc, ei->first, e.seq, e.client_id,
                       e.primary_addr});
    }
    return out;
}

std::vector<std::string> StoreEngine::files() const {
    std::shared_lock lk(mu_);
    std::vector<std::string> out;
    out.reserve(index_.size());
    for (const auto& [file, _] : index_)
        out.push_back(file);
    return out;
}

StorageLocation StoreEngine::append_raw(ByteView data) {
    std::unique_lock lk(mu_);
    auto loc = append_locked("", 0, 0, data, /*headered=*/false);
    if (loc.tier == Tier::MEMORY)
        staged_bytes_ += data.size();
    return loc;
}

void StoreEngine::release_raw(const StorageLocation& loc) {
    std::unique_lock lk(mu_);
    if (loc.tier == Tier::MEMORY) {
        auto it = mem_log_.find(loc.log_offset);
        if (it != mem_log_.end()) {
            staged_bytes_ -= it->second.size();
            used_bytes_ -= it->second.size();
            mem_log_.erase(it);
        }
    }
}

void StoreEngine::purge_epochs_below(uint32_t min_epoch) {
    std::unique_lock lk(mu_);
    for (auto fi = index_.begin(); fi != index_.end();) {
        auto& offsets = fi->second;
        for (auto oi = offsets.begin(); oi != offsets.end();) {
            auto& per_epoch = oi->second;
            for (auto ei = per_epoch.begin(); ei != per_epoch.end();) {
                if (ei->first < min_epoch) {
                    if (ei->second.loc.tier == Tier::MEMORY) {
                        auto m = mem_log_.find(ei->second.loc.log_offset);
                        if (m != mem_log_.end()) {
                            used_bytes_ -=
                                record_header_size(fi->first) + m->second.size();
                            mem_log_.erase(m);
                        }
                    }
                    ei = per_epoch.erase(ei);
                } else {
                    ++ei;
                }
            }
            oi = per_epoch.empty() ? offsets.erase(oi) : std::next(oi);
        }
        fi = offsets.empty() ? index_.erase(fi) : std::next(fi);
    }
    for (auto it = seen_puts_.begin(); it != seen_puts_.end();) {
        it = it->second.epoch < min_epoch ? seen_puts_.erase(it) : std::next(it);
    }
}

uint64_t StoreEngine::spill_file_size() const {
    std::shared_lock lk(mu_);
    return spill_tail_;
}

uint64_t StoreEngine::staged_mem_bytes() const {
    std::shared_lock lk(mu_);
    return staged_bytes_;
}

uint64_t StoreEngine::indexed_mem_bytes_with_headers() const {
    std::shared_lock lk(mu_);
    uint64_t sum = 0;
    for (const auto& [file, offsets] : index_)
        for (const auto& [off, per_epoch] : offsets)
            for (const auto& [epoch, e] : per_epoch)
                if (e.loc.tier == Tier::MEMORY)
                    sum += record_header_size(file) + e.loc.length;
    return sum;
}

}  // namespace bb::store
