#include "bb/flushplan.hpp"

#include <algorithm>

namespace bb::flushplan {

FlushPlan build_plan(const FileMeta& meta, uint32_t num_servers) {
    if (num_servers == 0)
        throw RangeError("flush plan needs at least one server");
    FlushPlan plan;
    plan.file_id = meta.file_id;
    plan.global_size = meta.global_size;
    plan.n = num_servers;
    plan.domain_width =
        meta.global_size == 0 ? 1 : (meta.global_size + num_servers - 1) / num_servers;
    return plan;
}

FlushPlan::Domain FlushPlan::domain(uint32_t i) const {
    uint64_t begin = std::min(uint64_t(i) * domain_width, global_size);
    uint64_t end = std::min(uint64_t(i + 1) * domain_width, global_size);
    return {begin, end};
}

uint32_t FlushPlan::owner_of(uint64_t offset) const {
    if (offset >= global_size)
        throw RangeError("offset beyond global size");
    return uint32_t(offset / domain_width);
}

std::vector<OwnedPiece> split_range(const FlushPlan& plan, uint64_t offset,
                                    uint64_t length) {
    std::vector<OwnedPiece> out;
    if (length == 0) return out;
    if (offset + length > plan.global_size)
        throw RangeError("range beyond global size");
    uint64_t pos = offset;
    uint64_t end = offset + length;
    while (pos < end) {
        uint32_t d = plan.owner_of(pos);
        uint64_t domain_end = plan.domain(d).end;
        uint64_t piece_end = std::min(end, domain_end);
        out.push_back({d, {pos, piece_end - pos}});
        pos = piece_end;
    }
    return out;
}

std::vector<OwnerRange> lookup_owner(const LookupEntry& entry, uint64_t offset,
                                     uint64_t length) {
    if (offset + length > entry.global_size)
        throw RangeError("request beyond global size of " + entry.file_id);
    FileMeta meta{entry.file_id, entry.global_size, entry.epoch};
    FlushPlan plan = build_plan(meta, entry.n);
    std::vector<OwnerRange> out;
    for (const auto& piece : split_range(plan, offset, length))
        out.push_back({entry.ordering.at(piece.owner_index), piece.range});
    return out;
}

void LookupTable::put(LookupEntry entry) {
    std::lock_guard lk(mu_);
    auto it = entries_.find(entry.file_id);
    if (it == entries_.end() || it->second.epoch <= entry.epoch)
        entries_[entry.file_id] = std::move(entry);
}

std::optional<LookupEntry> LookupTable::find(const std::string& file_id) const {
    std::lock_guard lk(mu_);
    auto it = entries_.find(file_id);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

std::vector<LookupEntry> LookupTable::all() const {
    std::lock_guard lk(mu_);
    std::vector<LookupEntry> out;
    out.reserve(entries_.size());
    for (const auto& [_, e] : entries_)
        out.push_back(e);
    return out;
}

std::vector<FileMeta> merge_metadata(
    const std::vector<std::vector<FileMeta>>& per_server, uint32_t epoch) {
    std::map<std::string, uint64_t> sizes;
    for (const auto& metas : per_server)
        for (const auto& m : metas)
            sizes[m.file_id] = std::max(sizes[m.file_id], m.global_size);
    std::vector<FileMeta> out;
    out.reserve(sizes.size());
    for (const auto& [file, size] : sizes)
        out.push_back({file, size, epoch});
    return out;
}

}  // namespace bb::flushplan
