#include <doctest.h>

#include <filesystem>
#include <map>
#include <random>

#include "bb/store.hpp"

using namespace bb;
using namespace bb::store;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("bb_store_test_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

WriteRecord rec(const std::string& file, uint64_t offset, Bytes payload,
                uint32_t epoch, uint64_t seq, uint32_t client = 0) {
    WriteRecord r;
    r.file_id = file;
    r.offset = offset;
    r.payload = std::move(payload);
    r.epoch = epoch;
    r.seq = seq;
    r.client_id = client;
    r.primary_addr = "self";
    return r;
}

Bytes pattern(size_t len, uint8_t seed) {
    Bytes b(len);
    for (size_t i = 0; i < len; i++)
        b[i] = uint8_t(seed + i * 31);
    return b;
}

StoreConfig cfg_with(const TempDir& dir, uint64_t capacity) {
    StoreConfig c;
    c.mem_capacity_bytes = capacity;
    c.spill_dir = dir.path.string();
    c.store_id = "t";
    return c;
}

}  // namespace

TEST_CASE("records stay in memory while the budget holds") {
    TempDir dir;
    StoreEngine eng(cfg_with(dir, 1 << 20));
    for (int i = 0; i < 4; i++) {
        auto loc = eng.append(rec("f", uint64_t(i) * 100, pattern(100, 1), 1, i + 1));
        CHECK(loc.tier == Tier::MEMORY);
    }
    CHECK(eng.spill_file_size() == 0);
}

TEST_CASE("zero capacity spills every record") {
    TempDir dir;
    StoreEngine eng(cfg_with(dir, 0));
    for (int i = 0; i < 4; i++) {
        auto loc = eng.append(rec("f", uint64_t(i) * 100, pattern(100, 2), 1, i + 1));
        CHECK(loc.tier == Tier::SPILL);
    }
    CHECK(eng.usage().used_bytes == 0);
    CHECK(eng.spill_file_size() > 0);
}

TEST_CASE("half capacity fills memory first, then spills the rest") {
    TempDir dir;
    // Room for exactly two of the four records.
    uint64_t one = record_header_size("f") + 100;
    StoreEngine eng(cfg_with(dir, 2 * one));
    std::vector<Tier> tiers;
    for (int i = 0; i < 4; i++)
        tiers.push_back(
            eng.append(rec("f", uint64_t(i) * 100, pattern(100, 3), 1, i + 1)).tier);
    CHECK(tiers == std::vector<Tier>{Tier::MEMORY, Tier::MEMORY, Tier::SPILL,
                                     Tier::SPILL});
    CHECK(eng.usage().used_bytes == 2 * one);
}

TEST_CASE("read-your-write across both tiers") {
    TempDir dir;
    uint64_t one = record_header_size("f") + 64;
    StoreEngine eng(cfg_with(dir, one));
    Bytes in_mem = pattern(64, 4), spilled = pattern(64, 5);
    eng.append(rec("f", 0, in_mem, 1, 1));
    eng.append(rec("f", 64, spilled, 1, 2));

    auto a = eng.get({"f", 0}, 1);
    auto b = eng.get({"f", 64}, 1);
    REQUIRE(a.has_value());
    REQUIRE(b.has_value());
    CHECK(a->payload == in_mem);
    CHECK(b->payload == spilled);
    CHECK_FALSE(eng.get({"f", 128}, 1).has_value());
    CHECK_FALSE(eng.get({"missing", 0}).has_value());
}

TEST_CASE("usage accounting tracks memory-tier records only") {
    TempDir dir;
    StoreEngine eng(cfg_with(dir, 1 << 20));
    CHECK(eng.usage().used_bytes == 0);

    eng.append(rec("file", 0, pattern(1000, 6), 1, 1));
    CHECK(eng.usage().used_bytes == record_header_size("file") + 1000);

    TempDir dir2;
    StoreEngine spill_only(cfg_with(dir2, 0));
    spill_only.append(rec("file", 0, pattern(1000, 7), 1, 1));
    CHECK(spill_only.usage().used_bytes == 0);
}

TEST_CASE("scan returns offsets sorted") {
    TempDir dir;
    StoreEngine eng(cfg_with(dir, 1 << 20));
    CHECK(eng.scan_file("f").empty());
    eng.append(rec("f", 2 << 20, pattern(10, 8), 1, 1));
    eng.append(rec("f", 0, pattern(10, 8), 1, 2));
    eng.append(rec("f", 1 << 20, pattern(10, 8), 1, 3));
    auto segs = eng.scan_file("f");
    REQUIRE(segs.size() == 3);
    CHECK(segs[0].offset == 0);
    CHECK(segs[1].offset == 1 << 20);
    CHECK(segs[2].offset == 2 << 20);
}

TEST_CASE("latest epoch wins per duplicated offset") {
    TempDir dir;
    StoreEngine eng(cfg_with(dir, 1 << 20));
    eng.append(rec("f", 0, pattern(10, 1), 1, 1));
    eng.append(rec("f", 0, pattern(10, 2), 2, 2));
    auto segs = eng.scan_file("f");
    REQUIRE(segs.size() == 1);
    CHECK(segs[0].epoch == 2);
    CHECK(eng.read(segs[0].location) == pattern(10, 2));

    // An epoch limit resurrects the older view.
    auto old_segs = eng.scan_file("f", 1);
    REQUIRE(old_segs.size() == 1);
    CHECK(old_segs[0].epoch == 1);
}

TEST_CASE("duplicate (client, seq) deliveries are absorbed") {
    TempDir dir;
    StoreEngine eng(cfg_with(dir, 1 << 20));
    auto r = rec("f", 0, pattern(100, 9), 1, 7, 3);
    auto loc1 = eng.append(r);
    auto loc2 = eng.append(r);
    CHECK(loc1 == loc2);
    CHECK(eng.usage().used_bytes == record_header_size("f") + 100);
    CHECK(eng.contains_put(3, 7));
    CHECK_FALSE(eng.contains_put(3, 8));
}

TEST_CASE("spill log is strictly append-only with contiguous records") {
    TempDir dir;
    StoreEngine eng(cfg_with(dir, 0));
    uint64_t expect_start = 0;
    std::mt19937_64 rng(0xbb20);
    for (int i = 0; i < 50; i++) {
        size_t len = 1 + rng() % 400;
        std::string file = "f" + std::to_string(rng() % 3);
        auto loc = eng.append(rec(file, uint64_t(i) * 1000, pattern(len, uint8_t(i)),
                                  1, i + 1));
        CHECK(loc.log_offset == expect_start + record_header_size(file));
        expect_start += record_header_size(file) + len;
        CHECK(eng.spill_file_size() == expect_start);
    }
}

TEST_CASE("model-based check against a reference map") {
    TempDir dir;
    uint64_t cap = 40000;  // force a mix of tiers
    StoreEngine eng(cfg_with(dir, cap));

    struct Key {
        std::string file;
        uint64_t offset;
        uint32_t epoch;
        auto operator<=>(const Key&) const = default;
    };
    struct Val {
        Bytes payload;
        uint64_t seq;
    };
    std::map<Key, Val> model;
    std::mt19937_64 rng(0xbb21);
    uint64_t next_seq = 1;

    for (int op = 0; op < 10000; op++) {
        int what = int(rng() % 10);
        std::string file = "f" + std::to_string(rng() % 4);
        uint64_t offset = (rng() % 8) * 512;
        uint32_t epoch = 1 + uint32_t(rng() % 3);
        Key key{file, offset, epoch};

        if (what < 6) {  // append
            Bytes payload = pattern(1 + rng() % 300, uint8_t(rng()));
            uint64_t seq = next_seq++;
            eng.append(rec(file, offset, payload, epoch, seq, 0));
            auto it = model.find(key);
            if (it == model.end() || it->second.seq < seq)
                model[key] = {payload, seq};
        } else if (what < 8) {  // duplicate replay of some earlier record
            if (!model.empty()) {
                auto it = model.begin();
                std::advance(it, long(rng() % model.size()));
                eng.append(rec(it->first.file, it->first.offset, it->second.payload,
                               it->first.epoch, it->second.seq, 0));
            }
        } else {  // point get
            auto got = eng.get({file, offset}, epoch);
            auto it = model.find(key);
            if (it == model.end()) {
                CHECK_FALSE(got.has_value());
            } else {
                REQUIRE(got.has_value());
                CHECK(got->payload == it->second.payload);
                CHECK(got->seq == it->second.seq);
            }
        }
        CHECK(eng.usage().used_bytes <= cap);
    }

    // Full sweep: every model entry readable, scans match latest epochs.
    for (const auto& [key, val] : model) {
        auto got = eng.get({key.file, key.offset}, key.epoch);
        REQUIRE(got.has_value());
        CHECK(got->payload == val.payload);
    }
    for (const auto& file : eng.files()) {
        for (const auto& seg : eng.scan_file(file)) {
            uint32_t best = 0;
            for (uint32_t e = 1; e <= 3; e++)
                if (model.count({file, seg.offset, e})) best = e;
            CHECK(seg.epoch == best);
        }
    }
    CHECK(eng.usage().used_bytes == eng.indexed_mem_bytes_with_headers());
}

TEST_CASE("purge drops old epochs and releases their memory") {
    TempDir dir;
    StoreEngine eng(cfg_with(dir, 1 << 20));
    for (uint32_t e = 1; e <= 3; e++)
        eng.append(rec("f", 0, pattern(100, uint8_t(e)), e, e));
    uint64_t before = eng.usage().used_bytes;
    eng.purge_epochs_below(2);
    CHECK(eng.usage().used_bytes == before - (record_header_size("f") + 100));
    CHECK_FALSE(eng.get({"f", 0}, 1).has_value());
    CHECK(eng.get({"f", 0}, 2).has_value());
    CHECK(eng.get({"f", 0}, 3).has_value());
}

TEST_CASE("raw staging shares the budget and releases cleanly") {
    TempDir dir;
    StoreEngine eng(cfg_with(dir, 1000));
    auto a = eng.append_raw(pattern(400, 1));
    CHECK(a.tier == Tier::MEMORY);
    CHECK(eng.staged_mem_bytes() == 400);
    auto b = eng.append_raw(pattern(800, 2));  // over budget -> spill
    CHECK(b.tier == Tier::SPILL);
    CHECK(eng.read(a) == pattern(400, 1));
    CHECK(eng.read(b) == pattern(800, 2));
    CHECK(eng.usage().used_bytes ==
          eng.indexed_mem_bytes_with_headers() + eng.staged_mem_bytes());
    eng.release_raw(a);
    CHECK(eng.staged_mem_bytes() == 0);
    CHECK(eng.usage().used_bytes == 0);
}

TEST_CASE("adopting a record re-marks its primary") {
    TempDir dir;
    StoreEngine eng(cfg_with(dir, 1 << 20));
    auto r = rec("f", 0, pattern(10, 1), 1, 5, 2);
    r.primary_addr = "old-primary";
    eng.append(r);
    eng.adopt_primary(2, 5, "new-primary");
    auto got = eng.get({"f", 0}, 1);
    REQUIRE(got.has_value());
    CHECK(got->primary_addr == "new-primary");
}

TEST_CASE("unwritable spill directory fails at open") {
    StoreConfig c;
    c.spill_dir = "/proc/definitely/not/writable";
    c.store_id = "x";
    CHECK_THROWS_AS(StoreEngine{c}, std::runtime_error);
}
