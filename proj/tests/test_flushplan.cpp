#include <doctest.h>

#include <random>

#include "bb/flushplan.hpp"

using namespace bb::flushplan;

TEST_CASE("even split: 4 MiB over 4 servers gives 1 MiB domains") {
    auto plan = build_plan({"f", 4 << 20, 1}, 4);
    CHECK(plan.domain_width == 1 << 20);
    for (uint32_t i = 0; i < 4; i++) {
        auto d = plan.domain(i);
        CHECK(d.begin == uint64_t(i) << 20);
        CHECK(d.end == uint64_t(i + 1) << 20);
    }
}

TEST_CASE("ceil split: size 5 over 4 servers leaves a trailing empty domain") {
    auto plan = build_plan({"f", 5, 1}, 4);
    CHECK(plan.domain_width == 2);
    CHECK(plan.domain(0).begin == 0);
    CHECK(plan.domain(0).end == 2);
    CHECK(plan.domain(1).begin == 2);
    CHECK(plan.domain(1).end == 4);
    CHECK(plan.domain(2).begin == 4);
    CHECK(plan.domain(2).end == 5);
    CHECK(plan.domain(3).empty());
}

TEST_CASE("1000 random plans form a disjoint cover") {
    std::mt19937_64 rng(0xbb30);
    for (int t = 0; t < 1000; t++) {
        uint64_t size = rng() % 100000;
        uint32_t n = 1 + uint32_t(rng() % 16);
        auto plan = build_plan({"f", size, 1}, n);
        uint64_t cursor = 0;
        for (uint32_t i = 0; i < n; i++) {
            auto d = plan.domain(i);
            CHECK(d.begin == cursor);
            CHECK(d.end >= d.begin);
            cursor = d.end;
        }
        CHECK(cursor == size);
        if (size > 0) {
            // owner_of agrees with the domain that contains the byte
            for (int probe = 0; probe < 16; probe++) {
                uint64_t b = rng() % size;
                uint32_t o = plan.owner_of(b);
                CHECK(plan.domain(o).begin <= b);
                CHECK(b < plan.domain(o).end);
            }
        }
    }
}

TEST_CASE("a segment inside one domain does not split") {
    auto plan = build_plan({"f", 4 << 20, 1}, 4);
    auto pieces = split_range(plan, 100, 1000);
    REQUIRE(pieces.size() == 1);
    CHECK(pieces[0].owner_index == 0);
    CHECK(pieces[0].range.offset == 100);
    CHECK(pieces[0].range.length == 1000);
}

TEST_CASE("a segment crossing one boundary splits in two") {
    auto plan = build_plan({"f", 4 << 20, 1}, 4);
    uint64_t half = 1 << 19;
    auto pieces = split_range(plan, half, 1 << 20);  // [0.5 MiB, 1.5 MiB)
    REQUIRE(pieces.size() == 2);
    CHECK(pieces[0].owner_index == 0);
    CHECK(pieces[0].range.offset == half);
    CHECK(pieces[0].range.length == half);
    CHECK(pieces[1].owner_index == 1);
    CHECK(pieces[1].range.offset == 1 << 20);
    CHECK(pieces[1].range.length == half);
}

TEST_CASE("random splits cover their request and stay inside domains") {
    std::mt19937_64 rng(0xbb31);
    for (int t = 0; t < 500; t++) {
        uint64_t size = 1 + rng() % 100000;
        uint32_t n = 1 + uint32_t(rng() % 8);
        auto plan = build_plan({"f", size, 1}, n);
        uint64_t off = rng() % size;
        uint64_t len = 1 + rng() % (size - off);
        auto pieces = split_range(plan, off, len);
        uint64_t cursor = off;
        for (const auto& p : pieces) {
            CHECK(p.range.offset == cursor);
            auto d = plan.domain(p.owner_index);
            CHECK(p.range.offset >= d.begin);
            CHECK(p.range.offset + p.range.length <= d.end);
            cursor += p.range.length;
        }
        CHECK(cursor == off + len);
    }
}

TEST_CASE("lookup_owner routes single-domain and boundary-spanning requests") {
    LookupEntry entry{"f", 4 << 20, 4, {"s0", "s1", "s2", "s3"}, 1};
    auto one = lookup_owner(entry, 4096, 4096);
    REQUIRE(one.size() == 1);
    CHECK(one[0].server == "s0");

    auto two = lookup_owner(entry, (1 << 20) - 512, 1024);
    REQUIRE(two.size() == 2);
    CHECK(two[0].server == "s0");
    CHECK(two[1].server == "s1");
    CHECK(two[0].range.offset + two[0].range.length == two[1].range.offset);
}

TEST_CASE("lookup_owner matches brute-force recomputation on 1000 requests") {
    std::mt19937_64 rng(0xbb32);
    for (int t = 0; t < 1000; t++) {
        uint64_t size = 1 + rng() % 1000000;
        uint32_t n = 1 + uint32_t(rng() % 9);
        LookupEntry entry;
        entry.file_id = "f";
        entry.global_size = size;
        entry.n = n;
        entry.epoch = 1;
        for (uint32_t i = 0; i < n; i++)
            entry.ordering.push_back("srv" + std::to_string(i));

        uint64_t off = rng() % size;
        uint64_t len = 1 + rng() % (size - off);
        auto owners = lookup_owner(entry, off, len);

        auto plan = build_plan({"f", size, 1}, n);
        uint64_t cursor = off;
        for (const auto& o : owners) {
            CHECK(o.range.offset == cursor);
            CHECK(o.server == entry.ordering[plan.owner_of(o.range.offset)]);
            CHECK(o.server ==
                  entry.ordering[plan.owner_of(o.range.offset + o.range.length - 1)]);
            cursor += o.range.length;
        }
        CHECK(cursor == off + len);
    }
}

TEST_CASE("out-of-range requests are range errors") {
    LookupEntry entry{"f", 1000, 4, {"a", "b", "c", "d"}, 1};
    CHECK_THROWS_AS(lookup_owner(entry, 900, 200), RangeError);
    CHECK_THROWS_AS(build_plan({"f", 10, 1}, 0), RangeError);
}

TEST_CASE("metadata merge takes the max extent per file") {
    // one server, one file
    auto merged = merge_metadata({{{"a", 4 << 20, 1}}}, 1);
    REQUIRE(merged.size() == 1);
    CHECK(merged[0].global_size == 4 << 20);

    // four servers holding disjoint quarters of a 4 MiB file
    std::vector<std::vector<FileMeta>> quarters;
    for (int i = 1; i <= 4; i++)
        quarters.push_back({{"a", uint64_t(i) << 20, 1}});
    merged = merge_metadata(quarters, 1);
    REQUIRE(merged.size() == 1);
    CHECK(merged[0].global_size == 4 << 20);

    // random extents: global is the max
    std::mt19937_64 rng(0xbb33);
    std::vector<std::vector<FileMeta>> random_metas;
    uint64_t want_max = 0;
    for (int s = 0; s < 8; s++) {
        uint64_t extent = rng() % 1000000;
        want_max = std::max(want_max, extent);
        random_metas.push_back({{"x", extent, 2}});
    }
    merged = merge_metadata(random_metas, 2);
    REQUIRE(merged.size() == 1);
    CHECK(merged[0].global_size == want_max);
}

TEST_CASE("lookup table keeps the newest epoch per file") {
    LookupTable table;
    table.put({"f", 100, 2, {"a", "b"}, 3});
    table.put({"f", 50, 2, {"a", "b"}, 2});  // older; ignored
    auto got = table.find("f");
    REQUIRE(got.has_value());
    CHECK(got->epoch == 3);
    CHECK(got->global_size == 100);
    CHECK_FALSE(table.find("missing").has_value());
}
