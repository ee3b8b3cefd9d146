#include <doctest.h>

#include <openssl/md5.h>

#include <map>
#include <random>
#include <set>

#include "bb/md5.hpp"
#include "bb/placement.hpp"

using namespace bb;
using namespace bb::placement;

namespace {

// Shared with the acceptance suite: the skew-measurement universe.
std::vector<std::string> eight_servers() {
    std::vector<std::string> s;
    for (int i = 0; i < 8; i++)
        s.push_back("server-" + std::to_string(i));
    return s;
}

RecordKey nth_key(int i) {
    return {"ckpt/file" + std::to_string(i % 32), uint64_t(i) * 1048576};
}

// Frozen from the implementation's oracle run, independently confirmed
// with python hashlib (same ring, same 100k keys).
const std::map<std::string, double> kGoldenFractions = {
    {"server-0", 0.11081}, {"server-1", 0.11631}, {"server-2", 0.13232},
    {"server-3", 0.14433}, {"server-4", 0.12886}, {"server-5", 0.11703},
    {"server-6", 0.11722}, {"server-7", 0.13312},
};

}  // namespace

TEST_CASE("md5 matches the RFC 1321 test suite") {
    auto hex = [](std::string_view s) { return md5::hex(md5::digest(s)); };
    CHECK(hex("") == "d41d8cd98f00b204e9800998ecf8428e");
    CHECK(hex("a") == "0cc175b9c0f1b6a831c399e269772661");
    CHECK(hex("abc") == "900150983cd24fb0d6963f7d28e17f72");
    CHECK(hex("message digest") == "f96b697d7cb7938d525a2f31aaf161d0");
    CHECK(hex("abcdefghijklmnopqrstuvwxyz") == "c3fcd3d76192e4007dfb496cca67e13b");
    CHECK(hex("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789") ==
          "d174ab98d277d9f5a5611c2c9f419d9f");
    CHECK(hex("12345678901234567890123456789012345678901234567890123456789012345678"
              "90") == "57edf4a22be3c955ac49da2e2107b67a");
}

TEST_CASE("md5 agrees with OpenSSL on random inputs") {
    std::mt19937_64 rng(0xbb10);
    for (int i = 0; i < 200; i++) {
        std::uniform_int_distribution<size_t> len_d(0, 1000);
        std::string input(len_d(rng), '\0');
        for (auto& c : input)
            c = char(rng());
        auto ours = md5::digest(input);
        unsigned char ref[16];
        MD5(reinterpret_cast<const unsigned char*>(input.data()), input.size(), ref);
        CHECK(std::equal(ours.begin(), ours.end(), ref));
    }
}

TEST_CASE("record key canonical form") {
    RecordKey k{"ckpt/a.dat", 4194304};
    CHECK(k.str() == "ckpt/a.dat@4194304");
}

TEST_CASE("single-server ring owns every key") {
    auto ring = HashRing::build({"only"});
    std::mt19937_64 rng(0xbb11);
    for (int i = 0; i < 100; i++) {
        RecordKey k{"f" + std::to_string(rng() % 100), rng()};
        CHECK(ring.locate(k) == "only");
    }
}

TEST_CASE("four servers at 160 points each make a 640-point ring") {
    auto ring = HashRing::build({"A", "B", "C", "D"});
    CHECK(ring.point_count() == 640);
}

TEST_CASE("empty server list is a configuration error") {
    CHECK_THROWS_AS(HashRing::build({}), ConfigError);
    CHECK_THROWS_AS(HashRing::build({"A", "A"}), ConfigError);
}

TEST_CASE("lookup wraps past the highest point") {
    auto ring = HashRing::build({"A", "B", "C", "D"});
    CHECK(ring.locate_hash(0xffffffffu) == ring.locate_hash(0));
}

TEST_CASE("pinned regression vector: ckpt/file0@0 on ring {A,B,C,D}") {
    auto ring = HashRing::build({"A", "B", "C", "D"});
    RecordKey k{"ckpt/file0", 0};
    CHECK(HashRing::key_hash(k) == 1933327443u);
    CHECK(ring.locate(k) == "D");
}

TEST_CASE("placement is deterministic across ring instances") {
    auto a = HashRing::build(eight_servers());
    auto b = HashRing::build(eight_servers());
    for (int i = 0; i < 1000; i++)
        CHECK(a.locate(nth_key(i)) == b.locate(nth_key(i)));
}

TEST_CASE("ownership fractions over 100k keys match the frozen golden values") {
    auto ring = HashRing::build(eight_servers());
    std::map<std::string, int> owned;
    for (int i = 0; i < 100000; i++)
        owned[ring.locate(nth_key(i))]++;
    for (const auto& [server, golden] : kGoldenFractions) {
        double frac = owned[server] / 100000.0;
        CHECK(frac > 0.08);
        CHECK(frac < 0.18);
        CHECK(frac == doctest::Approx(golden).epsilon(1e-9));
    }
}

TEST_CASE("removing one server reassigns only the keys it owned") {
    auto servers = eight_servers();
    auto full = HashRing::build(servers);
    auto without = servers;
    without.erase(without.begin() + 5);  // drop server-5
    auto reduced = HashRing::build(without);

    int moved = 0;
    for (int i = 0; i < 10000; i++) {
        RecordKey k = nth_key(i);
        std::string before = full.locate(k);
        std::string after = reduced.locate(k);
        if (before != after) {
            CHECK(before == "server-5");
            moved++;
        }
    }
    CHECK(moved > 0);  // server-5 owned something
}

TEST_CASE("isolated placement is rank mod n") {
    std::vector<std::string> servers = {"s0", "s1", "s2", "s3"};
    CHECK(locate_isolated(0, servers) == "s0");
    CHECK(locate_isolated(5, servers) == "s1");
}

TEST_CASE("128 ranks over 128 servers is a bijection") {
    std::vector<std::string> servers;
    for (int i = 0; i < 128; i++)
        servers.push_back("srv" + std::to_string(i));
    std::set<std::string> hit;
    for (uint64_t rank = 0; rank < 128; rank++)
        hit.insert(locate_isolated(rank, servers));
    CHECK(hit.size() == 128);
}

TEST_CASE("isolated placement is a function of rank alone") {
    std::vector<std::string> servers = {"a", "b", "c"};
    std::mt19937_64 rng(0xbb12);
    for (int i = 0; i < 100; i++) {
        uint64_t rank = rng() % 1000;
        CHECK(locate_isolated(rank, servers) ==
              locate_isolated(rank, servers));
        CHECK(locate_isolated_index(rank, servers.size()) == rank % 3);
    }
    CHECK_THROWS_AS(locate_isolated_index(0, 0), ConfigError);
}
