#include <doctest.h>

#include <fstream>
#include <random>

#include "bb/wire.hpp"

using namespace bb;
using namespace bb::wire;

namespace {

Frame decode_one(ByteView bytes) {
    FrameDecoder dec;
    dec.feed(bytes);
    auto f = dec.next();
    REQUIRE(f.has_value());
    return *f;
}

MsgType random_type(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> d(int(MsgType::PUT), int(MsgType::ERROR));
    return MsgType(d(rng));
}

Bytes random_payload(std::mt19937_64& rng, size_t max_len) {
    std::uniform_int_distribution<size_t> len_d(0, max_len);
    Bytes out(len_d(rng));
    for (auto& b : out)
        b = uint8_t(rng());
    return out;
}

}  // namespace

TEST_CASE("empty ping frame is exactly the 17-byte header") {
    Bytes f = encode_frame(MsgType::PING, 0, {});
    CHECK(f.size() == 17);
    CHECK(get_u32(&f[13]) == 0);  // length field
}

TEST_CASE("fixed header arithmetic: 1024-byte PUT payload gives 1041 bytes") {
    Bytes payload(1024, 0xab);
    Bytes f = encode_frame(MsgType::PUT, 7, payload);
    CHECK(f.size() == 1041);
}

TEST_CASE("header layout is big-endian with BBM1 magic") {
    Bytes payload = {0x61, 0x62};
    Bytes f = encode_frame(MsgType::PUT, 0x0102030405060708ull, payload);
    const uint8_t expect[] = {0x42, 0x42, 0x4d, 0x31, 0x01, 0x01, 0x02, 0x03, 0x04,
                              0x05, 0x06, 0x07, 0x08, 0x00, 0x00, 0x00, 0x02, 0x61,
                              0x62};
    REQUIRE(f.size() == sizeof expect);
    CHECK(std::equal(f.begin(), f.end(), expect));
}

TEST_CASE("decode inverts encode for the ping frame") {
    Frame f = decode_one(encode_frame(MsgType::PING, 0, {}));
    CHECK(f.msg_type == MsgType::PING);
    CHECK(f.seq == 0);
    CHECK(f.payload.empty());
}

TEST_CASE("corrupted magic is a protocol error") {
    Bytes f = encode_frame(MsgType::PING, 0, {});
    f[0] ^= 0xff;
    FrameDecoder dec;
    dec.feed(f);
    CHECK_THROWS_AS(dec.next(), ProtocolError);
}

TEST_CASE("unknown msg_type is a protocol error") {
    Bytes f = encode_frame(MsgType::PING, 0, {});
    f[4] = 0xee;
    FrameDecoder dec;
    dec.feed(f);
    CHECK_THROWS_AS(dec.next(), ProtocolError);
}

TEST_CASE("oversize payload is an encoding error") {
    Bytes payload(1024, 0);
    CHECK_THROWS_AS(encode_frame(MsgType::PUT, 0, payload, /*max_payload=*/512),
                    EncodingError);
}

TEST_CASE("oversize length field on the wire is a protocol error") {
    Bytes payload(1024, 0);
    Bytes f = encode_frame(MsgType::PUT, 0, payload);
    FrameDecoder dec(/*max_payload=*/512);
    dec.feed(f);
    CHECK_THROWS_AS(dec.next(), ProtocolError);
}

TEST_CASE("truncated stream yields nothing until the rest arrives") {
    Bytes payload(100, 0x55);
    Bytes f = encode_frame(MsgType::GET, 42, payload);
    FrameDecoder dec;
    dec.feed(ByteView(f.data(), 10));
    CHECK_FALSE(dec.next().has_value());
    dec.feed(ByteView(f.data() + 10, 30));
    CHECK_FALSE(dec.next().has_value());
    dec.feed(ByteView(f.data() + 40, f.size() - 40));
    auto got = dec.next();
    REQUIRE(got.has_value());
    CHECK(got->msg_type == MsgType::GET);
    CHECK(got->seq == 42);
    CHECK(got->payload == payload);
}

TEST_CASE("randomized roundtrip over 1000 messages") {
    std::mt19937_64 rng(0xbb01);
    for (int i = 0; i < 1000; i++) {
        MsgType t = random_type(rng);
        uint64_t seq = rng();
        Bytes payload = random_payload(rng, 2048);
        Frame f = decode_one(encode_frame(t, seq, payload));
        CHECK(f.msg_type == t);
        CHECK(f.seq == seq);
        CHECK(f.payload == payload);
    }
}

TEST_CASE("a concatenated stream decodes to the same frames in order") {
    std::mt19937_64 rng(0xbb02);
    for (int trial = 0; trial < 50; trial++) {
        std::uniform_int_distribution<int> k_d(1, 12);
        int k = k_d(rng);
        std::vector<Frame> sent;
        Bytes stream;
        for (int i = 0; i < k; i++) {
            Frame f{random_type(rng), rng(), random_payload(rng, 512)};
            Bytes enc = encode_frame(f.msg_type, f.seq, f.payload);
            stream.insert(stream.end(), enc.begin(), enc.end());
            sent.push_back(std::move(f));
        }
        // Feed in random-size chunks; framing must self-delimit.
        FrameDecoder dec;
        std::vector<Frame> got;
        size_t pos = 0;
        std::uniform_int_distribution<size_t> chunk_d(1, 97);
        while (pos < stream.size()) {
            size_t n = std::min(chunk_d(rng), stream.size() - pos);
            dec.feed(ByteView(stream.data() + pos, n));
            pos += n;
            while (auto f = dec.next())
                got.push_back(std::move(*f));
        }
        REQUIRE(got.size() == sent.size());
        for (size_t i = 0; i < got.size(); i++)
            CHECK(got[i] == sent[i]);
    }
}

TEST_CASE("decoding stops exactly at payload_len") {
    Bytes f = encode_frame(MsgType::PING_ACK, 9, Bytes{1, 2, 3});
    Bytes garbage = {0xde, 0xad};
    Bytes stream = f;
    stream.insert(stream.end(), garbage.begin(), garbage.end());
    FrameDecoder dec;
    dec.feed(stream);
    auto got = dec.next();
    REQUIRE(got.has_value());
    CHECK(got->payload == Bytes{1, 2, 3});
    CHECK(dec.buffered() == garbage.size());
}

TEST_CASE("golden byte vectors decode identically and re-encode bit-exactly") {
    std::ifstream in("golden_frames.hex");
    REQUIRE(in.good());
    struct Expect {
        MsgType type;
        uint64_t seq;
        std::string payload_hex;
    };
    const Expect expect[] = {
        {MsgType::PING, 0, ""},
        {MsgType::PUT, 7, "68656c6c6f"},
        {MsgType::ERROR, 0x0000000100000000ull, "deadbeef"},
        {MsgType::RING_UPDATE, 0xffffffffffffffffull, ""},
    };
    std::string line;
    size_t i = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        REQUIRE(i < std::size(expect));
        Bytes raw = from_hex(line);
        Frame f = decode_one(raw);
        CHECK(f.msg_type == expect[i].type);
        CHECK(f.seq == expect[i].seq);
        CHECK(to_hex(f.payload) == expect[i].payload_hex);
        CHECK(encode_frame(f.msg_type, f.seq, f.payload) == raw);
        i++;
    }
    CHECK(i == std::size(expect));
}

TEST_CASE("payload reader rejects truncated fields") {
    PayloadWriter w;
    w.u32(5).str("hi");
    Bytes p = w.take();
    p.pop_back();
    PayloadReader r(p);
    CHECK(r.u32() == 5);
    CHECK_THROWS_AS(r.str(), ProtocolError);
}
