#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace bb::md5 {

using Digest = std::array<uint8_t, 16>;

// MD5 per RFC 1321. Used as the Ketama point/key hash; not for security.
class Md5 {
public:
    Md5() { reset(); }

    void reset();
    void update(const void* data, size_t len);
    Digest finish();

private:
    void process_block(const uint8_t* block);

    uint32_t state_[4];
    uint64_t total_len_ = 0;
    uint8_t buf_[64];
    size_t buf_len_ = 0;
};

Digest digest(std::string_view data);
std::string hex(const Digest& d);

}  // namespace bb::md5
