#pragma once

#include <string>

#include "bb/bytes.hpp"

namespace bb::digest {

std::string sha256_hex(ByteView data);
std::string sha256_file_hex(const std::string& path);  // throws on I/O error

}  // namespace bb::digest
