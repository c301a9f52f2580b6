#pragma once

#include <array>
#include <cstdint>
#include <cstddef>
#include <string>
#include <vector>

namespace sentinel {

using Hash32 = std::array<std::uint8_t, 32>;

Hash32 sha256(const std::uint8_t* data, std::size_t len);
Hash32 sha256(const std::vector<std::uint8_t>& bytes);

std::string hash_hex(const Hash32& h);
Hash32 hash_from_hex(const std::string& hex);

}  // namespace sentinel
