#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace flowids::util {

std::uint64_t fnv1a64(std::string_view bytes);
std::string to_hex(std::uint64_t value);

// CRC-32 (IEEE 802.3 polynomial, reflected).
std::uint32_t crc32(const unsigned char* data, std::size_t n,
                    std::uint32_t crc = 0);

// Decimal serialization of a 64-bit float that parses back bit-exactly.
std::string format_double(double v);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

// Locale-independent full-string parses; surrounding whitespace is ignored.
bool try_parse_double(std::string_view s, double& out);
bool try_parse_int(std::string_view s, long long& out);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path,
                     std::string_view content);

// fnv1a64 of the file bytes, as hex. Used for stale-input detection.
std::string file_hash_hex(const std::filesystem::path& path);

}  // namespace flowids::util
