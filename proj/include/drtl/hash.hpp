#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace drtl {

std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace drtl
