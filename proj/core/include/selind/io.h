#ifndef SELIND_IO_H_
#define SELIND_IO_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

namespace selind {

// Creates parent directories as needed. Throws Error(kIo) on failure.
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);
void ensure_directory(const std::filesystem::path& dir);

// Pretty-printed JSON with a trailing newline.
std::string dump_json(const nlohmann::json& j);

// 64-bit FNV-1a, printed as 16 hex digits. Used to tag outputs with the exact
// configuration that produced them.
std::uint64_t fnv1a64(std::string_view bytes);
std::string config_hash(const nlohmann::json& config);

// Shortest decimal representation that round-trips to the same double.
std::string format_double(double value);

}  // namespace selind

#endif  // SELIND_IO_H_
