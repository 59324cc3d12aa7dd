#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace rfsr {

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t fnv1a(std::span<const double> values, std::uint64_t seed = 0xcbf29ce484222325ull);

// Stateless 64-bit mixer for deriving independent seeds from tuples.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c);

std::string hex64(std::uint64_t v);

// Relative paths that do not exist as given are looked up under the
// directory named by $RFSR_CACHE, when set.
std::filesystem::path resolve_cache_path(const std::filesystem::path& path);

// Warnings go to stderr unless silenced (tests silence them).
void log_warning(const std::string& message);
void log_info(const std::string& message);
void set_log_quiet(bool quiet);

}  // namespace rfsr
