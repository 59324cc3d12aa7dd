#include "rfsr/util.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <cstring>

#include <fmt/core.h>

namespace rfsr {

namespace {
std::atomic<bool> g_quiet{false};
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t fnv1a(std::span<const double> values, std::uint64_t seed) {
  return fnv1a(std::string_view(reinterpret_cast<const char*>(values.data()), values.size_bytes()), seed);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over a combined word
  std::uint64_t z = a * 0x9e3779b97f4a7c15ull + b + 0x632be59bd9b4e019ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) { return mix_seed(mix_seed(a, b), c); }

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

void log_warning(const std::string& message) {
  if (!g_quiet) fmt::print(stderr, "warning: {}\n", message);
}

void log_info(const std::string& message) {
  if (!g_quiet) fmt::print(stderr, "{}\n", message);
}

void set_log_quiet(bool quiet) { g_quiet = quiet; }

std::filesystem::path resolve_cache_path(const std::filesystem::path& path) {
  if (path.empty() || path.is_absolute() || std::filesystem::exists(path)) return path;
  if (const char* cache = std::getenv("RFSR_CACHE"); cache && *cache) {
    auto candidate = std::filesystem::path(cache) / path;
    if (std::filesystem::exists(candidate)) return candidate;
  }
  return path;
}

}  // namespace rfsr
