#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ragctl {

// Error taxonomy. Messages are the contract: they name the offending
// path / qid / file so callers can act on them.
struct parse_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct schema_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct validation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct integrity_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct version_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct dimension_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct backend_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// FNV-1a, 64-bit. Used for content hashes and feature hashing; stable
// across platforms, unlike std::hash.
inline constexpr std::uint64_t kFnvOffsetBasis = 14695981039346656037ull;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ull;

inline constexpr std::uint64_t fnv1a64(std::string_view s,
                                       std::uint64_t basis = kFnvOffsetBasis) {
  std::uint64_t h = basis;
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a64_combine(std::uint64_t h, std::string_view s) {
  return fnv1a64(s, h);
}

inline std::string to_hex(std::uint64_t v) {
  char buf[17];
  static const char* digits = "0123456789abcdef";
  for (int i = 15; i >= 0; --i) {
    buf[i] = digits[v & 0xf];
    v >>= 4;
  }
  buf[16] = '\0';
  return std::string(buf);
}

inline std::uint64_t from_hex(std::string_view s) {
  std::uint64_t v = 0;
  for (char c : s) {
    v <<= 4;
    if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
    else if (c >= 'A' && c <= 'F') v |= static_cast<std::uint64_t>(c - 'A' + 10);
    else throw parse_error("invalid hex digit in '" + std::string(s) + "'");
  }
  return v;
}

// Unbiased bounded draw via rejection sampling. mt19937_64 output is
// specified bit-for-bit by the standard, so this is reproducible across
// platforms (std::uniform_int_distribution is not).
inline std::uint64_t bounded_uniform(std::mt19937_64& rng, std::uint64_t n) {
  if (n == 0) throw validation_error("bounded_uniform: n must be positive");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % n;
}

// Deterministic Fisher-Yates.
template <typename T>
void deterministic_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(bounded_uniform(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

// First `count` positions of a deterministic shuffle of [0, n).
inline std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                           std::size_t count,
                                                           std::uint64_t seed) {
  if (count > n)
    throw validation_error("sample_without_replacement: count " +
                           std::to_string(count) + " exceeds population " +
                           std::to_string(n));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  deterministic_shuffle(idx, rng);
  idx.resize(count);
  return idx;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw validation_error("cannot open file '" + path + "'");
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// Write via temp file + rename so readers never observe a partial file.
inline void write_file_atomic(const std::string& path,
                              std::string_view content) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
    if (ec)
      throw validation_error("cannot create directory '" +
                             target.parent_path().string() +
                             "': " + ec.message());
  }
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw validation_error("cannot open '" + tmp.string() + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw validation_error("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec)
    throw validation_error("cannot rename '" + tmp.string() + "' to '" +
                           target.string() + "': " + ec.message());
}

inline std::string utc_timestamp() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return std::string(buf);
}

}  // namespace ragctl
