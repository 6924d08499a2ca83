#ifndef CLARET_COMMON_HPP
#define CLARET_COMMON_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace claret {

// Error taxonomy. Parse/structure errors carry location context in what().
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};
struct StructureError : std::runtime_error {
    explicit StructureError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// FNV-1a, used for content hashes and per-example seed derivation.
// Not std::hash: these values land in files and must be stable everywhere.
inline uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a_u64(uint64_t v, uint64_t h = 0xcbf29ce484222325ull) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Per-example seed: hash(global_seed, id, salt). Workers drawing from
// independent generators seeded this way reproduce the single-thread stream.
inline uint64_t derive_seed(uint64_t global_seed, std::string_view id, uint64_t salt = 0) {
    return fnv1a(id, fnv1a_u64(salt, fnv1a_u64(global_seed)));
}

std::string to_lower(std::string_view s);
bool is_space_byte(char c);

}  // namespace claret

#endif
