#pragma once

#include <cstdint>
#include <string_view>

namespace biasless {

/// SplitMix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a(std::string_view text,
                              std::uint64_t hash = 0xcbf29ce484222325ULL) noexcept {
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

/// Derives a child seed from a parent seed and a stream label. Streams with
/// different labels or indices never collide in practice, so adding a new
/// stream leaves existing ones untouched.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::string_view label,
                                    std::uint64_t index = 0) noexcept {
    return mix64(mix64(parent ^ fnv1a(label)) + mix64(index + 0x632be59bd9b4e019ULL));
}

}  // namespace biasless
