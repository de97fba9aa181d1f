#pragma once

#include <cstdint>
#include <initializer_list>

namespace fslcast {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives a stage seed from a global seed and a path of counters, e.g.
/// derive_seed(global, {stage, user, k, replicate}). The result depends only
/// on the path, never on the order in which cells are visited.
constexpr std::uint64_t derive_seed(std::uint64_t global, std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = mix64(global);
    for (std::uint64_t p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
    return h;
}

}  // namespace fslcast
