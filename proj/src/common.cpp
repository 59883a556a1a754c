// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#include "ooc/common.hpp"

#include <cmath>

namespace ooc {

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

uint64_t Rng::below(uint64_t n) {
    if (n == 0) throw Error("Rng::below: n must be positive");
    // Rejection sampling over the largest multiple of n below 2^64.
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v = 0;
    do {
        v = next_u64();
    } while (v >= limit);
    return v % n;
}

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace

uint64_t derive_seed(uint64_t seed, std::string_view tag, uint64_t index) {
    uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a
    for (char c : tag) {
        h ^= static_cast<uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    return splitmix64(splitmix64(seed ^ h) ^ index);
}

} // namespace ooc
