// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ooc {

#ifdef OOC_SINGLE_PRECISION
using Scalar = float;
#else
using Scalar = double;
#endif

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Mode { Train, Eval };

/// Deterministic random source. Sampling (uniform, normal, bounded ints) is
/// implemented on top of the raw mt19937_64 stream so generated values do not
/// depend on the standard library's distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 bits of entropy.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller.
    double normal();

    /// Uniform integer in [0, n). n must be positive.
    uint64_t below(uint64_t n);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Derives an independent stream seed from a base seed and a tag
/// (FNV-1a over the tag, splitmix64-mixed with the seed and index).
uint64_t derive_seed(uint64_t seed, std::string_view tag, uint64_t index = 0);

/// Fisher-Yates shuffle driven by Rng (stable across standard libraries).
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
    for (size_t i = items.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng.below(i));
        std::swap(items[i - 1], items[j]);
    }
}

} // namespace ooc
