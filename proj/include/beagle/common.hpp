// Copyright 2026-present the beagle authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace beagle {

// Error hierarchy. The CLI maps UsageError/ConfigError to exit code 2 and
// everything else to exit code 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct ValueError : Error {
    using Error::Error;
};
struct UsageError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct StaleCacheError : Error {
    using Error::Error;
};

// All randomness funnels through seeded engines; one engine per subsystem
// (data shuffle, noise, window offsets, sampling).
using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t seed) { return Rng(seed); }

// Derives a stream-specific seed so subsystems never share a sequence.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
    uint64_t x = base ^ (0x9e3779b97f4a7c15ull + stream * 0xbf58476d1ce4e5b9ull);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

// Allocation instrumentation for the constant-memory simulation contract.
// Counts allocations of attention masks and key/value buffers only; these
// are the structures the in-place training loop must not grow with the
// number of simulation steps.
struct AllocStats {
    std::atomic<uint64_t> mask_allocs{0};
    std::atomic<uint64_t> kv_buffer_allocs{0};
    std::atomic<uint64_t> kv_buffer_bytes{0};

    void reset() {
        mask_allocs = 0;
        kv_buffer_allocs = 0;
        kv_buffer_bytes = 0;
    }
};

AllocStats& alloc_stats();

}  // namespace beagle
