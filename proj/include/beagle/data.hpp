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

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "beagle/common.hpp"

namespace beagle {

// Byte-level vocabulary: 256 byte tokens plus BOS/EOS specials.
struct Vocab {
    static constexpr int32_t kSize = 258;
    static constexpr int32_t kBos = 256;
    static constexpr int32_t kEos = 257;

    // One id per input byte, optionally prefixed with BOS.
    static std::vector<int32_t> encode(std::string_view text, bool add_bos);
    // Inverse of encode on byte ids; specials are stripped. Ids outside
    // [0, kSize) raise ValueError.
    static std::string decode(const std::vector<int32_t>& ids);
};

// One training row: BOS followed by at most `context_len` payload bytes of a
// single document. Chunks never span documents.
struct Chunk {
    size_t doc_id = 0;            // stable id within the corpus stream
    std::vector<int32_t> ids;     // [BOS, b_1, ..., b_n], n <= context_len
};

// Splits the byte file at `path` into chunks. Missing file raises IoError;
// an empty file yields an empty stream. context_len must be >= 1.
std::vector<Chunk> load_corpus(const std::string& path, size_t context_len);

// Deterministic reorder: the same seed always produces the same permutation.
void shuffle_chunks(std::vector<Chunk>& chunks, uint64_t seed);

// A dense [rows x cols] id matrix. Rows shorter than cols are padded with 0;
// positions at or beyond lengths[r] are padding and excluded from all losses.
struct SequenceBatch {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<int32_t> ids;      // rows * cols
    std::vector<size_t> lengths;   // valid tokens per row
    std::vector<size_t> doc_ids;   // source chunk per row

    int32_t at(size_t r, size_t c) const { return ids[r * cols + c]; }
};

// Groups consecutive chunks into batches of at most `batch_rows` rows each.
std::vector<SequenceBatch> make_batches(const std::vector<Chunk>& chunks, size_t batch_rows);

// --- precomputed target state cache -------------------------------------

std::array<uint8_t, 32> sha256_bytes(const void* data, size_t n);
std::array<uint8_t, 32> sha256_file(const std::string& path);

// Per-document record: n positions of d-dim top-layer states, and optionally
// the n x vocab logits rows produced by the frozen target.
struct StateCacheDoc {
    size_t doc_id = 0;
    size_t n = 0;
    std::vector<float> states;    // n * d
    std::vector<float> logits;    // n * vocab when the cache stores logits
};

struct StateCache {
    std::array<uint8_t, 32> target_hash{};  // hash of the producing checkpoint
    bool has_logits = false;
    size_t d = 0;
    size_t vocab = 0;
    std::vector<StateCacheDoc> docs;

    const StateCacheDoc& doc(size_t doc_id) const;
};

// File format "BGSC": header (magic, version, checkpoint hash, flags, d,
// vocab, doc count), a per-document index table of absolute payload offsets,
// then little-endian f32 payload arrays.
void save_state_cache(const StateCache& cache, const std::string& path);

// Reads a cache and validates it against the hash of the checkpoint that is
// about to consume it. Hash mismatch raises StaleCacheError; malformed or
// truncated files raise IoError.
StateCache load_state_cache(const std::string& path, const std::array<uint8_t, 32>& expected_hash);

}  // namespace beagle
