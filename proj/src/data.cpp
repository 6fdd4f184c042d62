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

#include "beagle/data.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <utility>

#include "beagle/io.hpp"

namespace beagle {

std::vector<int32_t> Vocab::encode(std::string_view text, bool add_bos) {
    std::vector<int32_t> ids;
    ids.reserve(text.size() + (add_bos ? 1 : 0));
    if (add_bos) ids.push_back(kBos);
    for (unsigned char ch : text) ids.push_back(static_cast<int32_t>(ch));
    return ids;
}

std::string Vocab::decode(const std::vector<int32_t>& ids) {
    std::string out;
    out.reserve(ids.size());
    for (int32_t id : ids) {
        if (id < 0 || id >= kSize) throw ValueError("token id out of range: " + std::to_string(id));
        if (id < 256) out.push_back(static_cast<char>(id));
    }
    return out;
}

std::vector<Chunk> load_corpus(const std::string& path, size_t context_len) {
    if (context_len == 0) throw ValueError("context_len must be >= 1");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path);

    std::vector<Chunk> chunks;
    for (size_t pos = 0; pos < bytes.size(); pos += context_len) {
        const size_t n = std::min(context_len, bytes.size() - pos);
        Chunk c;
        c.doc_id = chunks.size();
        c.ids = Vocab::encode(std::string_view(bytes).substr(pos, n), /*add_bos=*/true);
        chunks.push_back(std::move(c));
    }
    return chunks;
}

void shuffle_chunks(std::vector<Chunk>& chunks, uint64_t seed) {
    Rng rng = make_rng(derive_seed(seed, /*stream=*/1));
    std::shuffle(chunks.begin(), chunks.end(), rng);
}

std::vector<SequenceBatch> make_batches(const std::vector<Chunk>& chunks, size_t batch_rows) {
    if (batch_rows == 0) throw ValueError("batch_rows must be >= 1");
    std::vector<SequenceBatch> batches;
    for (size_t begin = 0; begin < chunks.size(); begin += batch_rows) {
        const size_t rows = std::min(batch_rows, chunks.size() - begin);
        SequenceBatch b;
        b.rows = rows;
        for (size_t r = 0; r < rows; ++r) b.cols = std::max(b.cols, chunks[begin + r].ids.size());
        b.ids.assign(rows * b.cols, 0);
        for (size_t r = 0; r < rows; ++r) {
            const Chunk& c = chunks[begin + r];
            b.lengths.push_back(c.ids.size());
            b.doc_ids.push_back(c.doc_id);
            std::copy(c.ids.begin(), c.ids.end(), b.ids.begin() + r * b.cols);
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

// --- hashing -------------------------------------------------------------

std::array<uint8_t, 32> sha256_bytes(const void* data, size_t n) {
    std::array<uint8_t, 32> out{};
    unsigned int len = 0;
    if (EVP_Digest(data, n, out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size())
        throw IoError("sha256 digest failed");
    return out;
}

std::array<uint8_t, 32> sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for hashing: " + path);
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw IoError("sha256 init failed");
    }
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        if (in.gcount() > 0 &&
            EVP_DigestUpdate(ctx, buf, static_cast<size_t>(in.gcount())) != 1) {
            EVP_MD_CTX_free(ctx);
            throw IoError("sha256 update failed");
        }
    }
    std::array<uint8_t, 32> out{};
    unsigned int len = 0;
    const bool ok = EVP_DigestFinal_ex(ctx, out.data(), &len) == 1 && len == out.size();
    EVP_MD_CTX_free(ctx);
    if (!ok) throw IoError("sha256 final failed");
    if (in.bad()) throw IoError("read failed while hashing: " + path);
    return out;
}

// --- state cache ---------------------------------------------------------

namespace {
constexpr char kCacheMagic[4] = {'B', 'G', 'S', 'C'};
constexpr uint32_t kCacheVersion = 1;
constexpr uint32_t kFlagLogits = 1u;
}  // namespace

const StateCacheDoc& StateCache::doc(size_t doc_id) const {
    for (const auto& d : docs)
        if (d.doc_id == doc_id) return d;
    throw ValueError("state cache has no document " + std::to_string(doc_id));
}

void save_state_cache(const StateCache& cache, const std::string& path) {
    for (const auto& doc : cache.docs) {
        if (doc.states.size() != doc.n * cache.d)
            throw ValueError("state cache doc has malformed states array");
        if (cache.has_logits && doc.logits.size() != doc.n * cache.vocab)
            throw ValueError("state cache doc has malformed logits array");
    }
    io::Writer w(path);
    w.bytes(kCacheMagic, 4);
    w.u32(kCacheVersion);
    w.bytes(cache.target_hash.data(), cache.target_hash.size());
    w.u32(cache.has_logits ? kFlagLogits : 0);
    w.u32(static_cast<uint32_t>(cache.d));
    w.u32(static_cast<uint32_t>(cache.vocab));
    w.u64(cache.docs.size());
    // index table of absolute payload offsets
    uint64_t offset = 4 + 4 + 32 + 4 + 4 + 4 + 8 + cache.docs.size() * 24;
    for (const auto& doc : cache.docs) {
        w.u64(doc.doc_id);
        w.u64(doc.n);
        w.u64(offset);
        offset += doc.n * cache.d * 4;
        if (cache.has_logits) offset += doc.n * cache.vocab * 4;
    }
    for (const auto& doc : cache.docs) {
        w.f32_array(doc.states.data(), doc.states.size());
        if (cache.has_logits) w.f32_array(doc.logits.data(), doc.logits.size());
    }
    w.close();
}

StateCache load_state_cache(const std::string& path,
                            const std::array<uint8_t, 32>& expected_hash) {
    io::Reader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kCacheMagic, 4) != 0)
        throw IoError("not a state cache file: " + path);
    const uint32_t version = r.u32();
    if (version != kCacheVersion)
        throw IoError("unsupported state cache version " + std::to_string(version));
    StateCache cache;
    r.bytes(cache.target_hash.data(), cache.target_hash.size());
    if (cache.target_hash != expected_hash)
        throw StaleCacheError("state cache was produced by a different target checkpoint: " +
                              path);
    const uint32_t flags = r.u32();
    if ((flags & ~kFlagLogits) != 0) throw IoError("unknown state cache flags");
    cache.has_logits = (flags & kFlagLogits) != 0;
    cache.d = r.u32();
    cache.vocab = r.u32();
    const uint64_t ndocs = r.u64();
    struct Entry {
        uint64_t doc_id, n, offset;
    };
    std::vector<Entry> index(ndocs);
    for (auto& e : index) {
        e.doc_id = r.u64();
        e.n = r.u64();
        e.offset = r.u64();
    }
    for (const auto& e : index) {
        StateCacheDoc doc;
        doc.doc_id = e.doc_id;
        doc.n = e.n;
        r.seek(e.offset);
        doc.states.resize(e.n * cache.d);
        r.f32_array(doc.states.data(), doc.states.size());
        if (cache.has_logits) {
            doc.logits.resize(e.n * cache.vocab);
            r.f32_array(doc.logits.data(), doc.logits.size());
        }
        cache.docs.push_back(std::move(doc));
    }
    return cache;
}

}  // namespace beagle
