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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "beagle/common.hpp"
#include "doctest.h"

using beagle::Chunk;
using beagle::load_corpus;
using beagle::load_state_cache;
using beagle::make_batches;
using beagle::save_state_cache;
using beagle::SequenceBatch;
using beagle::sha256_bytes;
using beagle::sha256_file;
using beagle::shuffle_chunks;
using beagle::StateCache;
using beagle::StateCacheDoc;
using beagle::Vocab;

namespace {

namespace fs = std::filesystem;

// Unique scratch file that cleans up after itself.
struct TempFile {
    fs::path path;
    explicit TempFile(const std::string& tag) {
        static std::atomic<uint64_t> counter{0};
        path = fs::temp_directory_path() /
               ("beagle_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter.fetch_add(1)));
    }
    ~TempFile() {
        std::error_code ec;
        fs::remove(path, ec);
    }
    std::string str() const { return path.string(); }
};

void write_file(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

StateCache make_cache(size_t ndocs, size_t d, size_t vocab, bool logits, uint64_t seed) {
    StateCache c;
    c.has_logits = logits;
    c.d = d;
    c.vocab = vocab;
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    for (size_t i = 0; i < ndocs; ++i) {
        StateCacheDoc doc;
        doc.doc_id = i;
        doc.n = 2 + (rng() % 5);
        doc.states.resize(doc.n * d);
        for (auto& v : doc.states) v = dist(rng);
        if (logits) {
            doc.logits.resize(doc.n * vocab);
            for (auto& v : doc.logits) v = dist(rng);
        }
        c.docs.push_back(std::move(doc));
    }
    for (size_t i = 0; i < 32; ++i) c.target_hash[i] = static_cast<uint8_t>(seed + i);
    return c;
}

}  // namespace

TEST_CASE("vocab encode spec examples") {
    CHECK(Vocab::encode("", true) == std::vector<int32_t>{256});
    CHECK(Vocab::encode("", false) == std::vector<int32_t>{});
    CHECK(Vocab::encode("ab", false) == std::vector<int32_t>{97, 98});
    CHECK(Vocab::encode("ab", true) == std::vector<int32_t>{256, 97, 98});
    // raw bytes, including NUL and 0xFF
    std::string raw("\x00\xff", 2);
    CHECK(Vocab::encode(raw, false) == std::vector<int32_t>{0, 255});
}

TEST_CASE("decode strips specials and round-trips arbitrary byte strings") {
    CHECK(Vocab::decode({256, 97, 98, 257}) == "ab");
    CHECK(Vocab::decode({}) == "");
    CHECK_THROWS_AS((void)Vocab::decode({258}), beagle::ValueError);
    CHECK_THROWS_AS((void)Vocab::decode({-1}), beagle::ValueError);
    // [DERIVED] decode(encode(x)) == x for 1000 random byte strings
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
        std::string s(rng() % 64, '\0');
        for (auto& ch : s) ch = static_cast<char>(rng() & 0xff);
        CHECK(Vocab::decode(Vocab::encode(s, trial % 2 == 0)) == s);
    }
}

TEST_CASE("corpus chunking arithmetic") {
    TempFile f("corpus");
    write_file(f.path, "0123456789");  // 10 bytes
    // [DERIVED] 10-byte file, T=4 -> payload lengths 4,4,2, each with BOS
    auto chunks = load_corpus(f.str(), 4);
    REQUIRE(chunks.size() == 3);
    CHECK(chunks[0].ids == std::vector<int32_t>{256, '0', '1', '2', '3'});
    CHECK(chunks[1].ids == std::vector<int32_t>{256, '4', '5', '6', '7'});
    CHECK(chunks[2].ids == std::vector<int32_t>{256, '8', '9'});
    CHECK(chunks[0].doc_id == 0);
    CHECK(chunks[1].doc_id == 1);
    CHECK(chunks[2].doc_id == 2);
    // exact multiple leaves no runt chunk
    CHECK(load_corpus(f.str(), 5).size() == 2);
    CHECK(load_corpus(f.str(), 10).size() == 1);
    CHECK(load_corpus(f.str(), 100).size() == 1);
}

TEST_CASE("corpus edge cases") {
    TempFile f("empty");
    write_file(f.path, "");
    CHECK(load_corpus(f.str(), 8).empty());
    CHECK_THROWS_AS((void)load_corpus("/nonexistent/beagle/corpus.bin", 8), beagle::IoError);
    TempFile g("one");
    write_file(g.path, "x");
    CHECK_THROWS_AS((void)load_corpus(g.str(), 0), beagle::ValueError);
    // chunk payloads concatenate back to the original bytes
    TempFile h("roundtrip");
    std::string bytes;
    std::mt19937_64 rng(11);
    bytes.resize(257);
    for (auto& ch : bytes) ch = static_cast<char>(rng() & 0xff);
    write_file(h.path, bytes);
    std::string joined;
    for (const auto& c : load_corpus(h.str(), 16)) {
        REQUIRE(c.ids.size() >= 2);
        REQUIRE(c.ids.size() <= 17);
        REQUIRE(c.ids[0] == Vocab::kBos);
        joined += Vocab::decode(c.ids);
    }
    CHECK(joined == bytes);
}

TEST_CASE("shuffle is deterministic per seed") {
    TempFile f("shuffle");
    std::string bytes(200, 'a');
    for (size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<char>('a' + i % 26);
    write_file(f.path, bytes);
    auto a = load_corpus(f.str(), 8);
    auto b = load_corpus(f.str(), 8);
    auto c = load_corpus(f.str(), 8);
    shuffle_chunks(a, 42);
    shuffle_chunks(b, 42);
    shuffle_chunks(c, 43);
    REQUIRE(a.size() == b.size());
    bool same_ab = true, same_ac = true;
    for (size_t i = 0; i < a.size(); ++i) {
        same_ab = same_ab && a[i].doc_id == b[i].doc_id;
        same_ac = same_ac && a[i].doc_id == c[i].doc_id;
    }
    CHECK(same_ab);
    CHECK_FALSE(same_ac);  // 25 chunks: collision odds are negligible
    // shuffling permutes, never drops or duplicates
    std::vector<int> seen(a.size(), 0);
    for (const auto& ch : a) seen[ch.doc_id]++;
    for (int s : seen) CHECK(s == 1);
}

TEST_CASE("batching pads rows and keeps lengths") {
    std::vector<Chunk> chunks;
    chunks.push_back({0, {256, 10, 11, 12}});
    chunks.push_back({1, {256, 20}});
    chunks.push_back({2, {256, 30, 31}});
    auto batches = make_batches(chunks, 2);
    REQUIRE(batches.size() == 2);
    const SequenceBatch& b0 = batches[0];
    CHECK(b0.rows == 2);
    CHECK(b0.cols == 4);  // max row length in the batch
    CHECK(b0.lengths == std::vector<size_t>{4, 2});
    CHECK(b0.doc_ids == std::vector<size_t>{0, 1});
    CHECK(b0.at(0, 3) == 12);
    CHECK(b0.at(1, 0) == 256);
    CHECK(b0.at(1, 1) == 20);
    CHECK(b0.at(1, 2) == 0);  // padding
    CHECK(b0.at(1, 3) == 0);
    const SequenceBatch& b1 = batches[1];
    CHECK(b1.rows == 1);
    CHECK(b1.cols == 3);
    CHECK(b1.doc_ids == std::vector<size_t>{2});
    for (const auto& b : batches)
        for (size_t i = 0; i < b.ids.size(); ++i) {
            CHECK(b.ids[i] >= 0);
            CHECK(b.ids[i] < Vocab::kSize);
        }
    CHECK(make_batches({}, 4).empty());
    CHECK_THROWS_AS((void)make_batches(chunks, 0), beagle::ValueError);
}

TEST_CASE("sha256 matches the published test vectors") {
    // FIPS 180-2 example digests
    auto h = sha256_bytes("abc", 3);
    const std::array<uint8_t, 8> abc_head = {0xba, 0x78, 0x16, 0xbf, 0x8f, 0x01, 0xcf, 0xea};
    for (size_t i = 0; i < abc_head.size(); ++i) CHECK(h[i] == abc_head[i]);
    auto e = sha256_bytes("", 0);
    const std::array<uint8_t, 8> empty_head = {0xe3, 0xb0, 0xc4, 0x42, 0x98, 0xfc, 0x1c, 0x14};
    for (size_t i = 0; i < empty_head.size(); ++i) CHECK(e[i] == empty_head[i]);
    TempFile f("hash");
    write_file(f.path, "abc");
    CHECK(sha256_file(f.str()) == h);
    CHECK_THROWS_AS((void)sha256_file("/nonexistent/beagle/ckpt.bgle"), beagle::IoError);
}

TEST_CASE("state cache round-trips bit-exactly") {
    for (bool logits : {false, true}) {
        auto cache = make_cache(3, 16, 258, logits, logits ? 5u : 6u);
        TempFile f("cache");
        save_state_cache(cache, f.str());
        auto back = load_state_cache(f.str(), cache.target_hash);
        CHECK(back.has_logits == logits);
        CHECK(back.d == 16);
        CHECK(back.vocab == 258);
        REQUIRE(back.docs.size() == cache.docs.size());
        for (size_t i = 0; i < cache.docs.size(); ++i) {
            CHECK(back.docs[i].doc_id == cache.docs[i].doc_id);
            CHECK(back.docs[i].n == cache.docs[i].n);
            CHECK(back.docs[i].states == cache.docs[i].states);  // exact f32 round-trip
            CHECK(back.docs[i].logits == cache.docs[i].logits);
        }
        CHECK(back.doc(2).doc_id == 2);
        CHECK_THROWS_AS((void)back.doc(99), beagle::ValueError);
    }
}

TEST_CASE("state cache size arithmetic") {
    // [DERIVED] file size == header + index + sum_doc n*d floats (+ logits)
    for (bool logits : {false, true}) {
        auto cache = make_cache(4, 8, 12, logits, 9);
        TempFile f("size");
        save_state_cache(cache, f.str());
        size_t states_sz = 0, logits_sz = 0;
        for (const auto& d : cache.docs) {
            states_sz += d.n * cache.d * 4;
            logits_sz += d.n * cache.vocab * 4;
        }
        const size_t header = 4 + 4 + 32 + 4 + 4 + 4 + 8;
        const size_t index = cache.docs.size() * (8 + 8 + 8);
        size_t expect = header + index + states_sz + (logits ? logits_sz : 0);
        CHECK(fs::file_size(f.path) == expect);
    }
}

TEST_CASE("stale or malformed caches are rejected") {
    auto cache = make_cache(2, 8, 258, false, 13);
    TempFile f("stale");
    save_state_cache(cache, f.str());
    // a different producing checkpoint -> stale
    auto other = cache.target_hash;
    other[0] ^= 0xff;
    CHECK_THROWS_AS((void)load_state_cache(f.str(), other), beagle::StaleCacheError);
    // corrupted stored hash field -> stale
    {
        std::fstream io(f.path, std::ios::in | std::ios::out | std::ios::binary);
        io.seekp(8);  // first hash byte, after magic+version
        char flip = static_cast<char>(cache.target_hash[0] ^ 0x01);
        io.write(&flip, 1);
    }
    CHECK_THROWS_AS((void)load_state_cache(f.str(), cache.target_hash), beagle::StaleCacheError);
    // bad magic -> I/O error
    {
        std::fstream io(f.path, std::ios::in | std::ios::out | std::ios::binary);
        io.write("NOPE", 4);
    }
    CHECK_THROWS_AS((void)load_state_cache(f.str(), cache.target_hash), beagle::IoError);
    // truncated file -> I/O error
    TempFile g("trunc");
    save_state_cache(cache, g.str());
    fs::resize_file(g.path, fs::file_size(g.path) / 2);
    CHECK_THROWS_AS((void)load_state_cache(g.str(), cache.target_hash), beagle::IoError);
    CHECK_THROWS_AS((void)load_state_cache("/nonexistent/beagle/cache.bgsc", cache.target_hash),
                    beagle::IoError);
}
