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

#include "beagle/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <random>

#include "beagle/common.hpp"
#include "doctest.h"

using beagle::Checkpoint;
using beagle::CheckpointRole;
using beagle::load_checkpoint;
using beagle::make_tensor;
using beagle::ModelConfig;
using beagle::save_checkpoint;

namespace {

namespace fs = std::filesystem;

struct TempFile {
    fs::path path;
    explicit TempFile(const std::string& tag) {
        static std::atomic<uint64_t> counter{0};
        path = fs::temp_directory_path() /
               ("beagle_ckpt_" + tag + "_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter.fetch_add(1)));
    }
    ~TempFile() {
        std::error_code ec;
        fs::remove(path, ec);
    }
    std::string str() const { return path.string(); }
};

Checkpoint sample_checkpoint() {
    Checkpoint c;
    c.config = ModelConfig{8, 2, 3, 32, 258};
    c.role = CheckpointRole::kDraft;
    std::mt19937_64 rng(3);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    for (const char* name : {"alpha", "blocks.0.w", "norm"}) {
        auto t = make_tensor(name, 3, 5);
        for (auto& v : *t.data) v = dist(rng);
        c.tensors.push_back(std::move(t));
    }
    return c;
}

}  // namespace

TEST_CASE("model config validation") {
    ModelConfig ok;
    ok.validate();
    CHECK(ok.head_dim() == 32);
    ModelConfig bad = ok;
    bad.n_heads = 3;  // 128 % 3 != 0
    CHECK_THROWS_AS(bad.validate(), beagle::ValueError);
    bad = ok;
    bad.d = 0;
    CHECK_THROWS_AS(bad.validate(), beagle::ValueError);
    bad = ok;
    bad.vocab = 0;
    CHECK_THROWS_AS(bad.validate(), beagle::ValueError);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
    auto c = sample_checkpoint();
    TempFile f("roundtrip");
    save_checkpoint(c, f.str());
    auto back = load_checkpoint(f.str());
    CHECK(back.config == c.config);
    CHECK(back.role == CheckpointRole::kDraft);
    REQUIRE(back.tensors.size() == 3);
    for (size_t i = 0; i < c.tensors.size(); ++i) {
        CHECK(back.tensors[i].name == c.tensors[i].name);
        CHECK(back.tensors[i].rows == c.tensors[i].rows);
        CHECK(back.tensors[i].cols == c.tensors[i].cols);
        CHECK(*back.tensors[i].data == *c.tensors[i].data);  // exact f32 round-trip
    }
    CHECK(back.has("alpha"));
    CHECK_FALSE(back.has("beta"));
    CHECK(back.tensor("norm").rows == 3);
    CHECK_THROWS_AS((void)back.tensor("beta"), beagle::ValueError);
}

TEST_CASE("checkpoint rejects corruption via trailing CRC32") {
    auto c = sample_checkpoint();
    TempFile f("crc");
    save_checkpoint(c, f.str());
    const auto size = fs::file_size(f.path);
    // flip one payload byte somewhere in the middle
    {
        std::fstream io(f.path, std::ios::in | std::ios::out | std::ios::binary);
        io.seekg(static_cast<std::streamoff>(size / 2));
        char b;
        io.read(&b, 1);
        io.seekp(static_cast<std::streamoff>(size / 2));
        b = static_cast<char>(b ^ 0x40);
        io.write(&b, 1);
    }
    CHECK_THROWS_AS((void)load_checkpoint(f.str()), beagle::IoError);
}

TEST_CASE("checkpoint rejects wrong magic, version, and truncation") {
    auto c = sample_checkpoint();
    TempFile f("magic");
    save_checkpoint(c, f.str());
    {
        std::fstream io(f.path, std::ios::in | std::ios::out | std::ios::binary);
        io.write("XXXX", 4);
    }
    CHECK_THROWS_AS((void)load_checkpoint(f.str()), beagle::IoError);
    TempFile g("trunc");
    save_checkpoint(c, g.str());
    fs::resize_file(g.path, fs::file_size(g.path) - 7);
    CHECK_THROWS_AS((void)load_checkpoint(g.str()), beagle::IoError);
    CHECK_THROWS_AS((void)load_checkpoint("/nonexistent/beagle/model.bgle"), beagle::IoError);
}

TEST_CASE("role byte distinguishes target and draft") {
    auto c = sample_checkpoint();
    c.role = CheckpointRole::kTarget;
    TempFile f("role");
    save_checkpoint(c, f.str());
    CHECK(load_checkpoint(f.str()).role == CheckpointRole::kTarget);
}
