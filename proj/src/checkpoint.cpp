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

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "beagle/io.hpp"

namespace beagle {

void ModelConfig::validate() const {
    if (d == 0 || n_heads == 0 || n_layers == 0 || t_max == 0 || vocab == 0)
        throw ValueError("model config fields must be positive");
    if (d % n_heads != 0) throw ValueError("d must be divisible by n_heads");
}

NamedTensor make_tensor(std::string name, size_t rows, size_t cols) {
    NamedTensor t;
    t.name = std::move(name);
    t.rows = rows;
    t.cols = cols;
    t.data = std::make_shared<std::vector<float>>(rows * cols, 0.0f);
    return t;
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return true;
    return false;
}

const NamedTensor& Checkpoint::tensor(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t;
    throw ValueError("checkpoint has no tensor named " + name);
}

NamedTensor& Checkpoint::tensor(const std::string& name) {
    for (auto& t : tensors)
        if (t.name == name) return t;
    throw ValueError("checkpoint has no tensor named " + name);
}

namespace {

constexpr char kMagic[4] = {'B', 'G', 'L', 'E'};
constexpr uint32_t kVersion = 1;

// In-memory little-endian sink; the file gets the buffer plus its CRC32.
struct Buffer {
    std::string bytes;

    void raw(const void* p, size_t n) { bytes.append(static_cast<const char*>(p), n); }
    void u8(uint8_t v) { raw(&v, 1); }
    void u32(uint32_t v) {
        uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                        static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
        raw(b, 4);
    }
    void u64(uint64_t v) {
        u32(static_cast<uint32_t>(v));
        u32(static_cast<uint32_t>(v >> 32));
    }
};

uint32_t crc_of(const std::string& bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()),
                  static_cast<uInt>(bytes.size()));
    return static_cast<uint32_t>(crc);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    ckpt.config.validate();
    Buffer b;
    b.raw(kMagic, 4);
    b.u32(kVersion);
    b.u32(ckpt.config.d);
    b.u32(ckpt.config.n_heads);
    b.u32(ckpt.config.n_layers);
    b.u32(ckpt.config.t_max);
    b.u32(ckpt.config.vocab);
    b.u8(static_cast<uint8_t>(ckpt.role));
    b.u32(static_cast<uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        if (!t.data || t.data->size() != t.numel())
            throw ValueError("tensor " + t.name + " has inconsistent shape/storage");
        b.u32(static_cast<uint32_t>(t.name.size()));
        b.raw(t.name.data(), t.name.size());
        b.u64(t.rows);
        b.u64(t.cols);
        if constexpr (std::endian::native == std::endian::little) {
            b.raw(t.data->data(), t.numel() * 4);
        } else {
            for (float v : *t.data) {
                uint32_t u;
                std::memcpy(&u, &v, 4);
                b.u32(u);
            }
        }
    }
    io::Writer w(path);
    w.bytes(b.bytes.data(), b.bytes.size());
    w.u32(crc_of(b.bytes));
    w.close();
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path);
    if (bytes.size() < 4 + 4 + 20 + 1 + 4 + 4) throw IoError("checkpoint too short: " + path);
    const std::string body = bytes.substr(0, bytes.size() - 4);
    size_t pos = bytes.size() - 4;
    const uint32_t stored_crc = static_cast<uint8_t>(bytes[pos]) |
                                static_cast<uint32_t>(static_cast<uint8_t>(bytes[pos + 1])) << 8 |
                                static_cast<uint32_t>(static_cast<uint8_t>(bytes[pos + 2])) << 16 |
                                static_cast<uint32_t>(static_cast<uint8_t>(bytes[pos + 3])) << 24;
    if (crc_of(body) != stored_crc) throw IoError("checkpoint CRC mismatch: " + path);

    size_t off = 0;
    auto need = [&](size_t n) {
        if (off + n > body.size()) throw IoError("truncated checkpoint: " + path);
    };
    auto ru8 = [&]() -> uint8_t {
        need(1);
        return static_cast<uint8_t>(body[off++]);
    };
    auto ru32 = [&]() -> uint32_t {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(ru8()) << (8 * i);
        return v;
    };
    auto ru64 = [&]() -> uint64_t {
        uint64_t lo = ru32();
        uint64_t hi = ru32();
        return lo | hi << 32;
    };

    need(4);
    if (std::memcmp(body.data(), kMagic, 4) != 0) throw IoError("not a checkpoint: " + path);
    off += 4;
    const uint32_t version = ru32();
    if (version != kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    ckpt.config.d = ru32();
    ckpt.config.n_heads = ru32();
    ckpt.config.n_layers = ru32();
    ckpt.config.t_max = ru32();
    ckpt.config.vocab = ru32();
    const uint8_t role = ru8();
    if (role > 1) throw IoError("unknown checkpoint role byte");
    ckpt.role = static_cast<CheckpointRole>(role);
    const uint32_t count = ru32();
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = ru32();
        need(name_len);
        std::string name(body.data() + off, name_len);
        off += name_len;
        const uint64_t rows = ru64();
        const uint64_t cols = ru64();
        NamedTensor t = make_tensor(std::move(name), rows, cols);
        need(t.numel() * 4);
        if constexpr (std::endian::native == std::endian::little) {
            std::memcpy(t.data->data(), body.data() + off, t.numel() * 4);
            off += t.numel() * 4;
        } else {
            for (auto& v : *t.data) {
                uint32_t u = ru32();
                std::memcpy(&v, &u, 4);
            }
        }
        ckpt.tensors.push_back(std::move(t));
    }
    if (off != body.size()) throw IoError("trailing bytes in checkpoint: " + path);
    ckpt.config.validate();
    return ckpt;
}

}  // namespace beagle
