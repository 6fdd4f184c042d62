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

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "beagle/common.hpp"

namespace beagle::io {

// Little-endian binary writer. Every failure surfaces as IoError so file
// formats never silently truncate.
class Writer {
   public:
    explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw IoError("cannot open for writing: " + path);
    }

    void bytes(const void* p, size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        if (!out_) throw IoError("short write: " + path_);
    }
    void u8(uint8_t v) { bytes(&v, 1); }
    void u32(uint32_t v) {
        uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                        static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
        bytes(b, 4);
    }
    void u64(uint64_t v) {
        u32(static_cast<uint32_t>(v));
        u32(static_cast<uint32_t>(v >> 32));
    }
    void f32(float v) {
        uint32_t u;
        std::memcpy(&u, &v, 4);
        u32(u);
    }
    void f32_array(const float* p, size_t n) {
        if constexpr (std::endian::native == std::endian::little) {
            bytes(p, n * 4);
        } else {
            for (size_t i = 0; i < n; ++i) f32(p[i]);
        }
    }
    void close() {
        out_.close();
        if (!out_) throw IoError("close failed: " + path_);
    }

   private:
    std::string path_;
    std::ofstream out_;
};

class Reader {
   public:
    explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw IoError("cannot open for reading: " + path);
    }

    void bytes(void* p, size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in_.gcount()) != n) throw IoError("truncated file: " + path_);
    }
    uint8_t u8() {
        uint8_t v;
        bytes(&v, 1);
        return v;
    }
    uint32_t u32() {
        uint8_t b[4];
        bytes(b, 4);
        return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
               static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
    }
    uint64_t u64() {
        uint64_t lo = u32();
        uint64_t hi = u32();
        return lo | hi << 32;
    }
    float f32() {
        uint32_t u = u32();
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    }
    void f32_array(float* p, size_t n) {
        if constexpr (std::endian::native == std::endian::little) {
            bytes(p, n * 4);
        } else {
            for (size_t i = 0; i < n; ++i) p[i] = f32();
        }
    }
    void seek(uint64_t offset) {
        in_.clear();
        in_.seekg(static_cast<std::streamoff>(offset));
        if (!in_) throw IoError("seek failed: " + path_);
    }

   private:
    std::string path_;
    std::ifstream in_;
};

}  // namespace beagle::io
