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

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "beagle/common.hpp"

namespace beagle {

// Shared desk-scale model geometry. d must divide evenly into H heads.
struct ModelConfig {
    uint32_t d = 128;
    uint32_t n_heads = 4;
    uint32_t n_layers = 4;   // target transformer depth
    uint32_t t_max = 512;
    uint32_t vocab = 258;

    uint32_t head_dim() const { return d / n_heads; }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

enum class CheckpointRole : uint8_t { kTarget = 0, kDraft = 1 };

// A named parameter tensor. Storage is shared so tape leaves, the optimizer,
// and checkpoint serialization all view the same buffer without copies.
struct NamedTensor {
    std::string name;
    size_t rows = 0;
    size_t cols = 0;
    std::shared_ptr<std::vector<float>> data;

    size_t numel() const { return rows * cols; }
    float* ptr() { return data->data(); }
    const float* ptr() const { return data->data(); }
};

NamedTensor make_tensor(std::string name, size_t rows, size_t cols);

struct Checkpoint {
    ModelConfig config;
    CheckpointRole role = CheckpointRole::kTarget;
    std::vector<NamedTensor> tensors;

    bool has(const std::string& name) const;
    const NamedTensor& tensor(const std::string& name) const;  // ValueError if absent
    NamedTensor& tensor(const std::string& name);
};

// File format "BGLE": magic, version u32, config block (five u32 fields),
// role byte, named tensor table (name length + UTF-8 name + rows/cols u64 +
// little-endian f32 data), trailing CRC32 over everything before it.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace beagle
