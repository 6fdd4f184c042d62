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
#include <string>
#include <vector>

#include "beagle/checkpoint.hpp"
#include "beagle/common.hpp"
#include "beagle/masks.hpp"
#include "beagle/tensor.hpp"

namespace beagle {

// States and logits for a batch of consecutive rows, row-major.
struct ForwardOut {
    size_t rows = 0;
    size_t d = 0;
    size_t vocab = 0;
    std::vector<float> states;  // rows x d, after the final norm
    std::vector<float> logits;  // rows x vocab, tied head
};

// Per-layer self-attention K/V for the target's incremental path. Keys are
// stored rotated; truncate() is the rollback used after draft rejection.
struct TargetKV {
    size_t n_layers = 0;
    size_t d = 0;
    size_t capacity = 0;
    size_t filled = 0;
    std::vector<std::vector<float>> k;  // per layer, capacity x d
    std::vector<std::vector<float>> v;

    void truncate(size_t n);
    void reset() { filled = 0; }
};

// Tiny pre-norm decoder-only LM with rotary attention and a weight-tied head.
class TargetModel {
   public:
    TargetModel(const ModelConfig& cfg, uint64_t seed);  // random init
    static TargetModel from_checkpoint(const Checkpoint& ckpt);
    Checkpoint to_checkpoint() const;

    const ModelConfig& config() const { return cfg_; }
    std::vector<NamedTensor>& params() { return params_; }
    const std::vector<NamedTensor>& params() const { return params_; }
    const NamedTensor& embedding() const { return params_.front(); }
    size_t param_count() const;

    // Kernel inference path. forward() is a fresh cache plus one incremental
    // call, so full and cached forwards share one code path by construction.
    TargetKV make_cache() const;
    ForwardOut forward_incremental(TargetKV& cache, const int32_t* tokens, size_t n) const;
    ForwardOut forward(const std::vector<int32_t>& tokens) const;

    // Training graph over one row of ids; every parameter becomes a tape
    // leaf sharing the model's storage.
    struct GraphOut {
        std::vector<int> param_nodes;  // parallel to params()
        int states = -1;               // [n x d] after final norm
        int logits = -1;               // [n x vocab]
    };
    GraphOut build_graph(Tape& tape, const std::vector<int32_t>& ids) const;

   private:
    TargetModel() = default;
    const NamedTensor& p(const std::string& name) const;

    ModelConfig cfg_;
    std::vector<NamedTensor> params_;
};

// Draft-side K/V cache. Entries up to true_len are projections of verified
// target states; entries beyond are projections of drafted states.
struct KVCache {
    size_t d = 0;
    size_t capacity = 0;
    size_t filled = 0;
    size_t true_len = 0;
    std::vector<float> k;  // capacity x d, rotated
    std::vector<float> v;  // capacity x d
};

struct DraftStepOut {
    std::vector<float> h_raw;   // block output, before the final norm
    std::vector<float> state;   // final-normed draft state (cache/loss level)
    std::vector<float> logits;  // state through the tied head
};

// Single-layer cross-attention draft head: queries come from the embedding of
// the current token, keys/values from (true or drafted) states. Shares the
// frozen embedding/LM head with the target; only attention + MLP + norm gains
// train.
class DraftHead {
   public:
    DraftHead(const ModelConfig& cfg, uint64_t seed, NamedTensor shared_embedding);
    static DraftHead from_checkpoint(const Checkpoint& ckpt);
    Checkpoint to_checkpoint() const;

    const ModelConfig& config() const { return cfg_; }
    const NamedTensor& embedding() const { return embedding_; }
    std::vector<NamedTensor>& trainable() { return params_; }
    const std::vector<NamedTensor>& trainable() const { return params_; }
    size_t trainable_param_count() const;

    // --- kernel inference path ------------------------------------------
    KVCache make_cache(size_t draft_margin) const;
    // Projects a state into K/V at position filled+1. Appending a true entry
    // after a draft entry is a usage error; all draft entries must be reset
    // away first.
    void kv_append(KVCache& cache, const float* state, bool is_true) const;
    // Drops draft entries, then appends freshly verified true states.
    void kv_reset_to_true(KVCache& cache, const float* states, size_t n) const;
    // Query e(token) at position pos attends to every cached entry. Does not
    // mutate the cache. Requires cache.filled <= pos - 1; a gap means the
    // newest states are simply absent (the stale, no-concat chaining variant).
    DraftStepOut draft_step(const KVCache& cache, int32_t token, size_t pos) const;

    struct BlockOut {
        size_t rows = 0;
        std::vector<float> h_raw;   // rows x d
        std::vector<float> state;   // rows x d
        std::vector<float> logits;  // rows x vocab
    };
    // Batch cross-attention over explicit key states under a mask. Query r
    // sits at position qpos[r] (1-based; also its mask row); key j at
    // position kpos[j] (mask column j+1). Masked keys get exactly zero
    // weight; a row with no allowed keys gets zero attention output.
    BlockOut draft_block_forward(const std::vector<float>& query_embeds,
                                 const std::vector<size_t>& qpos,
                                 const std::vector<float>& key_states,
                                 const std::vector<size_t>& kpos,
                                 const AttentionMask& mask) const;
    // Tied head: logits = states * e^T.
    std::vector<float> head_logits(const float* states, size_t rows) const;
    std::vector<float> embed(int32_t token) const;

    // --- tape graph pieces (training) -------------------------------------
    struct Bind {
        std::vector<int> nodes;  // parallel to trainable()
        int embedding = -1;      // frozen leaf
    };
    Bind bind(Tape& tape) const;
    // Raw block rows for queries over key_states (an [n_keys x d] node).
    int block_graph(Tape& tape, const Bind& b, int query_embeds, int key_states,
                    const AttentionMask& mask, const std::vector<size_t>& qpos,
                    const std::vector<size_t>& kpos) const;
    int state_graph(Tape& tape, const Bind& b, int h_raw) const;   // final norm
    int logits_graph(Tape& tape, const Bind& b, int state) const;  // tied head

   private:
    DraftHead() = default;
    const NamedTensor& p(const std::string& name) const;

    ModelConfig cfg_;
    NamedTensor embedding_;            // frozen, shared storage with target
    std::vector<NamedTensor> params_;  // wq, wk, wv, wo, q/kv/mlp/final norms, mlp w1/w2
};

}  // namespace beagle
