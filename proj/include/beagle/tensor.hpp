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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "beagle/common.hpp"

namespace beagle {

// Reverse-mode autodiff on a linear tape. Every tensor is a 2-D row-major
// node (scalars are 1x1, vectors 1xn); nodes are identified by index into
// the tape, are immutable once produced, and creation order is a topological
// order, so backward() is a single reverse sweep.
//
// Templated on the scalar type: f32 for training/inference, f64 for the
// finite-difference gradient checks.
template <class S>
class TapeT {
 public:
    using Storage = std::shared_ptr<std::vector<S>>;

    struct Node {
        size_t rows = 0, cols = 0;
        Storage val;
        std::vector<S> grad;  // empty until touched by backward
        bool requires_grad = false;
        std::function<void(TapeT&)> back;  // null for leaves/constants
    };

    // -- node creation ------------------------------------------------
    // Leaf sharing external storage (parameters). Zero-copy.
    int leaf(size_t rows, size_t cols, Storage storage, bool requires_grad);
    // Constant from a copy of the given data (no gradient).
    int constant(size_t rows, size_t cols, const S* data);
    int constant(size_t rows, size_t cols, const std::vector<S>& data);
    int zeros(size_t rows, size_t cols, bool requires_grad = false);

    // -- elementwise / linear ------------------------------------------
    int add(int a, int b);
    int mul(int a, int b);
    int scale(int a, S alpha);
    int sum(int a);                                          // -> 1x1
    int weighted_reduce(int a, std::vector<S> weights);      // sum w[i]*a[i] -> 1x1
    int weighted_sum(const std::vector<int>& scalars, const std::vector<S>& w);  // -> 1x1

    int matmul(int a, int b);     // [m x k] * [k x n]
    int matmul_nt(int a, int b);  // [m x k] * [n x k]^T
    int transpose(int a);
    int concat_rows(int a, int b);
    int slice_rows(int a, size_t r0, size_t len);
    int gather_rows(int a, std::vector<size_t> idx);
    // Embedding lookup is a row gather on the table; scatter-add backward.
    int embedding_lookup(int table, const std::vector<int32_t>& ids);

    // -- nonlinear -----------------------------------------------------
    int softmax_rows(int a);
    int rms_norm(int x, int gain, S eps = S(1e-6));
    int silu(int x);
    // Rotary position encoding on packed [rows x H*dh] with per-row absolute
    // positions (1-based); rotates (even, odd) pairs inside each head slice.
    int rope_rows(int x, std::vector<size_t> positions, size_t n_heads, double base = 10000.0);

    // -- losses ----------------------------------------------------------
    // Per-row soft cross-entropy -sum_t p[t] * log softmax(z)[t], computed as
    // lse(z) - <p, z>. p rows must each sum to 1 within 1e-6.
    int ce_soft_rows(const std::vector<S>& p, int logits);
    int soft_cross_entropy(const std::vector<S>& p, int logits);  // 1 x n -> scalar
    int ce_hard_rows(int logits, const std::vector<int32_t>& ids);
    // Per-row mean Huber (threshold 1): 0.5 e^2 if |e|<1 else |e|-0.5.
    int smooth_l1_rows(int a, int b);
    int smooth_l1(int a, int b);  // scalar mean over all elements

    // -- mutable K/V buffers for the constant-memory simulation ----------
    // A buffer copies its initializer into fresh storage (counted by
    // alloc_stats); scatter_rows overwrites rows of that same storage in
    // place and returns a new view node so gradients route to the producing
    // step. Each scatter saves only the rows it overwrites and restores them
    // as its adjoint runs, so backward sees every node's input values as
    // they stood at forward time and leaves the buffer at its initial
    // contents. One backward() per tape when scatters are present; the
    // repeat-call accumulation contract does not extend to mutated buffers.
    int make_buffer(int src);
    int scatter_rows(int buf, std::vector<size_t> rows, int src);

    // -- attention core ---------------------------------------------------
    // Multi-head attention over packed heads: q [R x H*dh], k/v [Tk x H*dh].
    // mask: row-major [mask_rows x Tk] bytes (nonzero = visible); q row r uses
    // mask row q_mask_rows[r]. mask == nullptr means every key is visible.
    // Rows with no visible key produce a zero output row. Probabilities are
    // saved at forward time: the mask may be mutated in place afterwards
    // (monotone extension), and saved probs keep backward exact.
    int mha(int q, int k, int v, size_t n_heads, S scale, const uint8_t* mask,
            size_t mask_stride, std::vector<size_t> q_mask_rows);

    // -- engine ----------------------------------------------------------
    // Seeds d(loss)/d(loss)=1 and sweeps the tape in reverse creation order.
    // Repeated calls accumulate into existing grads.
    void backward(int loss);
    // Accumulates a node's grad into dst (dst += grad); zero-filled grad if
    // the node was never reached.
    void export_grad(int id, S* dst) const;

    // -- access ----------------------------------------------------------
    size_t rows(int id) const { return nodes_[id].rows; }
    size_t cols(int id) const { return nodes_[id].cols; }
    size_t numel(int id) const { return nodes_[id].rows * nodes_[id].cols; }
    const S* val(int id) const { return nodes_[id].val->data(); }
    S* val(int id) { return nodes_[id].val->data(); }
    S scalar(int id) const;
    const std::vector<S>& grad(int id) const { return nodes_[id].grad; }
    size_t size() const { return nodes_.size(); }

 private:
    int push(size_t rows, size_t cols, bool requires_grad);
    std::vector<S>& ensure_grad(int id);
    void check_same_shape(int a, int b, const char* op) const;

    std::vector<Node> nodes_;
};

using Tape = TapeT<float>;

}  // namespace beagle
