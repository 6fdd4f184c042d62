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
#include <string>
#include <vector>

#include "beagle/common.hpp"

namespace beagle {

// Positions are 1-based throughout this module. A query at position m is the
// embedding of token t_m; key position j refers to the state slot h_j.

// One training window: starts at `start` (a count of fully visible prefix
// positions) and covers query positions start+1 .. start+len.
struct Window {
    size_t start = 0;
    size_t len = 0;
    size_t first() const { return start + 1; }
    size_t last() const { return start + len; }
};

struct WindowPlan {
    size_t T = 0;
    size_t k = 0;
    size_t eps = 0;
    std::vector<Window> windows;
};

// Window starts are {0 (truncated, iff eps>0), eps, eps+k, ...}; the last
// window is truncated to T. Windows are disjoint and cover 1..T.
WindowPlan window_plan(size_t T, size_t k, size_t eps);

// Index into plan.windows of the window containing query position q (1-based).
size_t window_of(const WindowPlan& plan, size_t q);

// Dense query x key admissibility matrix. The diagonal is always masked
// (strict causality: allowed(i,j) implies j < i) and mutation is monotone:
// entries only ever flip masked -> allowed within an episode.
class AttentionMask {
 public:
    explicit AttentionMask(size_t T);

    size_t size() const { return T_; }
    bool allowed(size_t i, size_t j) const;  // 1-based
    void allow(size_t i, size_t j);          // 1-based; requires j < i

    // Row-major T x T byte matrix (0-based), for the attention kernels.
    const uint8_t* data() const { return m_.data(); }
    size_t stride() const { return T_; }

    // '.' masked, 'x' allowed; one row per query, rows joined with '\n'.
    std::string to_ascii() const;

 private:
    size_t T_;
    std::vector<uint8_t> m_;
};

AttentionMask strict_causal_mask(size_t T);

// Early-stage mask: every query in a window sees only states at or before
// the window start.
AttentionMask inverse_block_mask(const WindowPlan& plan);

// Simulation step i in [2, k]: the slot written at step i-1 (window start n
// -> key n+i-1) becomes visible to every query n+j with j >= i. Purely an
// in-place monotone extension; step 1 is inverse_block_mask itself.
void simulation_mask_step(AttentionMask& mask, const WindowPlan& plan, size_t step);

}  // namespace beagle
