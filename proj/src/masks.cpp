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

#include "beagle/masks.hpp"

#include <algorithm>
#include <string>

namespace beagle {

WindowPlan window_plan(size_t T, size_t k, size_t eps) {
    if (T < 1) throw ValueError("window_plan: T must be >= 1");
    if (k < 1) throw ValueError("window_plan: k must be >= 1");
    if (eps >= k) throw ValueError("window_plan: offset must satisfy 0 <= eps < k");
    WindowPlan plan;
    plan.T = T;
    plan.k = k;
    plan.eps = eps;
    if (eps > 0)  // truncated leading remainder, start 0
        plan.windows.push_back({0, std::min(eps, T)});
    for (size_t start = eps; start < T; start += k)
        plan.windows.push_back({start, std::min(k, T - start)});
    return plan;
}

size_t window_of(const WindowPlan& plan, size_t q) {
    if (q < 1 || q > plan.T) throw ValueError("window_of: query position out of range");
    for (size_t w = 0; w < plan.windows.size(); ++w)
        if (q >= plan.windows[w].first() && q <= plan.windows[w].last()) return w;
    throw ValueError("window_of: plan does not cover position");  // unreachable for valid plans
}

AttentionMask::AttentionMask(size_t T) : T_(T), m_(T * T, 0) {
    if (T < 1) throw ValueError("AttentionMask: T must be >= 1");
    alloc_stats().mask_allocs.fetch_add(1);
}

bool AttentionMask::allowed(size_t i, size_t j) const {
    if (i < 1 || i > T_ || j < 1 || j > T_)
        throw ValueError("AttentionMask::allowed: position out of range");
    return m_[(i - 1) * T_ + (j - 1)] != 0;
}

void AttentionMask::allow(size_t i, size_t j) {
    if (i < 1 || i > T_ || j < 1 || j > T_)
        throw ValueError("AttentionMask::allow: position out of range");
    if (j >= i) throw ValueError("AttentionMask::allow: strict causality requires j < i");
    m_[(i - 1) * T_ + (j - 1)] = 1;
}

std::string AttentionMask::to_ascii() const {
    std::string out;
    out.reserve(T_ * (T_ + 1));
    for (size_t i = 0; i < T_; ++i) {
        for (size_t j = 0; j < T_; ++j) out.push_back(m_[i * T_ + j] ? 'x' : '.');
        if (i + 1 < T_) out.push_back('\n');
    }
    return out;
}

AttentionMask strict_causal_mask(size_t T) {
    AttentionMask m(T);
    for (size_t i = 2; i <= T; ++i)
        for (size_t j = 1; j < i; ++j) m.allow(i, j);
    return m;
}

AttentionMask inverse_block_mask(const WindowPlan& plan) {
    AttentionMask m(plan.T);
    for (const Window& w : plan.windows)
        for (size_t q = w.first(); q <= w.last(); ++q)
            for (size_t j = 1; j <= w.start; ++j) m.allow(q, j);
    return m;
}

void simulation_mask_step(AttentionMask& mask, const WindowPlan& plan, size_t step) {
    if (step < 2 || step > plan.k)
        throw ValueError("simulation_mask_step: step must be in [2, k]");
    if (mask.size() != plan.T) throw ValueError("simulation_mask_step: mask/plan size mismatch");
    for (const Window& w : plan.windows) {
        const size_t key = w.start + step - 1;  // slot written at step-1
        if (key > plan.T) continue;
        for (size_t j = step; j <= w.len; ++j) mask.allow(w.start + j, key);
    }
}

}  // namespace beagle
