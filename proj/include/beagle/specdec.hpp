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
#include <iosfwd>
#include <vector>

#include "beagle/common.hpp"
#include "beagle/models.hpp"

namespace beagle {

enum class SDMode { kGreedy, kSampling };

struct SDConfig {
    size_t gamma = 5;              // draft tokens proposed per iteration
    SDMode mode = SDMode::kGreedy;
    // Append each drafted state to the draft cache so the next chain query
    // stays exactly position-aligned; off reuses only true states (cheaper,
    // but every later query grows one state staler).
    bool concat_draft_states = true;
    uint64_t seed = 0;  // sampling stream for token draws and accept tests
};

// Probability of keeping drafted token t: min(1, p(t) / q(t)), where p is the
// target's distribution and q the proposer's. The proposer must give its own
// proposal positive mass; q(t) <= 0 is an internal consistency error.
double accept_probability(const std::vector<double>& p, const std::vector<double>& q,
                          int32_t token);

// Correction distribution after a rejection: max(0, p - q) normalized. Throws
// Error when the positive part carries no mass (rejection was impossible).
std::vector<double> residual_distribution(const std::vector<double>& p,
                                          const std::vector<double>& q);

struct SDIteration {
    size_t tau = 0;                // tokens emitted: accepted prefix + 1
    std::vector<uint8_t> accepted;  // one flag per proposal, 0 past the first reject
    double t_draft_us = 0.0;
    double t_verify_us = 0.0;
};

struct SDMetrics {
    size_t gamma = 0;
    std::vector<SDIteration> iterations;
    size_t total_tokens = 0;  // sum of tau over iterations (pre-truncation)
    double total_draft_us = 0.0;
    double total_verify_us = 0.0;

    double mean_tau() const;  // UsageError when no iterations were logged
};

// Per-position acceptance rates, conditional on the prefix: alpha[i] counts
// only iterations whose first i proposals were all accepted. Positions never
// reached report zero.
std::vector<double> measure_alpha_profile(const SDMetrics& m);

// 1 + sum_i prod_{j<=i} alpha_j; with full-length chains every iteration this
// reproduces the empirical mean tau exactly.
double mean_tau_from_alpha(const std::vector<double>& alpha);

// mean tau / (mean T_d / mean T_v + 1). ValueError when no verify time was
// recorded.
double improvement_factor(const SDMetrics& m);

struct Proposals {
    std::vector<int32_t> tokens;  // drafted continuation, chain order
    std::vector<double> q;        // one draft distribution per token, row-major
};

struct Verdict {
    size_t accepted = 0;                 // length of the accepted prefix
    std::vector<uint8_t> accepted_mask;  // per-proposal flags
    int32_t extra = -1;                  // correction (reject) or bonus (full accept)
    bool full_accept = false;

    size_t tau() const { return accepted + 1; }
};

// One decoding session: owns both caches, the verified token sequence, and
// the sampling stream. The last verified token is always still unforwarded
// ("pending"); the verify pass forwards it together with the proposals, so
// each iteration costs exactly one incremental target forward. As a result
// both caches trail the context by one: after every verify,
// draft_cache().true_len == draft_cache().filled == target_cache().filled
// == verified() - 1.
class SDSession {
   public:
    SDSession(const TargetModel& target, const DraftHead& draft, const SDConfig& cfg);

    // Forwards the whole prompt once, seeds both caches, and stores the
    // next-token distribution for the first verify. One call per session.
    void prefill(const std::vector<int32_t>& prompt);

    // Chain-drafts `gamma` tokens. Step j embeds the previous token (the
    // pending token for j = 1), queries position verified()+j-1, and greedily
    // picks or samples from the draft head's distribution. Leftover drafted
    // states from an earlier chain are dropped first. UsageError when the
    // matching verify pass could no longer fit in the context window.
    Proposals draft_chain(size_t gamma);

    // Verifies proposals with one incremental target forward, extends the
    // context by the accepted prefix plus one correction/bonus token, rolls
    // the target cache back to the verified prefix, and resets the draft
    // cache to true states from this pass.
    Verdict verify(const Proposals& prop);

    size_t verified() const { return tokens_.size(); }
    const std::vector<int32_t>& tokens() const { return tokens_; }
    const KVCache& draft_cache() const { return dcache_; }
    const TargetKV& target_cache() const { return tcache_; }

   private:
    const TargetModel& target_;
    const DraftHead& draft_;
    SDConfig cfg_;
    TargetKV tcache_;
    KVCache dcache_;
    std::vector<int32_t> tokens_;  // prompt + everything verified since
    Rng rng_;
    bool prefilled_ = false;
    bool pending_ = false;           // tokens_.back() not yet forwarded
    std::vector<float> spare_state_;  // last prefill state, enters the cache
                                      // with the first verify
    std::vector<double> next_probs_;  // target distribution for the first
                                      // proposal while nothing is pending
};

struct SDResult {
    std::vector<int32_t> tokens;  // continuation only; cut after EOS / max_new
    SDMetrics metrics;            // raw per-iteration accounting
};

// Full loop: draft, verify, extend, until max_new tokens, EOS, or the context
// window fills. In greedy mode the output is token-for-token the target-only
// greedy continuation, for any draft weights.
SDResult sd_generate(const TargetModel& target, const DraftHead& draft, const SDConfig& cfg,
                     const std::vector<int32_t>& prompt, size_t max_new);

// Reference decoder: target-only greedy continuation, stopping at EOS,
// max_new, or a full context window.
std::vector<int32_t> target_greedy_generate(const TargetModel& target,
                                            const std::vector<int32_t>& prompt, size_t max_new);

// Cuts everything after the first occurrence of `eos` (the marker stays).
void truncate_at_eos(std::vector<int32_t>& tokens, int32_t eos);

// Per-iteration CSV: `iter,tau,T_d_us,T_v_us,accepted_mask`.
void write_eval_csv(const SDMetrics& m, std::ostream& os);

// Key-value block: alpha profile, mean tau, improvement factor, tokens/sec.
void write_eval_summary(const SDMetrics& m, std::ostream& os);

}  // namespace beagle
