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

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "beagle/checkpoint.hpp"
#include "beagle/common.hpp"
#include "beagle/data.hpp"
#include "beagle/masks.hpp"
#include "beagle/models.hpp"
#include "beagle/tensor.hpp"

namespace beagle {

struct TrainConfig {
    size_t k = 5;             // window size
    size_t s = 4;             // simulation steps, s <= k
    size_t epochs_early = 10;
    size_t epochs_late = 10;
    float lr = 3e-5f;         // constant learning rate
    size_t warmup_steps = 0;  // 0 -> min(2000, 10% of total steps)
    float beta1 = 0.9f;
    float beta2 = 0.95f;
    float weight_decay = 0.0f;
    float grad_clip = 0.5f;     // global norm
    float vloss_coeff = 10.0f;  // state-matching regularizer weight
    float noise_std = 0.2f;     // Gaussian noise on key states
    size_t batch_size = 1;
    uint64_t seed = 0;
    size_t context_len = 255;      // chunk payload length
    bool sampled_sim_tokens = false;  // token-sampled simulation variant
    size_t val_chunks = 16;

    void validate() const;
};

// Per-batch loss breakdown. The invariant total == ce + coeff * vloss holds
// by construction; n_terms is the number of contributing loss entries N.
struct LossReport {
    double total = 0.0;
    double ce = 0.0;     // beta-weighted cross-entropy part, already / N
    double vloss = 0.0;  // state-matching part, already / N
    size_t n_terms = 0;

    struct Component {
        size_t i = 0;  // simulation step
        size_t j = 0;  // lookahead within the window
        double ce_sum = 0.0;     // unweighted sum over windows
        double vloss_sum = 0.0;  // unweighted sum over windows
        size_t count = 0;
    };
    std::vector<Component> components;

    const Component& component(size_t i, size_t j) const;
};

// beta*_i = k - i + 1 for i = 1..k (the diagonal weights of the late loss)
std::vector<float> beta_star(size_t k);

// Additive Gaussian noise, std sigma. sigma == 0 returns the input unchanged
// and does not consume randomness.
std::vector<float> inject_state_noise(const std::vector<float>& states, float sigma, Rng& rng);

// --- loss graph engine -----------------------------------------------------

// Tape node ids of the draft parameters, in trainable() order:
// wq, wk, wv, wo, q_norm, kv_norm, w1, w2, mlp_norm, final_norm.
template <class S>
struct DraftNodesT {
    std::vector<int> trainable;
    int embedding = -1;
    size_t n_heads = 0;

    int wq() const { return trainable[0]; }
    int wk() const { return trainable[1]; }
    int wv() const { return trainable[2]; }
    int wo() const { return trainable[3]; }
    int q_norm() const { return trainable[4]; }
    int kv_norm() const { return trainable[5]; }
    int w1() const { return trainable[6]; }
    int w2() const { return trainable[7]; }
    int mlp_norm() const { return trainable[8]; }
    int final_norm() const { return trainable[9]; }
};

using DraftNodes = DraftNodesT<float>;

// Binds the head's parameter storage onto the tape (gradients enabled) and
// the frozen embedding (no gradient).
DraftNodes bind_draft(Tape& tape, const DraftHead& head);

// One cross-attention block on the tape; mirrors DraftHead::block_graph but
// is generic over the scalar type so the loss family can be checked against
// finite differences at f64.
template <class S>
struct BlockNodesT {
    int h_raw = -1;
    int state = -1;
    int logits = -1;
};

template <class S>
BlockNodesT<S> draft_block_nodes(TapeT<S>& tape, const DraftNodesT<S>& dn, int query_embeds,
                                 int key_states, const AttentionMask& mask,
                                 const std::vector<size_t>& qpos,
                                 const std::vector<size_t>& kpos);

// The generalized two-stage loss family: simulation steps i = 1..s, window
// lookaheads j = i..(diagonal ? i : l), weight beta[(i-1)*k + (j-1)] on each
// CE term. The early loss is (s=1, l=k, beta=1); the late loss is
// (s, diagonal, beta*).
template <class S>
struct GeneralSpecT {
    size_t s = 1;
    bool diagonal = false;
    size_t l = 0;              // used when !diagonal
    std::vector<S> beta;       // k x k row-major, indexed [(i-1)*k + (j-1)]
    bool sampled_tokens = false;  // queries at j == i, i >= 2 use argmax drafts
};

template <class S>
struct LossGraphT {
    int loss = -1;  // scalar node: (sum beta*CE + coeff * sum vloss) / N
    LossReport report;
};

// ids: one chunk (BOS + payload), length plan.T. key_states: [T x d] node of
// (noised) states used as attention context. vloss_targets: [T x d] node of
// clean regression targets. target_probs: T x vocab row-major distributions.
template <class S>
LossGraphT<S> build_general_loss(TapeT<S>& tape, const DraftNodesT<S>& dn,
                                 const std::vector<int32_t>& ids, int key_states,
                                 int vloss_targets, const std::vector<S>& target_probs,
                                 const WindowPlan& plan, const GeneralSpecT<S>& spec,
                                 S vloss_coeff);

// Convenience wrappers over the engine (float tape).
LossGraphT<float> early_stage_loss(Tape& tape, const DraftNodes& dn,
                                   const std::vector<int32_t>& ids, int key_states,
                                   int vloss_targets, const std::vector<float>& target_probs,
                                   const WindowPlan& plan, float vloss_coeff);
LossGraphT<float> late_stage_loss(Tape& tape, const DraftNodes& dn,
                                  const std::vector<int32_t>& ids, int key_states,
                                  int vloss_targets, const std::vector<float>& target_probs,
                                  const WindowPlan& plan, size_t s, float vloss_coeff,
                                  bool sampled_tokens = false);

// --- optimizer ---------------------------------------------------------------

// Scales gradients in place to the given global norm bound; returns the
// pre-clip norm. Non-finite gradients raise ValueError.
float clip_gradients(std::vector<std::vector<float>>& grads, float max_norm);

class AdamW {
   public:
    AdamW(const std::vector<NamedTensor>& params, float lr, float beta1, float beta2,
          float weight_decay);

    struct Outcome {
        float grad_norm = 0.0f;  // before clipping
        float lr_used = 0.0f;
    };
    // Clips, then applies one decoupled-weight-decay Adam step with linear
    // warmup over the first `warmup` steps. `params` must be the vector the
    // optimizer was constructed for.
    Outcome step(std::vector<NamedTensor>& params, std::vector<std::vector<float>>& grads,
                 float clip, size_t warmup);

    size_t steps_done() const { return t_; }
    // Optimizer state rides along in checkpoints as extra named tensors
    // ("opt.m.<param>", "opt.v.<param>", "opt.t").
    void export_state(Checkpoint& ckpt) const;
    void import_state(const Checkpoint& ckpt);

   private:
    std::vector<std::string> names_;
    std::vector<std::vector<float>> m_, v_;
    size_t t_ = 0;
    float lr_, beta1_, beta2_, wd_;
};

// --- training loops ----------------------------------------------------------

std::vector<int32_t> row_ids(const SequenceBatch& batch, size_t row);

// Deterministic tail split: the last `val_chunks` chunks become validation.
void split_corpus(const std::vector<Chunk>& all, size_t val_chunks, std::vector<Chunk>& train,
                  std::vector<Chunk>& val);

// Pretrains the target LM with next-token CE. Returns final validation CE
// (nats/token). Metric rows use stage "target" / "val".
float train_target(TargetModel& target, const std::vector<Chunk>& corpus,
                   const TrainConfig& cfg, size_t epochs, float lr, std::ostream& metrics);

float validation_ce(const TargetModel& target, const std::vector<Chunk>& val);

// Two-stage draft training with checkpoint/resume. Owns the optimizer state;
// to_checkpoint() embeds it so resume() reproduces an uninterrupted run.
class DraftTrainer {
   public:
    DraftTrainer(DraftHead draft, const TrainConfig& cfg);
    static DraftTrainer resume(const Checkpoint& ckpt, const TrainConfig& cfg);

    // Runs epochs next_epoch()..(epochs_early+epochs_late), appending CSV
    // rows `epoch, step, stage, ce, vloss, total, grad_norm`. If ckpt_path is
    // non-empty the trainer checkpoints after every epoch. `cache` optionally
    // provides precomputed target states (must match the target).
    // stop_after_epoch != 0 interrupts after that epoch completes; a later
    // resume() continues the identical schedule.
    void run(const std::vector<Chunk>& corpus, const TargetModel& target, std::ostream& metrics,
             const std::string& ckpt_path, const StateCache* cache = nullptr,
             size_t stop_after_epoch = 0);

    DraftHead& draft() { return draft_; }
    size_t next_epoch() const { return epochs_done_ + 1; }
    Checkpoint to_checkpoint() const;

   private:
    // Builds one chunk's loss graph; runs backward and accumulates gradients
    // into `grads` unless it is null (evaluation).
    LossReport chunk_loss(const Chunk& chunk, const TargetModel& target, const StateCache* cache,
                          bool late, size_t eps, Rng* noise_rng,
                          std::vector<std::vector<float>>* grads);

    DraftHead draft_;
    TrainConfig cfg_;
    AdamW opt_;
    size_t epochs_done_ = 0;
    size_t global_step_ = 0;
};

// Builds the frozen-target state cache for a corpus (states + logits are
// bit-identical to a fresh forward; logits stored so has_logits callers can
// skip the head matmul).
StateCache build_state_cache(const TargetModel& target, const std::vector<Chunk>& chunks,
                             const std::array<uint8_t, 32>& target_hash, bool store_logits);

}  // namespace beagle
