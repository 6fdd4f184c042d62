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

#include "beagle/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <utility>

#include "beagle/kernels.hpp"

namespace beagle {

void TrainConfig::validate() const {
    if (k < 1) throw ValueError("train config: k must be >= 1");
    if (s < 1 || s > k) throw ValueError("train config: require 1 <= s <= k");
    if (!(lr > 0.0f)) throw ValueError("train config: lr must be positive");
    if (grad_clip < 0.0f || vloss_coeff < 0.0f || noise_std < 0.0f || weight_decay < 0.0f)
        throw ValueError("train config: coefficients must be non-negative");
    if (!(beta1 >= 0.0f && beta1 < 1.0f) || !(beta2 >= 0.0f && beta2 < 1.0f))
        throw ValueError("train config: betas must lie in [0, 1)");
    if (batch_size < 1) throw ValueError("train config: batch_size must be >= 1");
    if (context_len < 1) throw ValueError("train config: context_len must be >= 1");
}

const LossReport::Component& LossReport::component(size_t i, size_t j) const {
    for (const auto& c : components)
        if (c.i == i && c.j == j) return c;
    throw ValueError("loss report has no component (i=" + std::to_string(i) +
                     ", j=" + std::to_string(j) + ")");
}

std::vector<float> beta_star(size_t k) {
    if (k < 1) throw ValueError("beta_star: k must be >= 1");
    std::vector<float> b(k);
    for (size_t i = 1; i <= k; ++i) b[i - 1] = static_cast<float>(k - i + 1);
    return b;
}

std::vector<float> inject_state_noise(const std::vector<float>& states, float sigma, Rng& rng) {
    if (sigma < 0.0f) throw ValueError("noise std must be non-negative");
    if (sigma == 0.0f) return states;
    std::vector<float> out(states.size());
    std::normal_distribution<float> noise(0.0f, sigma);
    for (size_t i = 0; i < states.size(); ++i) out[i] = states[i] + noise(rng);
    return out;
}

DraftNodes bind_draft(Tape& tape, const DraftHead& head) {
    DraftNodes dn;
    dn.n_heads = head.config().n_heads;
    for (const auto& t : head.trainable())
        dn.trainable.push_back(tape.leaf(t.rows, t.cols, t.data, /*requires_grad=*/true));
    dn.embedding = tape.leaf(head.embedding().rows, head.embedding().cols, head.embedding().data,
                             /*requires_grad=*/false);
    return dn;
}

template <class S>
BlockNodesT<S> draft_block_nodes(TapeT<S>& tape, const DraftNodesT<S>& dn, int query_embeds,
                                 int key_states, const AttentionMask& mask,
                                 const std::vector<size_t>& qpos,
                                 const std::vector<size_t>& kpos) {
    if (dn.n_heads == 0 || tape.cols(query_embeds) % dn.n_heads != 0)
        throw ShapeError("draft block: embed width not divisible by heads");
    if (tape.rows(key_states) != mask.size())
        throw ShapeError("draft block: mask size does not match key states");
    if (tape.rows(query_embeds) != qpos.size() || tape.rows(key_states) != kpos.size())
        throw ShapeError("draft block: positions do not match row counts");
    const size_t dh = tape.cols(query_embeds) / dn.n_heads;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));

    const int qn = tape.rms_norm(query_embeds, dn.q_norm());
    const int q = tape.rope_rows(tape.matmul(qn, dn.wq()), qpos, dn.n_heads);
    const int kn = tape.rms_norm(key_states, dn.kv_norm());
    const int k = tape.rope_rows(tape.matmul(kn, dn.wk()), kpos, dn.n_heads);
    const int v = tape.matmul(kn, dn.wv());

    std::vector<size_t> mask_rows(qpos.size());
    for (size_t r = 0; r < qpos.size(); ++r) mask_rows[r] = qpos[r] - 1;
    const int att = tape.mha(q, k, v, dn.n_heads, scale, mask.data(), mask.stride(), mask_rows);
    const int y = tape.add(query_embeds, tape.matmul(att, dn.wo()));
    const int h1 = tape.silu(tape.matmul(tape.rms_norm(y, dn.mlp_norm()), dn.w1()));
    BlockNodesT<S> out;
    out.h_raw = tape.add(y, tape.matmul(h1, dn.w2()));
    out.state = tape.rms_norm(out.h_raw, dn.final_norm());
    out.logits = tape.matmul_nt(out.state, dn.embedding);
    return out;
}

namespace {

template <class S>
int32_t argmax_row(const S* row, size_t n) {
    size_t best = 0;
    for (size_t j = 1; j < n; ++j)
        if (row[j] > row[best]) best = j;
    return static_cast<int32_t>(best);
}

LossReport::Component& find_component(LossReport& rep, size_t i, size_t j) {
    for (auto& c : rep.components)
        if (c.i == i && c.j == j) return c;
    rep.components.push_back({i, j, 0.0, 0.0, 0});
    return rep.components.back();
}

}  // namespace

template <class S>
LossGraphT<S> build_general_loss(TapeT<S>& tape, const DraftNodesT<S>& dn,
                                 const std::vector<int32_t>& ids, int key_states,
                                 int vloss_targets, const std::vector<S>& target_probs,
                                 const WindowPlan& plan, const GeneralSpecT<S>& spec,
                                 S vloss_coeff) {
    const size_t T = plan.T;
    const size_t k = plan.k;
    if (T == 0) throw ValueError("general loss: empty window plan");
    if (ids.size() != T) throw ValueError("general loss: batch length does not match plan");
    if (tape.rows(key_states) != T)
        throw ValueError("general loss: key states do not match plan length");
    if (tape.rows(vloss_targets) != T)
        throw ValueError("general loss: vloss targets do not match plan length");
    if (tape.cols(vloss_targets) != tape.cols(key_states))
        throw ShapeError("general loss: key/target width mismatch");
    const size_t vocab = tape.rows(dn.embedding);
    if (target_probs.size() != T * vocab)
        throw ShapeError("general loss: target_probs must be T x vocab");
    if (spec.s < 1 || spec.s > k) throw ValueError("general loss: require 1 <= s <= k");
    const size_t l = spec.diagonal ? spec.s : spec.l;
    if (!spec.diagonal && (l < spec.s || l > k))
        throw ValueError("general loss: require s <= l <= k");
    if (spec.beta.size() != k * k) throw ValueError("general loss: beta must be k x k");
    auto beta_at = [&](size_t i, size_t j) { return spec.beta[(i - 1) * k + (j - 1)]; };
    for (size_t i = 1; i <= spec.s; ++i)
        for (size_t j = i; j <= (spec.diagonal ? i : l); ++j)
            if (!(beta_at(i, j) > S(0)))
                throw ValueError("general loss: beta weights must be positive");

    // N = number of contributing (step, lookahead, window) loss entries.
    size_t n_terms = 0;
    for (size_t i = 1; i <= spec.s; ++i)
        for (size_t j = i; j <= (spec.diagonal ? i : l); ++j)
            for (const Window& w : plan.windows)
                if (w.len >= j) ++n_terms;
    if (n_terms == 0) throw ValueError("general loss: no loss-bearing positions");

    AttentionMask mask = inverse_block_mask(plan);
    const int buffer = tape.make_buffer(key_states);
    int keys = buffer;
    std::vector<size_t> kpos(T);
    for (size_t p = 0; p < T; ++p) kpos[p] = p + 1;

    LossGraphT<S> out;
    out.report.n_terms = n_terms;
    double wce_sum = 0.0, vl_sum = 0.0;
    std::vector<int> scalars;
    std::vector<S> scalar_w;
    int prev_logits = -1;
    std::vector<int> prev_diag_row(plan.windows.size(), -1);

    for (size_t i = 1; i <= spec.s; ++i) {
        if (i >= 2) simulation_mask_step(mask, plan, i);
        const size_t jmax = spec.diagonal ? i : l;

        // Rows for this step: lookahead-major so the j == i block comes
        // first (those rows feed the next step's key slots).
        std::vector<size_t> qpos;
        std::vector<int32_t> qtok;
        std::vector<size_t> js, row_window;
        for (size_t j = i; j <= jmax; ++j)
            for (size_t wi = 0; wi < plan.windows.size(); ++wi) {
                const Window& w = plan.windows[wi];
                if (w.len < j) continue;
                const size_t q = w.start + j;
                int32_t tok = ids[q - 1];
                if (spec.sampled_tokens && j == i && i >= 2 && prev_logits >= 0 &&
                    prev_diag_row[wi] >= 0) {
                    const S* row =
                        tape.val(prev_logits) + static_cast<size_t>(prev_diag_row[wi]) * vocab;
                    tok = argmax_row(row, vocab);
                }
                qpos.push_back(q);
                qtok.push_back(tok);
                js.push_back(j);
                row_window.push_back(wi);
            }
        if (qpos.empty()) {
            prev_logits = -1;
            std::fill(prev_diag_row.begin(), prev_diag_row.end(), -1);
            continue;
        }
        const size_t R = qpos.size();

        const int qe = tape.embedding_lookup(dn.embedding, qtok);
        const BlockNodesT<S> blk = draft_block_nodes(tape, dn, qe, keys, mask, qpos, kpos);

        std::vector<S> probs(R * vocab);
        std::vector<size_t> idx0(R);
        for (size_t r = 0; r < R; ++r) {
            idx0[r] = qpos[r] - 1;
            std::copy_n(target_probs.data() + idx0[r] * vocab, vocab, probs.data() + r * vocab);
        }
        const int ce = tape.ce_soft_rows(probs, blk.logits);
        const int vl = tape.smooth_l1_rows(blk.state, tape.gather_rows(vloss_targets, idx0));

        std::vector<S> wce(R), wvl(R, vloss_coeff / static_cast<S>(n_terms));
        for (size_t r = 0; r < R; ++r) wce[r] = beta_at(i, js[r]) / static_cast<S>(n_terms);
        scalars.push_back(tape.weighted_reduce(ce, std::move(wce)));
        scalar_w.push_back(S(1));
        scalars.push_back(tape.weighted_reduce(vl, std::move(wvl)));
        scalar_w.push_back(S(1));

        const S* cev = tape.val(ce);
        const S* vlv = tape.val(vl);
        for (size_t r = 0; r < R; ++r) {
            auto& comp = find_component(out.report, i, js[r]);
            comp.ce_sum += static_cast<double>(cev[r]);
            comp.vloss_sum += static_cast<double>(vlv[r]);
            comp.count += 1;
            wce_sum += static_cast<double>(beta_at(i, js[r])) * static_cast<double>(cev[r]);
            vl_sum += static_cast<double>(vlv[r]);
        }

        size_t diag_rows = 0;
        while (diag_rows < R && js[diag_rows] == i) ++diag_rows;
        if (i < spec.s && diag_rows > 0) {
            // Predicted states replace the true states in their slots; the
            // write order mirrors the row order of the first block.
            std::vector<size_t> slots(idx0.begin(), idx0.begin() + diag_rows);
            const int src = diag_rows == R ? blk.state : tape.slice_rows(blk.state, 0, diag_rows);
            keys = tape.scatter_rows(keys, std::move(slots), src);
        }
        prev_logits = blk.logits;
        std::fill(prev_diag_row.begin(), prev_diag_row.end(), -1);
        for (size_t r = 0; r < diag_rows; ++r) prev_diag_row[row_window[r]] = static_cast<int>(r);
    }

    out.loss = tape.weighted_sum(scalars, scalar_w);
    out.report.ce = wce_sum / static_cast<double>(n_terms);
    out.report.vloss = vl_sum / static_cast<double>(n_terms);
    out.report.total = out.report.ce + static_cast<double>(vloss_coeff) * out.report.vloss;
    return out;
}

LossGraphT<float> early_stage_loss(Tape& tape, const DraftNodes& dn,
                                   const std::vector<int32_t>& ids, int key_states,
                                   int vloss_targets, const std::vector<float>& target_probs,
                                   const WindowPlan& plan, float vloss_coeff) {
    GeneralSpecT<float> spec;
    spec.s = 1;
    spec.diagonal = false;
    spec.l = plan.k;
    spec.beta.assign(plan.k * plan.k, 1.0f);
    return build_general_loss(tape, dn, ids, key_states, vloss_targets, target_probs, plan, spec,
                              vloss_coeff);
}

LossGraphT<float> late_stage_loss(Tape& tape, const DraftNodes& dn,
                                  const std::vector<int32_t>& ids, int key_states,
                                  int vloss_targets, const std::vector<float>& target_probs,
                                  const WindowPlan& plan, size_t s, float vloss_coeff,
                                  bool sampled_tokens) {
    GeneralSpecT<float> spec;
    spec.s = s;
    spec.diagonal = true;
    spec.sampled_tokens = sampled_tokens;
    spec.beta.assign(plan.k * plan.k, 1.0f);
    const std::vector<float> bs = beta_star(plan.k);
    for (size_t i = 1; i <= plan.k; ++i) spec.beta[(i - 1) * plan.k + (i - 1)] = bs[i - 1];
    return build_general_loss(tape, dn, ids, key_states, vloss_targets, target_probs, plan, spec,
                              vloss_coeff);
}

// --- optimizer ---------------------------------------------------------------

float clip_gradients(std::vector<std::vector<float>>& grads, float max_norm) {
    double ss = 0.0;
    for (size_t i = 0; i < grads.size(); ++i) {
        const double s = static_cast<double>(kernels::sumsq(grads[i].data(), grads[i].size()));
        if (!std::isfinite(s))
            throw ValueError("optimizer step aborted: gradient tensor " + std::to_string(i) +
                             " is not finite");
        ss += s;
    }
    const float norm = static_cast<float>(std::sqrt(ss));
    if (max_norm > 0.0f && norm > max_norm) {
        const float sc = max_norm / norm;
        for (auto& g : grads) kernels::scale(g.data(), g.data(), sc, g.size());
    }
    return norm;
}

AdamW::AdamW(const std::vector<NamedTensor>& params, float lr, float beta1, float beta2,
             float weight_decay)
    : lr_(lr), beta1_(beta1), beta2_(beta2), wd_(weight_decay) {
    for (const auto& p : params) {
        names_.push_back(p.name);
        m_.emplace_back(p.numel(), 0.0f);
        v_.emplace_back(p.numel(), 0.0f);
    }
}

AdamW::Outcome AdamW::step(std::vector<NamedTensor>& params,
                           std::vector<std::vector<float>>& grads, float clip, size_t warmup) {
    if (params.size() != m_.size() || grads.size() != m_.size())
        throw ValueError("optimizer step: parameter count mismatch");
    for (size_t i = 0; i < params.size(); ++i)
        if (grads[i].size() != params[i].numel())
            throw ValueError("optimizer step: gradient shape mismatch for " + params[i].name);

    Outcome out;
    out.grad_norm = clip_gradients(grads, clip);
    ++t_;
    out.lr_used = lr_;
    if (warmup > 0 && t_ < warmup)
        out.lr_used = lr_ * static_cast<float>(t_) / static_cast<float>(warmup);
    const float bias1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
    const float bias2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
    for (size_t i = 0; i < params.size(); ++i)
        kernels::adamw_update(params[i].ptr(), grads[i].data(), m_[i].data(), v_[i].data(),
                              grads[i].size(), out.lr_used, beta1_, beta2_, 1e-8f, wd_, bias1,
                              bias2);
    return out;
}

void AdamW::export_state(Checkpoint& ckpt) const {
    for (size_t i = 0; i < names_.size(); ++i) {
        NamedTensor m = make_tensor("opt.m." + names_[i], 1, m_[i].size());
        *m.data = m_[i];
        ckpt.tensors.push_back(std::move(m));
        NamedTensor v = make_tensor("opt.v." + names_[i], 1, v_[i].size());
        *v.data = v_[i];
        ckpt.tensors.push_back(std::move(v));
    }
    NamedTensor t = make_tensor("opt.t", 1, 1);
    (*t.data)[0] = static_cast<float>(t_);
    ckpt.tensors.push_back(std::move(t));
}

void AdamW::import_state(const Checkpoint& ckpt) {
    for (size_t i = 0; i < names_.size(); ++i) {
        const NamedTensor& m = ckpt.tensor("opt.m." + names_[i]);
        const NamedTensor& v = ckpt.tensor("opt.v." + names_[i]);
        if (m.numel() != m_[i].size() || v.numel() != v_[i].size())
            throw ValueError("optimizer state shape mismatch for " + names_[i]);
        m_[i] = *m.data;
        v_[i] = *v.data;
    }
    t_ = static_cast<size_t>((*ckpt.tensor("opt.t").data)[0]);
}

// --- training loops ----------------------------------------------------------

std::vector<int32_t> row_ids(const SequenceBatch& batch, size_t row) {
    if (row >= batch.rows) throw ValueError("row_ids: row out of range");
    const size_t n = batch.lengths[row];
    std::vector<int32_t> out(n);
    for (size_t c = 0; c < n; ++c) out[c] = batch.at(row, c);
    return out;
}

void split_corpus(const std::vector<Chunk>& all, size_t val_chunks, std::vector<Chunk>& train,
                  std::vector<Chunk>& val) {
    const size_t n_val = std::min(val_chunks, all.size() / 2);
    train.assign(all.begin(), all.end() - static_cast<ptrdiff_t>(n_val));
    val.assign(all.end() - static_cast<ptrdiff_t>(n_val), all.end());
}

namespace {

void write_row(std::ostream& os, size_t epoch, size_t step, const char* stage, double ce,
               double vloss, double total, double grad_norm) {
    char buf[192];
    std::snprintf(buf, sizeof buf, "%zu,%zu,%s,%.9g,%.9g,%.9g,%.9g\n", epoch, step, stage, ce,
                  vloss, total, grad_norm);
    os << buf;
}

void target_states_probs(const TargetModel& target, const StateCache* cache, const Chunk& chunk,
                         std::vector<float>& states, std::vector<float>& probs) {
    const size_t T = chunk.ids.size();
    const size_t d = target.config().d;
    const size_t vocab = target.config().vocab;
    std::vector<float> logits;
    if (cache) {
        if (cache->d != d || cache->vocab != vocab)
            throw ValueError("state cache dimensions do not match the target");
        const StateCacheDoc& doc = cache->doc(chunk.doc_id);
        if (doc.n != T) throw ValueError("state cache document length mismatch");
        states = doc.states;
        if (cache->has_logits) {
            logits = doc.logits;
        } else {
            logits.assign(T * vocab, 0.0f);
            kernels::gemm_nt(logits.data(), states.data(), target.embedding().ptr(), T, d, vocab,
                             /*accumulate=*/false);
        }
    } else {
        ForwardOut fo = target.forward(chunk.ids);
        states = std::move(fo.states);
        logits = std::move(fo.logits);
    }
    probs.assign(T * vocab, 0.0f);
    for (size_t r = 0; r < T; ++r) {
        const float* lr = logits.data() + r * vocab;
        double mx = lr[0];
        for (size_t j = 1; j < vocab; ++j) mx = std::max(mx, static_cast<double>(lr[j]));
        double denom = 0.0;
        for (size_t j = 0; j < vocab; ++j) denom += std::exp(static_cast<double>(lr[j]) - mx);
        for (size_t j = 0; j < vocab; ++j)
            probs[r * vocab + j] =
                static_cast<float>(std::exp(static_cast<double>(lr[j]) - mx) / denom);
    }
}

std::vector<std::vector<float>> zero_grads(const std::vector<NamedTensor>& params) {
    std::vector<std::vector<float>> grads;
    grads.reserve(params.size());
    for (const auto& p : params) grads.emplace_back(p.numel(), 0.0f);
    return grads;
}

}  // namespace

float validation_ce(const TargetModel& target, const std::vector<Chunk>& val) {
    if (val.empty()) throw ValueError("validation set is empty");
    const size_t vocab = target.config().vocab;
    double total = 0.0;
    size_t count = 0;
    for (const Chunk& c : val) {
        if (c.ids.size() < 2) continue;
        const ForwardOut fo = target.forward(c.ids);
        for (size_t m = 0; m + 1 < c.ids.size(); ++m) {
            const float* row = fo.logits.data() + m * vocab;
            double mx = row[0];
            for (size_t j = 1; j < vocab; ++j) mx = std::max(mx, static_cast<double>(row[j]));
            double denom = 0.0;
            for (size_t j = 0; j < vocab; ++j)
                denom += std::exp(static_cast<double>(row[j]) - mx);
            total += std::log(denom) + mx - static_cast<double>(row[c.ids[m + 1]]);
            ++count;
        }
    }
    if (count == 0) throw ValueError("validation set has no next-token targets");
    return static_cast<float>(total / static_cast<double>(count));
}

float train_target(TargetModel& target, const std::vector<Chunk>& corpus, const TrainConfig& cfg,
                   size_t epochs, float lr, std::ostream& metrics) {
    cfg.validate();
    if (epochs < 1) throw ValueError("train_target: epochs must be >= 1");
    if (!(lr > 0.0f)) throw ValueError("train_target: lr must be positive");
    std::vector<Chunk> train, val;
    split_corpus(corpus, cfg.val_chunks, train, val);
    if (train.empty()) throw ValueError("train_target: no training chunks");
    const std::vector<Chunk>& val_set = val.empty() ? train : val;

    AdamW opt(target.params(), lr, cfg.beta1, cfg.beta2, cfg.weight_decay);
    const size_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
    size_t warmup = cfg.warmup_steps;
    if (warmup == 0) warmup = std::min<size_t>(2000, steps_per_epoch * epochs / 10);

    metrics << "epoch,step,stage,ce,vloss,total,grad_norm\n";
    size_t step = 0;
    float vce = 0.0f;
    for (size_t epoch = 1; epoch <= epochs; ++epoch) {
        std::vector<Chunk> order = train;
        shuffle_chunks(order, derive_seed(cfg.seed, 0xC000 + epoch));
        for (size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            const size_t bn = std::min(cfg.batch_size, order.size() - b0);
            auto grads = zero_grads(target.params());
            double ce_mean = 0.0;
            size_t contributing = 0;
            for (size_t bi = 0; bi < bn; ++bi) {
                const Chunk& c = order[b0 + bi];
                if (c.ids.size() < 2) continue;
                const size_t n_pred = c.ids.size() - 1;
                Tape tape;
                TargetModel::GraphOut g = target.build_graph(tape, c.ids);
                const std::vector<int32_t> next(c.ids.begin() + 1, c.ids.end());
                const int lg = tape.slice_rows(g.logits, 0, n_pred);
                const int ce = tape.ce_hard_rows(lg, next);
                const int loss = tape.weighted_reduce(
                    ce, std::vector<float>(n_pred, 1.0f / static_cast<float>(n_pred)));
                tape.backward(loss);
                for (size_t pi = 0; pi < g.param_nodes.size(); ++pi)
                    tape.export_grad(g.param_nodes[pi], grads[pi].data());
                ce_mean += static_cast<double>(tape.scalar(loss));
                ++contributing;
            }
            if (contributing == 0) continue;
            if (contributing > 1)
                for (auto& g : grads)
                    kernels::scale(g.data(), g.data(), 1.0f / static_cast<float>(contributing),
                                   g.size());
            const AdamW::Outcome o = opt.step(target.params(), grads, cfg.grad_clip, warmup);
            ++step;
            ce_mean /= static_cast<double>(contributing);
            if (!std::isfinite(ce_mean)) throw Error("target training diverged: loss is not finite");
            write_row(metrics, epoch, step, "target", ce_mean, 0.0, ce_mean, o.grad_norm);
        }
        vce = validation_ce(target, val_set);
        write_row(metrics, epoch, step, "val", vce, 0.0, vce, 0.0);
    }
    return vce;
}

DraftTrainer::DraftTrainer(DraftHead draft, const TrainConfig& cfg)
    : draft_(std::move(draft)),
      cfg_(cfg),
      opt_(draft_.trainable(), cfg.lr, cfg.beta1, cfg.beta2, cfg.weight_decay) {
    cfg_.validate();
}

DraftTrainer DraftTrainer::resume(const Checkpoint& ckpt, const TrainConfig& cfg) {
    DraftTrainer t(DraftHead::from_checkpoint(ckpt), cfg);
    t.opt_.import_state(ckpt);
    const NamedTensor& meta = ckpt.tensor("train.meta");
    if (meta.numel() != 2) throw ValueError("train.meta must hold {epochs, steps}");
    t.epochs_done_ = static_cast<size_t>((*meta.data)[0]);
    t.global_step_ = static_cast<size_t>((*meta.data)[1]);
    return t;
}

Checkpoint DraftTrainer::to_checkpoint() const {
    Checkpoint c = draft_.to_checkpoint();
    opt_.export_state(c);
    NamedTensor meta = make_tensor("train.meta", 1, 2);
    (*meta.data)[0] = static_cast<float>(epochs_done_);
    (*meta.data)[1] = static_cast<float>(global_step_);
    c.tensors.push_back(std::move(meta));
    return c;
}

LossReport DraftTrainer::chunk_loss(const Chunk& chunk, const TargetModel& target,
                                    const StateCache* cache, bool late, size_t eps,
                                    Rng* noise_rng, std::vector<std::vector<float>>* grads) {
    const size_t T = chunk.ids.size();
    const size_t d = draft_.config().d;
    std::vector<float> states, probs;
    target_states_probs(target, cache, chunk, states, probs);
    const WindowPlan plan = window_plan(T, cfg_.k, eps);
    const std::vector<float> keys = (noise_rng && cfg_.noise_std > 0.0f)
                                        ? inject_state_noise(states, cfg_.noise_std, *noise_rng)
                                        : states;
    Tape tape;
    const DraftNodes dn = bind_draft(tape, draft_);
    const int key_node = tape.constant(T, d, keys);
    const int tgt_node = tape.constant(T, d, states);
    const LossGraphT<float> lg =
        late ? late_stage_loss(tape, dn, chunk.ids, key_node, tgt_node, probs, plan, cfg_.s,
                               cfg_.vloss_coeff, cfg_.sampled_sim_tokens)
             : early_stage_loss(tape, dn, chunk.ids, key_node, tgt_node, probs, plan,
                                cfg_.vloss_coeff);
    if (grads) {
        tape.backward(lg.loss);
        for (size_t i = 0; i < dn.trainable.size(); ++i)
            tape.export_grad(dn.trainable[i], (*grads)[i].data());
    }
    return lg.report;
}

void DraftTrainer::run(const std::vector<Chunk>& corpus, const TargetModel& target,
                       std::ostream& metrics, const std::string& ckpt_path,
                       const StateCache* cache, size_t stop_after_epoch) {
    cfg_.validate();
    if (target.config().d != draft_.config().d ||
        target.config().vocab != draft_.config().vocab)
        throw ValueError("target and draft configurations do not match");
    std::vector<Chunk> train, val;
    split_corpus(corpus, cfg_.val_chunks, train, val);
    if (train.empty()) throw ValueError("draft training: no training chunks");

    const size_t total_epochs = cfg_.epochs_early + cfg_.epochs_late;
    const size_t steps_per_epoch = (train.size() + cfg_.batch_size - 1) / cfg_.batch_size;
    size_t warmup = cfg_.warmup_steps;
    if (warmup == 0) warmup = std::min<size_t>(2000, steps_per_epoch * total_epochs / 10);

    if (epochs_done_ == 0) metrics << "epoch,step,stage,ce,vloss,total,grad_norm\n";
    for (size_t epoch = epochs_done_ + 1; epoch <= total_epochs; ++epoch) {
        const bool late = epoch > cfg_.epochs_early;
        std::vector<Chunk> order = train;
        shuffle_chunks(order, derive_seed(cfg_.seed, 0xE000 + epoch));
        Rng eps_rng = make_rng(derive_seed(cfg_.seed, 0xA000 + epoch));
        Rng noise_rng = make_rng(derive_seed(cfg_.seed, 0xB000 + epoch));

        for (size_t b0 = 0; b0 < order.size(); b0 += cfg_.batch_size) {
            const size_t bn = std::min(cfg_.batch_size, order.size() - b0);
            const size_t eps = static_cast<size_t>(eps_rng() % cfg_.k);  // fresh per batch
            auto grads = zero_grads(draft_.trainable());
            double ce = 0.0, vloss = 0.0, total = 0.0;
            for (size_t bi = 0; bi < bn; ++bi) {
                const LossReport r =
                    chunk_loss(order[b0 + bi], target, cache, late, eps, &noise_rng, &grads);
                ce += r.ce;
                vloss += r.vloss;
                total += r.total;
            }
            if (bn > 1)
                for (auto& g : grads)
                    kernels::scale(g.data(), g.data(), 1.0f / static_cast<float>(bn), g.size());
            const AdamW::Outcome o = opt_.step(draft_.trainable(), grads, cfg_.grad_clip, warmup);
            ++global_step_;
            ce /= bn;
            vloss /= bn;
            total /= bn;
            if (!std::isfinite(total)) throw Error("draft training diverged: loss is not finite");
            write_row(metrics, epoch, global_step_, late ? "late" : "early", ce, vloss, total,
                      o.grad_norm);
        }

        if (!val.empty()) {
            double ce = 0.0, vloss = 0.0, total = 0.0;
            for (const Chunk& c : val) {
                const LossReport r = chunk_loss(c, target, cache, late, /*eps=*/0,
                                                /*noise_rng=*/nullptr, /*grads=*/nullptr);
                ce += r.ce;
                vloss += r.vloss;
                total += r.total;
            }
            const double n = static_cast<double>(val.size());
            write_row(metrics, epoch, global_step_, "val", ce / n, vloss / n, total / n, 0.0);
        }

        epochs_done_ = epoch;
        if (!ckpt_path.empty()) save_checkpoint(to_checkpoint(), ckpt_path);
        if (stop_after_epoch != 0 && epoch >= stop_after_epoch) break;
    }
}

StateCache build_state_cache(const TargetModel& target, const std::vector<Chunk>& chunks,
                             const std::array<uint8_t, 32>& target_hash, bool store_logits) {
    StateCache sc;
    sc.target_hash = target_hash;
    sc.has_logits = store_logits;
    sc.d = target.config().d;
    sc.vocab = target.config().vocab;
    sc.docs.reserve(chunks.size());
    for (const Chunk& c : chunks) {
        ForwardOut fo = target.forward(c.ids);
        StateCacheDoc doc;
        doc.doc_id = c.doc_id;
        doc.n = c.ids.size();
        doc.states = std::move(fo.states);
        if (store_logits) doc.logits = std::move(fo.logits);
        sc.docs.push_back(std::move(doc));
    }
    return sc;
}

// Explicit instantiations: the float engine is the production path, the
// double engine backs the finite-difference gradient checks.
template BlockNodesT<float> draft_block_nodes<float>(TapeT<float>&, const DraftNodesT<float>&,
                                                     int, int, const AttentionMask&,
                                                     const std::vector<size_t>&,
                                                     const std::vector<size_t>&);
template BlockNodesT<double> draft_block_nodes<double>(TapeT<double>&, const DraftNodesT<double>&,
                                                       int, int, const AttentionMask&,
                                                       const std::vector<size_t>&,
                                                       const std::vector<size_t>&);
template LossGraphT<float> build_general_loss<float>(TapeT<float>&, const DraftNodesT<float>&,
                                                     const std::vector<int32_t>&, int, int,
                                                     const std::vector<float>&, const WindowPlan&,
                                                     const GeneralSpecT<float>&, float);
template LossGraphT<double> build_general_loss<double>(TapeT<double>&, const DraftNodesT<double>&,
                                                       const std::vector<int32_t>&, int, int,
                                                       const std::vector<double>&,
                                                       const WindowPlan&,
                                                       const GeneralSpecT<double>&, double);

}  // namespace beagle
