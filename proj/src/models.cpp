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

#include "beagle/models.hpp"

#include <cmath>
#include <cstring>

#include "beagle/kernels.hpp"

namespace beagle {

namespace {

constexpr float kNormEps = 1e-6f;
constexpr double kRopeBase = 10000.0;
constexpr float kInitStd = 0.02f;

void fill_normal(NamedTensor& t, Rng& rng, float std_dev) {
    std::normal_distribution<float> dist(0.0f, std_dev);
    for (auto& v : *t.data) v = dist(rng);
}

void fill_ones(NamedTensor& t) {
    for (auto& v : *t.data) v = 1.0f;
}

// y = x * gain / rms(x), row-wise. Mirrors the tape-layer formula.
void rms_rows(float* y, const float* x, const float* gain, size_t rows, size_t d) {
    for (size_t r = 0; r < rows; ++r) {
        const float ms = kernels::sumsq(x + r * d, d) / static_cast<float>(d);
        const float inv = 1.0f / std::sqrt(ms + kNormEps);
        kernels::scale_mul(y + r * d, x + r * d, gain, inv, d);
    }
}

// In-place rotary rotation of per-head (even, odd) pairs; 1-based positions.
void rope_rows(float* rows, size_t n_rows, const size_t* pos, size_t n_heads, size_t dh) {
    const size_t d = n_heads * dh;
    for (size_t r = 0; r < n_rows; ++r) {
        float* row = rows + r * d;
        for (size_t h = 0; h < n_heads; ++h) {
            float* ph = row + h * dh;
            for (size_t a = 0; a < dh / 2; ++a) {
                const double ang = static_cast<double>(pos[r]) *
                                   std::pow(kRopeBase, -2.0 * static_cast<double>(a) /
                                                           static_cast<double>(dh));
                const float c = static_cast<float>(std::cos(ang));
                const float s = static_cast<float>(std::sin(ang));
                const float e = ph[2 * a], o = ph[2 * a + 1];
                ph[2 * a] = c * e - s * o;
                ph[2 * a + 1] = s * e + c * o;
            }
        }
    }
}

void silu_inplace(float* x, size_t n) {
    for (size_t i = 0; i < n; ++i) x[i] = x[i] / (1.0f + std::exp(-x[i]));
}

// One query row attending to an explicit ascending set of key rows, all
// heads. Keys/values are [*, d] row-major with per-head slices; an empty set
// yields a zero output row. Accumulation order is fixed by the index order,
// so results never depend on how queries are batched.
void attend_row(float* out, const float* q, const float* k_rows, const float* v_rows,
                const size_t* idx, size_t n_idx, size_t n_heads, size_t dh,
                std::vector<float>& scratch) {
    const size_t d = n_heads * dh;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    std::memset(out, 0, d * sizeof(float));
    if (n_idx == 0) return;
    scratch.resize(n_idx);
    for (size_t h = 0; h < n_heads; ++h) {
        const float* qh = q + h * dh;
        float mx = -std::numeric_limits<float>::infinity();
        for (size_t t = 0; t < n_idx; ++t) {
            scratch[t] = kernels::dot(qh, k_rows + idx[t] * d + h * dh, dh) * scale;
            mx = std::max(mx, scratch[t]);
        }
        float denom = 0.0f;
        for (size_t t = 0; t < n_idx; ++t) {
            scratch[t] = std::exp(scratch[t] - mx);
            denom += scratch[t];
        }
        float* oh = out + h * dh;
        for (size_t t = 0; t < n_idx; ++t)
            kernels::axpy(oh, scratch[t] / denom, v_rows + idx[t] * d + h * dh, dh);
    }
}

std::vector<size_t> iota_positions(size_t first, size_t n) {
    std::vector<size_t> p(n);
    for (size_t i = 0; i < n; ++i) p[i] = first + i;
    return p;
}

}  // namespace

// --- target model ----------------------------------------------------------

void TargetKV::truncate(size_t n) {
    if (n > filled) throw UsageError("TargetKV::truncate beyond filled length");
    filled = n;
}

TargetModel::TargetModel(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    cfg_ = cfg;
    Rng rng = make_rng(derive_seed(seed, /*stream=*/2));
    const size_t d = cfg.d;
    auto mat = [&](std::string name, size_t r, size_t c) {
        NamedTensor t = make_tensor(std::move(name), r, c);
        fill_normal(t, rng, kInitStd);
        params_.push_back(std::move(t));
    };
    auto gain = [&](std::string name) {
        NamedTensor t = make_tensor(std::move(name), 1, d);
        fill_ones(t);
        params_.push_back(std::move(t));
    };
    mat("embedding", cfg.vocab, d);
    for (uint32_t l = 0; l < cfg.n_layers; ++l) {
        const std::string b = "blocks." + std::to_string(l) + ".";
        gain(b + "attn.norm");
        mat(b + "attn.wq", d, d);
        mat(b + "attn.wk", d, d);
        mat(b + "attn.wv", d, d);
        mat(b + "attn.wo", d, d);
        gain(b + "mlp.norm");
        mat(b + "mlp.w1", d, 4 * d);
        mat(b + "mlp.w2", 4 * d, d);
    }
    gain("final_norm");
}

TargetModel TargetModel::from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.role != CheckpointRole::kTarget)
        throw ValueError("checkpoint role is not target");
    ckpt.config.validate();
    TargetModel m(ckpt.config, /*seed=*/0);
    for (auto& param : m.params_) {
        const NamedTensor& src = ckpt.tensor(param.name);
        if (src.rows != param.rows || src.cols != param.cols)
            throw ValueError("checkpoint tensor " + param.name + " has unexpected shape");
        param.data = src.data;  // adopt the loaded storage
    }
    return m;
}

Checkpoint TargetModel::to_checkpoint() const {
    Checkpoint c;
    c.config = cfg_;
    c.role = CheckpointRole::kTarget;
    c.tensors = params_;
    return c;
}

const NamedTensor& TargetModel::p(const std::string& name) const {
    for (const auto& t : params_)
        if (t.name == name) return t;
    throw ValueError("target model has no parameter " + name);
}

size_t TargetModel::param_count() const {
    size_t n = 0;
    for (const auto& t : params_) n += t.numel();
    return n;
}

TargetKV TargetModel::make_cache() const {
    TargetKV c;
    c.n_layers = cfg_.n_layers;
    c.d = cfg_.d;
    c.capacity = cfg_.t_max;
    c.k.assign(c.n_layers, std::vector<float>(c.capacity * c.d, 0.0f));
    c.v.assign(c.n_layers, std::vector<float>(c.capacity * c.d, 0.0f));
    return c;
}

ForwardOut TargetModel::forward_incremental(TargetKV& cache, const int32_t* tokens,
                                            size_t n) const {
    const size_t d = cfg_.d, heads = cfg_.n_heads, dh = cfg_.head_dim();
    if (n == 0) throw ValueError("forward of zero tokens");
    if (cache.filled + n > cfg_.t_max) throw UsageError("context exceeds T_max");
    const size_t m0 = cache.filled;
    const float* emb = embedding().ptr();

    std::vector<float> x(n * d);
    for (size_t r = 0; r < n; ++r) {
        const int32_t t = tokens[r];
        if (t < 0 || static_cast<uint32_t>(t) >= cfg_.vocab)
            throw ValueError("token id out of range: " + std::to_string(t));
        std::memcpy(x.data() + r * d, emb + static_cast<size_t>(t) * d, d * sizeof(float));
    }
    const std::vector<size_t> pos = iota_positions(m0 + 1, n);

    std::vector<float> xn(n * d), q(n * d), att(n * d), h1(n * 4 * d), h2(n * d), scratch;
    std::vector<size_t> idx;
    for (uint32_t l = 0; l < cfg_.n_layers; ++l) {
        const std::string b = "blocks." + std::to_string(l) + ".";
        rms_rows(xn.data(), x.data(), p(b + "attn.norm").ptr(), n, d);
        kernels::gemm_nn(q.data(), xn.data(), p(b + "attn.wq").ptr(), n, d, d, false);
        float* krows = cache.k[l].data() + m0 * d;
        float* vrows = cache.v[l].data() + m0 * d;
        kernels::gemm_nn(krows, xn.data(), p(b + "attn.wk").ptr(), n, d, d, false);
        kernels::gemm_nn(vrows, xn.data(), p(b + "attn.wv").ptr(), n, d, d, false);
        rope_rows(q.data(), n, pos.data(), heads, dh);
        rope_rows(krows, n, pos.data(), heads, dh);
        for (size_t r = 0; r < n; ++r) {
            idx.resize(m0 + r + 1);  // causal: keys 1..m0+r+1 (self included)
            for (size_t j = 0; j < idx.size(); ++j) idx[j] = j;
            attend_row(att.data() + r * d, q.data() + r * d, cache.k[l].data(),
                       cache.v[l].data(), idx.data(), idx.size(), heads, dh, scratch);
        }
        kernels::gemm_nn(h2.data(), att.data(), p(b + "attn.wo").ptr(), n, d, d, false);
        kernels::add(x.data(), x.data(), h2.data(), n * d);
        rms_rows(xn.data(), x.data(), p(b + "mlp.norm").ptr(), n, d);
        kernels::gemm_nn(h1.data(), xn.data(), p(b + "mlp.w1").ptr(), n, d, 4 * d, false);
        silu_inplace(h1.data(), n * 4 * d);
        kernels::gemm_nn(h2.data(), h1.data(), p(b + "mlp.w2").ptr(), n, 4 * d, d, false);
        kernels::add(x.data(), x.data(), h2.data(), n * d);
    }
    cache.filled = m0 + n;

    ForwardOut out;
    out.rows = n;
    out.d = d;
    out.vocab = cfg_.vocab;
    out.states.resize(n * d);
    rms_rows(out.states.data(), x.data(), p("final_norm").ptr(), n, d);
    out.logits.resize(n * cfg_.vocab);
    kernels::gemm_nt(out.logits.data(), out.states.data(), emb, n, d, cfg_.vocab, false);
    return out;
}

ForwardOut TargetModel::forward(const std::vector<int32_t>& tokens) const {
    TargetKV cache = make_cache();
    return forward_incremental(cache, tokens.data(), tokens.size());
}

TargetModel::GraphOut TargetModel::build_graph(Tape& tape, const std::vector<int32_t>& ids) const {
    const size_t n = ids.size();
    const size_t heads = cfg_.n_heads, dh = cfg_.head_dim();
    if (n == 0) throw ValueError("empty id row");
    if (n > cfg_.t_max) throw UsageError("context exceeds T_max");

    GraphOut g;
    for (const auto& t : params_)
        g.param_nodes.push_back(tape.leaf(t.rows, t.cols, t.data, /*requires_grad=*/true));
    auto node = [&](const std::string& name) {
        for (size_t i = 0; i < params_.size(); ++i)
            if (params_[i].name == name) return g.param_nodes[i];
        throw ValueError("target model has no parameter " + name);
    };

    // causal self-attention mask: key j visible to query i iff j <= i
    std::vector<uint8_t> causal(n * n, 0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j <= i; ++j) causal[i * n + j] = 1;
    std::vector<size_t> mask_rows(n);
    for (size_t i = 0; i < n; ++i) mask_rows[i] = i;
    const std::vector<size_t> pos = iota_positions(1, n);
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    const int emb = node("embedding");
    int x = tape.embedding_lookup(emb, ids);
    for (uint32_t l = 0; l < cfg_.n_layers; ++l) {
        const std::string b = "blocks." + std::to_string(l) + ".";
        const int xn = tape.rms_norm(x, node(b + "attn.norm"));
        const int qr = tape.rope_rows(tape.matmul(xn, node(b + "attn.wq")), pos, heads);
        const int kr = tape.rope_rows(tape.matmul(xn, node(b + "attn.wk")), pos, heads);
        const int v = tape.matmul(xn, node(b + "attn.wv"));
        const int att = tape.mha(qr, kr, v, heads, scale, causal.data(), n, mask_rows);
        x = tape.add(x, tape.matmul(att, node(b + "attn.wo")));
        const int xm = tape.rms_norm(x, node(b + "mlp.norm"));
        const int h1 = tape.silu(tape.matmul(xm, node(b + "mlp.w1")));
        x = tape.add(x, tape.matmul(h1, node(b + "mlp.w2")));
    }
    g.states = tape.rms_norm(x, node("final_norm"));
    g.logits = tape.matmul_nt(g.states, emb);
    return g;
}

// --- draft head --------------------------------------------------------------

DraftHead::DraftHead(const ModelConfig& cfg, uint64_t seed, NamedTensor shared_embedding) {
    cfg.validate();
    if (shared_embedding.rows != cfg.vocab || shared_embedding.cols != cfg.d)
        throw ValueError("embedding shape does not match config");
    cfg_ = cfg;
    embedding_ = std::move(shared_embedding);
    embedding_.name = "embedding";
    Rng rng = make_rng(derive_seed(seed, /*stream=*/3));
    const size_t d = cfg.d;
    auto mat = [&](std::string name, size_t r, size_t c) {
        NamedTensor t = make_tensor(std::move(name), r, c);
        fill_normal(t, rng, kInitStd);
        params_.push_back(std::move(t));
    };
    auto gain = [&](std::string name) {
        NamedTensor t = make_tensor(std::move(name), 1, d);
        fill_ones(t);
        params_.push_back(std::move(t));
    };
    mat("attn.wq", d, d);
    mat("attn.wk", d, d);
    mat("attn.wv", d, d);
    mat("attn.wo", d, d);
    gain("attn.q_norm");
    gain("attn.kv_norm");
    mat("mlp.w1", d, 4 * d);
    mat("mlp.w2", 4 * d, d);
    gain("mlp.norm");
    gain("final_norm");
}

DraftHead DraftHead::from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.role != CheckpointRole::kDraft) throw ValueError("checkpoint role is not draft");
    ckpt.config.validate();
    const NamedTensor& emb = ckpt.tensor("embedding");
    DraftHead h(ckpt.config, /*seed=*/0, emb);
    for (auto& param : h.params_) {
        const NamedTensor& src = ckpt.tensor(param.name);
        if (src.rows != param.rows || src.cols != param.cols)
            throw ValueError("checkpoint tensor " + param.name + " has unexpected shape");
        param.data = src.data;
    }
    return h;
}

Checkpoint DraftHead::to_checkpoint() const {
    Checkpoint c;
    c.config = cfg_;
    c.role = CheckpointRole::kDraft;
    c.tensors.push_back(embedding_);
    for (const auto& t : params_) c.tensors.push_back(t);
    return c;
}

const NamedTensor& DraftHead::p(const std::string& name) const {
    for (const auto& t : params_)
        if (t.name == name) return t;
    throw ValueError("draft head has no parameter " + name);
}

size_t DraftHead::trainable_param_count() const {
    size_t n = 0;
    for (const auto& t : params_) n += t.numel();
    return n;
}

KVCache DraftHead::make_cache(size_t draft_margin) const {
    KVCache c;
    c.d = cfg_.d;
    c.capacity = cfg_.t_max + draft_margin;
    c.k.assign(c.capacity * c.d, 0.0f);
    c.v.assign(c.capacity * c.d, 0.0f);
    return c;
}

void DraftHead::kv_append(KVCache& cache, const float* state, bool is_true) const {
    const size_t d = cfg_.d;
    if (cache.filled >= cache.capacity) throw UsageError("KV cache capacity exceeded");
    if (is_true && cache.filled > cache.true_len)
        throw UsageError("true entry appended after draft entries; reset first");
    std::vector<float> kn(d);
    rms_rows(kn.data(), state, p("attn.kv_norm").ptr(), 1, d);
    float* krow = cache.k.data() + cache.filled * d;
    float* vrow = cache.v.data() + cache.filled * d;
    kernels::gemm_nn(krow, kn.data(), p("attn.wk").ptr(), 1, d, d, false);
    kernels::gemm_nn(vrow, kn.data(), p("attn.wv").ptr(), 1, d, d, false);
    const size_t pos = cache.filled + 1;
    rope_rows(krow, 1, &pos, cfg_.n_heads, cfg_.head_dim());
    cache.filled += 1;
    if (is_true) cache.true_len += 1;
}

void DraftHead::kv_reset_to_true(KVCache& cache, const float* states, size_t n) const {
    cache.filled = cache.true_len;
    for (size_t i = 0; i < n; ++i) kv_append(cache, states + i * cfg_.d, /*is_true=*/true);
}

std::vector<float> DraftHead::embed(int32_t token) const {
    if (token < 0 || static_cast<uint32_t>(token) >= cfg_.vocab)
        throw ValueError("token id out of range: " + std::to_string(token));
    std::vector<float> e(cfg_.d);
    std::memcpy(e.data(), embedding_.ptr() + static_cast<size_t>(token) * cfg_.d,
                cfg_.d * sizeof(float));
    return e;
}

std::vector<float> DraftHead::head_logits(const float* states, size_t rows) const {
    std::vector<float> logits(rows * cfg_.vocab);
    kernels::gemm_nt(logits.data(), states, embedding_.ptr(), rows, cfg_.d, cfg_.vocab, false);
    return logits;
}

DraftStepOut DraftHead::draft_step(const KVCache& cache, int32_t token, size_t pos) const {
    const size_t d = cfg_.d;
    if (pos == 0 || cache.filled > pos - 1)
        throw UsageError("draft_step: query position must lie beyond the cached entries");
    DraftStepOut out;
    std::vector<float> e = embed(token);

    std::vector<float> qn(d), q(d), att(d), scratch;
    rms_rows(qn.data(), e.data(), p("attn.q_norm").ptr(), 1, d);
    kernels::gemm_nn(q.data(), qn.data(), p("attn.wq").ptr(), 1, d, d, false);
    rope_rows(q.data(), 1, &pos, cfg_.n_heads, cfg_.head_dim());
    std::vector<size_t> idx(cache.filled);
    for (size_t j = 0; j < idx.size(); ++j) idx[j] = j;
    attend_row(att.data(), q.data(), cache.k.data(), cache.v.data(), idx.data(), idx.size(),
               cfg_.n_heads, cfg_.head_dim(), scratch);

    std::vector<float> y(d), tmp(d), h1(4 * d);
    kernels::gemm_nn(y.data(), att.data(), p("attn.wo").ptr(), 1, d, d, false);
    kernels::add(y.data(), y.data(), e.data(), d);
    rms_rows(tmp.data(), y.data(), p("mlp.norm").ptr(), 1, d);
    kernels::gemm_nn(h1.data(), tmp.data(), p("mlp.w1").ptr(), 1, d, 4 * d, false);
    silu_inplace(h1.data(), 4 * d);
    out.h_raw.resize(d);
    kernels::gemm_nn(out.h_raw.data(), h1.data(), p("mlp.w2").ptr(), 1, 4 * d, d, false);
    kernels::add(out.h_raw.data(), out.h_raw.data(), y.data(), d);

    out.state.resize(d);
    rms_rows(out.state.data(), out.h_raw.data(), p("final_norm").ptr(), 1, d);
    out.logits = head_logits(out.state.data(), 1);
    return out;
}

DraftHead::BlockOut DraftHead::draft_block_forward(const std::vector<float>& query_embeds,
                                                   const std::vector<size_t>& qpos,
                                                   const std::vector<float>& key_states,
                                                   const std::vector<size_t>& kpos,
                                                   const AttentionMask& mask) const {
    const size_t d = cfg_.d, heads = cfg_.n_heads, dh = cfg_.head_dim();
    const size_t rows = qpos.size();
    const size_t n_keys = kpos.size();
    if (query_embeds.size() != rows * d) throw ShapeError("query_embeds size mismatch");
    if (key_states.size() != n_keys * d) throw ShapeError("key_states size mismatch");
    if (n_keys != mask.size())
        throw ShapeError("mask size does not match number of key states");
    for (size_t r = 0; r < rows; ++r)
        if (qpos[r] == 0 || qpos[r] > mask.size()) throw ShapeError("query position out of mask");

    // project keys/values once
    std::vector<float> kn(n_keys * d), K(n_keys * d), V(n_keys * d);
    rms_rows(kn.data(), key_states.data(), p("attn.kv_norm").ptr(), n_keys, d);
    kernels::gemm_nn(K.data(), kn.data(), p("attn.wk").ptr(), n_keys, d, d, false);
    kernels::gemm_nn(V.data(), kn.data(), p("attn.wv").ptr(), n_keys, d, d, false);
    rope_rows(K.data(), n_keys, kpos.data(), heads, dh);

    std::vector<float> qn(rows * d), Q(rows * d), att(rows * d), scratch;
    rms_rows(qn.data(), query_embeds.data(), p("attn.q_norm").ptr(), rows, d);
    kernels::gemm_nn(Q.data(), qn.data(), p("attn.wq").ptr(), rows, d, d, false);
    rope_rows(Q.data(), rows, qpos.data(), heads, dh);

    std::vector<size_t> idx;
    for (size_t r = 0; r < rows; ++r) {
        idx.clear();
        for (size_t j = 0; j < n_keys; ++j)
            if (mask.allowed(qpos[r], j + 1)) idx.push_back(j);
        attend_row(att.data() + r * d, Q.data() + r * d, K.data(), V.data(), idx.data(),
                   idx.size(), heads, dh, scratch);
    }

    BlockOut out;
    out.rows = rows;
    std::vector<float> y(rows * d), tmp(rows * d), h1(rows * 4 * d);
    kernels::gemm_nn(y.data(), att.data(), p("attn.wo").ptr(), rows, d, d, false);
    kernels::add(y.data(), y.data(), query_embeds.data(), rows * d);
    rms_rows(tmp.data(), y.data(), p("mlp.norm").ptr(), rows, d);
    kernels::gemm_nn(h1.data(), tmp.data(), p("mlp.w1").ptr(), rows, d, 4 * d, false);
    silu_inplace(h1.data(), rows * 4 * d);
    out.h_raw.resize(rows * d);
    kernels::gemm_nn(out.h_raw.data(), h1.data(), p("mlp.w2").ptr(), rows, 4 * d, d, false);
    kernels::add(out.h_raw.data(), out.h_raw.data(), y.data(), rows * d);

    out.state.resize(rows * d);
    rms_rows(out.state.data(), out.h_raw.data(), p("final_norm").ptr(), rows, d);
    out.logits = head_logits(out.state.data(), rows);
    return out;
}

DraftHead::Bind DraftHead::bind(Tape& tape) const {
    Bind b;
    for (const auto& t : params_)
        b.nodes.push_back(tape.leaf(t.rows, t.cols, t.data, /*requires_grad=*/true));
    b.embedding =
        tape.leaf(embedding_.rows, embedding_.cols, embedding_.data, /*requires_grad=*/false);
    return b;
}

int DraftHead::block_graph(Tape& tape, const Bind& b, int query_embeds, int key_states,
                           const AttentionMask& mask, const std::vector<size_t>& qpos,
                           const std::vector<size_t>& kpos) const {
    auto node = [&](const std::string& name) {
        for (size_t i = 0; i < params_.size(); ++i)
            if (params_[i].name == name) return b.nodes[i];
        throw ValueError("draft head has no parameter " + name);
    };
    if (tape.rows(key_states) != mask.size())
        throw ShapeError("mask size does not match number of key states");
    if (tape.rows(query_embeds) != qpos.size() || tape.rows(key_states) != kpos.size())
        throw ShapeError("positions do not match row counts");
    const size_t heads = cfg_.n_heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(cfg_.head_dim()));

    const int qn = tape.rms_norm(query_embeds, node("attn.q_norm"));
    const int q = tape.rope_rows(tape.matmul(qn, node("attn.wq")), qpos, heads);
    const int kn = tape.rms_norm(key_states, node("attn.kv_norm"));
    const int k = tape.rope_rows(tape.matmul(kn, node("attn.wk")), kpos, heads);
    const int v = tape.matmul(kn, node("attn.wv"));

    std::vector<size_t> mask_rows(qpos.size());
    for (size_t r = 0; r < qpos.size(); ++r) mask_rows[r] = qpos[r] - 1;
    const int att = tape.mha(q, k, v, heads, scale, mask.data(), mask.stride(), mask_rows);
    const int y = tape.add(query_embeds, tape.matmul(att, node("attn.wo")));
    const int h1 = tape.silu(tape.matmul(tape.rms_norm(y, node("mlp.norm")), node("mlp.w1")));
    return tape.add(y, tape.matmul(h1, node("mlp.w2")));
}

int DraftHead::state_graph(Tape& tape, const Bind& b, int h_raw) const {
    auto node = [&](const std::string& name) {
        for (size_t i = 0; i < params_.size(); ++i)
            if (params_[i].name == name) return b.nodes[i];
        throw ValueError("draft head has no parameter " + name);
    };
    return tape.rms_norm(h_raw, node("final_norm"));
}

int DraftHead::logits_graph(Tape& tape, const Bind& b, int state) const {
    return tape.matmul_nt(state, b.embedding);
}

}  // namespace beagle
