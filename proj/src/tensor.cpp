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

#include "beagle/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <utility>

#include "beagle/kernels.hpp"

namespace beagle {

namespace bk = kernels;

template <class S>
int TapeT<S>::push(size_t rows, size_t cols, bool requires_grad) {
    if (rows == 0 || cols == 0) throw ShapeError("tensor extents must be positive");
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.val = std::make_shared<std::vector<S>>(rows * cols, S(0));
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
}

template <class S>
std::vector<S>& TapeT<S>::ensure_grad(int id) {
    auto& g = nodes_[id].grad;
    if (g.empty()) g.assign(numel(id), S(0));
    return g;
}

template <class S>
void TapeT<S>::check_same_shape(int a, int b, const char* op) const {
    if (rows(a) != rows(b) || cols(a) != cols(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(rows(a)) + "x" +
                         std::to_string(cols(a)) + " vs " + std::to_string(rows(b)) + "x" +
                         std::to_string(cols(b)));
}

template <class S>
S TapeT<S>::scalar(int id) const {
    if (numel(id) != 1) throw ShapeError("scalar(): node is not 1x1");
    return (*nodes_[id].val)[0];
}

// ---------------------------------------------------------------- creation

template <class S>
int TapeT<S>::leaf(size_t r, size_t c, Storage storage, bool requires_grad) {
    if (!storage || storage->size() != r * c) throw ShapeError("leaf: storage size mismatch");
    Node n;
    n.rows = r;
    n.cols = c;
    n.val = std::move(storage);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
}

template <class S>
int TapeT<S>::constant(size_t r, size_t c, const S* data) {
    const int id = push(r, c, false);
    std::memcpy(val(id), data, r * c * sizeof(S));
    return id;
}

template <class S>
int TapeT<S>::constant(size_t r, size_t c, const std::vector<S>& data) {
    if (data.size() != r * c) throw ShapeError("constant: data size mismatch");
    return constant(r, c, data.data());
}

template <class S>
int TapeT<S>::zeros(size_t r, size_t c, bool requires_grad) {
    return push(r, c, requires_grad);
}

// ------------------------------------------------------------- elementwise

template <class S>
int TapeT<S>::add(int a, int b) {
    check_same_shape(a, b, "add");
    const int out = push(rows(a), cols(a), nodes_[a].requires_grad || nodes_[b].requires_grad);
    bk::add(val(out), val(a), val(b), numel(out));
    if (nodes_[out].requires_grad)
        nodes_[out].back = [out, a, b](TapeT& t) {
            const auto& g = t.nodes_[out].grad;
            if (t.nodes_[a].requires_grad)
                bk::axpy(t.ensure_grad(a).data(), S(1), g.data(), g.size());
            if (t.nodes_[b].requires_grad)
                bk::axpy(t.ensure_grad(b).data(), S(1), g.data(), g.size());
        };
    return out;
}

template <class S>
int TapeT<S>::mul(int a, int b) {
    check_same_shape(a, b, "mul");
    const int out = push(rows(a), cols(a), nodes_[a].requires_grad || nodes_[b].requires_grad);
    bk::mul(val(out), val(a), val(b), numel(out));
    if (nodes_[out].requires_grad)
        nodes_[out].back = [out, a, b](TapeT& t) {
            const auto& g = t.nodes_[out].grad;
            const size_t n = g.size();
            if (t.nodes_[a].requires_grad) {
                auto& ga = t.ensure_grad(a);
                const S* bv = t.val(b);
                for (size_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
            }
            if (t.nodes_[b].requires_grad) {
                auto& gb = t.ensure_grad(b);
                const S* av = t.val(a);
                for (size_t i = 0; i < n; ++i) gb[i] += g[i] * av[i];
            }
        };
    return out;
}

template <class S>
int TapeT<S>::scale(int a, S alpha) {
    const int out = push(rows(a), cols(a), nodes_[a].requires_grad);
    bk::scale(val(out), val(a), alpha, numel(out));
    if (nodes_[out].requires_grad)
        nodes_[out].back = [out, a, alpha](TapeT& t) {
            const auto& g = t.nodes_[out].grad;
            bk::axpy(t.ensure_grad(a).data(), alpha, g.data(), g.size());
        };
    return out;
}

template <class S>
int TapeT<S>::sum(int a) {
    const int out = push(1, 1, nodes_[a].requires_grad);
    val(out)[0] = bk::sum(val(a), numel(a));
    if (nodes_[out].requires_grad)
        nodes_[out].back = [out, a](TapeT& t) {
            const S g = t.nodes_[out].grad[0];
            auto& ga = t.ensure_grad(a);
            for (auto& x : ga) x += g;
        };
    return out;
}

template <class S>
int TapeT<S>::weighted_reduce(int a, std::vector<S> weights) {
    if (weights.size() != numel(a)) throw ShapeError("weighted_reduce: weight size mismatch");
    const int out = push(1, 1, nodes_[a].requires_grad);
    val(out)[0] = bk::dot(val(a), weights.data(), weights.size());
    if (nodes_[out].requires_grad)
        nodes_[out].back = [out, a, w = std::move(weights)](TapeT& t) {
            const S g = t.nodes_[out].grad[0];
            bk::axpy(t.ensure_grad(a).data(), g, w.data(), w.size());
        };
    return out;
}

template <class S>
int TapeT<S>::weighted_sum(const std::vector<int>& scalars, const std::vector<S>& w) {
    if (scalars.size() != w.size()) throw ShapeError("weighted_sum: arity mismatch");
    if (scalars.empty()) throw ValueError("weighted_sum: empty term list");
    bool rg = false;
    S acc = S(0);
    for (size_t i = 0; i < scalars.size(); ++i) {
        if (numel(scalars[i]) != 1) throw ShapeError("weighted_sum: non-scalar term");
        acc += w[i] * (*nodes_[scalars[i]].val)[0];
        rg = rg || nodes_[scalars[i]].requires_grad;
    }
    const int out = push(1, 1, rg);
    val(out)[0] = acc;
    if (rg)
        nodes_[out].back = [out, terms = scalars, w](TapeT& t) {
            const S g = t.nodes_[out].grad[0];
            for (size_t i = 0; i < terms.size(); ++i)
                if (t.nodes_[terms[i]].requires_grad) t.ensure_grad(terms[i])[0] += w[i] * g;
        };
    return out;
}

// ------------------------------------------------------------------ linear

template <class S>
int TapeT<S>::matmul(int a, int b) {
    const size_t m = rows(a), k = cols(a), n = cols(b);
    if (rows(b) != k)
        throw ShapeError("matmul: inner extents disagree (" + std::to_string(k) + " vs " +
                         std::to_string(rows(b)) + ")");
    const int out = push(m, n, nodes_[a].requires_grad || nodes_[b].requires_grad);
    bk::gemm_nn(val(out), val(a), val(b), m, k, n, false);
    if (nodes_[out].requires_grad)
        nodes_[out].back = [out, a, b, m, k, n](TapeT& t) {
            const S* g = t.nodes_[out].grad.data();
            if (t.nodes_[a].requires_grad)
                bk::gemm_nt(t.ensure_grad(a).data(), g, t.val(b), m, n, k, true);
            if (t.nodes_[b].requires_grad)
                bk::gemm_tn(t.ensure_grad(b).data(), t.val(a), g, k, m, n, true);
        };
    return out;
}

template <class S>
int TapeT<S>::matmul_nt(int a, int b) {
    const size_t m = rows(a), k = cols(a), n = rows(b);
    if (cols(b) != k) throw ShapeError("matmul_nt: inner extents disagree");
    const int out = push(m, n, nodes_[a].requires_grad || nodes_[b].requires_grad);
    bk::gemm_nt(val(out), val(a), val(b), m, k, n, false);
    if (nodes_[out].requires_grad)
        nodes_[out].back = [out, a, b, m, k, n](TapeT& t) {
            const S* g = t.nodes_[out].grad.data();
            if (t.nodes_[a].requires_grad)
                bk::gemm_nn(t.ensure_grad(a).data(), g, t.val(b), m, n, k, true);
            if (t.nodes_[b].requires_grad)
                bk::gemm_tn(t.ensure_grad(b).data(), g, t.val(a), n, m, k, true);
        };
    return out;
}

template <class S>
int TapeT<S>::transpose(int a) {
    const size_t m = rows(a), n = cols(a);
    const int out = push(n, m, nodes_[a].requires_grad);
    const S* av = val(a);
    S* ov = val(out);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) ov[j * m + i] = av[i * n + j];
    if (nodes_[out].requires_grad)
        nodes_[out].back = [out, a, m, n](TapeT& t) {
            const S* g = t.nodes_[out].grad.data();
            auto& ga = t.ensure_grad(a);
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
        };
    return out;
}

template <class S>
int TapeT<S>::concat_rows(int a, int b) {
    if (cols(a) != cols(b)) throw ShapeError("concat_rows: column mismatch");
    const size_t ra = rows(a), rb = rows(b), c = cols(a);
    const int out = push(ra + rb, c, nodes_[a].requires_grad || nodes_[b].requires_grad);
    std::memcpy(val(out), val(a), ra * c * sizeof(S));
    std::memcpy(val(out) + ra * c, val(b), rb * c * sizeof(S));
    if (nodes_[out].requires_grad)
        nodes_[out].back = [out, a, b, ra, rb, c](TapeT& t) {
            const S* g = t.nodes_[out].grad.data();
            if (t.nodes_[a].requires_grad)
                bk::axpy(t.ensure_grad(a).data(), S(1), g, ra * c);
            if (t.nodes_[b].requires_grad)
                bk::axpy(t.ensure_grad(b).data(), S(1), g + ra * c, rb * c);
        };
    return out;
}

template <class S>
int TapeT<S>::slice_rows(int a, size_t r0, size_t len) {
    if (r0 + len > rows(a)) throw ShapeError("slice_rows: range out of bounds");
    const size_t c = cols(a);
    const int out = push(len, c, nodes_[a].requires_grad);
    std::memcpy(val(out), val(a) + r0 * c, len * c * sizeof(S));
    if (nodes_[out].requires_grad)
        nodes_[out].back = [out, a, r0, len, c](TapeT& t) {
            const S* g = t.nodes_[out].grad.data();
            bk::axpy(t.ensure_grad(a).data() + r0 * c, S(1), g, len * c);
        };
    return out;
}

template <class S>
int TapeT<S>::gather_rows(int a, std::vector<size_t> idx) {
    const size_t c = cols(a);
    for (size_t r : idx)
        if (r >= rows(a)) throw ShapeError("gather_rows: index out of bounds");
    const int out = push(idx.size(), c, nodes_[a].requires_grad);
    S* ov = val(out);
    const S* av = val(a);
    for (size_t i = 0; i < idx.size(); ++i)
        std::memcpy(ov + i * c, av + idx[i] * c, c * sizeof(S));
    if (nodes_[out].requires_grad)
        nodes_[out].back = [out, a, c, ix = std::move(idx)](TapeT& t) {
            const S* g = t.nodes_[out].grad.data();
            auto& ga = t.ensure_grad(a);
            for (size_t i = 0; i < ix.size(); ++i)
                bk::axpy(ga.data() + ix[i] * c, S(1), g + i * c, c);
        };
    return out;
}

template <class S>
int TapeT<S>::embedding_lookup(int table, const std::vector<int32_t>& ids) {
    std::vector<size_t> idx(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || size_t(ids[i]) >= rows(table))
            throw ValueError("embedding_lookup: token id out of vocabulary");
        idx[i] = size_t(ids[i]);
    }
    return gather_rows(table, std::move(idx));
}

// --------------------------------------------------------------- nonlinear

template <class S>
int TapeT<S>::softmax_rows(int a) {
    const size_t m = rows(a), n = cols(a);
    const int out = push(m, n, nodes_[a].requires_grad);
    const S* x = val(a);
    S* y = val(out);
    for (size_t r = 0; r < m; ++r) {
        const S* xr = x + r * n;
        S* yr = y + r * n;
        S mx = xr[0];
        for (size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
        S denom = S(0);
        for (size_t j = 0; j < n; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            denom += yr[j];
        }
        const S inv = S(1) / denom;
        for (size_t j = 0; j < n; ++j) yr[j] *= inv;
    }
    if (nodes_[out].requires_grad)
        nodes_[out].back = [out, a, m, n](TapeT& t) {
            const S* g = t.nodes_[out].grad.data();
            const S* y = t.val(out);
            auto& ga = t.ensure_grad(a);
            for (size_t r = 0; r < m; ++r) {
                const S* gr = g + r * n;
                const S* yr = y + r * n;
                const S dotgy = bk::dot(gr, yr, n);
                S* gar = ga.data() + r * n;
                for (size_t j = 0; j < n; ++j) gar[j] += yr[j] * (gr[j] - dotgy);
            }
        };
    return out;
}

template <class S>
int TapeT<S>::rms_norm(int x, int gain, S eps) {
    const size_t m = rows(x), n = cols(x);
    if (rows(gain) != 1 || cols(gain) != n) throw ShapeError("rms_norm: gain must be 1 x cols");
    const int out = push(m, n, nodes_[x].requires_grad || nodes_[gain].requires_grad);
    std::vector<S> inv(m);
    const S* xv = val(x);
    const S* gv = val(gain);
    S* y = val(out);
    for (size_t r = 0; r < m; ++r) {
        const S ms = bk::sumsq(xv + r * n, n) / S(n);
        inv[r] = S(1) / std::sqrt(ms + eps);
        bk::scale_mul(y + r * n, xv + r * n, gv, inv[r], n);
    }
    if (nodes_[out].requires_grad)
        nodes_[out].back = [out, x, gain, m, n, iv = std::move(inv)](TapeT& t) {
            const S* g = t.nodes_[out].grad.data();
            const S* xv = t.val(x);
            const S* gv = t.val(gain);
            std::vector<S> du(n);
            for (size_t r = 0; r < m; ++r) {
                const S* gr = g + r * n;
                const S* xr = xv + r * n;
                const S inv = iv[r];
                if (t.nodes_[gain].requires_grad) {
                    auto& gg = t.ensure_grad(gain);
                    for (size_t j = 0; j < n; ++j) gg[j] += gr[j] * xr[j] * inv;
                }
                if (t.nodes_[x].requires_grad) {
                    // u = x*inv; dx = inv * (du - u * <du,u>/n), du = g*gain
                    bk::mul(du.data(), gr, gv, n);
                    S dotuu = S(0);
                    for (size_t j = 0; j < n; ++j) dotuu += du[j] * xr[j] * inv;
                    auto& gx = t.ensure_grad(x);
                    S* gxr = gx.data() + r * n;
                    const S kcoef = dotuu / S(n);
                    for (size_t j = 0; j < n; ++j)
                        gxr[j] += inv * (du[j] - xr[j] * inv * kcoef);
                }
            }
        };
    return out;
}

template <class S>
int TapeT<S>::silu(int x) {
    const size_t m = rows(x), n = cols(x);
    const int out = push(m, n, nodes_[x].requires_grad);
    const S* xv = val(x);
    S* y = val(out);
    const size_t total = m * n;
    for (size_t i = 0; i < total; ++i) {
        const S sig = S(1) / (S(1) + std::exp(-xv[i]));
        y[i] = xv[i] * sig;
    }
    if (nodes_[out].requires_grad)
        nodes_[out].back = [out, x, total](TapeT& t) {
            const S* g = t.nodes_[out].grad.data();
            const S* xv = t.val(x);
            auto& gx = t.ensure_grad(x);
            for (size_t i = 0; i < total; ++i) {
                const S sig = S(1) / (S(1) + std::exp(-xv[i]));
                gx[i] += g[i] * sig * (S(1) + xv[i] * (S(1) - sig));
            }
        };
    return out;
}

template <class S>
int TapeT<S>::rope_rows(int x, std::vector<size_t> positions, size_t n_heads, double base) {
    const size_t m = rows(x), c = cols(x);
    if (positions.size() != m) throw ShapeError("rope_rows: one position per row required");
    if (n_heads == 0 || c % n_heads != 0) throw ShapeError("rope_rows: cols not divisible by heads");
    const size_t dh = c / n_heads;
    if (dh % 2 != 0) throw ShapeError("rope_rows: head dim must be even");
    const int out = push(m, c, nodes_[x].requires_grad);
    const S* xv = val(x);
    S* y = val(out);
    auto rotate = [&](const S* src, S* dst, size_t pos, bool inverse) {
        for (size_t h = 0; h < n_heads; ++h) {
            const S* sh = src + h * dh;
            S* dht = dst + h * dh;
            for (size_t tpair = 0; tpair < dh / 2; ++tpair) {
                const double ang = double(pos) * std::pow(base, -2.0 * double(tpair) / double(dh));
                const S cth = S(std::cos(ang));
                const S sth = inverse ? S(-std::sin(ang)) : S(std::sin(ang));
                const S e = sh[2 * tpair], o = sh[2 * tpair + 1];
                dht[2 * tpair] = cth * e - sth * o;
                dht[2 * tpair + 1] = sth * e + cth * o;
            }
        }
    };
    for (size_t r = 0; r < m; ++r) rotate(xv + r * c, y + r * c, positions[r], false);
    if (nodes_[out].requires_grad)
        nodes_[out].back = [out, x, m, c, n_heads, dh, base, pos = std::move(positions)](TapeT& t) {
            const S* g = t.nodes_[out].grad.data();
            auto& gx = t.ensure_grad(x);
            std::vector<S> tmp(c);
            for (size_t r = 0; r < m; ++r) {
                // gradient of a rotation is the inverse rotation of the grad
                for (size_t h = 0; h < n_heads; ++h) {
                    const S* gh = g + r * c + h * dh;
                    S* th = tmp.data() + h * dh;
                    for (size_t tpair = 0; tpair < dh / 2; ++tpair) {
                        const double ang =
                            double(pos[r]) * std::pow(base, -2.0 * double(tpair) / double(dh));
                        const S cth = S(std::cos(ang));
                        const S sth = S(std::sin(ang));
                        const S e = gh[2 * tpair], o = gh[2 * tpair + 1];
                        th[2 * tpair] = cth * e + sth * o;
                        th[2 * tpair + 1] = -sth * e + cth * o;
                    }
                }
                bk::axpy(gx.data() + r * c, S(1), tmp.data(), c);
            }
        };
    return out;
}

// ------------------------------------------------------------------ losses

template <class S>
int TapeT<S>::ce_soft_rows(const std::vector<S>& p, int logits) {
    const size_t m = rows(logits), n = cols(logits);
    if (p.size() != m * n) throw ShapeError("ce_soft_rows: p shape mismatch");
    for (size_t r = 0; r < m; ++r) {
        const S s = bk::sum(p.data() + r * n, n);
        if (std::abs(double(s) - 1.0) > 1e-6)
            throw ValueError("ce_soft_rows: target row " + std::to_string(r) +
                             " is not a probability vector (sum=" + std::to_string(double(s)) +
                             ")");
    }
    const int out = push(m, 1, nodes_[logits].requires_grad);
    const S* z = val(logits);
    S* y = val(out);
    for (size_t r = 0; r < m; ++r) {
        const S* zr = z + r * n;
        S mx = zr[0];
        for (size_t j = 1; j < n; ++j) mx = std::max(mx, zr[j]);
        S se = S(0);
        for (size_t j = 0; j < n; ++j) se += std::exp(zr[j] - mx);
        const S lse = mx + std::log(se);
        y[r] = lse - bk::dot(p.data() + r * n, zr, n);
    }
    if (nodes_[out].requires_grad)
        nodes_[out].back = [out, logits, m, n, pt = p](TapeT& t) {
            const S* g = t.nodes_[out].grad.data();
            const S* z = t.val(logits);
            auto& gz = t.ensure_grad(logits);
            std::vector<S> sm(n);
            for (size_t r = 0; r < m; ++r) {
                const S* zr = z + r * n;
                S mx = zr[0];
                for (size_t j = 1; j < n; ++j) mx = std::max(mx, zr[j]);
                S denom = S(0);
                for (size_t j = 0; j < n; ++j) {
                    sm[j] = std::exp(zr[j] - mx);
                    denom += sm[j];
                }
                const S inv = S(1) / denom;
                S* gzr = gz.data() + r * n;
                const S* pr = pt.data() + r * n;
                for (size_t j = 0; j < n; ++j) gzr[j] += g[r] * (sm[j] * inv - pr[j]);
            }
        };
    return out;
}

template <class S>
int TapeT<S>::soft_cross_entropy(const std::vector<S>& p, int logits) {
    if (rows(logits) != 1) throw ShapeError("soft_cross_entropy: expects a 1 x n logit row");
    return sum(ce_soft_rows(p, logits));
}

template <class S>
int TapeT<S>::ce_hard_rows(int logits, const std::vector<int32_t>& ids) {
    const size_t m = rows(logits), n = cols(logits);
    if (ids.size() != m) throw ShapeError("ce_hard_rows: one target id per row required");
    for (int32_t id : ids)
        if (id < 0 || size_t(id) >= n) throw ValueError("ce_hard_rows: target id out of range");
    const int out = push(m, 1, nodes_[logits].requires_grad);
    const S* z = val(logits);
    S* y = val(out);
    for (size_t r = 0; r < m; ++r) {
        const S* zr = z + r * n;
        S mx = zr[0];
        for (size_t j = 1; j < n; ++j) mx = std::max(mx, zr[j]);
        S se = S(0);
        for (size_t j = 0; j < n; ++j) se += std::exp(zr[j] - mx);
        y[r] = mx + std::log(se) - zr[ids[r]];
    }
    if (nodes_[out].requires_grad)
        nodes_[out].back = [out, logits, m, n, tid = ids](TapeT& t) {
            const S* g = t.nodes_[out].grad.data();
            const S* z = t.val(logits);
            auto& gz = t.ensure_grad(logits);
            std::vector<S> sm(n);
            for (size_t r = 0; r < m; ++r) {
                const S* zr = z + r * n;
                S mx = zr[0];
                for (size_t j = 1; j < n; ++j) mx = std::max(mx, zr[j]);
                S denom = S(0);
                for (size_t j = 0; j < n; ++j) {
                    sm[j] = std::exp(zr[j] - mx);
                    denom += sm[j];
                }
                const S inv = S(1) / denom;
                S* gzr = gz.data() + r * n;
                for (size_t j = 0; j < n; ++j) gzr[j] += g[r] * sm[j] * inv;
                gzr[tid[r]] -= g[r];
            }
        };
    return out;
}

template <class S>
int TapeT<S>::smooth_l1_rows(int a, int b) {
    check_same_shape(a, b, "smooth_l1_rows");
    const size_t m = rows(a), n = cols(a);
    const int out = push(m, 1, nodes_[a].requires_grad || nodes_[b].requires_grad);
    const S* av = val(a);
    const S* bv = val(b);
    S* y = val(out);
    for (size_t r = 0; r < m; ++r) {
        S acc = S(0);
        for (size_t j = 0; j < n; ++j) {
            const S e = av[r * n + j] - bv[r * n + j];
            const S ae = std::abs(e);
            acc += ae < S(1) ? S(0.5) * e * e : ae - S(0.5);
        }
        y[r] = acc / S(n);
    }
    if (nodes_[out].requires_grad)
        nodes_[out].back = [out, a, b, m, n](TapeT& t) {
            const S* g = t.nodes_[out].grad.data();
            const S* av = t.val(a);
            const S* bv = t.val(b);
            const bool wa = t.nodes_[a].requires_grad, wb = t.nodes_[b].requires_grad;
            S* ga = wa ? t.ensure_grad(a).data() : nullptr;
            S* gb = wb ? t.ensure_grad(b).data() : nullptr;
            for (size_t r = 0; r < m; ++r) {
                const S gr = g[r] / S(n);
                for (size_t j = 0; j < n; ++j) {
                    const S e = av[r * n + j] - bv[r * n + j];
                    const S d = std::abs(e) < S(1) ? e : (e > S(0) ? S(1) : S(-1));
                    if (wa) ga[r * n + j] += gr * d;
                    if (wb) gb[r * n + j] -= gr * d;
                }
            }
        };
    return out;
}

template <class S>
int TapeT<S>::smooth_l1(int a, int b) {
    const int per_row = smooth_l1_rows(a, b);
    return weighted_reduce(per_row, std::vector<S>(rows(a), S(1) / S(rows(a))));
}

// ----------------------------------------------------- simulation buffers

template <class S>
int TapeT<S>::make_buffer(int src) {
    const size_t m = rows(src), c = cols(src);
    const int out = push(m, c, nodes_[src].requires_grad);
    std::memcpy(val(out), val(src), m * c * sizeof(S));
    alloc_stats().kv_buffer_allocs.fetch_add(1);
    alloc_stats().kv_buffer_bytes.fetch_add(m * c * sizeof(S));
    if (nodes_[out].requires_grad)
        nodes_[out].back = [out, src](TapeT& t) {
            const auto& g = t.nodes_[out].grad;
            bk::axpy(t.ensure_grad(src).data(), S(1), g.data(), g.size());
        };
    return out;
}

template <class S>
int TapeT<S>::scatter_rows(int buf, std::vector<size_t> rws, int src) {
    const size_t m = rows(buf), c = cols(buf);
    if (cols(src) != c || rows(src) != rws.size())
        throw ShapeError("scatter_rows: source shape mismatch");
    for (size_t r : rws)
        if (r >= m) throw ShapeError("scatter_rows: row index out of bounds");
    // In-place write into the buffer's storage; the new node is a view of
    // the same storage. Only the rows about to be overwritten are copied
    // aside so backward can unwind the write.
    S* bufv = nodes_[buf].val->data();
    const S* sv = val(src);
    std::vector<S> overwritten(rws.size() * c);
    for (size_t i = 0; i < rws.size(); ++i)
        std::memcpy(overwritten.data() + i * c, bufv + rws[i] * c, c * sizeof(S));
    for (size_t i = 0; i < rws.size(); ++i)
        std::memcpy(bufv + rws[i] * c, sv + i * c, c * sizeof(S));
    Node n;
    n.rows = m;
    n.cols = c;
    n.val = nodes_[buf].val;  // shared storage
    n.requires_grad = nodes_[buf].requires_grad || nodes_[src].requires_grad;
    nodes_.push_back(std::move(n));
    const int out = int(nodes_.size()) - 1;
    if (nodes_[out].requires_grad)
        nodes_[out].back = [out, buf, src, c, ix = std::move(rws),
                            saved = std::move(overwritten)](TapeT& t) {
            // Undo the in-place write first: adjoints run in reverse node
            // order, so every node recorded before this scatter must see the
            // buffer exactly as it stood at its own forward time (ops like
            // rms_norm reread their input values in backward).
            S* bv = t.nodes_[buf].val->data();
            for (size_t i = 0; i < ix.size(); ++i)
                std::memcpy(bv + ix[i] * c, saved.data() + i * c, c * sizeof(S));
            // Overwritten rows belong to src; everything else flows to the
            // previous view of the buffer.
            const auto& g = t.nodes_[out].grad;
            if (t.nodes_[src].requires_grad) {
                auto& gs = t.ensure_grad(src);
                for (size_t i = 0; i < ix.size(); ++i)
                    bk::axpy(gs.data() + i * c, S(1), g.data() + ix[i] * c, c);
            }
            if (t.nodes_[buf].requires_grad) {
                auto& gb = t.ensure_grad(buf);
                std::vector<uint8_t> skip(t.rows(buf), 0);
                for (size_t r : ix) skip[r] = 1;
                for (size_t r = 0; r < t.rows(buf); ++r)
                    if (!skip[r]) bk::axpy(gb.data() + r * c, S(1), g.data() + r * c, c);
            }
        };
    return out;
}

// --------------------------------------------------------------- attention

template <class S>
int TapeT<S>::mha(int q, int k, int v, size_t n_heads, S scale, const uint8_t* mask,
                  size_t mask_stride, std::vector<size_t> q_mask_rows) {
    const size_t R = rows(q), c = cols(q), Tk = rows(k);
    if (cols(k) != c || cols(v) != c || rows(v) != Tk)
        throw ShapeError("mha: q/k/v column or key-row mismatch");
    if (n_heads == 0 || c % n_heads != 0) throw ShapeError("mha: cols not divisible by heads");
    if (mask && q_mask_rows.size() != R)
        throw ShapeError("mha: one mask row per query required");
    const size_t dh = c / n_heads;
    const int out = push(
        R, c, nodes_[q].requires_grad || nodes_[k].requires_grad || nodes_[v].requires_grad);

    // probs are saved because the mask may be mutated in place after this op
    // (simulation episodes); backward never consults the mask.
    std::vector<S> probs(n_heads * R * Tk, S(0));
    const S* qv = val(q);
    const S* kv = val(k);
    const S* vv = val(v);
    S* y = val(out);
    std::vector<S> sc(Tk);
    for (size_t r = 0; r < R; ++r) {
        const uint8_t* mrow = mask ? mask + q_mask_rows[r] * mask_stride : nullptr;
        for (size_t h = 0; h < n_heads; ++h) {
            const S* qrh = qv + r * c + h * dh;
            S* yrh = y + r * c + h * dh;
            S mx = S(0);
            bool any = false;
            for (size_t j = 0; j < Tk; ++j) {
                if (mrow && !mrow[j]) continue;
                sc[j] = bk::dot(qrh, kv + j * c + h * dh, dh) * scale;
                mx = any ? std::max(mx, sc[j]) : sc[j];
                any = true;
            }
            std::fill(yrh, yrh + dh, S(0));
            if (!any) continue;  // empty visible set -> zero output row slice
            S denom = S(0);
            S* prh = probs.data() + (h * R + r) * Tk;
            for (size_t j = 0; j < Tk; ++j) {
                if (mrow && !mrow[j]) continue;
                prh[j] = std::exp(sc[j] - mx);
                denom += prh[j];
            }
            const S inv = S(1) / denom;
            for (size_t j = 0; j < Tk; ++j) {
                if (prh[j] == S(0)) continue;
                prh[j] *= inv;
                bk::axpy(yrh, prh[j], vv + j * c + h * dh, dh);
            }
        }
    }
    if (nodes_[out].requires_grad)
        nodes_[out].back = [out, q, k, v, n_heads, scale, R, c, Tk, dh,
                            pr = std::move(probs)](TapeT& t) {
            const S* g = t.nodes_[out].grad.data();
            const S* qv = t.val(q);
            const S* kv = t.val(k);
            const S* vv = t.val(v);
            const bool wq = t.nodes_[q].requires_grad;
            const bool wk = t.nodes_[k].requires_grad;
            const bool wv = t.nodes_[v].requires_grad;
            S* gq = wq ? t.ensure_grad(q).data() : nullptr;
            S* gk = wk ? t.ensure_grad(k).data() : nullptr;
            S* gv = wv ? t.ensure_grad(v).data() : nullptr;
            std::vector<S> dp(Tk);
            for (size_t r = 0; r < R; ++r) {
                for (size_t h = 0; h < n_heads; ++h) {
                    const S* prh = pr.data() + (h * R + r) * Tk;
                    const S* grh = g + r * c + h * dh;
                    const S* qrh = qv + r * c + h * dh;
                    S pdot = S(0);
                    for (size_t j = 0; j < Tk; ++j) {
                        if (prh[j] == S(0)) continue;
                        dp[j] = bk::dot(grh, vv + j * c + h * dh, dh);
                        pdot += prh[j] * dp[j];
                    }
                    for (size_t j = 0; j < Tk; ++j) {
                        if (prh[j] == S(0)) continue;
                        const S ds = prh[j] * (dp[j] - pdot) * scale;
                        if (wq) bk::axpy(gq + r * c + h * dh, ds, kv + j * c + h * dh, dh);
                        if (wk) bk::axpy(gk + j * c + h * dh, ds, qrh, dh);
                        if (wv) bk::axpy(gv + j * c + h * dh, prh[j], grh, dh);
                    }
                }
            }
        };
    return out;
}

// ------------------------------------------------------------------ engine

template <class S>
void TapeT<S>::backward(int loss) {
    if (loss < 0 || size_t(loss) >= nodes_.size()) throw UsageError("backward: bad node id");
    if (numel(loss) != 1) throw ShapeError("backward: loss must be a 1x1 scalar");
    if (!nodes_[loss].back)
        throw UsageError("backward: node carries no recorded computation (no tape)");
    // Each call propagates a fresh unit seed and adds the resulting adjoints
    // onto whatever grads are already present (accumulation contract).
    std::vector<std::vector<S>> saved(nodes_.size());
    for (size_t i = 0; i < nodes_.size(); ++i) saved[i] = std::move(nodes_[i].grad);
    ensure_grad(loss)[0] = S(1);
    for (int id = loss; id >= 0; --id)
        if (nodes_[id].back && !nodes_[id].grad.empty()) nodes_[id].back(*this);
    for (size_t i = 0; i < nodes_.size(); ++i) {
        if (saved[i].empty()) continue;
        if (nodes_[i].grad.empty())
            nodes_[i].grad = std::move(saved[i]);
        else
            bk::axpy(nodes_[i].grad.data(), S(1), saved[i].data(), saved[i].size());
    }
}

template <class S>
void TapeT<S>::export_grad(int id, S* dst) const {
    const auto& g = nodes_[id].grad;
    if (g.empty()) return;  // never reached: contributes zero
    bk::axpy(dst, S(1), g.data(), g.size());
}

template class TapeT<float>;
template class TapeT<double>;

}  // namespace beagle
