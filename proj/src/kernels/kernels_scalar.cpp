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

#include <cmath>
#include <cstring>

#include "beagle/kernels.hpp"

namespace beagle::kernels::scalar {

template <class S>
void gemm_nn(S* c, const S* a, const S* b, size_t m, size_t k, size_t n, bool accumulate) {
    for (size_t i = 0; i < m; ++i) {
        S* crow = c + i * n;
        if (!accumulate) std::memset(crow, 0, n * sizeof(S));
        const S* arow = a + i * k;
        for (size_t kk = 0; kk < k; ++kk) {
            const S av = arow[kk];
            if (av == S(0)) continue;
            const S* brow = b + kk * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class S>
void gemm_nt(S* c, const S* a, const S* b, size_t m, size_t k, size_t n, bool accumulate) {
    for (size_t i = 0; i < m; ++i) {
        const S* arow = a + i * k;
        S* crow = c + i * n;
        for (size_t j = 0; j < n; ++j) {
            const S* brow = b + j * k;
            S acc = 0;
            for (size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] = accumulate ? crow[j] + acc : acc;
        }
    }
}

template <class S>
void gemm_tn(S* c, const S* a, const S* b, size_t m, size_t k, size_t n, bool accumulate) {
    if (!accumulate) std::memset(c, 0, m * n * sizeof(S));
    for (size_t kk = 0; kk < k; ++kk) {
        const S* arow = a + kk * m;
        const S* brow = b + kk * n;
        for (size_t i = 0; i < m; ++i) {
            const S av = arow[i];
            if (av == S(0)) continue;
            S* crow = c + i * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class S>
S dot(const S* a, const S* b, size_t n) {
    S acc = 0;
    for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

template <class S>
void axpy(S* y, S alpha, const S* x, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class S>
void add(S* out, const S* a, const S* b, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <class S>
void mul(S* out, const S* a, const S* b, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <class S>
void scale(S* out, const S* a, S alpha, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * alpha;
}

template <class S>
void scale_mul(S* out, const S* x, const S* g, S alpha, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = x[i] * g[i] * alpha;
}

template <class S>
S sum(const S* x, size_t n) {
    S acc = 0;
    for (size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

template <class S>
S sumsq(const S* x, size_t n) {
    S acc = 0;
    for (size_t i = 0; i < n; ++i) acc += x[i] * x[i];
    return acc;
}

template <class S>
void adamw_update(S* p, const S* g, S* m, S* v, size_t n, S lr, S beta1, S beta2,
                  S eps, S weight_decay, S bias1, S bias2) {
    const S decay = S(1) - lr * weight_decay;
    for (size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (S(1) - beta1) * g[i];
        v[i] = beta2 * v[i] + (S(1) - beta2) * g[i] * g[i];
        const S mhat = m[i] / bias1;
        const S vhat = v[i] / bias2;
        p[i] = p[i] * decay - lr * mhat / (std::sqrt(vhat) + eps);
    }
}

#define BEAGLE_INSTANTIATE_SCALAR(S)                                                          \
    template void gemm_nn<S>(S*, const S*, const S*, size_t, size_t, size_t, bool);           \
    template void gemm_nt<S>(S*, const S*, const S*, size_t, size_t, size_t, bool);           \
    template void gemm_tn<S>(S*, const S*, const S*, size_t, size_t, size_t, bool);           \
    template S dot<S>(const S*, const S*, size_t);                                            \
    template void axpy<S>(S*, S, const S*, size_t);                                           \
    template void add<S>(S*, const S*, const S*, size_t);                                     \
    template void mul<S>(S*, const S*, const S*, size_t);                                     \
    template void scale<S>(S*, const S*, S, size_t);                                          \
    template void scale_mul<S>(S*, const S*, const S*, S, size_t);                            \
    template S sum<S>(const S*, size_t);                                                      \
    template S sumsq<S>(const S*, size_t);                                                    \
    template void adamw_update<S>(S*, const S*, S*, S*, size_t, S, S, S, S, S, S, S);

BEAGLE_INSTANTIATE_SCALAR(float)
BEAGLE_INSTANTIATE_SCALAR(double)

#undef BEAGLE_INSTANTIATE_SCALAR

}  // namespace beagle::kernels::scalar
