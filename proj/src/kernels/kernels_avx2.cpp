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

#include "beagle/kernels.hpp"

#if defined(BEAGLE_HAVE_AVX2_BUILD)

#include <immintrin.h>

#include <cmath>
#include <cstring>

// This translation unit is compiled with -mavx2 -mfma and is only entered
// when the dispatcher has confirmed CPU support.

namespace beagle::kernels::avx2 {

namespace {

inline __m256i tail_mask_f32(size_t lanes) {
    alignas(32) int32_t m[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    for (size_t i = 0; i < lanes; ++i) m[i] = -1;
    return _mm256_load_si256(reinterpret_cast<const __m256i*>(m));
}

inline __m256i tail_mask_f64(size_t lanes) {
    alignas(32) int64_t m[4] = {0, 0, 0, 0};
    for (size_t i = 0; i < lanes; ++i) m[i] = -1;
    return _mm256_load_si256(reinterpret_cast<const __m256i*>(m));
}

inline float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    __m128 s = _mm_add_ps(lo, hi);
    s = _mm_add_ps(s, _mm_movehl_ps(s, s));
    s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 1));
    return _mm_cvtss_f32(s);
}

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    __m128d s = _mm_add_pd(lo, hi);
    s = _mm_add_sd(s, _mm_unpackhi_pd(s, s));
    return _mm_cvtsd_f64(s);
}

// 4x16 (float) register-blocked panel: rows of A broadcast against two ymm
// columns of B, full-k accumulation so results do not depend on row blocking.
template <int IW>
inline void gemm_nn_panel_f32(float* c, const float* a, const float* b, size_t k, size_t n,
                              size_t i0, size_t j0, size_t jw, bool accumulate,
                              __m256i mask0, __m256i mask1) {
    __m256 acc[IW][2];
    for (int r = 0; r < IW; ++r) {
        if (accumulate) {
            acc[r][0] = _mm256_maskload_ps(c + (i0 + r) * n + j0, mask0);
            acc[r][1] = jw > 8 ? _mm256_maskload_ps(c + (i0 + r) * n + j0 + 8, mask1)
                               : _mm256_setzero_ps();
        } else {
            acc[r][0] = _mm256_setzero_ps();
            acc[r][1] = _mm256_setzero_ps();
        }
    }
    for (size_t kk = 0; kk < k; ++kk) {
        const float* brow = b + kk * n + j0;
        const __m256 b0 = _mm256_maskload_ps(brow, mask0);
        const __m256 b1 = jw > 8 ? _mm256_maskload_ps(brow + 8, mask1) : _mm256_setzero_ps();
        for (int r = 0; r < IW; ++r) {
            const __m256 av = _mm256_set1_ps(a[(i0 + r) * k + kk]);
            acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
            acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
        }
    }
    for (int r = 0; r < IW; ++r) {
        _mm256_maskstore_ps(c + (i0 + r) * n + j0, mask0, acc[r][0]);
        if (jw > 8) _mm256_maskstore_ps(c + (i0 + r) * n + j0 + 8, mask1, acc[r][1]);
    }
}

template <int IW>
inline void gemm_tn_panel_f32(float* c, const float* a, const float* b, size_t m, size_t k,
                              size_t n, size_t i0, size_t j0, size_t jw, bool accumulate,
                              __m256i mask0, __m256i mask1) {
    __m256 acc[IW][2];
    for (int r = 0; r < IW; ++r) {
        if (accumulate) {
            acc[r][0] = _mm256_maskload_ps(c + (i0 + r) * n + j0, mask0);
            acc[r][1] = jw > 8 ? _mm256_maskload_ps(c + (i0 + r) * n + j0 + 8, mask1)
                               : _mm256_setzero_ps();
        } else {
            acc[r][0] = _mm256_setzero_ps();
            acc[r][1] = _mm256_setzero_ps();
        }
    }
    for (size_t kk = 0; kk < k; ++kk) {
        const float* brow = b + kk * n + j0;
        const __m256 b0 = _mm256_maskload_ps(brow, mask0);
        const __m256 b1 = jw > 8 ? _mm256_maskload_ps(brow + 8, mask1) : _mm256_setzero_ps();
        const float* acol = a + kk * m + i0;
        for (int r = 0; r < IW; ++r) {
            const __m256 av = _mm256_set1_ps(acol[r]);
            acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
            acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
        }
    }
    for (int r = 0; r < IW; ++r) {
        _mm256_maskstore_ps(c + (i0 + r) * n + j0, mask0, acc[r][0]);
        if (jw > 8) _mm256_maskstore_ps(c + (i0 + r) * n + j0 + 8, mask1, acc[r][1]);
    }
}

template <int IW>
inline void gemm_nn_panel_f64(double* c, const double* a, const double* b, size_t k, size_t n,
                              size_t i0, size_t j0, size_t jw, bool accumulate,
                              __m256i mask0, __m256i mask1) {
    __m256d acc[IW][2];
    for (int r = 0; r < IW; ++r) {
        if (accumulate) {
            acc[r][0] = _mm256_maskload_pd(c + (i0 + r) * n + j0, mask0);
            acc[r][1] = jw > 4 ? _mm256_maskload_pd(c + (i0 + r) * n + j0 + 4, mask1)
                               : _mm256_setzero_pd();
        } else {
            acc[r][0] = _mm256_setzero_pd();
            acc[r][1] = _mm256_setzero_pd();
        }
    }
    for (size_t kk = 0; kk < k; ++kk) {
        const double* brow = b + kk * n + j0;
        const __m256d b0 = _mm256_maskload_pd(brow, mask0);
        const __m256d b1 = jw > 4 ? _mm256_maskload_pd(brow + 4, mask1) : _mm256_setzero_pd();
        for (int r = 0; r < IW; ++r) {
            const __m256d av = _mm256_set1_pd(a[(i0 + r) * k + kk]);
            acc[r][0] = _mm256_fmadd_pd(av, b0, acc[r][0]);
            acc[r][1] = _mm256_fmadd_pd(av, b1, acc[r][1]);
        }
    }
    for (int r = 0; r < IW; ++r) {
        _mm256_maskstore_pd(c + (i0 + r) * n + j0, mask0, acc[r][0]);
        if (jw > 4) _mm256_maskstore_pd(c + (i0 + r) * n + j0 + 4, mask1, acc[r][1]);
    }
}

template <int IW>
inline void gemm_tn_panel_f64(double* c, const double* a, const double* b, size_t m, size_t k,
                              size_t n, size_t i0, size_t j0, size_t jw, bool accumulate,
                              __m256i mask0, __m256i mask1) {
    __m256d acc[IW][2];
    for (int r = 0; r < IW; ++r) {
        if (accumulate) {
            acc[r][0] = _mm256_maskload_pd(c + (i0 + r) * n + j0, mask0);
            acc[r][1] = jw > 4 ? _mm256_maskload_pd(c + (i0 + r) * n + j0 + 4, mask1)
                               : _mm256_setzero_pd();
        } else {
            acc[r][0] = _mm256_setzero_pd();
            acc[r][1] = _mm256_setzero_pd();
        }
    }
    for (size_t kk = 0; kk < k; ++kk) {
        const double* brow = b + kk * n + j0;
        const __m256d b0 = _mm256_maskload_pd(brow, mask0);
        const __m256d b1 = jw > 4 ? _mm256_maskload_pd(brow + 4, mask1) : _mm256_setzero_pd();
        const double* acol = a + kk * m + i0;
        for (int r = 0; r < IW; ++r) {
            const __m256d av = _mm256_set1_pd(acol[r]);
            acc[r][0] = _mm256_fmadd_pd(av, b0, acc[r][0]);
            acc[r][1] = _mm256_fmadd_pd(av, b1, acc[r][1]);
        }
    }
    for (int r = 0; r < IW; ++r) {
        _mm256_maskstore_pd(c + (i0 + r) * n + j0, mask0, acc[r][0]);
        if (jw > 4) _mm256_maskstore_pd(c + (i0 + r) * n + j0 + 4, mask1, acc[r][1]);
    }
}

}  // namespace

void gemm_nn(float* c, const float* a, const float* b, size_t m, size_t k, size_t n,
                    bool accumulate) {
    for (size_t j0 = 0; j0 < n; j0 += 16) {
        const size_t jw = n - j0 < 16 ? n - j0 : 16;
        const __m256i mask0 = tail_mask_f32(jw < 8 ? jw : 8);
        const __m256i mask1 = jw > 8 ? tail_mask_f32(jw - 8) : _mm256_setzero_si256();
        size_t i0 = 0;
        for (; i0 + 4 <= m; i0 += 4)
            gemm_nn_panel_f32<4>(c, a, b, k, n, i0, j0, jw, accumulate, mask0, mask1);
        for (; i0 < m; ++i0)
            gemm_nn_panel_f32<1>(c, a, b, k, n, i0, j0, jw, accumulate, mask0, mask1);
    }
}

void gemm_nn(double* c, const double* a, const double* b, size_t m, size_t k, size_t n,
                     bool accumulate) {
    for (size_t j0 = 0; j0 < n; j0 += 8) {
        const size_t jw = n - j0 < 8 ? n - j0 : 8;
        const __m256i mask0 = tail_mask_f64(jw < 4 ? jw : 4);
        const __m256i mask1 = jw > 4 ? tail_mask_f64(jw - 4) : _mm256_setzero_si256();
        size_t i0 = 0;
        for (; i0 + 4 <= m; i0 += 4)
            gemm_nn_panel_f64<4>(c, a, b, k, n, i0, j0, jw, accumulate, mask0, mask1);
        for (; i0 < m; ++i0)
            gemm_nn_panel_f64<1>(c, a, b, k, n, i0, j0, jw, accumulate, mask0, mask1);
    }
}

void gemm_tn(float* c, const float* a, const float* b, size_t m, size_t k, size_t n,
                    bool accumulate) {
    for (size_t j0 = 0; j0 < n; j0 += 16) {
        const size_t jw = n - j0 < 16 ? n - j0 : 16;
        const __m256i mask0 = tail_mask_f32(jw < 8 ? jw : 8);
        const __m256i mask1 = jw > 8 ? tail_mask_f32(jw - 8) : _mm256_setzero_si256();
        size_t i0 = 0;
        for (; i0 + 4 <= m; i0 += 4)
            gemm_tn_panel_f32<4>(c, a, b, m, k, n, i0, j0, jw, accumulate, mask0, mask1);
        for (; i0 < m; ++i0)
            gemm_tn_panel_f32<1>(c, a, b, m, k, n, i0, j0, jw, accumulate, mask0, mask1);
    }
}

void gemm_tn(double* c, const double* a, const double* b, size_t m, size_t k, size_t n,
                     bool accumulate) {
    for (size_t j0 = 0; j0 < n; j0 += 8) {
        const size_t jw = n - j0 < 8 ? n - j0 : 8;
        const __m256i mask0 = tail_mask_f64(jw < 4 ? jw : 4);
        const __m256i mask1 = jw > 4 ? tail_mask_f64(jw - 4) : _mm256_setzero_si256();
        size_t i0 = 0;
        for (; i0 + 4 <= m; i0 += 4)
            gemm_tn_panel_f64<4>(c, a, b, m, k, n, i0, j0, jw, accumulate, mask0, mask1);
        for (; i0 < m; ++i0)
            gemm_tn_panel_f64<1>(c, a, b, m, k, n, i0, j0, jw, accumulate, mask0, mask1);
    }
}

void gemm_nt(float* c, const float* a, const float* b, size_t m, size_t k, size_t n,
                    bool accumulate) {
    const size_t kv = k & ~size_t(7);
    const __m256i ktail = tail_mask_f32(k - kv);
    for (size_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        float* crow = c + i * n;
        for (size_t j = 0; j < n; ++j) {
            const float* brow = b + j * k;
            __m256 acc = _mm256_setzero_ps();
            size_t kk = 0;
            for (; kk < kv; kk += 8)
                acc = _mm256_fmadd_ps(_mm256_loadu_ps(arow + kk), _mm256_loadu_ps(brow + kk), acc);
            if (kv < k)
                acc = _mm256_fmadd_ps(_mm256_maskload_ps(arow + kv, ktail),
                                      _mm256_maskload_ps(brow + kv, ktail), acc);
            const float v = hsum(acc);
            crow[j] = accumulate ? crow[j] + v : v;
        }
    }
}

void gemm_nt(double* c, const double* a, const double* b, size_t m, size_t k, size_t n,
                     bool accumulate) {
    const size_t kv = k & ~size_t(3);
    const __m256i ktail = tail_mask_f64(k - kv);
    for (size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            __m256d acc = _mm256_setzero_pd();
            size_t kk = 0;
            for (; kk < kv; kk += 4)
                acc = _mm256_fmadd_pd(_mm256_loadu_pd(arow + kk), _mm256_loadu_pd(brow + kk), acc);
            if (kv < k)
                acc = _mm256_fmadd_pd(_mm256_maskload_pd(arow + kv, ktail),
                                      _mm256_maskload_pd(brow + kv, ktail), acc);
            const double v = hsum(acc);
            crow[j] = accumulate ? crow[j] + v : v;
        }
    }
}

float dot(const float* a, const float* b, size_t n) {
    const size_t nv = n & ~size_t(7);
    __m256 acc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i < nv; i += 8)
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
    float s = hsum(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

double dot(const double* a, const double* b, size_t n) {
    const size_t nv = n & ~size_t(3);
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i < nv; i += 4)
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
    double s = hsum(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy(float* y, float alpha, const float* x, size_t n) {
    const __m256 av = _mm256_set1_ps(alpha);
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void axpy(double* y, double alpha, const double* x, size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void add(float* out, const float* a, const float* b, size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void add(double* out, const double* a, const double* b, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void mul(float* out, const float* a, const float* b, size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void mul(double* out, const double* a, const double* b, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(float* out, const float* a, float alpha, size_t n) {
    const __m256 av = _mm256_set1_ps(alpha);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), av));
    for (; i < n; ++i) out[i] = a[i] * alpha;
}

void scale(double* out, const double* a, double alpha, size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), av));
    for (; i < n; ++i) out[i] = a[i] * alpha;
}

void scale_mul(float* out, const float* x, const float* g, float alpha, size_t n) {
    const __m256 av = _mm256_set1_ps(alpha);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 v = _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(g + i));
        _mm256_storeu_ps(out + i, _mm256_mul_ps(v, av));
    }
    for (; i < n; ++i) out[i] = x[i] * g[i] * alpha;
}

void scale_mul(double* out, const double* x, const double* g, double alpha, size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d v = _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(g + i));
        _mm256_storeu_pd(out + i, _mm256_mul_pd(v, av));
    }
    for (; i < n; ++i) out[i] = x[i] * g[i] * alpha;
}

float sum(const float* x, size_t n) {
    __m256 acc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    float s = hsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

double sum(const double* x, size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

float sumsq(const float* x, size_t n) {
    __m256 acc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 v = _mm256_loadu_ps(x + i);
        acc = _mm256_fmadd_ps(v, v, acc);
    }
    float s = hsum(acc);
    for (; i < n; ++i) s += x[i] * x[i];
    return s;
}

double sumsq(const double* x, size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d v = _mm256_loadu_pd(x + i);
        acc = _mm256_fmadd_pd(v, v, acc);
    }
    double s = hsum(acc);
    for (; i < n; ++i) s += x[i] * x[i];
    return s;
}

// fma-free so the update is bit-identical to the scalar reference.
void adamw_update(float* p, const float* g, float* m, float* v, size_t n, float lr,
                         float beta1, float beta2, float eps, float weight_decay, float bias1,
                         float bias2) {
    const __m256 b1 = _mm256_set1_ps(beta1);
    const __m256 b2 = _mm256_set1_ps(beta2);
    const __m256 ob1 = _mm256_set1_ps(1.0f - beta1);
    const __m256 ob2 = _mm256_set1_ps(1.0f - beta2);
    const __m256 lrv = _mm256_set1_ps(lr);
    const __m256 epsv = _mm256_set1_ps(eps);
    const __m256 decay = _mm256_set1_ps(1.0f - lr * weight_decay);
    const __m256 ib1 = _mm256_set1_ps(bias1);
    const __m256 ib2 = _mm256_set1_ps(bias2);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 gv = _mm256_loadu_ps(g + i);
        __m256 mv = _mm256_loadu_ps(m + i);
        __m256 vv = _mm256_loadu_ps(v + i);
        mv = _mm256_add_ps(_mm256_mul_ps(b1, mv), _mm256_mul_ps(ob1, gv));
        vv = _mm256_add_ps(_mm256_mul_ps(b2, vv), _mm256_mul_ps(_mm256_mul_ps(ob2, gv), gv));
        _mm256_storeu_ps(m + i, mv);
        _mm256_storeu_ps(v + i, vv);
        const __m256 mhat = _mm256_div_ps(mv, ib1);
        const __m256 vhat = _mm256_div_ps(vv, ib2);
        const __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(vhat), epsv);
        __m256 pv = _mm256_mul_ps(_mm256_loadu_ps(p + i), decay);
        pv = _mm256_sub_ps(pv, _mm256_div_ps(_mm256_mul_ps(lrv, mhat), denom));
        _mm256_storeu_ps(p + i, pv);
    }
    if (i < n)
        scalar::adamw_update(p + i, g + i, m + i, v + i, n - i, lr, beta1, beta2, eps,
                             weight_decay, bias1, bias2);
}

void adamw_update(double* p, const double* g, double* m, double* v, size_t n, double lr,
                          double beta1, double beta2, double eps, double weight_decay,
                          double bias1, double bias2) {
    scalar::adamw_update(p, g, m, v, n, lr, beta1, beta2, eps, weight_decay, bias1, bias2);
}

}  // namespace beagle::kernels::avx2

#endif  // BEAGLE_HAVE_AVX2_BUILD
