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

#include <cstdlib>
#include <string>

#include "beagle/common.hpp"

namespace beagle::kernels {

namespace {

Isa detect_isa() {
    if (const char* env = std::getenv("BEAGLE_KERNELS")) {
        const std::string v(env);
        if (v == "scalar") return Isa::kScalar;
        if (v == "avx2") {
#if defined(BEAGLE_HAVE_AVX2_BUILD)
            if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
                return Isa::kAvx2;
#endif
            throw ValueError("BEAGLE_KERNELS=avx2 requested but AVX2+FMA is unavailable");
        }
        throw ValueError("unknown BEAGLE_KERNELS value: " + v + " (expected scalar|avx2)");
    }
#if defined(BEAGLE_HAVE_AVX2_BUILD)
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Isa::kAvx2;
#endif
    return Isa::kScalar;
}

}  // namespace

Isa active_isa() {
    static const Isa isa = detect_isa();
    return isa;
}

std::string isa_name(Isa isa) {
    switch (isa) {
        case Isa::kAvx2:
            return "avx2";
        case Isa::kScalar:
        default:
            return "scalar";
    }
}

// float/double route to the AVX2 overloads when selected; any other scalar
// type only has the reference implementation.
#if defined(BEAGLE_HAVE_AVX2_BUILD)
#define BEAGLE_DISPATCH(call_scalar, call_avx2)          \
    do {                                                 \
        if (active_isa() == Isa::kAvx2) {                \
            call_avx2;                                   \
        } else {                                         \
            call_scalar;                                 \
        }                                                \
    } while (0)
#else
#define BEAGLE_DISPATCH(call_scalar, call_avx2) \
    do {                                        \
        call_scalar;                            \
    } while (0)
#endif

template <class S>
void gemm_nn(S* c, const S* a, const S* b, size_t m, size_t k, size_t n, bool accumulate) {
    BEAGLE_DISPATCH(scalar::gemm_nn(c, a, b, m, k, n, accumulate),
                    avx2::gemm_nn(c, a, b, m, k, n, accumulate));
}

template <class S>
void gemm_nt(S* c, const S* a, const S* b, size_t m, size_t k, size_t n, bool accumulate) {
    BEAGLE_DISPATCH(scalar::gemm_nt(c, a, b, m, k, n, accumulate),
                    avx2::gemm_nt(c, a, b, m, k, n, accumulate));
}

template <class S>
void gemm_tn(S* c, const S* a, const S* b, size_t m, size_t k, size_t n, bool accumulate) {
    BEAGLE_DISPATCH(scalar::gemm_tn(c, a, b, m, k, n, accumulate),
                    avx2::gemm_tn(c, a, b, m, k, n, accumulate));
}

template <class S>
S dot(const S* a, const S* b, size_t n) {
    BEAGLE_DISPATCH(return scalar::dot(a, b, n), return avx2::dot(a, b, n));
}

template <class S>
void axpy(S* y, S alpha, const S* x, size_t n) {
    BEAGLE_DISPATCH(scalar::axpy(y, alpha, x, n), avx2::axpy(y, alpha, x, n));
}

template <class S>
void add(S* out, const S* a, const S* b, size_t n) {
    BEAGLE_DISPATCH(scalar::add(out, a, b, n), avx2::add(out, a, b, n));
}

template <class S>
void mul(S* out, const S* a, const S* b, size_t n) {
    BEAGLE_DISPATCH(scalar::mul(out, a, b, n), avx2::mul(out, a, b, n));
}

template <class S>
void scale(S* out, const S* a, S alpha, size_t n) {
    BEAGLE_DISPATCH(scalar::scale(out, a, alpha, n), avx2::scale(out, a, alpha, n));
}

template <class S>
void scale_mul(S* out, const S* x, const S* g, S alpha, size_t n) {
    BEAGLE_DISPATCH(scalar::scale_mul(out, x, g, alpha, n), avx2::scale_mul(out, x, g, alpha, n));
}

template <class S>
S sum(const S* x, size_t n) {
    BEAGLE_DISPATCH(return scalar::sum(x, n), return avx2::sum(x, n));
}

template <class S>
S sumsq(const S* x, size_t n) {
    BEAGLE_DISPATCH(return scalar::sumsq(x, n), return avx2::sumsq(x, n));
}

template <class S>
void adamw_update(S* p, const S* g, S* m, S* v, size_t n, S lr, S beta1, S beta2, S eps,
                  S weight_decay, S bias1, S bias2) {
    BEAGLE_DISPATCH(
        scalar::adamw_update(p, g, m, v, n, lr, beta1, beta2, eps, weight_decay, bias1, bias2),
        avx2::adamw_update(p, g, m, v, n, lr, beta1, beta2, eps, weight_decay, bias1, bias2));
}

#undef BEAGLE_DISPATCH

#define BEAGLE_INSTANTIATE_DISPATCH(S)                                                        \
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

BEAGLE_INSTANTIATE_DISPATCH(float)
BEAGLE_INSTANTIATE_DISPATCH(double)

#undef BEAGLE_INSTANTIATE_DISPATCH

}  // namespace beagle::kernels
