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
#include <string>

namespace beagle::kernels {

// Scalar reference kernels. These define the semantics; the SIMD variants
// must agree with them within floating-point reassociation tolerance and are
// equivalence-tested against them.
namespace scalar {

// C[m x n] = A[m x k] * B[k x n], row-major. accumulate=false overwrites C.
template <class S>
void gemm_nn(S* c, const S* a, const S* b, size_t m, size_t k, size_t n, bool accumulate);

// C[m x n] = A[m x k] * B[n x k]^T  (dot products of rows).
template <class S>
void gemm_nt(S* c, const S* a, const S* b, size_t m, size_t k, size_t n, bool accumulate);

// C[m x n] = A[k x m]^T * B[k x n].
template <class S>
void gemm_tn(S* c, const S* a, const S* b, size_t m, size_t k, size_t n, bool accumulate);

template <class S>
S dot(const S* a, const S* b, size_t n);

// y += alpha * x
template <class S>
void axpy(S* y, S alpha, const S* x, size_t n);

template <class S>
void add(S* out, const S* a, const S* b, size_t n);

template <class S>
void mul(S* out, const S* a, const S* b, size_t n);

template <class S>
void scale(S* out, const S* a, S alpha, size_t n);

// out[i] = x[i] * g[i] * alpha  (row normalization inner loop)
template <class S>
void scale_mul(S* out, const S* x, const S* g, S alpha, size_t n);

template <class S>
S sum(const S* x, size_t n);

template <class S>
S sumsq(const S* x, size_t n);

// Decoupled weight decay Adam step on one parameter array.
// p -= lr*wd*p; p -= lr * (m/bias1) / (sqrt(v/bias2) + eps)
template <class S>
void adamw_update(S* p, const S* g, S* m, S* v, size_t n, S lr, S beta1, S beta2,
                  S eps, S weight_decay, S bias1, S bias2);

}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define BEAGLE_HAVE_AVX2_BUILD 1
// AVX2+FMA variants as float/double overloads. Compiled in a TU with
// -mavx2 -mfma; only reachable after the dispatcher has checked CPUID.
namespace avx2 {

void gemm_nn(float* c, const float* a, const float* b, size_t m, size_t k, size_t n,
             bool accumulate);
void gemm_nn(double* c, const double* a, const double* b, size_t m, size_t k, size_t n,
             bool accumulate);
void gemm_nt(float* c, const float* a, const float* b, size_t m, size_t k, size_t n,
             bool accumulate);
void gemm_nt(double* c, const double* a, const double* b, size_t m, size_t k, size_t n,
             bool accumulate);
void gemm_tn(float* c, const float* a, const float* b, size_t m, size_t k, size_t n,
             bool accumulate);
void gemm_tn(double* c, const double* a, const double* b, size_t m, size_t k, size_t n,
             bool accumulate);
float dot(const float* a, const float* b, size_t n);
double dot(const double* a, const double* b, size_t n);
void axpy(float* y, float alpha, const float* x, size_t n);
void axpy(double* y, double alpha, const double* x, size_t n);
void add(float* out, const float* a, const float* b, size_t n);
void add(double* out, const double* a, const double* b, size_t n);
void mul(float* out, const float* a, const float* b, size_t n);
void mul(double* out, const double* a, const double* b, size_t n);
void scale(float* out, const float* a, float alpha, size_t n);
void scale(double* out, const double* a, double alpha, size_t n);
void scale_mul(float* out, const float* x, const float* g, float alpha, size_t n);
void scale_mul(double* out, const double* x, const double* g, double alpha, size_t n);
float sum(const float* x, size_t n);
double sum(const double* x, size_t n);
float sumsq(const float* x, size_t n);
double sumsq(const double* x, size_t n);
void adamw_update(float* p, const float* g, float* m, float* v, size_t n, float lr,
                  float beta1, float beta2, float eps, float weight_decay, float bias1,
                  float bias2);
void adamw_update(double* p, const double* g, double* m, double* v, size_t n, double lr,
                  double beta1, double beta2, double eps, double weight_decay, double bias1,
                  double bias2);

}  // namespace avx2
#endif

enum class Isa { kScalar, kAvx2 };

// Backend selected once per process: BEAGLE_KERNELS=scalar|avx2 overrides the
// CPUID-based default. Selection is stable for the lifetime of the process so
// repeated runs on one machine are bit-identical.
Isa active_isa();
std::string isa_name(Isa isa);

// Dispatching entry points. All call sites in the tensor layer go through
// these.
template <class S>
void gemm_nn(S* c, const S* a, const S* b, size_t m, size_t k, size_t n, bool accumulate);
template <class S>
void gemm_nt(S* c, const S* a, const S* b, size_t m, size_t k, size_t n, bool accumulate);
template <class S>
void gemm_tn(S* c, const S* a, const S* b, size_t m, size_t k, size_t n, bool accumulate);
template <class S>
S dot(const S* a, const S* b, size_t n);
template <class S>
void axpy(S* y, S alpha, const S* x, size_t n);
template <class S>
void add(S* out, const S* a, const S* b, size_t n);
template <class S>
void mul(S* out, const S* a, const S* b, size_t n);
template <class S>
void scale(S* out, const S* a, S alpha, size_t n);
template <class S>
void scale_mul(S* out, const S* x, const S* g, S alpha, size_t n);
template <class S>
S sum(const S* x, size_t n);
template <class S>
S sumsq(const S* x, size_t n);
template <class S>
void adamw_update(S* p, const S* g, S* m, S* v, size_t n, S lr, S beta1, S beta2,
                  S eps, S weight_decay, S bias1, S bias2);

}  // namespace beagle::kernels
