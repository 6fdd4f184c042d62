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
//
// Acceptance-length analysis: the expected accepted-prefix length within a
// draft window, its first-order surrogate, geometric degradation fits,
// Jensen-gap and surrogate-bound diagnostics, and Monte Carlo oracles.

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "beagle/specdec.hpp"

namespace beagle {

// Per-position conditional acceptance rates alpha[i-1] for positions
// i = 1..k, each in [0, 1]. Position i is conditional on positions 1..i-1
// being accepted — the same convention as measure_alpha_profile — so the
// expected length computed here is directly comparable to measured mean tau
// minus the bonus token (the bonus is excluded from L).
struct AcceptanceProfile {
    std::vector<double> alpha;
    size_t k() const { return alpha.size(); }
};

// Geometric degradation assumption alpha^(i) = alpha1 * r^(i-1) for tokens
// predicted in parallel. alpha1 in [0, 1]; r in (0, 1].
struct DegradationModel {
    double alpha1 = 1.0;
    double r = 1.0;
};

// Tail-sum of the accept chain: E[L] = sum_{i<=k} prod_{j<=i} alpha[j].
double expected_acceptance_length(const AcceptanceProfile& profile);

// First-order surrogate J = sum_i (k-i+1) ln alpha[i] + k. Requires every
// alpha > 0; near alpha == 1 it tracks E[L] to second order (the remainder is
// bounded by half the squared cumulative logs).
double taylor_surrogate_J(const AcceptanceProfile& profile);

// Expands a degradation model into a k-position profile (k >= 1).
AcceptanceProfile geometric_profile(const DegradationModel& model, size_t k);

// Both sides of -E_p[ln q] >= -ln E_p[q]; equality exactly when q is constant
// on the support of p. `holds` allows 1e-12 slack so equality cases are not
// lost to rounding.
struct JensenGap {
    double lhs = 0.0;  // cross-entropy, -sum p ln q
    double rhs = 0.0;  // -ln sum p q
    bool holds = false;
};
// Requires two equal-length normalized distributions with q positive
// everywhere p is.
JensenGap jensen_gap_check(const std::vector<double>& p, const std::vector<double>& q);

// One per-position pair: target distribution p, draft distribution q.
struct DistPair {
    std::vector<double> p;
    std::vector<double> q;
};

// Chance independent draws from p and q coincide: sum_t p(t) q(t). This is
// the alpha entering the surrogate bounds.
double agreement_rate(const std::vector<double>& p, const std::vector<double>& q);

// Chance a q-sampled token survives the min(1, p/q) keep rule:
// sum_t min(p(t), q(t)). Never below agreement_rate.
double acceptance_rate(const std::vector<double>& p, const std::vector<double>& q);

// Numeric check of the two loss bounds over a k-position family. The late
// form weights position i by (k-i+1) and its bound -J + k is pure Jensen, so
// it holds for any family; the early form's bound -k ln alpha[1] additionally
// presumes degradation (alpha nonincreasing) and is reported, not assumed.
struct SurrogateReport {
    std::vector<double> alpha;  // per-position agreement rates
    double loss_early = 0.0;    // sum_i CE(p_i, q_i)
    double loss_late = 0.0;     // sum_i (k-i+1) CE(p_i, q_i)
    double early_bound = 0.0;   // -k ln alpha[1]
    double late_bound = 0.0;    // -sum_i (k-i+1) ln alpha[i]
    double early_gap = 0.0;     // loss_early - early_bound
    double late_gap = 0.0;      // loss_late - late_bound
    bool early_holds = false;
    bool late_holds = false;
};
SurrogateReport surrogate_bound_check(size_t k, const std::vector<DistPair>& family);

// Monte Carlo estimate of E[L]; std_error is zero when the simulated length
// never varies (or a single trial is run).
struct MCEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    size_t trials = 0;
};
// Per-position Bernoulli acceptance with the profile's rates.
MCEstimate mc_acceptance_oracle(const AcceptanceProfile& profile, size_t trials, uint64_t seed);
// Exact keep rule: sample t ~ q_i, keep with min(1, p_i(t)/q_i(t)), stop at
// the first rejection. Matches the tail-sum over per-position
// acceptance_rate values.
MCEstimate mc_acceptance_oracle(const std::vector<DistPair>& family, size_t trials, uint64_t seed);

// Ordinary least squares of ln alpha[i] on (i-1). Diagnostic only: a
// non-degrading profile legitimately fits r > 1, so the result is not forced
// into DegradationModel's ranges. Requires k >= 2 and strictly positive
// rates.
struct GeometricFit {
    double alpha1 = 0.0;  // exp(intercept)
    double r = 0.0;       // exp(slope)
    double rmse = 0.0;    // log-space residual root mean square
};
GeometricFit fit_geometric(const AcceptanceProfile& profile);

// Everything the `analyze` pipeline derives from one decoding run. Sections
// that need strictly positive rates (surrogate, fit) or timings (improvement)
// carry a presence flag instead of sentinel values.
struct AnalyzeReport {
    size_t iterations = 0;
    size_t k = 0;
    std::vector<double> alpha;     // measured conditional profile
    double e_length = 0.0;         // tail-sum over measured alpha
    double mean_tau = 0.0;
    double tau_consistency = 0.0;  // |e_length + 1 - mean_tau|
    bool has_surrogate = false;    // every alpha > 0
    double taylor_j = 0.0;
    SurrogateReport bounds;  // over the point-mass family realizing alpha
    bool has_fit = false;    // at least two leading positive alphas
    GeometricFit fit;
    bool has_improvement = false;  // verify timings present
    double improvement = 0.0;
};
AnalyzeReport analyze_metrics(const SDMetrics& metrics);

// Parses the per-iteration CSV written by write_eval_csv. Lines starting
// with '#' are comments (provenance headers). Malformed input raises IoError
// naming the offending line.
SDMetrics read_eval_csv(std::istream& is);

// Machine form: `key,value` rows covering the whole report.
void write_analysis_csv(const AnalyzeReport& r, std::ostream& os);
// Human form: aligned `key = value` lines.
void write_analysis_summary(const AnalyzeReport& r, std::ostream& os);

}  // namespace beagle
