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

#include "beagle/specdec.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>
#include <string>

#include "beagle/data.hpp"

namespace beagle {
namespace {

std::vector<double> softmax_double(const float* logits, size_t n) {
    double mx = logits[0];
    for (size_t i = 1; i < n; ++i) mx = std::max(mx, static_cast<double>(logits[i]));
    std::vector<double> p(n);
    double denom = 0.0;
    for (size_t i = 0; i < n; ++i) {
        p[i] = std::exp(static_cast<double>(logits[i]) - mx);
        denom += p[i];
    }
    for (auto& v : p) v /= denom;
    return p;
}

int32_t argmax_float(const float* row, size_t n) {
    size_t best = 0;
    for (size_t i = 1; i < n; ++i)
        if (row[i] > row[best]) best = i;
    return static_cast<int32_t>(best);
}

int32_t argmax_double(const std::vector<double>& row) {
    size_t best = 0;
    for (size_t i = 1; i < row.size(); ++i)
        if (row[i] > row[best]) best = i;
    return static_cast<int32_t>(best);
}

double uniform_unit(Rng& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

int32_t sample_index(const std::vector<double>& dist, Rng& rng) {
    const double u = uniform_unit(rng);
    double acc = 0.0;
    int32_t last = -1;
    for (size_t i = 0; i < dist.size(); ++i) {
        if (dist[i] <= 0.0) continue;
        last = static_cast<int32_t>(i);
        acc += dist[i];
        if (u < acc) return last;
    }
    if (last < 0) throw Error("sample from a distribution with no mass");
    return last;  // rounding shortfall: clamp to the last positive-mass entry
}

using Clock = std::chrono::steady_clock;

double micros_between(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double, std::micro>(b - a).count();
}

}  // namespace

double accept_probability(const std::vector<double>& p, const std::vector<double>& q,
                          int32_t token) {
    if (p.size() != q.size()) throw ShapeError("accept_probability: distribution sizes differ");
    if (token < 0 || static_cast<size_t>(token) >= p.size())
        throw ValueError("accept_probability: token out of range");
    const double qt = q[static_cast<size_t>(token)];
    if (qt <= 0.0) throw Error("proposer assigned zero mass to its own proposal");
    return std::min(1.0, p[static_cast<size_t>(token)] / qt);
}

std::vector<double> residual_distribution(const std::vector<double>& p,
                                          const std::vector<double>& q) {
    if (p.size() != q.size())
        throw ShapeError("residual_distribution: distribution sizes differ");
    std::vector<double> r(p.size());
    double z = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        r[i] = std::max(0.0, p[i] - q[i]);
        z += r[i];
    }
    if (z <= 0.0) throw Error("residual distribution carries no mass");
    for (auto& v : r) v /= z;
    return r;
}

double SDMetrics::mean_tau() const {
    if (iterations.empty()) throw UsageError("mean_tau: no iterations logged");
    double s = 0.0;
    for (const auto& it : iterations) s += static_cast<double>(it.tau);
    return s / static_cast<double>(iterations.size());
}

std::vector<double> measure_alpha_profile(const SDMetrics& m) {
    if (m.iterations.empty()) throw UsageError("alpha profile: no iterations logged");
    if (m.gamma == 0) throw UsageError("alpha profile: gamma must be positive");
    std::vector<double> reached(m.gamma, 0.0), accepted(m.gamma, 0.0);
    for (const auto& it : m.iterations) {
        const size_t limit = std::min(m.gamma, it.accepted.size());
        for (size_t i = 0; i < limit; ++i) {
            reached[i] += 1.0;
            if (!it.accepted[i]) break;
            accepted[i] += 1.0;
        }
    }
    std::vector<double> alpha(m.gamma, 0.0);
    for (size_t i = 0; i < m.gamma; ++i)
        if (reached[i] > 0.0) alpha[i] = accepted[i] / reached[i];
    return alpha;
}

double mean_tau_from_alpha(const std::vector<double>& alpha) {
    double tail = 0.0, prod = 1.0;
    for (double a : alpha) {
        prod *= a;
        tail += prod;
    }
    return 1.0 + tail;
}

double improvement_factor(const SDMetrics& m) {
    const double tau = m.mean_tau();
    double td = 0.0, tv = 0.0;
    for (const auto& it : m.iterations) {
        td += it.t_draft_us;
        tv += it.t_verify_us;
    }
    if (!(tv > 0.0)) throw ValueError("improvement factor: no verify time recorded");
    return tau / (td / tv + 1.0);
}

SDSession::SDSession(const TargetModel& target, const DraftHead& draft, const SDConfig& cfg)
    : target_(target),
      draft_(draft),
      cfg_(cfg),
      tcache_(target.make_cache()),
      dcache_(draft.make_cache(cfg.gamma)),
      rng_(make_rng(derive_seed(cfg.seed, /*stream=*/7))) {
    if (cfg.gamma == 0) throw UsageError("speculative decoding needs gamma >= 1");
    if (target.config().d != draft.config().d ||
        target.config().vocab != draft.config().vocab ||
        target.config().t_max != draft.config().t_max)
        throw UsageError("target and draft head configurations differ");
}

void SDSession::prefill(const std::vector<int32_t>& prompt) {
    if (prefilled_) throw UsageError("session is already prefilled");
    if (prompt.empty()) throw ValueError("prefill: empty prompt");
    const ForwardOut out = target_.forward_incremental(tcache_, prompt.data(), prompt.size());
    const size_t d = out.d, m = prompt.size();
    tokens_ = prompt;
    // h_m stays out of the cache: the next chain queries position m and may
    // only see h_1..h_{m-1}. It enters as a true state with the first verify.
    for (size_t i = 0; i + 1 < m; ++i)
        draft_.kv_append(dcache_, out.states.data() + i * d, /*is_true=*/true);
    spare_state_.assign(out.states.end() - static_cast<ptrdiff_t>(d), out.states.end());
    next_probs_ = softmax_double(out.logits.data() + (m - 1) * out.vocab, out.vocab);
    pending_ = false;
    prefilled_ = true;
}

Proposals SDSession::draft_chain(size_t gamma) {
    if (!prefilled_) throw UsageError("draft_chain before prefill");
    if (gamma == 0) throw UsageError("draft_chain: gamma must be positive");
    if (verified() + gamma > target_.config().t_max)
        throw UsageError("draft_chain: verify pass would exceed the context window");
    draft_.kv_reset_to_true(dcache_, nullptr, 0);  // drop an abandoned chain

    const size_t vocab = target_.config().vocab;
    const size_t V = tokens_.size();
    Proposals prop;
    prop.tokens.reserve(gamma);
    prop.q.reserve(gamma * vocab);
    int32_t tok = tokens_.back();
    for (size_t j = 1; j <= gamma; ++j) {
        const DraftStepOut step = draft_.draft_step(dcache_, tok, V + j - 1);
        std::vector<double> q = softmax_double(step.logits.data(), vocab);
        tok = cfg_.mode == SDMode::kGreedy ? argmax_float(step.logits.data(), vocab)
                                           : sample_index(q, rng_);
        prop.tokens.push_back(tok);
        prop.q.insert(prop.q.end(), q.begin(), q.end());
        if (cfg_.concat_draft_states && j < gamma)
            draft_.kv_append(dcache_, step.state.data(), /*is_true=*/false);
    }
    return prop;
}

Verdict SDSession::verify(const Proposals& prop) {
    if (!prefilled_) throw UsageError("verify before prefill");
    const size_t G = prop.tokens.size();
    if (G == 0) throw UsageError("verify: no proposals");
    const size_t vocab = target_.config().vocab;
    if (cfg_.mode == SDMode::kSampling && prop.q.size() != G * vocab)
        throw ShapeError("verify: draft distributions must be proposals x vocab");

    // One incremental forward covers the pending token (if any) plus every
    // proposal; row p+j-2 is the distribution the target assigns to proposal
    // j, and the last row feeds the bonus token on full acceptance.
    const size_t base = tcache_.filled;
    const size_t pend = pending_ ? 1 : 0;
    std::vector<int32_t> fwd;
    fwd.reserve(pend + G);
    if (pending_) fwd.push_back(tokens_.back());
    fwd.insert(fwd.end(), prop.tokens.begin(), prop.tokens.end());
    const ForwardOut out = target_.forward_incremental(tcache_, fwd.data(), fwd.size());

    const auto target_probs = [&](size_t j) -> std::vector<double> {
        if (!pending_ && j == 1) return next_probs_;
        return softmax_double(out.logits.data() + (pend + j - 2) * vocab, vocab);
    };

    Verdict v;
    v.accepted_mask.assign(G, 0);
    std::vector<double> pj, qj;
    size_t a = 0;
    while (a < G) {
        pj = target_probs(a + 1);
        const int32_t th = prop.tokens[a];
        bool keep;
        if (cfg_.mode == SDMode::kGreedy) {
            keep = argmax_double(pj) == th;
        } else {
            qj.assign(prop.q.begin() + a * vocab, prop.q.begin() + (a + 1) * vocab);
            keep = uniform_unit(rng_) < accept_probability(pj, qj, th);
        }
        if (!keep) break;
        v.accepted_mask[a] = 1;
        ++a;
    }
    v.accepted = a;
    v.full_accept = a == G;
    if (v.full_accept) {
        const std::vector<double> bonus =
            softmax_double(out.logits.data() + (pend + G - 1) * vocab, vocab);
        v.extra = cfg_.mode == SDMode::kGreedy ? argmax_double(bonus) : sample_index(bonus, rng_);
    } else if (cfg_.mode == SDMode::kGreedy) {
        v.extra = argmax_double(pj);
    } else {
        v.extra = sample_index(residual_distribution(pj, qj), rng_);
    }

    // The accepted prefix plus the correction/bonus enters the context; the
    // extra token becomes the new pending token. Rejected rows roll back.
    for (size_t i = 0; i < a; ++i) tokens_.push_back(prop.tokens[i]);
    tokens_.push_back(v.extra);
    tcache_.truncate(base + pend + a);

    const size_t d = out.d;
    std::vector<float> new_true;
    new_true.reserve((a + 1) * d);
    if (!pending_)
        new_true.insert(new_true.end(), spare_state_.begin(), spare_state_.end());
    new_true.insert(new_true.end(), out.states.begin(),
                    out.states.begin() + static_cast<ptrdiff_t>((pend + a) * d));
    draft_.kv_reset_to_true(dcache_, new_true.data(), a + 1);
    spare_state_.clear();
    next_probs_.clear();
    pending_ = true;
    return v;
}

SDResult sd_generate(const TargetModel& target, const DraftHead& draft, const SDConfig& cfg,
                     const std::vector<int32_t>& prompt, size_t max_new) {
    SDSession session(target, draft, cfg);
    session.prefill(prompt);
    SDResult res;
    res.metrics.gamma = cfg.gamma;
    const size_t t_max = target.config().t_max;
    bool saw_eos = false;
    while (!saw_eos && res.tokens.size() < max_new &&
           session.verified() + cfg.gamma <= t_max) {
        const auto t0 = Clock::now();
        const Proposals prop = session.draft_chain(cfg.gamma);
        const auto t1 = Clock::now();
        const size_t before = session.verified();
        const Verdict v = session.verify(prop);
        const auto t2 = Clock::now();

        SDIteration it;
        it.tau = v.tau();
        it.accepted = v.accepted_mask;
        it.t_draft_us = micros_between(t0, t1);
        it.t_verify_us = micros_between(t1, t2);
        res.metrics.total_tokens += it.tau;
        res.metrics.total_draft_us += it.t_draft_us;
        res.metrics.total_verify_us += it.t_verify_us;
        res.metrics.iterations.push_back(std::move(it));

        const auto& all = session.tokens();
        for (size_t i = before; i < all.size(); ++i) {
            res.tokens.push_back(all[i]);
            if (all[i] == Vocab::kEos) saw_eos = true;
        }
    }
    if (saw_eos) truncate_at_eos(res.tokens, Vocab::kEos);
    if (res.tokens.size() > max_new) res.tokens.resize(max_new);
    return res;
}

std::vector<int32_t> target_greedy_generate(const TargetModel& target,
                                            const std::vector<int32_t>& prompt,
                                            size_t max_new) {
    if (prompt.empty()) throw ValueError("target_greedy_generate: empty prompt");
    TargetKV cache = target.make_cache();
    ForwardOut out = target.forward_incremental(cache, prompt.data(), prompt.size());
    std::vector<int32_t> gen;
    int32_t next = argmax_float(out.logits.data() + (out.rows - 1) * out.vocab, out.vocab);
    while (gen.size() < max_new) {
        gen.push_back(next);
        if (next == Vocab::kEos) break;
        if (cache.filled >= target.config().t_max) break;  // window full
        out = target.forward_incremental(cache, &next, 1);
        next = argmax_float(out.logits.data(), out.vocab);
    }
    return gen;
}

void truncate_at_eos(std::vector<int32_t>& tokens, int32_t eos) {
    const auto it = std::find(tokens.begin(), tokens.end(), eos);
    if (it != tokens.end()) tokens.resize(static_cast<size_t>(it - tokens.begin()) + 1);
}

void write_eval_csv(const SDMetrics& m, std::ostream& os) {
    const auto flags = os.flags();
    const auto prec = os.precision();
    os << "iter,tau,T_d_us,T_v_us,accepted_mask\n";
    os << std::fixed << std::setprecision(3);
    for (size_t i = 0; i < m.iterations.size(); ++i) {
        const SDIteration& it = m.iterations[i];
        std::string mask(it.accepted.size(), '0');
        for (size_t j = 0; j < it.accepted.size(); ++j)
            if (it.accepted[j]) mask[j] = '1';
        os << (i + 1) << ',' << it.tau << ',' << it.t_draft_us << ',' << it.t_verify_us << ','
           << mask << '\n';
    }
    os.flags(flags);
    os.precision(prec);
}

void write_eval_summary(const SDMetrics& m, std::ostream& os) {
    const auto alpha = measure_alpha_profile(m);
    const auto flags = os.flags();
    const auto prec = os.precision();
    os << std::fixed << std::setprecision(4);
    os << "iterations         = " << m.iterations.size() << '\n';
    os << "gamma              = " << m.gamma << '\n';
    os << "total_tokens       = " << m.total_tokens << '\n';
    for (size_t i = 0; i < alpha.size(); ++i)
        os << "alpha[" << (i + 1) << "]           = " << alpha[i] << '\n';
    os << "mean_tau           = " << m.mean_tau() << '\n';
    os << "improvement_factor = " << improvement_factor(m) << '\n';
    const double secs = (m.total_draft_us + m.total_verify_us) * 1e-6;
    os << "tokens_per_sec     = " << static_cast<double>(m.total_tokens) / secs << '\n';
    os.flags(flags);
    os.precision(prec);
}

}  // namespace beagle
