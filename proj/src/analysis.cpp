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

#include "beagle/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "beagle/common.hpp"

namespace beagle {

namespace {

// Slack for inequality verdicts so mathematically-tight cases survive
// rounding.
constexpr double kBoundTol = 1e-12;

void validate_profile(const char* op, const AcceptanceProfile& profile) {
    if (profile.alpha.empty())
        throw ValueError(std::string(op) + ": profile must contain at least one position");
    for (double a : profile.alpha)
        if (!(a >= 0.0 && a <= 1.0))
            throw ValueError(std::string(op) + ": acceptance rates must lie in [0, 1]");
}

void validate_dist(const char* op, const char* which, const std::vector<double>& d) {
    if (d.empty()) throw ValueError(std::string(op) + ": " + which + " must be non-empty");
    double sum = 0.0;
    for (double x : d) {
        if (!std::isfinite(x) || x < 0.0)
            throw ValueError(std::string(op) + ": " + which +
                             " entries must be finite and nonnegative");
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw ValueError(std::string(op) + ": " + which + " must sum to 1");
}

void validate_pair(const char* op, const DistPair& pair) {
    if (pair.p.size() != pair.q.size())
        throw ShapeError(std::string(op) + ": p and q must have equal length");
    validate_dist(op, "p", pair.p);
    validate_dist(op, "q", pair.q);
}

double cross_entropy(const char* op, const std::vector<double>& p, const std::vector<double>& q) {
    double ce = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        if (q[i] <= 0.0)
            throw ValueError(std::string(op) + ": q must be positive on the support of p");
        ce -= p[i] * std::log(q[i]);
    }
    return ce;
}

double dot(const std::vector<double>& p, const std::vector<double>& q) {
    double s = 0.0;
    for (size_t i = 0; i < p.size(); ++i) s += p[i] * q[i];
    return s;
}

size_t sample_index(const std::vector<double>& dist, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double u = unit(rng);
    double cum = 0.0;
    size_t last_positive = dist.size();
    for (size_t i = 0; i < dist.size(); ++i) {
        if (dist[i] <= 0.0) continue;
        last_positive = i;
        cum += dist[i];
        if (u < cum) return i;
    }
    if (last_positive == dist.size())
        throw Error("mc_acceptance_oracle: cannot sample from a zero-mass distribution");
    return last_positive;  // rounding shortfall at the tail
}

MCEstimate finish_estimate(double sum, double sumsq, size_t trials) {
    MCEstimate e;
    e.trials = trials;
    e.mean = sum / double(trials);
    if (trials > 1) {
        double var = (sumsq - double(trials) * e.mean * e.mean) / double(trials - 1);
        if (var < 0.0) var = 0.0;
        e.std_error = std::sqrt(var / double(trials));
    }
    return e;
}

}  // namespace

double expected_acceptance_length(const AcceptanceProfile& profile) {
    validate_profile("expected_acceptance_length", profile);
    double run = 1.0, total = 0.0;
    for (double a : profile.alpha) {
        run *= a;
        total += run;
    }
    return total;
}

double taylor_surrogate_J(const AcceptanceProfile& profile) {
    validate_profile("taylor_surrogate_J", profile);
    const size_t k = profile.k();
    double j = double(k);
    for (size_t i = 0; i < k; ++i) {
        if (profile.alpha[i] <= 0.0)
            throw ValueError("taylor_surrogate_J: acceptance rates must be strictly positive");
        j += double(k - i) * std::log(profile.alpha[i]);
    }
    return j;
}

AcceptanceProfile geometric_profile(const DegradationModel& model, size_t k) {
    if (!(model.alpha1 >= 0.0 && model.alpha1 <= 1.0))
        throw ValueError("geometric_profile: alpha1 must lie in [0, 1]");
    if (!(model.r > 0.0 && model.r <= 1.0))
        throw ValueError("geometric_profile: r must lie in (0, 1]");
    if (k == 0) throw ValueError("geometric_profile: k must be at least 1");
    AcceptanceProfile out;
    out.alpha.reserve(k);
    double a = model.alpha1;
    for (size_t i = 0; i < k; ++i) {
        out.alpha.push_back(a);
        a *= model.r;
    }
    return out;
}

JensenGap jensen_gap_check(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size())
        throw ShapeError("jensen_gap_check: p and q must have equal length");
    validate_dist("jensen_gap_check", "p", p);
    validate_dist("jensen_gap_check", "q", q);
    JensenGap g;
    g.lhs = cross_entropy("jensen_gap_check", p, q);
    g.rhs = -std::log(dot(p, q));
    g.holds = g.lhs >= g.rhs - kBoundTol;
    return g;
}

double agreement_rate(const std::vector<double>& p, const std::vector<double>& q) {
    validate_pair("agreement_rate", DistPair{p, q});
    return dot(p, q);
}

double acceptance_rate(const std::vector<double>& p, const std::vector<double>& q) {
    validate_pair("acceptance_rate", DistPair{p, q});
    double s = 0.0;
    for (size_t i = 0; i < p.size(); ++i) s += std::min(p[i], q[i]);
    return s;
}

SurrogateReport surrogate_bound_check(size_t k, const std::vector<DistPair>& family) {
    if (k == 0)
        throw ValueError("surrogate_bound_check: window must contain at least one position");
    if (family.size() != k)
        throw ShapeError("surrogate_bound_check: family must supply exactly k distribution pairs");
    SurrogateReport rep;
    rep.alpha.reserve(k);
    for (size_t i = 0; i < k; ++i) {
        validate_pair("surrogate_bound_check", family[i]);
        const double ce = cross_entropy("surrogate_bound_check", family[i].p, family[i].q);
        // Positive because q carries mass wherever p does (just checked).
        const double a = dot(family[i].p, family[i].q);
        const double w = double(k - i);
        rep.alpha.push_back(a);
        rep.loss_early += ce;
        rep.loss_late += w * ce;
        rep.late_bound -= w * std::log(a);
    }
    rep.early_bound = -double(k) * std::log(rep.alpha.front());
    rep.early_gap = rep.loss_early - rep.early_bound;
    rep.late_gap = rep.loss_late - rep.late_bound;
    rep.early_holds = rep.early_gap >= -kBoundTol;
    rep.late_holds = rep.late_gap >= -kBoundTol;
    return rep;
}

MCEstimate mc_acceptance_oracle(const AcceptanceProfile& profile, size_t trials, uint64_t seed) {
    validate_profile("mc_acceptance_oracle", profile);
    if (trials == 0) throw ValueError("mc_acceptance_oracle: trials must be at least 1");
    Rng rng = make_rng(derive_seed(seed, /*stream=*/11));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double sum = 0.0, sumsq = 0.0;
    for (size_t t = 0; t < trials; ++t) {
        size_t len = 0;
        for (double a : profile.alpha) {
            if (!(unit(rng) < a)) break;
            ++len;
        }
        sum += double(len);
        sumsq += double(len) * double(len);
    }
    return finish_estimate(sum, sumsq, trials);
}

MCEstimate mc_acceptance_oracle(const std::vector<DistPair>& family, size_t trials,
                                uint64_t seed) {
    if (family.empty())
        throw ValueError("mc_acceptance_oracle: family must contain at least one pair");
    for (const auto& pair : family) validate_pair("mc_acceptance_oracle", pair);
    if (trials == 0) throw ValueError("mc_acceptance_oracle: trials must be at least 1");
    Rng rng = make_rng(derive_seed(seed, /*stream=*/13));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double sum = 0.0, sumsq = 0.0;
    for (size_t t = 0; t < trials; ++t) {
        size_t len = 0;
        for (const auto& pair : family) {
            const size_t tok = sample_index(pair.q, rng);
            const double keep = std::min(1.0, pair.p[tok] / pair.q[tok]);
            if (!(unit(rng) < keep)) break;
            ++len;
        }
        sum += double(len);
        sumsq += double(len) * double(len);
    }
    return finish_estimate(sum, sumsq, trials);
}

GeometricFit fit_geometric(const AcceptanceProfile& profile) {
    validate_profile("fit_geometric", profile);
    const size_t k = profile.k();
    if (k < 2) throw ValueError("fit_geometric: need at least two positions");
    std::vector<double> y(k);
    for (size_t i = 0; i < k; ++i) {
        if (profile.alpha[i] <= 0.0)
            throw ValueError("fit_geometric: acceptance rates must be strictly positive");
        y[i] = std::log(profile.alpha[i]);
    }
    const double xbar = double(k - 1) / 2.0;
    double ybar = 0.0;
    for (double v : y) ybar += v;
    ybar /= double(k);
    double sxx = 0.0, sxy = 0.0;
    for (size_t i = 0; i < k; ++i) {
        const double dx = double(i) - xbar;
        sxx += dx * dx;
        sxy += dx * (y[i] - ybar);
    }
    const double slope = sxy / sxx;
    const double intercept = ybar - slope * xbar;
    double ss = 0.0;
    for (size_t i = 0; i < k; ++i) {
        const double resid = y[i] - (intercept + slope * double(i));
        ss += resid * resid;
    }
    GeometricFit fit;
    fit.alpha1 = std::exp(intercept);
    fit.r = std::exp(slope);
    fit.rmse = std::sqrt(ss / double(k));
    return fit;
}

AnalyzeReport analyze_metrics(const SDMetrics& metrics) {
    AnalyzeReport r;
    r.alpha = measure_alpha_profile(metrics);
    r.iterations = metrics.iterations.size();
    r.k = r.alpha.size();
    const AcceptanceProfile measured{r.alpha};
    r.e_length = expected_acceptance_length(measured);
    r.mean_tau = metrics.mean_tau();
    r.tau_consistency = std::abs(r.e_length + 1.0 - r.mean_tau);

    size_t k_pos = 0;
    while (k_pos < r.k && r.alpha[k_pos] > 0.0) ++k_pos;

    r.has_surrogate = k_pos == r.k;
    if (r.has_surrogate) {
        r.taylor_j = taylor_surrogate_J(measured);
        // Point-mass targets realize the measured rates exactly with every
        // Jensen step tight, which pins the bound arithmetic to the profile.
        std::vector<DistPair> family;
        family.reserve(r.k);
        for (double a : r.alpha) family.push_back({{1.0, 0.0}, {a, 1.0 - a}});
        r.bounds = surrogate_bound_check(r.k, family);
    }

    r.has_fit = k_pos >= 2;
    if (r.has_fit) {
        const AcceptanceProfile prefix{
            std::vector<double>(r.alpha.begin(), r.alpha.begin() + ptrdiff_t(k_pos))};
        r.fit = fit_geometric(prefix);
    }

    r.has_improvement = metrics.total_verify_us > 0.0;
    if (r.has_improvement) r.improvement = improvement_factor(metrics);
    return r;
}

namespace {

std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

[[noreturn]] void bad_line(size_t line_no, const std::string& what) {
    throw IoError("eval csv line " + std::to_string(line_no) + ": " + what);
}

size_t parse_count(const std::string& s, size_t line_no, const char* col) {
    unsigned long long v = 0;
    size_t pos = 0;
    bool ok = !s.empty();
    if (ok) {
        try {
            v = std::stoull(s, &pos);
        } catch (const std::exception&) {
            ok = false;
        }
        if (ok && pos != s.size()) ok = false;
    }
    if (!ok) bad_line(line_no, std::string("invalid value in column '") + col + "'");
    return static_cast<size_t>(v);
}

double parse_number(const std::string& s, size_t line_no, const char* col) {
    double v = 0.0;
    size_t pos = 0;
    bool ok = !s.empty();
    if (ok) {
        try {
            v = std::stod(s, &pos);
        } catch (const std::exception&) {
            ok = false;
        }
        if (ok && pos != s.size()) ok = false;
    }
    if (!ok) bad_line(line_no, std::string("invalid value in column '") + col + "'");
    return v;
}

}  // namespace

SDMetrics read_eval_csv(std::istream& is) {
    // lines starting with '#' are comments (provenance headers and markers);
    // they may appear anywhere but still count toward reported line numbers
    std::string line;
    size_t line_no = 0;
    bool have_header = false;
    while (std::getline(is, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty() || line[0] == '#') continue;
        have_header = true;
        break;
    }
    if (!have_header) throw IoError("eval csv: missing header");
    static const std::vector<std::string> kColumns = {"iter", "tau", "T_d_us", "T_v_us",
                                                      "accepted_mask"};
    const auto header = split_fields(line);
    for (const auto& name : kColumns)
        if (std::find(header.begin(), header.end(), name) == header.end())
            bad_line(line_no, "missing column '" + name + "'");
    if (header != kColumns)
        bad_line(line_no, "columns must be exactly iter,tau,T_d_us,T_v_us,accepted_mask");

    SDMetrics m;
    while (std::getline(is, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty() || line[0] == '#') continue;
        const auto f = split_fields(line);
        if (f.size() != kColumns.size()) bad_line(line_no, "expected 5 comma-separated fields");
        parse_count(f[0], line_no, "iter");  // sequence number; informational
        SDIteration it;
        it.tau = parse_count(f[1], line_no, "tau");
        it.t_draft_us = parse_number(f[2], line_no, "T_d_us");
        it.t_verify_us = parse_number(f[3], line_no, "T_v_us");
        const std::string& mask = f[4];
        if (mask.empty()) bad_line(line_no, "accepted_mask must be non-empty");
        it.accepted.reserve(mask.size());
        bool seen_zero = false;
        size_t prefix = 0;
        for (char c : mask) {
            if (c != '0' && c != '1')
                bad_line(line_no, "accepted_mask must contain only 0 and 1");
            if (c == '1') {
                if (seen_zero)
                    bad_line(line_no, "accepted_mask cannot accept past the first rejection");
                ++prefix;
            } else {
                seen_zero = true;
            }
            it.accepted.push_back(c == '1' ? 1 : 0);
        }
        if (it.tau != prefix + 1) bad_line(line_no, "tau inconsistent with accepted_mask");
        if (m.iterations.empty()) {
            m.gamma = mask.size();
        } else if (mask.size() != m.gamma) {
            bad_line(line_no, "accepted_mask length disagrees with earlier rows");
        }
        m.total_tokens += it.tau;
        m.total_draft_us += it.t_draft_us;
        m.total_verify_us += it.t_verify_us;
        m.iterations.push_back(std::move(it));
    }
    if (m.iterations.empty()) throw IoError("eval csv: no data rows");
    return m;
}

void write_analysis_csv(const AnalyzeReport& r, std::ostream& os) {
    const auto flags = os.flags();
    const auto prec = os.precision();
    os.unsetf(std::ios::floatfield);
    os << std::setprecision(12);
    os << "key,value\n";
    os << "iterations," << r.iterations << '\n';
    os << "k," << r.k << '\n';
    for (size_t i = 0; i < r.alpha.size(); ++i)
        os << "alpha." << (i + 1) << ',' << r.alpha[i] << '\n';
    os << "e_length," << r.e_length << '\n';
    os << "mean_tau," << r.mean_tau << '\n';
    os << "tau_consistency," << r.tau_consistency << '\n';
    if (r.has_surrogate) {
        os << "taylor_j," << r.taylor_j << '\n';
        os << "late_loss," << r.bounds.loss_late << '\n';
        os << "late_bound," << r.bounds.late_bound << '\n';
        os << "late_gap," << r.bounds.late_gap << '\n';
        os << "late_holds," << (r.bounds.late_holds ? 1 : 0) << '\n';
        os << "early_loss," << r.bounds.loss_early << '\n';
        os << "early_bound," << r.bounds.early_bound << '\n';
        os << "early_gap," << r.bounds.early_gap << '\n';
        os << "early_holds," << (r.bounds.early_holds ? 1 : 0) << '\n';
    }
    if (r.has_fit) {
        os << "fit_alpha1," << r.fit.alpha1 << '\n';
        os << "fit_r," << r.fit.r << '\n';
        os << "fit_rmse," << r.fit.rmse << '\n';
    }
    if (r.has_improvement) os << "improvement_factor," << r.improvement << '\n';
    os.flags(flags);
    os.precision(prec);
}

void write_analysis_summary(const AnalyzeReport& r, std::ostream& os) {
    const auto flags = os.flags();
    const auto prec = os.precision();
    os << std::fixed << std::setprecision(4);
    const auto key = [&os](const std::string& k) -> std::ostream& {
        os << k;
        for (size_t i = k.size(); i < 18; ++i) os << ' ';
        os << " = ";
        return os;
    };
    key("iterations") << r.iterations << '\n';
    key("k") << r.k << '\n';
    for (size_t i = 0; i < r.alpha.size(); ++i)
        key("alpha[" + std::to_string(i + 1) + "]") << r.alpha[i] << '\n';
    key("e_length") << r.e_length << '\n';
    key("mean_tau") << r.mean_tau << '\n';
    key("tau_consistency") << r.tau_consistency << '\n';
    if (r.has_surrogate) {
        key("taylor_j") << r.taylor_j << '\n';
        key("late_loss") << r.bounds.loss_late << '\n';
        key("late_bound") << r.bounds.late_bound << '\n';
        key("late_holds") << (r.bounds.late_holds ? "yes" : "no") << '\n';
        key("early_loss") << r.bounds.loss_early << '\n';
        key("early_bound") << r.bounds.early_bound << '\n';
        key("early_holds") << (r.bounds.early_holds ? "yes" : "no") << '\n';
    }
    if (r.has_fit) {
        key("fit_alpha1") << r.fit.alpha1 << '\n';
        key("fit_r") << r.fit.r << '\n';
        key("fit_rmse") << r.fit.rmse << '\n';
    }
    if (r.has_improvement) key("improvement_factor") << r.improvement << '\n';
    os.flags(flags);
    os.precision(prec);
}

}  // namespace beagle
