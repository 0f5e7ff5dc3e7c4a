#pragma once

// Independent reference for the projection decomposition: solves the normal
// equations R^T R c = R^T e directly with Gaussian elimination.

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "wavesep/metrics.hpp"
#include "wavesep/rng.hpp"

namespace wavesep::testing {

inline std::vector<double> solve_dense(std::vector<std::vector<double>> a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
        std::swap(a[c], a[piv]);
        std::swap(b[c], b[piv]);
        if (a[c][c] == 0) throw std::runtime_error("singular normal equations");
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = a[r][c] / a[c][c];
            for (std::size_t j = c; j < n; ++j) a[r][j] -= f * a[c][j];
            b[r] -= f * b[c];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t j = i + 1; j < n; ++j) s -= a[i][j] * x[j];
        x[i] = s / a[i][i];
    }
    return x;
}

inline double dot(std::span<const Real> a, std::span<const Real> b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
    return s;
}

// All references must be non-silent and linearly independent.
inline Decomposition naive_decompose(std::span<const Real> est, const std::vector<std::span<const Real>> &refs,
                                     std::size_t target) {
    const std::size_t n = est.size(), m = refs.size();
    std::vector<std::vector<double>> gram(m, std::vector<double>(m));
    std::vector<double> rhs(m);
    for (std::size_t i = 0; i < m; ++i) {
        rhs[i] = dot(refs[i], est);
        for (std::size_t j = 0; j < m; ++j) gram[i][j] = dot(refs[i], refs[j]);
    }
    const auto c = solve_dense(gram, rhs);
    const double a = rhs[target] / gram[target][target];
    Decomposition d;
    d.target.resize(n);
    d.interference.resize(n);
    d.artifacts.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        double all = 0;
        for (std::size_t i = 0; i < m; ++i) all += c[i] * refs[i][t];
        d.target[t] = a * refs[target][t];
        d.interference[t] = all - d.target[t];
        d.artifacts[t] = est[t] - all;
    }
    return d;
}

inline double energy(const std::vector<double> &x) {
    double e = 0;
    for (double v : x) e += v * v;
    return e;
}

inline double db(double num, double den) { return 10 * std::log10(num / den); }

// Scores straight from the definitions, uncapped.
inline SeparationScores naive_scores(const Decomposition &d) {
    std::vector<double> dist(d.target.size()), si(d.target.size());
    for (std::size_t t = 0; t < dist.size(); ++t) {
        dist[t] = d.interference[t] + d.artifacts[t];
        si[t] = d.target[t] + d.interference[t];
    }
    return {db(energy(d.target), energy(dist)), db(energy(d.target), energy(d.interference)),
            db(energy(si), energy(d.artifacts))};
}

struct MetricCase {
    std::vector<std::vector<Real>> refs;
    std::vector<Real> estimate;
    std::size_t target = 0;
};

// Small random case: 2-4 noise references of 16-96 samples and an estimate
// mixing them with additive noise.
inline MetricCase random_metric_case(Rng &rng) {
    MetricCase c;
    const std::size_t m = 2 + rng.next_u64() % 3;
    const std::size_t n = 16 + rng.next_u64() % 81;
    c.refs.assign(m, std::vector<Real>(n));
    for (auto &r : c.refs)
        for (auto &v : r) v = static_cast<Real>(rng.uniform(-1, 1));
    c.target = rng.next_u64() % m;
    c.estimate.assign(n, 0);
    for (std::size_t i = 0; i < m; ++i) {
        const double w = i == c.target ? rng.uniform(0.5, 1.5) : rng.uniform(-0.5, 0.5);
        for (std::size_t t = 0; t < n; ++t) c.estimate[t] += static_cast<Real>(w * c.refs[i][t]);
    }
    const double noise = rng.uniform(0.01, 0.5);
    for (auto &v : c.estimate) v += static_cast<Real>(noise * rng.uniform(-1, 1));
    return c;
}

inline std::vector<std::span<const Real>> spans(const std::vector<std::vector<Real>> &v) {
    return {v.begin(), v.end()};
}

inline double max_abs_diff(const std::vector<double> &a, const std::vector<double> &b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Worst disagreement (absolute, on components and on dB scores) between the
// library and the oracle for one case.
inline double oracle_disagreement(const MetricCase &c) {
    const auto refs = spans(c.refs);
    const auto lib = decompose(c.estimate, refs, c.target);
    const auto ref = naive_decompose(c.estimate, refs, c.target);
    double worst = std::max({max_abs_diff(lib.target, ref.target), max_abs_diff(lib.interference, ref.interference),
                             max_abs_diff(lib.artifacts, ref.artifacts)});
    const auto s = sdr_sir_sar(lib), o = naive_scores(ref);
    worst = std::max({worst, std::abs(s.sdr_db - o.sdr_db), std::abs(s.sir_db - o.sir_db),
                      std::abs(s.sar_db - o.sar_db)});
    return worst;
}

// Two orthogonal unit-energy sinusoids; estimate = s1 + 0.1 s2 has
// SIR = SDR = 20 dB exactly and no artifacts.
inline MetricCase twenty_db_case() {
    MetricCase c;
    const std::size_t n = 800;
    c.refs.assign(2, std::vector<Real>(n));
    for (std::size_t t = 0; t < n; ++t) {
        c.refs[0][t] = static_cast<Real>(std::sin(2 * std::numbers::pi * 5.0 * double(t) / double(n)));
        c.refs[1][t] = static_cast<Real>(std::sin(2 * std::numbers::pi * 11.0 * double(t) / double(n)));
    }
    c.estimate.resize(n);
    for (std::size_t t = 0; t < n; ++t) c.estimate[t] = c.refs[0][t] + Real(0.1) * c.refs[1][t];
    return c;
}

}  // namespace wavesep::testing
