#pragma once

// Equilibrium zero-coupon bonds under a random-walk aggregate endowment:
// exact pricing by lattice convolution of the increment law, yields in
// log-space, and the long-run limit (heterogeneous risk aversion) and bounds
// (heterogeneous impatience) via the Legendre transform of the log-MGF.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "caratree/equilibrium.hpp"
#include "caratree/rootfind.hpp"

namespace caratree {

/// Finite-support law of the i.i.d. non-negative endowment increments.
struct IncrementLaw {
    std::vector<double> support; // strictly increasing, >= 0
    std::vector<double> probs;   // > 0, summing to 1

    double mean() const {
        double m = 0.0;
        for (std::size_t j = 0; j < support.size(); ++j) m += support[j] * probs[j];
        return m;
    }
};

inline void validate_law(const IncrementLaw& law) {
    if (law.support.empty() || law.support.size() != law.probs.size())
        throw std::invalid_argument("increment law needs matching support and probabilities");
    double sum = 0.0;
    for (std::size_t j = 0; j < law.support.size(); ++j) {
        if (law.support[j] < 0.0) throw std::invalid_argument("increments must be non-negative");
        if (j > 0 && law.support[j] <= law.support[j - 1])
            throw std::invalid_argument("support must be strictly increasing");
        if (!(law.probs[j] > 0.0)) throw std::invalid_argument("probabilities must be positive");
        sum += law.probs[j];
    }
    if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument("probabilities must sum to 1");
    if (!(IncrementLaw{law.support, law.probs}.mean() > 0.0))
        throw std::invalid_argument("the increment mean must be positive");
}

/// Preferences of one agent in the infinite-horizon bond economy (equal
/// endowment shares are implicit in the aggregate-endowment formulation).
struct BondAgent {
    double gamma = 1.0;
    double rho = 0.0;
};

struct BondEconomy {
    std::vector<BondAgent> agents;
    IncrementLaw law;
};

inline void validate_bond_economy(const BondEconomy& e) {
    if (e.agents.empty()) throw std::invalid_argument("bond economy needs at least one agent");
    for (const BondAgent& a : e.agents) {
        if (!(a.gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
        if (a.rho < 0.0) throw std::invalid_argument("rho must be non-negative");
    }
    validate_law(e.law);
}

// ---------------------------------------------------------------------------
// Exact distribution of the walk on a common lattice
// ---------------------------------------------------------------------------

inline constexpr std::size_t kLatticeCap = 1'000'000; // documented memory cap

namespace detail {

inline double lattice_step(const std::vector<double>& support) {
    double g = 0.0;
    for (double s : support) {
        double a = g, b = s;
        while (b > 1e-9) {
            const double r = std::fmod(a, b);
            a = b;
            b = r;
        }
        g = a;
    }
    if (!(g > 0.0)) throw std::invalid_argument("support admits no positive common lattice step");
    for (double s : support)
        if (std::abs(s / g - std::round(s / g)) > 1e-6)
            throw std::invalid_argument("support values do not share a rational lattice");
    return g;
}

// pmf of eps_t = X_1 + ... + X_t on the lattice {0, h, 2h, ...}
inline std::vector<double> walk_pmf(const IncrementLaw& law, int t, double h) {
    std::vector<int> idx(law.support.size());
    int max_idx = 0;
    for (std::size_t j = 0; j < law.support.size(); ++j) {
        idx[j] = static_cast<int>(std::round(law.support[j] / h));
        max_idx = std::max(max_idx, idx[j]);
    }
    if (static_cast<std::size_t>(max_idx) * t + 1 > kLatticeCap)
        throw std::invalid_argument("lattice for the requested maturity exceeds the size cap");
    std::vector<double> pmf = {1.0};
    for (int step = 0; step < t; ++step) {
        std::vector<double> next(pmf.size() + max_idx, 0.0);
        for (std::size_t i = 0; i < pmf.size(); ++i) {
            if (pmf[i] == 0.0) continue;
            for (std::size_t j = 0; j < idx.size(); ++j) next[i + idx[j]] += pmf[i] * law.probs[j];
        }
        pmf = std::move(next);
    }
    return pmf;
}

} // namespace detail

/// log B^t of the zero-coupon bond maturing at t, priced under the candidate
/// equilibrium SPD with the given weights and normalized by xi_0 (the SPD
/// scale drops out of the long-run limits either way). Exact lattice
/// convolution; evaluated fully in log-space.
inline double log_bond_price(const BondEconomy& e, const std::vector<double>& weights, int t) {
    validate_bond_economy(e);
    if (t < 1) throw std::invalid_argument("maturity must be >= 1");
    std::vector<AgentSpec> shims(e.agents.size());
    for (std::size_t i = 0; i < e.agents.size(); ++i) {
        shims[i].gamma = e.agents[i].gamma;
        shims[i].rho = e.agents[i].rho;
    }
    const double h = detail::lattice_step(e.law.support);
    const std::vector<double> pmf = detail::walk_pmf(e.law, t, h);
    const detail::RegimeData rd = detail::regime_data(weights, shims, t);

    double max_term = -std::numeric_limits<double>::infinity();
    std::vector<double> terms;
    terms.reserve(pmf.size());
    for (std::size_t i = 0; i < pmf.size(); ++i) {
        if (pmf[i] == 0.0) continue;
        const double v = std::log(pmf[i]) + detail::log_xi(rd, shims, h * static_cast<double>(i));
        terms.push_back(v);
        max_term = std::max(max_term, v);
    }
    double acc = 0.0;
    for (double v : terms) acc += std::exp(v - max_term);
    const double log_raw = max_term + std::log(acc);

    const detail::RegimeData rd0 = detail::regime_data(weights, shims, 0);
    return log_raw - detail::log_xi(rd0, shims, 0.0);
}

inline double bond_price(const BondEconomy& e, const std::vector<double>& weights, int t) {
    return std::exp(log_bond_price(e, weights, t));
}

/// Y(0, t) = -log(B^t) / t.
inline double yield(const BondEconomy& e, const std::vector<double>& weights, int t) {
    return -log_bond_price(e, weights, t) / t;
}

/// Monte-Carlo estimate of B^t (independent oracle for the convolution path).
struct McEstimate {
    double value = 0.0;
    double std_error = 0.0;
    long paths = 0;
};

inline McEstimate mc_bond_price(const BondEconomy& e, const std::vector<double>& weights, int t,
                                long paths, std::uint64_t seed) {
    validate_bond_economy(e);
    std::vector<AgentSpec> shims(e.agents.size());
    for (std::size_t i = 0; i < e.agents.size(); ++i) {
        shims[i].gamma = e.agents[i].gamma;
        shims[i].rho = e.agents[i].rho;
    }
    const detail::RegimeData rd = detail::regime_data(weights, shims, t);
    const detail::RegimeData rd0 = detail::regime_data(weights, shims, 0);
    const double log_xi0 = detail::log_xi(rd0, shims, 0.0);

    std::vector<double> cum(e.law.probs.size());
    double acc = 0.0;
    for (std::size_t j = 0; j < cum.size(); ++j) {
        acc += e.law.probs[j];
        cum[j] = acc;
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double sum = 0.0, sum2 = 0.0;
    for (long p = 0; p < paths; ++p) {
        double eps = 0.0;
        for (int s = 0; s < t; ++s) {
            const double r = u(rng);
            std::size_t j = 0;
            while (j + 1 < cum.size() && r > cum[j]) ++j;
            eps += e.law.support[j];
        }
        const double v = std::exp(detail::log_xi(rd, shims, eps) - log_xi0);
        sum += v;
        sum2 += v * v;
    }
    McEstimate est;
    est.paths = paths;
    est.value = sum / paths;
    est.std_error = std::sqrt(std::max(0.0, sum2 / paths - est.value * est.value) /
                              static_cast<double>(paths));
    return est;
}

// ---------------------------------------------------------------------------
// Long-run limit under heterogeneous risk aversion
// ---------------------------------------------------------------------------

/// lim_t Y(0,t) = rho - log E[exp(-X_1 / sum_l 1/gamma_l)] for agents sharing
/// the impatience rate (the weights drop out of the limit).
inline double hetero_gamma_limit(const BondEconomy& e) {
    validate_bond_economy(e);
    const double rho = e.agents.front().rho;
    for (const BondAgent& a : e.agents)
        if (a.rho != rho)
            throw std::invalid_argument("the limit requires a common impatience rate");
    double inv_sum = 0.0;
    for (const BondAgent& a : e.agents) inv_sum += 1.0 / a.gamma;
    double acc = 0.0;
    for (std::size_t j = 0; j < e.law.support.size(); ++j)
        acc += e.law.probs[j] * std::exp(-e.law.support[j] / inv_sum);
    return rho - std::log(acc);
}

// ---------------------------------------------------------------------------
// Log-MGF, Legendre transform, and the heterogeneous-impatience bounds
// ---------------------------------------------------------------------------

/// log E[e^{x X_1}], evaluated with a shift so any x is safe.
inline double log_mgf(const IncrementLaw& law, double x) {
    double shift = -std::numeric_limits<double>::infinity();
    for (double s : law.support) shift = std::max(shift, x * s);
    double acc = 0.0;
    for (std::size_t j = 0; j < law.support.size(); ++j)
        acc += law.probs[j] * std::exp(x * law.support[j] - shift);
    return shift + std::log(acc);
}

/// Value of the Legendre transform; +infinity is a tagged state, never a
/// sentinel float.
struct LegendreValue {
    bool finite = true;
    double value = 0.0;
};

/// Lambda*(y) = sup_x (x y - Lambda(x)): golden-section maximization of the
/// concave objective with a Newton polish on the stationarity condition.
/// Outside the closed convex hull of the support the value is +infinity; at
/// the endpoints it equals -log p(endpoint).
inline LegendreValue legendre(const IncrementLaw& law, double y) {
    validate_law(law);
    const double lo = law.support.front(), hi = law.support.back();
    if (y < lo || y > hi) return {false, 0.0};
    if (y == lo) return {true, -std::log(law.probs.front())};
    if (y == hi) return {true, -std::log(law.probs.back())};
    // strictly inside (lo, hi); the law is non-degenerate here
    auto objective = [&](double x) { return x * y - log_mgf(law, x); };
    auto dmgf = [&](double x) {
        // Lambda'(x), shift-stabilized
        double shift = -std::numeric_limits<double>::infinity();
        for (double s : law.support) shift = std::max(shift, x * s);
        double num = 0.0, den = 0.0;
        for (std::size_t j = 0; j < law.support.size(); ++j) {
            const double w = law.probs[j] * std::exp(x * law.support[j] - shift);
            num += w * law.support[j];
            den += w;
        }
        return num / den;
    };
    // expand a bracket [a, b] with Lambda'(a) < y < Lambda'(b)
    double a = -1.0, b = 1.0;
    for (int it = 0; it < 300 && dmgf(a) > y; ++it) a *= 2.0;
    for (int it = 0; it < 300 && dmgf(b) < y; ++it) b *= 2.0;
    // golden-section on the concave objective
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - gr * (b - a), d = a + gr * (b - a);
    double fc = objective(c), fd = objective(d);
    for (int it = 0; it < 300 && (b - a) > 1e-12 * std::max(1.0, std::abs(a) + std::abs(b)); ++it) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - gr * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + gr * (b - a);
            fd = objective(d);
        }
    }
    double x = 0.5 * (a + b);
    // Newton polish on Lambda'(x) = y
    for (int it = 0; it < 8; ++it) {
        double shift = -std::numeric_limits<double>::infinity();
        for (double s : law.support) shift = std::max(shift, x * s);
        double m0 = 0.0, m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < law.support.size(); ++j) {
            const double w = law.probs[j] * std::exp(x * law.support[j] - shift);
            m0 += w;
            m1 += w * law.support[j];
            m2 += w * law.support[j] * law.support[j];
        }
        const double mean = m1 / m0;
        const double var = m2 / m0 - mean * mean;
        if (var <= 0.0) break;
        const double step = (mean - y) / var;
        x -= step;
        if (std::abs(step) <= 1e-14 * std::max(1.0, std::abs(x))) break;
    }
    return {true, x * y - log_mgf(law, x)};
}

/// inf of Lambda* over an interval intersected with the support hull;
/// convexity reduces it to an endpoint or the mean. Open intervals share the
/// closed value (Lambda* is continuous on the hull; degenerate intervals are
/// read as the limit from within).
inline LegendreValue legendre_inf(const IncrementLaw& law, double lo, double hi) {
    const double slo = law.support.front(), shi = law.support.back();
    const double a = std::max(lo, slo), b = std::min(hi, shi);
    if (a > b) return {false, 0.0};
    const double m = law.mean();
    if (m >= a && m <= b) return {true, 0.0};
    return legendre(law, m < a ? a : b);
}

struct YieldBounds {
    double lower = 0.0; // min_j a_j
    double upper = 0.0; // min_j b_j
    std::vector<double> a; // a_1..a_N
    std::vector<double> b; // b_2..b_N
    int t_prime = 0;    // ordering threshold for the given weights
};

/// Long-run yield bounds for economies with a common gamma and decreasing
/// impatience rates rho_1 > ... > rho_N:
/// liminf Y >= min_j a_j and limsup Y <= min_j b_j.
inline YieldBounds yield_bounds(const BondEconomy& e, const std::vector<double>& weights) {
    validate_bond_economy(e);
    const int N = static_cast<int>(e.agents.size());
    const double gamma = e.agents.front().gamma;
    for (const BondAgent& a : e.agents)
        if (a.gamma != gamma) throw std::invalid_argument("the bounds require a common gamma");
    for (int i = 0; i + 1 < N; ++i)
        if (e.agents[i].rho < e.agents[i + 1].rho)
            throw std::invalid_argument("impatience rates must be non-increasing");

    auto rho = [&](int j) { return e.agents[j - 1].rho; }; // 1-based
    YieldBounds out;
    const double inf_val = std::numeric_limits<double>::infinity();
    {
        double lo1 = 0.0;
        for (int l = 2; l <= N; ++l) lo1 += (rho(1) - rho(l)) / gamma;
        const LegendreValue v = legendre_inf(e.law, lo1, std::numeric_limits<double>::max());
        out.a.push_back(v.finite ? rho(1) + v.value : inf_val);
    }
    for (int j = 2; j <= N; ++j) {
        double lo = 0.0, hi = 0.0;
        for (int l = j + 1; l <= N; ++l) lo += (rho(j) - rho(l)) / gamma;
        for (int l = j; l <= N; ++l) hi += (rho(j - 1) - rho(l)) / gamma;
        // the open-interval infimum equals the closed one: Lambda* is
        // continuous on the hull, degenerate intervals read as the limit
        // from within
        const LegendreValue v = legendre_inf(e.law, lo, hi);
        out.a.push_back(v.finite ? rho(j) + v.value : inf_val);
        out.b.push_back(v.finite ? rho(j - 1) + v.value : inf_val);
    }
    out.lower = *std::min_element(out.a.begin(), out.a.end());
    out.upper = out.b.empty() ? inf_val : *std::min_element(out.b.begin(), out.b.end());
    if (out.lower > out.upper)
        throw std::logic_error("yield bounds crossed; inputs violate the bound hypotheses");

    // smallest integer time from which lambda_j e^{rho_j t} is strictly
    // decreasing in j (the ordering the regime formulas presume)
    double tp = 0.0;
    for (int j = 1; j <= N; ++j)
        for (int l = j + 1; l <= N; ++l)
            if (rho(j) > rho(l))
                tp = std::max(tp, std::log(weights[l - 1] / weights[j - 1]) / (rho(j) - rho(l)));
    out.t_prime = std::max(0, static_cast<int>(std::ceil(tp)));
    return out;
}

} // namespace caratree
