#pragma once

// Complete-market exponential-utility optimization with and without the
// non-negativity constraint. The constrained optimum is the positive part of
// the unconstrained one at a different multiplier, found by bracketed
// bisection with a Newton polish on the budget function psi.

#include <cmath>
#include <stdexcept>

#include "caratree/market.hpp"
#include "caratree/rootfind.hpp"
#include "caratree/tree.hpp"

namespace caratree {

struct AgentSpec {
    double gamma = 1.0;        // absolute risk aversion, > 0
    double rho = 0.0;          // impatience, >= 0
    AdaptedProcess endowment;  // levels 0..T, non-negative nodewise
};

inline void validate_agent(const Tree& t, const AgentSpec& a) {
    if (!(a.gamma > 0.0)) throw std::invalid_argument("risk aversion gamma must be > 0");
    if (a.rho < 0.0) throw std::invalid_argument("impatience rho must be >= 0");
    if (a.endowment.first_level() != 0 || a.endowment.last_level() != t.horizon())
        throw std::invalid_argument("endowment must cover levels 0..T");
    for (int k = 0; k <= t.horizon(); ++k)
        for (int n = 0; n < t.level_size(k); ++n)
            if (a.endowment.at(k, n) < 0.0)
                throw std::invalid_argument("endowment must be non-negative");
}

/// sum_k e^{-rho k} E[-e^{-gamma c_k}].
inline double cara_utility(const Tree& t, const AgentSpec& a, const AdaptedProcess& c) {
    double u = 0.0;
    for (int k = 0; k <= t.horizon(); ++k)
        for (int n = 0; n < t.level_size(k); ++n)
            u += t.prob(k, n) * std::exp(-a.rho * k) * (-std::exp(-a.gamma * c.at(k, n)));
    return u;
}

/// I(y) = (1/gamma) (log(gamma/y))^+, the constrained inverse marginal utility.
inline double inverse_marginal(double gamma, double y) {
    const double v = std::log(gamma / y);
    return v > 0.0 ? v / gamma : 0.0;
}

struct ConsumptionSolution {
    AdaptedProcess consumption;
    double multiplier = 0.0;
    double utility = 0.0;
    double budget_residual = 0.0;
};

/// psi(lambda) = sum_k E[xi_k I(lambda e^{rho k} xi_k)]. Decreasing and
/// continuous, with psi(0+) = +inf and psi(inf) = 0.
inline double psi(double lambda, const AgentSpec& a, const Tree& t, const SPD& spd) {
    if (!(lambda > 0.0)) throw std::invalid_argument("psi requires lambda > 0");
    double acc = 0.0;
    for (int k = 0; k <= t.horizon(); ++k) {
        const double tilt = lambda * std::exp(a.rho * k);
        for (int n = 0; n < t.level_size(k); ++n) {
            const double x = spd.xi.at(k, n);
            acc += t.prob(k, n) * x * inverse_marginal(a.gamma, tilt * x);
        }
    }
    return acc;
}

namespace detail {

// d psi / d lambda, valid away from the kinks where lambda e^{rho k} xi = gamma
inline double psi_derivative(double lambda, const AgentSpec& a, const Tree& t, const SPD& spd) {
    double acc = 0.0;
    for (int k = 0; k <= t.horizon(); ++k) {
        const double tilt = lambda * std::exp(a.rho * k);
        for (int n = 0; n < t.level_size(k); ++n) {
            const double x = spd.xi.at(k, n);
            if (tilt * x < a.gamma) acc -= t.prob(k, n) * x / (a.gamma * lambda);
        }
    }
    return acc;
}

} // namespace detail

/// Unique lambda* with psi(lambda*) = sum_k E[xi_k eps_k]. Throws when the
/// endowment has zero present value (the target 0 is hit on a flat segment,
/// the regime where whole equilibrium families appear).
inline double solve_lambda_star(const AgentSpec& a, const Tree& t, const SPD& spd) {
    validate_agent(t, a);
    const double pv = pv_sum(t, spd.xi, a.endowment);
    if (!(pv > 0.0)) throw std::invalid_argument("endowment present value must be positive");
    auto f = [&](double lam) { return psi(lam, a, t, spd) - pv; };
    double lo = a.gamma, hi = 2.0 * a.gamma, flo = 0.0, fhi = 0.0;
    bracket_decreasing(f, lo, hi, flo, fhi);
    auto df = [&](double lam) { return detail::psi_derivative(lam, a, t, spd); };
    const ScalarRoot root = bisect_then_newton(f, lo, hi, flo, fhi, df);
    return root.x;
}

/// Unconstrained optimum: closed-form multiplier (the budget
/// equation is log-linear in it) and consumption that may go negative.
inline ConsumptionSolution solve_unconstrained(const AgentSpec& a, const Tree& t, const SPD& spd) {
    validate_agent(t, a);
    const double pv = pv_sum(t, spd.xi, a.endowment);
    if (!(pv > 0.0)) throw std::invalid_argument("endowment present value must be positive");
    double mass = 0.0, drift = 0.0;
    for (int k = 0; k <= t.horizon(); ++k)
        for (int n = 0; n < t.level_size(k); ++n) {
            const double px = t.prob(k, n) * spd.xi.at(k, n);
            mass += px;
            drift += px * (a.rho * k + std::log(spd.xi.at(k, n)));
        }
    const double log_gamma_over_lambda = (a.gamma * pv + drift) / mass;
    const double lambda = a.gamma * std::exp(-log_gamma_over_lambda);
    ConsumptionSolution sol;
    sol.multiplier = lambda;
    sol.consumption = AdaptedProcess(t, 0, t.horizon());
    for (int k = 0; k <= t.horizon(); ++k)
        for (int n = 0; n < t.level_size(k); ++n)
            sol.consumption.at(k, n) =
                (log_gamma_over_lambda - a.rho * k - std::log(spd.xi.at(k, n))) / a.gamma;
    sol.utility = cara_utility(t, a, sol.consumption);
    sol.budget_residual = std::abs(pv_sum(t, spd.xi, sol.consumption) - pv);
    return sol;
}

/// Constrained optimum: c_k = ( (1/gamma)(log(gamma/lambda*)
/// - rho k - log xi_k) )^+ with lambda* from solve_lambda_star.
inline ConsumptionSolution constrained_consumption(const AgentSpec& a, const Tree& t, const SPD& spd) {
    const double lambda = solve_lambda_star(a, t, spd);
    ConsumptionSolution sol;
    sol.multiplier = lambda;
    sol.consumption = AdaptedProcess(t, 0, t.horizon());
    for (int k = 0; k <= t.horizon(); ++k) {
        const double tilt = lambda * std::exp(a.rho * k);
        for (int n = 0; n < t.level_size(k); ++n)
            sol.consumption.at(k, n) = inverse_marginal(a.gamma, tilt * spd.xi.at(k, n));
    }
    sol.utility = cara_utility(t, a, sol.consumption);
    sol.budget_residual =
        std::abs(pv_sum(t, spd.xi, sol.consumption) - pv_sum(t, spd.xi, a.endowment));
    return sol;
}

struct PositivityCertificate {
    bool holds = false;
    AdaptedProcess consumption; // valid only when holds
};

/// Large-endowment sufficient condition for strictly positive consumption:
/// xi_k < C and eps_k > (1/gamma)(log(C/xi_k) + rho (T-k)) on every node.
/// When it holds, the multiplier drops out and consumption is a ratio of
/// present-value sums.
inline PositivityCertificate positivity_certificate(const AgentSpec& a, const Tree& t,
                                                    const SPD& spd, double C) {
    validate_agent(t, a);
    PositivityCertificate cert;
    const int T = t.horizon();
    for (int k = 0; k <= T; ++k)
        for (int n = 0; n < t.level_size(k); ++n) {
            const double x = spd.xi.at(k, n);
            if (!(x < C)) return cert;
            const double bound = (std::log(C / x) + a.rho * (T - k)) / a.gamma;
            if (!(a.endowment.at(k, n) > bound)) return cert;
        }
    double mass = 0.0, top = 0.0;
    for (int k = 0; k <= T; ++k)
        for (int n = 0; n < t.level_size(k); ++n) {
            const double px = t.prob(k, n) * spd.xi.at(k, n);
            mass += px;
            top += px * (a.gamma * a.endowment.at(k, n) + std::log(spd.xi.at(k, n)) + a.rho * k);
        }
    cert.holds = true;
    cert.consumption = AdaptedProcess(t, 0, T);
    for (int k = 0; k <= T; ++k)
        for (int n = 0; n < t.level_size(k); ++n)
            cert.consumption.at(k, n) =
                (top / mass - a.rho * k - std::log(spd.xi.at(k, n))) / a.gamma;
    return cert;
}

} // namespace caratree
