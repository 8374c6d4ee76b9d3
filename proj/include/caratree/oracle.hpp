#pragma once

// Brute-force maximizers used as ground truth for the closed forms. They
// deliberately avoid the solution paths of the modules they check: the
// complete-market oracle runs projected gradient plus an active-set Newton
// polish directly on node consumptions; the incomplete-market oracle runs a
// penalty continuation over trading variables with a feasible polish.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "caratree/complete.hpp"
#include "caratree/incomplete.hpp"
#include "caratree/market.hpp"
#include "caratree/tree.hpp"

namespace caratree {

enum class OracleMethod { ProjectedGradientActiveSet, PenaltyContinuation };

struct OracleResult {
    Eigen::VectorXd argmax;      // decision variables (node consumptions / trading vars)
    Eigen::VectorXd consumption; // resulting consumption, flat level-major
    double value = 0.0;
    OracleMethod method = OracleMethod::ProjectedGradientActiveSet;
    int iterations = 0;
    double feasibility_residual = 0.0;
    double stationarity_residual = 0.0;
};

namespace detail {

inline double safe_exp(double x) { return std::exp(std::min(x, 500.0)); }

// projection onto {a.c = b} (and optionally c >= 0) in the euclidean metric;
// with the box the dual scalar is found by bisection on a monotone function.
inline Eigen::VectorXd project_budget(const Eigen::VectorXd& z, const Eigen::VectorXd& a, double b,
                                      bool boxed) {
    if (!boxed) return z - a * ((a.dot(z) - b) / a.squaredNorm());
    auto val = [&](double mu) {
        double acc = 0.0;
        for (int i = 0; i < z.size(); ++i) acc += a[i] * std::max(z[i] - mu * a[i], 0.0);
        return acc - b;
    };
    double lo = -1.0, hi = 1.0;
    while (val(lo) < 0.0) lo *= 2.0;
    while (val(hi) > 0.0) hi *= 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-16 * std::max(1.0, std::abs(lo)); ++it) {
        const double mid = 0.5 * (lo + hi);
        (val(mid) > 0.0 ? lo : hi) = mid;
    }
    const double mu = 0.5 * (lo + hi);
    return (z - mu * a).cwiseMax(0.0);
}

} // namespace detail

/// Maximizes sum_k e^{-rho k} E[-e^{-gamma c_k}] over node consumptions under
/// the single budget constraint sum_k E[xi_k c_k] = sum_k E[xi_k eps_k],
/// optionally with c >= 0. Deterministic given the seed.
inline OracleResult oracle_complete(const AgentSpec& a, const Tree& t, const SPD& spd,
                                    bool allow_negative, std::uint64_t /*seed*/ = 1) {
    validate_agent(t, a);
    NodeIndex idx(t);
    const int nn = idx.total();
    Eigen::VectorXd w(nn), price(nn), endow(nn);
    for (int k = 0; k <= t.horizon(); ++k)
        for (int n = 0; n < t.level_size(k); ++n) {
            w[idx(k, n)] = t.prob(k, n) * std::exp(-a.rho * k);
            price[idx(k, n)] = t.prob(k, n) * spd.xi.at(k, n);
            endow[idx(k, n)] = a.endowment.at(k, n);
        }
    const double budget = price.dot(endow);
    const bool boxed = !allow_negative;

    auto util = [&](const Eigen::VectorXd& c) {
        double u = 0.0;
        for (int i = 0; i < nn; ++i) u += w[i] * (-detail::safe_exp(-a.gamma * c[i]));
        return u;
    };
    auto grad = [&](const Eigen::VectorXd& c) {
        Eigen::VectorXd g(nn);
        for (int i = 0; i < nn; ++i) g[i] = w[i] * a.gamma * detail::safe_exp(-a.gamma * c[i]);
        return g;
    };

    // phase 1: projected gradient with diminishing steps
    Eigen::VectorXd c = detail::project_budget(endow, price, budget, boxed);
    double curvature = 0.0;
    for (int i = 0; i < nn; ++i) curvature = std::max(curvature, w[i] * a.gamma * a.gamma);
    const double alpha0 = 1.0 / curvature;
    int iters = 0;
    for (int it = 0; it < 2000; ++it, ++iters) {
        const double alpha = alpha0 / (1.0 + it / 200.0);
        c = detail::project_budget(c + alpha * grad(c), price, budget, boxed);
    }

    // phase 2: active-set Newton polish on (free consumptions, budget multiplier)
    std::vector<char> active(nn, 0);
    if (boxed)
        for (int i = 0; i < nn; ++i) active[i] = c[i] <= 1e-9 ? 1 : 0;
    double mu = 1.0;
    {
        const Eigen::VectorXd g = grad(c);
        double num = 0.0, den = 0.0;
        for (int i = 0; i < nn; ++i)
            if (!active[i]) {
                num += g[i] * price[i];
                den += price[i] * price[i];
            }
        if (den > 0.0) mu = num / den;
    }
    double stat = 0.0;
    for (int outer = 0; outer < 100; ++outer, ++iters) {
        std::vector<int> free;
        for (int i = 0; i < nn; ++i)
            if (!active[i]) free.push_back(i);
        const int nf = static_cast<int>(free.size());
        // Newton on [ g_F - mu * price_F ; price_F . c_F - budget ]
        for (int it = 0; it < 100; ++it) {
            Eigen::VectorXd F(nf + 1);
            double pc = 0.0;
            for (int j = 0; j < nf; ++j) {
                const int i = free[j];
                F[j] = w[i] * a.gamma * detail::safe_exp(-a.gamma * c[i]) - mu * price[i];
                pc += price[i] * c[i];
            }
            F[nf] = pc - budget;
            if (F.lpNorm<Eigen::Infinity>() <= 1e-14 * std::max(1.0, mu)) break;
            Eigen::MatrixXd K = Eigen::MatrixXd::Zero(nf + 1, nf + 1);
            for (int j = 0; j < nf; ++j) {
                const int i = free[j];
                K(j, j) = -w[i] * a.gamma * a.gamma * detail::safe_exp(-a.gamma * c[i]);
                K(j, nf) = -price[i];
                K(nf, j) = price[i];
            }
            Eigen::VectorXd step = K.fullPivLu().solve(-F);
            if (!step.allFinite()) break;
            double alpha = 1.0;
            const double f0 = F.squaredNorm();
            for (int bt = 0; bt < 50; ++bt) {
                Eigen::VectorXd cn = c;
                for (int j = 0; j < nf; ++j) cn[free[j]] += alpha * step[j];
                const double mun = mu + alpha * step[nf];
                Eigen::VectorXd Fn(nf + 1);
                double pcn = 0.0;
                for (int j = 0; j < nf; ++j) {
                    const int i = free[j];
                    Fn[j] = w[i] * a.gamma * detail::safe_exp(-a.gamma * cn[i]) - mun * price[i];
                    pcn += price[i] * cn[i];
                }
                Fn[nf] = pcn - budget;
                if (Fn.allFinite() && Fn.squaredNorm() < f0) {
                    c = std::move(cn);
                    mu = mun;
                    break;
                }
                alpha *= 0.5;
            }
        }
        if (!boxed) break;
        // activate the worst violated node, else release the worst multiplier
        int worst = -1;
        double wv = -1e-11;
        for (int j = 0; j < nf; ++j)
            if (c[free[j]] < wv) {
                wv = c[free[j]];
                worst = free[j];
            }
        if (worst >= 0) {
            c[worst] = 0.0;
            active[worst] = 1;
            continue;
        }
        int rel = -1;
        double rv = -1e-11;
        for (int i = 0; i < nn; ++i)
            if (active[i]) {
                const double m = mu * price[i] - w[i] * a.gamma * detail::safe_exp(0.0);
                if (m < rv) {
                    rv = m;
                    rel = i;
                }
            }
        if (rel >= 0) {
            active[rel] = 0;
            continue;
        }
        break;
    }
    {
        double s = 0.0;
        for (int i = 0; i < nn; ++i)
            if (!active[i])
                s = std::max(s, std::abs(w[i] * a.gamma * detail::safe_exp(-a.gamma * c[i]) -
                                         mu * price[i]));
        stat = s;
    }

    OracleResult res;
    res.method = OracleMethod::ProjectedGradientActiveSet;
    res.argmax = c;
    res.consumption = c;
    res.value = util(c);
    res.iterations = iters;
    res.feasibility_residual = std::abs(price.dot(c) - budget);
    if (boxed)
        for (int i = 0; i < nn; ++i)
            res.feasibility_residual = std::max(res.feasibility_residual, -c[i]);
    res.stationarity_residual = stat;
    return res;
}

/// Maximizes utility over trading variables (consumption via the
/// self-financing identity) with c >= 0 enforced by a quadratic penalty
/// continuation, then polishes on the identified boundary set.
inline OracleResult oracle_incomplete(const AgentSpec& a, const MarketSpec& m,
                                      std::uint64_t /*seed*/ = 1) {
    const Tree& t = m.tree;
    validate_agent(t, a);
    ConsumptionMap map = consumption_map(m, a.endowment);
    const int nn = map.idx.total();
    const int nv = static_cast<int>(map.vars.size());

    Eigen::VectorXd w(nn), p(nn);
    for (int k = 0; k <= t.horizon(); ++k)
        for (int n = 0; n < t.level_size(k); ++n) {
            w[map.idx(k, n)] = t.prob(k, n) * std::exp(-a.rho * k);
            p[map.idx(k, n)] = t.prob(k, n);
        }
    auto cons = [&](const Eigen::VectorXd& th) { return (map.endow + map.J * th).eval(); };
    auto util = [&](const Eigen::VectorXd& c) {
        double u = 0.0;
        for (int i = 0; i < nn; ++i) u += w[i] * (-detail::safe_exp(-a.gamma * c[i]));
        return u;
    };

    Eigen::VectorXd theta = Eigen::VectorXd::Zero(nv);
    int iters = 0;
    const double ridge = 1e-10;
    for (double penalty : {1e2, 1e4, 1e6, 1e8}) {
        auto pen_grad_c = [&](const Eigen::VectorXd& c) {
            Eigen::VectorXd g(nn);
            for (int i = 0; i < nn; ++i)
                g[i] = w[i] * a.gamma * detail::safe_exp(-a.gamma * c[i]) -
                       2.0 * penalty * p[i] * std::min(c[i], 0.0);
            return g;
        };
        for (int it = 0; it < 120; ++it, ++iters) {
            const Eigen::VectorXd c = cons(theta);
            const Eigen::VectorXd gc = pen_grad_c(c);
            const Eigen::VectorXd g = map.J.transpose() * gc;
            if (g.lpNorm<Eigen::Infinity>() <= 1e-12 * std::max(1.0, penalty)) break;
            Eigen::VectorXd d2(nn);
            for (int i = 0; i < nn; ++i)
                d2[i] = -w[i] * a.gamma * a.gamma * detail::safe_exp(-a.gamma * c[i]) -
                        2.0 * penalty * p[i] * (c[i] < 0.0 ? 1.0 : 0.0);
            Eigen::MatrixXd H = map.J.transpose() * d2.asDiagonal() * map.J;
            H.diagonal().array() -= ridge * (1.0 + penalty);
            Eigen::VectorXd step = H.ldlt().solve(-g);
            if (!step.allFinite()) break;
            // backtrack on the penalized objective
            auto pobj = [&](const Eigen::VectorXd& th) {
                const Eigen::VectorXd cc = cons(th);
                double u = util(cc);
                for (int i = 0; i < nn; ++i) {
                    const double neg = std::min(cc[i], 0.0);
                    u -= penalty * p[i] * neg * neg;
                }
                return u;
            };
            const double f0 = pobj(theta);
            double alpha = 1.0;
            for (int bt = 0; bt < 60; ++bt) {
                if (pobj(theta + alpha * step) > f0) {
                    theta += alpha * step;
                    break;
                }
                alpha *= 0.5;
                if (bt == 59) it = 1000;
            }
        }
    }

    // feasible polish: pin the penalty-identified boundary nodes to zero and
    // re-solve the equality-constrained problem; adjust the set on sign
    // failures (a few guarded rounds)
    std::vector<char> active(nn, 0);
    {
        const Eigen::VectorXd c = cons(theta);
        for (int i = 0; i < nn; ++i) active[i] = c[i] < 1e-6 ? 1 : 0;
    }
    Eigen::VectorXd mult_nodes = Eigen::VectorXd::Zero(nn);
    for (int round = 0; round < 12; ++round, ++iters) {
        std::vector<int> act;
        for (int i = 0; i < nn; ++i)
            if (active[i]) act.push_back(i);
        const int na = static_cast<int>(act.size());
        Eigen::VectorXd mults = Eigen::VectorXd::Zero(na);
        for (int it = 0; it < 120; ++it) {
            const Eigen::VectorXd c = cons(theta);
            Eigen::VectorXd s(nn);
            for (int i = 0; i < nn; ++i) s[i] = w[i] * a.gamma * detail::safe_exp(-a.gamma * c[i]);
            Eigen::VectorXd sm = s;
            for (int j = 0; j < na; ++j) sm[act[j]] += mults[j];
            Eigen::VectorXd F(nv + na);
            F.head(nv) = map.J.transpose() * sm;
            for (int j = 0; j < na; ++j) F[nv + j] = c[act[j]];
            if (F.lpNorm<Eigen::Infinity>() <= 1e-13) break;
            Eigen::VectorXd d2(nn);
            for (int i = 0; i < nn; ++i) d2[i] = -a.gamma * s[i];
            Eigen::MatrixXd K = Eigen::MatrixXd::Zero(nv + na, nv + na);
            K.topLeftCorner(nv, nv) = map.J.transpose() * d2.asDiagonal() * map.J;
            K.topLeftCorner(nv, nv).diagonal().array() -= ridge;
            for (int j = 0; j < na; ++j) {
                K.block(0, nv + j, nv, 1) = map.J.row(act[j]).transpose();
                K.block(nv + j, 0, 1, nv) = map.J.row(act[j]);
            }
            Eigen::VectorXd step = K.completeOrthogonalDecomposition().solve(-F);
            if (!step.allFinite()) break;
            double alpha = 1.0;
            const double f0 = F.squaredNorm();
            bool moved = false;
            for (int bt = 0; bt < 50; ++bt) {
                Eigen::VectorXd thn = theta + alpha * step.head(nv);
                Eigen::VectorXd mn = mults + alpha * step.tail(na);
                const Eigen::VectorXd cn = cons(thn);
                Eigen::VectorXd sn(nn);
                for (int i = 0; i < nn; ++i)
                    sn[i] = w[i] * a.gamma * detail::safe_exp(-a.gamma * cn[i]);
                Eigen::VectorXd smn = sn;
                for (int j = 0; j < na; ++j) smn[act[j]] += mn[j];
                Eigen::VectorXd Fn(nv + na);
                Fn.head(nv) = map.J.transpose() * smn;
                for (int j = 0; j < na; ++j) Fn[nv + j] = cn[act[j]];
                if (Fn.allFinite() && Fn.squaredNorm() < f0) {
                    theta = std::move(thn);
                    mults = std::move(mn);
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if (!moved) break;
        }
        const Eigen::VectorXd c = cons(theta);
        bool changed = false;
        for (int i = 0; i < nn; ++i)
            if (!active[i] && c[i] < -1e-10) {
                active[i] = 1;
                changed = true;
            }
        for (int j = 0; j < na; ++j)
            if (mults[j] < -1e-10) {
                active[act[j]] = 0;
                changed = true;
            }
        mult_nodes.setZero();
        for (int j = 0; j < na; ++j)
            if (active[act[j]]) mult_nodes[act[j]] = mults[j];
        if (!changed) break;
    }

    OracleResult res;
    res.method = OracleMethod::PenaltyContinuation;
    res.argmax = theta;
    Eigen::VectorXd c = cons(theta);
    res.feasibility_residual = std::max(0.0, -c.minCoeff());
    for (int i = 0; i < nn; ++i) c[i] = std::max(c[i], 0.0);
    res.consumption = c;
    res.value = util(c);
    res.iterations = iters;
    {
        Eigen::VectorXd s(nn);
        for (int i = 0; i < nn; ++i)
            s[i] = w[i] * a.gamma * detail::safe_exp(-a.gamma * c[i]) + mult_nodes[i];
        res.stationarity_residual = (map.J.transpose() * s).lpNorm<Eigen::Infinity>();
    }
    return res;
}

} // namespace caratree
