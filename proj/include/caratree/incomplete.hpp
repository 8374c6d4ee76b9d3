#pragma once

// Incomplete-market exponential-utility optimizer. Consumption is eliminated
// through the self-financing identity, non-negativity is handled by an
// active-set Newton over nodes, and the multiplier process is recovered from
// stationarity residuals. The optimum is certified against the projection
// condition through the aggregate SPD.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "caratree/complete.hpp"
#include "caratree/market.hpp"
#include "caratree/rootfind.hpp"
#include "caratree/tree.hpp"

namespace caratree {

/// Affine map c = endowment + J theta from trading variables to consumption
/// node values (flat, level-major). Span markets: theta stacks, per level-k
/// node, the bond holding and one holding per asset (k = 0..T-1, with the
/// no-trade convention at T). Type-C markets: theta stacks the block values
/// of the wealth process W_k in L2(H_k), and the budget recursion runs
/// through the aggregate SPD.
struct ConsumptionMap {
    Eigen::MatrixXd J;
    Eigen::VectorXd endow;
    NodeIndex idx;
    SPD aggregate;

    struct VarInfo {
        int period;     // k of the decision (Span: trade date; TypeC: wealth date)
        int slot;       // node id (Span) or block id (TypeC)
        int instrument; // -1 bond/wealth, >= 0 asset index
    };
    std::vector<VarInfo> vars;
};

inline ConsumptionMap consumption_map(const MarketSpec& m, const AdaptedProcess& endowment) {
    validate_market(m);
    const Tree& t = m.tree;
    const int T = t.horizon();
    NodeIndex idx(t);
    SPD M = aggregate_spd(m);

    std::vector<ConsumptionMap::VarInfo> vars;
    if (m.form == WealthForm::Span) {
        for (int k = 0; k < T; ++k)
            for (int n = 0; n < t.level_size(k); ++n) {
                vars.push_back({k, n, -1});
                for (int j = 0; j < static_cast<int>(m.assets.size()); ++j)
                    vars.push_back({k, n, j});
            }
    } else {
        for (int k = 1; k <= T; ++k)
            for (int b = 0; b < m.partitions[k - 1].block_count(); ++b)
                vars.push_back({k, b, -1});
    }

    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(idx.total(), static_cast<int>(vars.size()));
    for (int v = 0; v < static_cast<int>(vars.size()); ++v) {
        const auto& vi = vars[v];
        if (m.form == WealthForm::Span) {
            const int k = vi.period, n = vi.slot;
            if (vi.instrument < 0) {
                J(idx(k, n), v) -= 1.0;
                for (int c : t.children(k, n)) J(idx(k + 1, c), v) += 1.0 + m.rate[k][n];
            } else {
                const Asset& a = m.assets[vi.instrument];
                J(idx(k, n), v) -= a.price.at(k, n);
                for (int c : t.children(k, n)) J(idx(k + 1, c), v) += a.price.at(k + 1, c);
            }
        } else {
            const int k = vi.period, b = vi.slot;
            const auto& blk = m.partitions[k - 1].blocks()[b];
            const int parent = t.parent(k, blk.front());
            for (int c : blk) {
                J(idx(k, c), v) += 1.0;
                J(idx(k - 1, parent), v) -=
                    t.cond_prob(k, c) * M.xi.at(k, c) / M.xi.at(k - 1, parent);
            }
        }
    }

    Eigen::VectorXd endow(idx.total());
    for (int k = 0; k <= T; ++k)
        for (int n = 0; n < t.level_size(k); ++n) endow[idx(k, n)] = endowment.at(k, n);

    return ConsumptionMap{std::move(J), std::move(endow), idx, std::move(M), std::move(vars)};
}

struct PortfolioStrategy {
    // phi[k][node]: bond shares bought at (k, node), k = 0..T-1
    std::vector<std::vector<double>> phi;
    // pi[j][k][node]: shares of asset j
    std::vector<std::vector<std::vector<double>>> pi;
};

struct KKTSolution {
    AdaptedProcess consumption;  // >= 0 nodewise
    AdaptedProcess multipliers;  // lambda_k, adapted, >= 0, complementary
    AdaptedProcess wealth;       // W_k in L_k, levels 0..T (0 at the boundaries)
    PortfolioStrategy strategy;  // filled for span markets
    Eigen::VectorXd theta;       // raw decision variables (minimum-norm)
    double utility = 0.0;
    double stationarity_residual = 0.0;
    bool multipliers_unique = true;
    int active_set_iterations = 0;
};

struct KKTOptions {
    int max_outer = 200;
    int max_newton = 120;
    double tol = 1e-12;
    int extra_starts = 5;       // random restarts asserting a unique optimum
    double agree_tol = 1e-7;
    std::uint64_t seed = 20240901;
};

namespace detail {

// clamped so runaway iterates keep finite gradients for the backtracking
inline double bounded_exp(double x) { return std::exp(std::min(x, 500.0)); }

struct ActiveSetOut {
    Eigen::VectorXd z;
    Eigen::VectorXd c;
    Eigen::VectorXd mult; // node multipliers, nonzero only on the active set
    double stationarity = 0.0;
    bool mult_unique = true;
    int outer_iters = 0;
};

// Maximize sum_n w_n (-e^{-gamma c_n}) over c = endow + Q z, c >= 0, with Q
// an orthonormal basis of the trading range. Active-set over nodes: Newton on
// the equality-constrained KKT system, activating violated nodes and
// releasing wrong-signed multipliers.
inline ActiveSetOut active_set_solve(const Eigen::MatrixXd& Q, const Eigen::VectorXd& endow,
                                     const Eigen::VectorXd& w, double gamma,
                                     Eigen::VectorXd z0, const KKTOptions& opt) {
    const int nn = static_cast<int>(endow.size());
    const int d = static_cast<int>(Q.cols());
    Eigen::VectorXd z = std::move(z0);
    std::vector<char> active(nn, 0);
    auto consumption = [&](const Eigen::VectorXd& zz) { return (endow + Q * zz).eval(); };

    ActiveSetOut out;
    for (int outer = 0; outer < opt.max_outer; ++outer) {
        out.outer_iters = outer + 1;
        std::vector<int> act;
        for (int n = 0; n < nn; ++n)
            if (active[n]) act.push_back(n);
        const int na = static_cast<int>(act.size());

        // Newton on F(z, m) = [Q^T (s(c) + m~); c_act] with s_n = w_n gamma e^{-gamma c_n}
        Eigen::VectorXd mult = Eigen::VectorXd::Zero(na);
        {
            // warm-start multipliers from least squares on the stationarity block
            Eigen::VectorXd c = consumption(z);
            Eigen::VectorXd s(nn);
            for (int n = 0; n < nn; ++n) s[n] = w[n] * gamma * bounded_exp(-gamma * c[n]);
            if (na > 0) {
                Eigen::MatrixXd QA(d, na);
                for (int j = 0; j < na; ++j) QA.col(j) = Q.row(act[j]).transpose();
                mult = QA.completeOrthogonalDecomposition().solve(-(Q.transpose() * s));
            }
        }
        auto eval_F = [&](const Eigen::VectorXd& zz, const Eigen::VectorXd& mm, Eigen::VectorXd& F,
                          Eigen::VectorXd& c, Eigen::VectorXd& s) {
            c = consumption(zz);
            s.resize(nn);
            for (int n = 0; n < nn; ++n) s[n] = w[n] * gamma * bounded_exp(-gamma * c[n]);
            Eigen::VectorXd sm = s;
            for (int j = 0; j < na; ++j) sm[act[j]] += mm[j];
            F.resize(d + na);
            F.head(d) = Q.transpose() * sm;
            for (int j = 0; j < na; ++j) F[d + j] = c[act[j]];
        };
        Eigen::VectorXd F, c, s;
        eval_F(z, mult, F, c, s);
        for (int it = 0; it < opt.max_newton && F.lpNorm<Eigen::Infinity>() > opt.tol; ++it) {
            Eigen::MatrixXd K = Eigen::MatrixXd::Zero(d + na, d + na);
            K.topLeftCorner(d, d) = Q.transpose() * (-gamma * s).asDiagonal() * Q;
            for (int j = 0; j < na; ++j) {
                K.block(0, d + j, d, 1) = Q.row(act[j]).transpose();
                K.block(d + j, 0, 1, d) = Q.row(act[j]);
            }
            Eigen::VectorXd step = K.fullPivLu().solve(-F);
            if (!step.allFinite()) break;
            double alpha = 1.0;
            const double f0 = F.squaredNorm();
            for (int bt = 0; bt < 50; ++bt) {
                Eigen::VectorXd zn = z + alpha * step.head(d);
                Eigen::VectorXd mn = mult + alpha * step.tail(na);
                Eigen::VectorXd Fn, cn, sn;
                eval_F(zn, mn, Fn, cn, sn);
                if (Fn.allFinite() && Fn.squaredNorm() < f0) {
                    z = std::move(zn);
                    mult = std::move(mn);
                    F = std::move(Fn);
                    c = std::move(cn);
                    s = std::move(sn);
                    break;
                }
                alpha *= 0.5;
                if (bt == 49) it = opt.max_newton; // stalled
            }
        }

        // active-set update: activate the worst negative consumption, else
        // release the worst negative multiplier
        int worst_violation = -1;
        double worst_c = -1e-11;
        for (int n = 0; n < nn; ++n)
            if (!active[n] && c[n] < worst_c) {
                worst_c = c[n];
                worst_violation = n;
            }
        if (worst_violation >= 0) {
            active[worst_violation] = 1;
            continue;
        }
        int worst_mult = -1;
        double worst_m = -1e-11;
        for (int j = 0; j < na; ++j)
            if (mult[j] < worst_m) {
                worst_m = mult[j];
                worst_mult = j;
            }
        if (worst_mult >= 0) {
            active[act[worst_mult]] = 0;
            continue;
        }

        out.z = z;
        out.c = c;
        out.mult = Eigen::VectorXd::Zero(nn);
        for (int j = 0; j < na; ++j) out.mult[act[j]] = std::max(0.0, mult[j]);
        out.stationarity = F.lpNorm<Eigen::Infinity>();
        if (na > 0) {
            Eigen::MatrixXd QA(d, na);
            for (int j = 0; j < na; ++j) QA.col(j) = Q.row(act[j]).transpose();
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(QA);
            qr.setThreshold(1e-10);
            out.mult_unique = (static_cast<int>(qr.rank()) == na);
        }
        return out;
    }
    throw std::runtime_error("active-set solver did not converge within the iteration cap");
}

} // namespace detail

/// Kuhn-Tucker optimum of the incomplete-market utility maximization problem.
/// The consumption stream is the unique maximizer; the strategy reported is
/// minimum-norm when assets are redundant.
inline KKTSolution solve_kkt(const AgentSpec& a, const MarketSpec& m, const KKTOptions& opt = {}) {
    const Tree& t = m.tree;
    validate_agent(t, a);
    ConsumptionMap map = consumption_map(m, a.endowment);
    const int nn = map.idx.total();

    Eigen::VectorXd w(nn);
    for (int k = 0; k <= t.horizon(); ++k)
        for (int n = 0; n < t.level_size(k); ++n)
            w[map.idx(k, n)] = t.prob(k, n) * std::exp(-a.rho * k);

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(map.J);
    qr.setThreshold(1e-12);
    const int r = static_cast<int>(qr.rank());
    Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(nn, r);

    detail::ActiveSetOut best =
        detail::active_set_solve(Q, map.endow, w, a.gamma, Eigen::VectorXd::Zero(r), opt);
    if (best.stationarity > 1e-9)
        throw std::runtime_error("KKT solver stationarity residual " +
                                 std::to_string(best.stationarity) + " above tolerance");

    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> g(0.0, 1.0);
    const double scale = std::min(4.0, std::max(1.0, map.endow.lpNorm<Eigen::Infinity>()));
    for (int s = 0; s < opt.extra_starts; ++s) {
        Eigen::VectorXd z0(r);
        for (int i = 0; i < r; ++i) z0[i] = scale * g(rng);
        detail::ActiveSetOut alt = detail::active_set_solve(Q, map.endow, w, a.gamma, z0, opt);
        if ((alt.c - best.c).lpNorm<Eigen::Infinity>() > opt.agree_tol)
            throw std::runtime_error("multi-start KKT solves disagree; optimum not certified");
    }

    KKTSolution sol;
    sol.consumption = AdaptedProcess(t, 0, t.horizon());
    sol.multipliers = AdaptedProcess(t, 0, t.horizon());
    for (int k = 0; k <= t.horizon(); ++k)
        for (int n = 0; n < t.level_size(k); ++n) {
            sol.consumption.at(k, n) = std::max(0.0, best.c[map.idx(k, n)]);
            sol.multipliers.at(k, n) = best.mult[map.idx(k, n)] / t.prob(k, n);
        }
    sol.stationarity_residual = best.stationarity;
    sol.multipliers_unique = best.mult_unique;
    sol.active_set_iterations = best.outer_iters;
    sol.utility = cara_utility(t, a, sol.consumption);

    // minimum-norm decision variables reproducing the optimal trading deltas
    sol.theta = map.J.completeOrthogonalDecomposition().solve(Q * best.z);

    // wealth before rebalancing: W_k = value carried into period k
    sol.wealth = AdaptedProcess(t, 0, t.horizon(), 0.0);
    if (m.form == WealthForm::Span) {
        sol.strategy.phi.assign(t.horizon(), {});
        sol.strategy.pi.assign(m.assets.size(), std::vector<std::vector<double>>(t.horizon()));
        for (int k = 0; k < t.horizon(); ++k) {
            sol.strategy.phi[k].assign(t.level_size(k), 0.0);
            for (int j = 0; j < static_cast<int>(m.assets.size()); ++j)
                sol.strategy.pi[j][k].assign(t.level_size(k), 0.0);
        }
        for (int v = 0; v < static_cast<int>(map.vars.size()); ++v) {
            const auto& vi = map.vars[v];
            if (vi.instrument < 0)
                sol.strategy.phi[vi.period][vi.slot] = sol.theta[v];
            else
                sol.strategy.pi[vi.instrument][vi.period][vi.slot] = sol.theta[v];
        }
        for (int k = 1; k <= t.horizon(); ++k)
            for (int n = 0; n < t.level_size(k); ++n) {
                const int p = t.parent(k, n);
                double wk = sol.strategy.phi[k - 1][p] * (1.0 + m.rate[k - 1][p]);
                for (int j = 0; j < static_cast<int>(m.assets.size()); ++j)
                    wk += sol.strategy.pi[j][k - 1][p] * m.assets[j].price.at(k, n);
                sol.wealth.at(k, n) = wk;
            }
    } else {
        for (int v = 0; v < static_cast<int>(map.vars.size()); ++v) {
            const auto& vi = map.vars[v];
            for (int n : m.partitions[vi.period - 1].blocks()[vi.slot])
                sol.wealth.at(vi.period, n) = sol.theta[v];
        }
    }
    return sol;
}

struct KKTReport {
    double projection_residual = 0.0; // scheme condition through the aggregate SPD
    double complementarity = 0.0;     // max |lambda_k c_k|
    double multiplier_negativity = 0.0;
    double budget_residual = 0.0;     // self-financing identity violation
    double consumption_negativity = 0.0;
    double tol = 0.0;
    bool pass = false;
};

/// Residual diagnostics for a candidate KKT solution: projection condition of
/// the optimality scheme, complementary slackness, multiplier signs, and the
/// self-financing budget identity.
inline KKTReport verify_kkt(const KKTSolution& sol, const AgentSpec& a, const MarketSpec& m,
                            double tol) {
    const Tree& t = m.tree;
    KKTReport rep;
    rep.tol = tol;
    ConsumptionMap map = consumption_map(m, a.endowment);
    const SPD& M = map.aggregate;

    auto zval = [&](int k, int n) {
        return std::exp(-a.rho * k) * a.gamma * std::exp(-a.gamma * sol.consumption.at(k, n)) +
               sol.multipliers.at(k, n);
    };
    for (int k = 1; k <= t.horizon(); ++k) {
        WealthSpace ws = WealthSpace::for_period(m, k);
        Eigen::VectorXd ratio(t.level_size(k)), mratio(t.level_size(k));
        for (int n = 0; n < t.level_size(k); ++n) {
            const int p = t.parent(k, n);
            ratio[n] = zval(k, n) / zval(k - 1, p);
            mratio[n] = M.xi.at(k, n) / M.xi.at(k - 1, p);
        }
        const Eigen::VectorXd proj = ws.project(ratio);
        rep.projection_residual =
            std::max(rep.projection_residual, (proj - mratio).lpNorm<Eigen::Infinity>());
    }
    for (int k = 0; k <= t.horizon(); ++k)
        for (int n = 0; n < t.level_size(k); ++n) {
            rep.complementarity = std::max(
                rep.complementarity, std::abs(sol.multipliers.at(k, n) * sol.consumption.at(k, n)));
            rep.multiplier_negativity =
                std::max(rep.multiplier_negativity, -sol.multipliers.at(k, n));
            rep.consumption_negativity =
                std::max(rep.consumption_negativity, -sol.consumption.at(k, n));
        }
    Eigen::VectorXd c_map = map.endow + map.J * sol.theta;
    for (int k = 0; k <= t.horizon(); ++k)
        for (int n = 0; n < t.level_size(k); ++n)
            rep.budget_residual = std::max(
                rep.budget_residual, std::abs(c_map[map.idx(k, n)] - sol.consumption.at(k, n)));
    rep.pass = rep.projection_residual <= tol && rep.complementarity <= tol &&
               rep.multiplier_negativity <= tol && rep.budget_residual <= tol &&
               rep.consumption_negativity <= tol;
    return rep;
}

struct OnePeriodSolution {
    double c0 = 0.0;
    AdaptedProcess c1;
    double lambda = 0.0;
    double budget_residual = 0.0;
};

/// One-period type-C closed form: c0 from the clipped first-order condition,
/// c1 from the two-indicator formula with the essential-infimum switch, and
/// the scalar multiplier from the aggregate budget equation.
inline OnePeriodSolution one_period_closed_form(const AgentSpec& a, const MarketSpec& m) {
    const Tree& t = m.tree;
    if (t.horizon() != 1 || m.form != WealthForm::TypeC)
        throw std::invalid_argument("closed form requires a one-period type-C market");
    validate_agent(t, a);
    const SubAlgebra& h = m.partitions[0];
    const SPD M = aggregate_spd(m);
    const int n1 = t.level_size(1);

    // block statistics of the endowment
    std::vector<double> e_exp_neg(h.block_count(), 0.0); // E[e^{-gamma eps} | H]
    std::vector<double> block_min(h.block_count(), 0.0); // essinf eps | H
    for (int b = 0; b < h.block_count(); ++b) {
        double mass = 0.0, acc = 0.0, mn = a.endowment.at(1, h.blocks()[b].front());
        for (int n : h.blocks()[b]) {
            mass += t.prob(1, n);
            acc += t.prob(1, n) * std::exp(-a.gamma * a.endowment.at(1, n));
            mn = std::min(mn, a.endowment.at(1, n));
        }
        e_exp_neg[b] = acc / mass;
        block_min[b] = mn;
    }

    const double rhs = a.endowment.at(0, 0) + [&] {
        double acc = 0.0;
        for (int n = 0; n < n1; ++n) acc += t.prob(1, n) * M.xi.at(1, n) * a.endowment.at(1, n);
        return acc;
    }();

    auto c1_at = [&](double lambda, int n) {
        const int b = h.block_of(n);
        const double eps = a.endowment.at(1, n);
        const double essinf_exp = std::exp(a.gamma * block_min[b]);
        const double mb = M.xi.at(1, n);
        if (essinf_exp * e_exp_neg[b] > lambda * mb)
            return std::log(std::exp(a.gamma * eps) * e_exp_neg[b] / (lambda * mb)) / a.gamma;
        return eps - block_min[b];
    };
    auto c0_of = [&](double lambda) {
        const double v = (std::log(1.0 / lambda) + a.rho) / a.gamma;
        return v > 0.0 ? v : 0.0;
    };
    auto budget_gap = [&](double lambda) {
        double acc = c0_of(lambda);
        for (int n = 0; n < n1; ++n)
            acc += t.prob(1, n) * M.xi.at(1, n) * c1_at(lambda, n);
        return acc - rhs;
    };

    double lo = 1.0, hi = 2.0, flo = 0.0, fhi = 0.0;
    bracket_decreasing(budget_gap, lo, hi, flo, fhi);
    const ScalarRoot root = bisect_then_newton(budget_gap, lo, hi, flo, fhi);

    OnePeriodSolution sol;
    sol.lambda = root.x;
    sol.c0 = c0_of(root.x);
    sol.c1 = AdaptedProcess(t, 1, 1);
    for (int n = 0; n < n1; ++n) sol.c1.at(1, n) = c1_at(root.x, n);
    sol.budget_residual = std::abs(budget_gap(root.x));
    return sol;
}

} // namespace caratree
