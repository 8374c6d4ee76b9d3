#pragma once

// Heterogeneous-agent equilibrium in complete markets: the closed-form
// candidate SPD over agent regimes, the weight system from the budget
// constraints, multi-start Newton solving, and the two non-uniqueness
// constructions (two-agent root pairs and vanishing-endowment families).

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "caratree/complete.hpp"
#include "caratree/market.hpp"
#include "caratree/rootfind.hpp"
#include "caratree/tree.hpp"

namespace caratree {

struct EconomySpec {
    Tree tree;
    std::vector<AgentSpec> agents;
    AdaptedProcess aggregate_endowment;
    bool strictly_positive = false; // hypothesis for the closed-form equilibrium family
};

inline EconomySpec make_economy(const Tree& t, std::vector<AgentSpec> agents) {
    if (agents.empty()) throw std::invalid_argument("economy needs at least one agent");
    EconomySpec e;
    e.tree = t;
    for (const AgentSpec& a : agents) validate_agent(t, a);
    e.aggregate_endowment = AdaptedProcess(t, 0, t.horizon(), 0.0);
    e.strictly_positive = true;
    for (int k = 0; k <= t.horizon(); ++k)
        for (int n = 0; n < t.level_size(k); ++n) {
            double s = 0.0;
            for (const AgentSpec& a : agents) {
                s += a.endowment.at(k, n);
                if (!(a.endowment.at(k, n) > 0.0)) e.strictly_positive = false;
            }
            e.aggregate_endowment.at(k, n) = s;
        }
    e.agents = std::move(agents);
    return e;
}

/// beta_i(k) = gamma_i / (lambda_i e^{rho_i k}), the consumption thresholds.
inline std::vector<double> betas(const std::vector<double>& weights,
                                 const std::vector<AgentSpec>& agents, int k) {
    if (weights.size() != agents.size()) throw std::invalid_argument("one weight per agent");
    std::vector<double> b(agents.size());
    for (std::size_t i = 0; i < agents.size(); ++i) {
        if (!(weights[i] > 0.0)) throw std::invalid_argument("weights must be positive");
        b[i] = agents[i].gamma / (weights[i] * std::exp(agents[i].rho * k));
    }
    return b;
}

namespace detail {

/// Per-period regime data in log-space (safe for large k).
struct RegimeData {
    std::vector<double> logbeta; // by agent index
    std::vector<int> order;      // order[j] = agent with the (j+1)-smallest beta
    std::vector<double> eta;     // eta[j], j = 0..N; eta[0] = +inf, eta[N] = 0
};

inline RegimeData regime_data(const std::vector<double>& weights,
                              const std::vector<AgentSpec>& agents, int k) {
    const int N = static_cast<int>(agents.size());
    RegimeData rd;
    rd.logbeta.resize(N);
    for (int i = 0; i < N; ++i) {
        if (!(weights[i] > 0.0)) throw std::invalid_argument("weights must be positive");
        rd.logbeta[i] =
            std::log(agents[i].gamma) - std::log(weights[i]) - agents[i].rho * k;
    }
    rd.order.resize(N);
    std::iota(rd.order.begin(), rd.order.end(), 0);
    std::stable_sort(rd.order.begin(), rd.order.end(), [&](int a, int b) {
        return rd.logbeta[a] < rd.logbeta[b]; // ties keep agent-index order
    });
    rd.eta.assign(N + 1, 0.0);
    rd.eta[0] = std::numeric_limits<double>::infinity();
    for (int j = 1; j < N; ++j) {
        double acc = 0.0;
        for (int l = j + 1; l <= N; ++l) {
            const int il = rd.order[l - 1];
            acc += (rd.logbeta[il] - rd.logbeta[rd.order[j - 1]]) / agents[il].gamma;
        }
        rd.eta[j] = acc;
    }
    rd.eta[N] = 0.0;
    return rd;
}

/// Active regime j (1..N) for aggregate endowment eps: eta_j <= eps < eta_{j-1}.
inline int regime_index(const RegimeData& rd, double eps) {
    const int N = static_cast<int>(rd.order.size());
    for (int j = 1; j <= N; ++j)
        if (rd.eta[j] <= eps) return j;
    throw std::logic_error("no regime matched; eta_N = 0 should catch eps >= 0");
}

/// log xi_k for aggregate endowment value eps at the given period data.
inline double log_xi(const RegimeData& rd, const std::vector<AgentSpec>& agents, double eps) {
    const int N = static_cast<int>(rd.order.size());
    const int j = regime_index(rd, eps);
    double num = 0.0, inv = 0.0;
    for (int l = j; l <= N; ++l) {
        const int il = rd.order[l - 1];
        num += rd.logbeta[il] / agents[il].gamma;
        inv += 1.0 / agents[il].gamma;
    }
    return (num - eps) / inv;
}

} // namespace detail

/// eta_j(k) for j = 0..N: regime thresholds on aggregate endowment,
/// eta_0 = +infinity and eta_N = 0 exactly.
inline std::vector<double> etas(const std::vector<double>& weights,
                                const std::vector<AgentSpec>& agents, int k) {
    return detail::regime_data(weights, agents, k).eta;
}

/// Order statistics of the betas (agent indices, smallest beta first,
/// deterministic tie-break by agent index).
inline std::vector<int> beta_order(const std::vector<double>& weights,
                                   const std::vector<AgentSpec>& agents, int k) {
    return detail::regime_data(weights, agents, k).order;
}

/// Nodewise candidate equilibrium SPD for the given weights (not normalized:
/// xi_0 = 1 is imposed as an equation when solving for the weights).
inline AdaptedProcess candidate_spd(const std::vector<double>& weights, const EconomySpec& e) {
    const Tree& t = e.tree;
    AdaptedProcess xi(t, 0, t.horizon(), 0.0);
    for (int k = 0; k <= t.horizon(); ++k) {
        const detail::RegimeData rd = detail::regime_data(weights, e.agents, k);
        for (int n = 0; n < t.level_size(k); ++n)
            xi.at(k, n) = std::exp(detail::log_xi(rd, e.agents, e.aggregate_endowment.at(k, n)));
    }
    return xi;
}

/// Per-agent optimal consumption under the candidate SPD:
/// c^i_k = I_i(lambda_i e^{rho_i k} xi_k).
inline std::vector<AdaptedProcess> candidate_consumptions(const std::vector<double>& weights,
                                                          const EconomySpec& e,
                                                          const AdaptedProcess& xi) {
    const Tree& t = e.tree;
    const int N = static_cast<int>(e.agents.size());
    std::vector<AdaptedProcess> cons(N, AdaptedProcess(t, 0, t.horizon(), 0.0));
    for (int k = 0; k <= t.horizon(); ++k) {
        const detail::RegimeData rd = detail::regime_data(weights, e.agents, k);
        for (int n = 0; n < t.level_size(k); ++n)
            for (int i = 0; i < N; ++i) {
                const double v = rd.logbeta[i] - std::log(xi.at(k, n));
                cons[i].at(k, n) = v > 0.0 ? v / e.agents[i].gamma : 0.0;
            }
    }
    return cons;
}

/// Market-clearing identity residual: max over nodes of
/// | sum_i I_i(lambda_i e^{rho_i k} xi_k) - eps_k |. Holds for any positive
/// weights by construction of the candidate SPD.
inline double clearing_residual(const std::vector<double>& weights, const EconomySpec& e,
                                const AdaptedProcess& xi) {
    const Tree& t = e.tree;
    double worst = 0.0;
    for (int k = 0; k <= t.horizon(); ++k) {
        const detail::RegimeData rd = detail::regime_data(weights, e.agents, k);
        for (int n = 0; n < t.level_size(k); ++n) {
            double s = 0.0;
            for (std::size_t i = 0; i < e.agents.size(); ++i) {
                const double v = rd.logbeta[i] - std::log(xi.at(k, n));
                if (v > 0.0) s += v / e.agents[i].gamma;
            }
            worst = std::max(worst, std::abs(s - e.aggregate_endowment.at(k, n)));
        }
    }
    return worst;
}

/// Budget residual of each agent under the candidate SPD:
/// sum_k E[xi_k I_i(...)] - sum_k E[xi_k eps^i_k].
inline Eigen::VectorXd budget_residuals(const std::vector<double>& weights, const EconomySpec& e) {
    const AdaptedProcess xi = candidate_spd(weights, e);
    const std::vector<AdaptedProcess> cons = candidate_consumptions(weights, e, xi);
    Eigen::VectorXd r(static_cast<int>(e.agents.size()));
    for (std::size_t i = 0; i < e.agents.size(); ++i)
        r[static_cast<int>(i)] =
            pv_sum(e.tree, xi, cons[i]) - pv_sum(e.tree, xi, e.agents[i].endowment);
    return r;
}

struct EquilibriumSolution {
    std::vector<double> weights;
    AdaptedProcess xi;
    std::vector<AdaptedProcess> consumptions;
    Eigen::VectorXd budget_residual;  // per agent, all N (none dropped)
    double clearing = 0.0;            // max nodewise clearing violation
    double normalization = 0.0;       // |xi_0 - 1|
};

namespace detail {

inline EquilibriumSolution package_solution(const std::vector<double>& weights,
                                            const EconomySpec& e, const AdaptedProcess& xi) {
    EquilibriumSolution sol;
    sol.weights = weights;
    sol.xi = xi;
    sol.consumptions = candidate_consumptions(weights, e, xi);
    sol.budget_residual.resize(static_cast<int>(e.agents.size()));
    for (std::size_t i = 0; i < e.agents.size(); ++i)
        sol.budget_residual[static_cast<int>(i)] =
            pv_sum(e.tree, xi, sol.consumptions[i]) - pv_sum(e.tree, xi, e.agents[i].endowment);
    const Tree& t = e.tree;
    for (int k = 0; k <= t.horizon(); ++k)
        for (int n = 0; n < t.level_size(k); ++n) {
            double s = 0.0;
            for (const auto& c : sol.consumptions) s += c.at(k, n);
            sol.clearing = std::max(sol.clearing,
                                    std::abs(s - e.aggregate_endowment.at(k, n)));
        }
    sol.normalization = std::abs(xi.at(0, 0) - 1.0);
    return sol;
}

} // namespace detail

struct EquilibriumOptions {
    double newton_ftol = 1e-13;
    int newton_max_iter = 200;
    double dedup_rel = 1e-6;
    double budget_tol = 1e-8;   // certification threshold per agent
    double norm_tol = 1e-10;
};

/// Homogeneous-economy warm start: lambda_i = gamma_i e^{-gamma_i eps^i_0}.
inline std::vector<double> autarky_weights(const EconomySpec& e) {
    std::vector<double> w(e.agents.size());
    for (std::size_t i = 0; i < e.agents.size(); ++i)
        w[i] = e.agents[i].gamma * std::exp(-e.agents[i].gamma * e.agents[i].endowment.at(0, 0));
    return w;
}

/// Default multi-start pool: the autarky warm start plus a log-uniform grid.
inline std::vector<std::vector<double>> default_starts(const EconomySpec& e) {
    const int N = static_cast<int>(e.agents.size());
    std::vector<std::vector<double>> starts;
    starts.push_back(autarky_weights(e));
    const std::vector<double> levels = {0.2, 1.0, 5.0};
    const int combos = static_cast<int>(std::pow(levels.size(), std::min(N, 4)));
    for (int c = 0; c < combos; ++c) {
        int v = c;
        std::vector<double> s(N, 1.0);
        for (int i = 0; i < std::min(N, 4); ++i) {
            s[i] = levels[v % levels.size()];
            v /= static_cast<int>(levels.size());
        }
        starts.push_back(s);
    }
    return starts;
}

/// Multi-start damped Newton on the budget system with the normalization
/// xi_0(weights) = 1 replacing one redundant budget equation (Walras). Every
/// returned solution passes the budget, clearing, and normalization
/// thresholds; distinct solutions are deduplicated by relative distance.
inline std::vector<EquilibriumSolution> solve_equilibrium(
    const EconomySpec& e, std::vector<std::vector<double>> starts = {},
    const EquilibriumOptions& opt = {}) {
    const int N = static_cast<int>(e.agents.size());
    if (!e.strictly_positive)
        throw std::invalid_argument(
            "solve_equilibrium requires strictly positive endowments; use "
            "vanishing_endowment_family for economies with zero-endowment nodes");
    if (starts.empty()) starts = default_starts(e);

    auto system = [&](const Eigen::VectorXd& u) {
        std::vector<double> w(N);
        for (int i = 0; i < N; ++i) w[i] = std::exp(u[i]);
        const AdaptedProcess xi = candidate_spd(w, e);
        const std::vector<AdaptedProcess> cons = candidate_consumptions(w, e, xi);
        Eigen::VectorXd F(N);
        for (int i = 0; i + 1 < N; ++i)
            F[i] = pv_sum(e.tree, xi, cons[i]) - pv_sum(e.tree, xi, e.agents[i].endowment);
        F[N - 1] = xi.at(0, 0) - 1.0;
        return F;
    };

    std::vector<EquilibriumSolution> found;
    double best_residual = std::numeric_limits<double>::infinity();
    for (const auto& s : starts) {
        Eigen::VectorXd u0(N);
        for (int i = 0; i < N; ++i) u0[i] = std::log(s[i]);
        NewtonOptions nopt;
        nopt.ftol = opt.newton_ftol;
        nopt.max_iter = opt.newton_max_iter;
        NewtonResult res = damped_newton(system, u0, nopt);
        best_residual = std::min(best_residual, res.residual);
        if (!res.converged) continue;
        std::vector<double> w(N);
        for (int i = 0; i < N; ++i) w[i] = std::exp(res.x[i]);

        bool duplicate = false;
        for (const auto& sol : found) {
            double rel = 0.0, scale = 0.0;
            for (int i = 0; i < N; ++i) {
                rel = std::max(rel, std::abs(sol.weights[i] - w[i]));
                scale = std::max({scale, std::abs(sol.weights[i]), std::abs(w[i])});
            }
            if (rel <= opt.dedup_rel * scale) {
                duplicate = true;
                break;
            }
        }
        if (duplicate) continue;

        const AdaptedProcess xi = candidate_spd(w, e);
        EquilibriumSolution sol = detail::package_solution(w, e, xi);
        // Walras consistency: the dropped budget must close as well
        if (sol.budget_residual.lpNorm<Eigen::Infinity>() > opt.budget_tol) continue;
        if (sol.normalization > opt.norm_tol) continue;
        found.push_back(std::move(sol));
    }
    if (found.empty())
        throw std::runtime_error("no equilibrium start converged; best residual " +
                                 std::to_string(best_residual));
    return found;
}

// ---------------------------------------------------------------------------
// Two-agent one-period non-uniqueness scan (deterministic economy)
// ---------------------------------------------------------------------------

struct TwoAgentExample {
    double eps10 = 0.0, eps11 = 0.0; // agent 1 endowments at t = 0, 1
    double eps20 = 0.0, eps21 = 0.0; // agent 2
    double aggregate1() const { return eps11 + eps21; }
};

/// Deterministic one-period SPD xi_1(x, y) of the two-agent example with
/// gamma = 1, rho = 0; x and y are the weights of agents 2 and 1.
inline double two_agent_xi1(double x, double y, double eps1) {
    if (x < y * std::exp(-eps1)) return std::exp(-eps1) / x;
    if (x <= y * std::exp(eps1)) return std::exp(-0.5 * eps1) / std::sqrt(x * y);
    return std::exp(-eps1) / y;
}

/// Which system of two-agent example equations to solve. AsWritten is the
/// three-branch piecewise form the worked example states and builds its
/// two-root construction on; Budget is the clearing-consistent budget system
/// (substituting the optimal consumptions into both budget constraints).
/// The two coincide on the middle regime but differ on the outer ones, where
/// the stated g-branches do not add up to market clearing; the scan exposes
/// both so the constructed root pairs and the certified equilibria can be
/// compared side by side.
enum class ExampleEquations { AsWritten, Budget };

/// Residuals of equations (1') and (2') of the two-agent example.
inline Eigen::Vector2d two_agent_equations(double x, double y, const TwoAgentExample& p,
                                           ExampleEquations form = ExampleEquations::AsWritten) {
    const double eps1 = p.aggregate1();
    const double xi1 = two_agent_xi1(x, y, eps1);
    double h = 0.0, g = 0.0;
    if (form == ExampleEquations::Budget) {
        h = xi1 * ((y * xi1 <= 1.0 ? std::log(1.0 / (y * xi1)) : 0.0) - p.eps11);
        g = xi1 * ((x * xi1 <= 1.0 ? std::log(1.0 / (x * xi1)) : 0.0) - p.eps21);
    } else {
        if (x < y * std::exp(-eps1)) {
            h = -p.eps11 * xi1;
            g = -p.eps21 * xi1;
        } else if (x <= y * std::exp(eps1)) {
            h = xi1 * (std::log(std::sqrt(x / y)) + 0.5 * eps1 - p.eps11);
            g = xi1 * (std::log(std::sqrt(y / x)) + 0.5 * eps1 - p.eps21);
        } else {
            h = (eps1 - p.eps11) * xi1;
            g = (eps1 - p.eps21) * xi1;
        }
    }
    Eigen::Vector2d F;
    F[0] = (y <= 1.0 ? std::log(1.0 / y) : 0.0) + h - p.eps10;
    F[1] = (x <= 1.0 ? std::log(1.0 / x) : 0.0) + g - p.eps20;
    return F;
}

struct ScanRoot {
    double x = 0.0, y = 0.0;
    double residual = 0.0;
};

struct ScanOptions {
    double lo = 1e-3, hi = 8.0; // log-spaced grid bounds in both weights
    int resolution = 200;
    double root_tol = 1e-10;
};

/// Dense 2-D grid with local Newton refinement over the three regimes of
/// xi_1(x, y); returns all roots of (1')/(2') found at the stated tolerance.
inline std::vector<ScanRoot> nonuniqueness_scan(const TwoAgentExample& p,
                                                ExampleEquations form = ExampleEquations::AsWritten,
                                                const ScanOptions& opt = {}) {
    std::vector<double> grid(opt.resolution);
    for (int i = 0; i < opt.resolution; ++i)
        grid[i] = opt.lo * std::pow(opt.hi / opt.lo, double(i) / (opt.resolution - 1));

    auto system = [&](const Eigen::VectorXd& u) {
        const Eigen::Vector2d F = two_agent_equations(std::exp(u[0]), std::exp(u[1]), p, form);
        return Eigen::VectorXd(F);
    };

    std::vector<ScanRoot> roots;
    auto try_refine = [&](double x0, double y0) {
        Eigen::VectorXd u0(2);
        u0 << std::log(x0), std::log(y0);
        NewtonOptions nopt;
        nopt.ftol = 1e-14;
        const NewtonResult res = damped_newton(system, u0, nopt);
        if (!res.converged) return;
        const double x = std::exp(res.x[0]), y = std::exp(res.x[1]);
        const double resid = two_agent_equations(x, y, p, form).lpNorm<Eigen::Infinity>();
        if (resid > opt.root_tol) return;
        for (const auto& r : roots)
            if (std::abs(r.x - x) <= 1e-8 * std::max(1.0, std::abs(x)) &&
                std::abs(r.y - y) <= 1e-8 * std::max(1.0, std::abs(y)))
                return;
        roots.push_back({x, y, resid});
    };

    // sign-change cells of either equation seed the refinement from the cell
    // corner and centre (nearby roots can share attraction basins otherwise)
    std::vector<std::vector<Eigen::Vector2d>> vals(opt.resolution,
                                                   std::vector<Eigen::Vector2d>(opt.resolution));
    for (int i = 0; i < opt.resolution; ++i)
        for (int j = 0; j < opt.resolution; ++j)
            vals[i][j] = two_agent_equations(grid[i], grid[j], p, form);
    for (int i = 0; i + 1 < opt.resolution; ++i)
        for (int j = 0; j + 1 < opt.resolution; ++j) {
            bool f1_changes = false, f2_changes = false;
            const double s1 = vals[i][j][0], s2 = vals[i][j][1];
            for (auto [di, dj] : {std::pair{0, 1}, {1, 0}, {1, 1}}) {
                if (vals[i + di][j + dj][0] * s1 <= 0.0) f1_changes = true;
                if (vals[i + di][j + dj][1] * s2 <= 0.0) f2_changes = true;
            }
            if (f1_changes && f2_changes) {
                try_refine(grid[i], grid[j]);
                try_refine(std::sqrt(grid[i] * grid[i + 1]), std::sqrt(grid[j] * grid[j + 1]));
            }
        }
    std::sort(roots.begin(), roots.end(), [](const ScanRoot& a, const ScanRoot& b) {
        return a.x < b.x;
    });
    return roots;
}

// ---------------------------------------------------------------------------
// Vanishing-endowment equilibrium families
// ---------------------------------------------------------------------------

/// Equilibrium for economies with P(eps_k = 0) > 0: the SPD takes the
/// canonical form xi_k(weights) off the zero-endowment nodes and the supplied
/// non-negative values X on them. Weights are solved from the budget system
/// when it pins them; otherwise the hint is validated as-is (families can be
/// weight-parameterized, as in the single-agent example with eps_0 = 0).
inline EquilibriumSolution vanishing_endowment_family(const EconomySpec& e,
                                                      const AdaptedProcess& X,
                                                      const std::vector<double>& weights_hint) {
    const Tree& t = e.tree;
    const int N = static_cast<int>(e.agents.size());
    for (int k = 1; k <= t.horizon(); ++k)
        for (int n = 0; n < t.level_size(k); ++n)
            if (e.aggregate_endowment.at(k, n) == 0.0) {
                if (!X.covers(k))
                    throw std::invalid_argument("X must cover every level with zero endowment");
                if (X.at(k, n) < 0.0)
                    throw std::invalid_argument("X must be non-negative on zero-endowment nodes");
            }

    const bool root_zero = e.aggregate_endowment.at(0, 0) == 0.0;
    auto build_xi = [&](const std::vector<double>& w) {
        AdaptedProcess xi(t, 0, t.horizon(), 0.0);
        for (int k = 0; k <= t.horizon(); ++k) {
            const detail::RegimeData rd = detail::regime_data(w, e.agents, k);
            for (int n = 0; n < t.level_size(k); ++n) {
                const double eps = e.aggregate_endowment.at(k, n);
                if (k == 0 && root_zero)
                    xi.at(k, n) = 1.0; // normalized directly on the zero root
                else if (k >= 1 && eps == 0.0)
                    xi.at(k, n) = X.at(k, n);
                else
                    xi.at(k, n) = std::exp(detail::log_xi(rd, e.agents, eps));
            }
        }
        return xi;
    };
    auto budgets = [&](const std::vector<double>& w) {
        const AdaptedProcess xi = build_xi(w);
        const std::vector<AdaptedProcess> cons = candidate_consumptions(w, e, xi);
        Eigen::VectorXd F(N);
        for (int i = 0; i < N; ++i)
            F[i] = pv_sum(t, xi, cons[i]) - pv_sum(t, xi, e.agents[i].endowment);
        return F;
    };

    std::vector<double> w = weights_hint;
    Eigen::VectorXd F0 = budgets(w);
    double norm0 = std::abs(build_xi(w).at(0, 0) - 1.0);
    if (F0.lpNorm<Eigen::Infinity>() > 5e-13 || norm0 > 5e-13) {
        auto system = [&](const Eigen::VectorXd& u) {
            std::vector<double> ww(N);
            for (int i = 0; i < N; ++i) ww[i] = std::exp(u[i]);
            Eigen::VectorXd F = budgets(ww);
            if (!root_zero) F[N - 1] = build_xi(ww).at(0, 0) - 1.0;
            return F;
        };
        Eigen::VectorXd u0(N);
        for (int i = 0; i < N; ++i) u0[i] = std::log(w[i]);
        NewtonOptions nopt;
        nopt.ftol = 1e-13;
        const NewtonResult res = damped_newton(system, u0, nopt);
        if (!res.converged)
            throw std::runtime_error("vanishing-endowment budget system did not converge");
        for (int i = 0; i < N; ++i) w[i] = std::exp(res.x[i]);
    }

    return detail::package_solution(w, e, build_xi(w));
}

} // namespace caratree
