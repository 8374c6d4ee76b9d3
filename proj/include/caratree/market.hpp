#pragma once

// Market specification and state-price-density machinery: pricing-identity
// verification, a no-arbitrage feasibility check, wealth spaces with
// probability-weighted projections, and the aggregate SPD (the unique SPD
// whose period-k value lies in the period-k wealth space), computed as a
// rank-certified constrained linear solve.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "caratree/tree.hpp"

namespace caratree {

struct Asset {
    std::string name;
    AdaptedProcess price; // levels 0..T, non-negative
};

/// Strictly positive adapted process with xi_0 = 1. Throws on violation.
struct SPD {
    AdaptedProcess xi;

    SPD(const Tree& t, AdaptedProcess values) : xi(std::move(values)) {
        if (xi.first_level() != 0 || xi.last_level() != t.horizon())
            throw std::invalid_argument("SPD must cover levels 0..T");
        if (std::abs(xi.at(0, 0) - 1.0) > 1e-12)
            throw std::invalid_argument("SPD must be normalized to xi_0 = 1");
        for (int k = 0; k <= t.horizon(); ++k)
            for (int n = 0; n < t.level_size(k); ++n)
                if (!(xi.at(k, n) > 0.0))
                    throw std::invalid_argument("SPD must be strictly positive on every node");
    }
};

enum class WealthForm { Span, TypeC };

/// Market on a finite tree. Two wealth-space descriptions are supported:
///  - Span: long-lived assets with price processes S^j plus the bond; the
///    period-k wealth space is the span of {S^j_k, 1+r_k} over F_{k-1}
///    coefficients.
///  - TypeC: per period k a partition H_k of level k (with F_{k-1} ⊆ H_k ⊆ F_k)
///    and prices of the one-period block claims; the wealth space is L2(H_k).
/// The rate process r_k is predictable: rate[k-1] holds r_k on level k-1 nodes.
struct MarketSpec {
    Tree tree;
    WealthForm form = WealthForm::Span;
    std::vector<Asset> assets;                       // Span form
    std::vector<std::vector<double>> rate;           // rate[k-1] = r_k on level k-1
    std::vector<SubAlgebra> partitions;              // TypeC: H_k, k = 1..T
    std::vector<std::vector<double>> block_prices;   // TypeC: q[k-1][block], quoted at the block's parent
};

inline void validate_market(const MarketSpec& m) {
    const Tree& t = m.tree;
    const int T = t.horizon();
    if (static_cast<int>(m.rate.size()) != T)
        throw std::invalid_argument("rate must have one entry per period 1..T");
    for (int k = 1; k <= T; ++k) {
        if (static_cast<int>(m.rate[k - 1].size()) != t.level_size(k - 1))
            throw std::invalid_argument("rate r_k must live on level k-1 nodes");
        for (double r : m.rate[k - 1])
            if (r < 0.0) throw std::invalid_argument("interest rate must be non-negative");
    }
    if (m.form == WealthForm::Span) {
        for (const Asset& a : m.assets) {
            if (a.price.first_level() != 0 || a.price.last_level() != T)
                throw std::invalid_argument("asset price process must cover levels 0..T");
            for (int k = 0; k <= T; ++k)
                for (int n = 0; n < t.level_size(k); ++n)
                    if (a.price.at(k, n) < 0.0)
                        throw std::invalid_argument("asset prices must be non-negative");
        }
    } else {
        if (static_cast<int>(m.partitions.size()) != T ||
            static_cast<int>(m.block_prices.size()) != T)
            throw std::invalid_argument("type-C market needs a partition and claim prices per period");
        for (int k = 1; k <= T; ++k) {
            const SubAlgebra& h = m.partitions[k - 1];
            if (h.level() != k) throw std::invalid_argument("partition level mismatch");
            if (!h.refines_parents(t))
                throw std::invalid_argument("type-C partition must satisfy F_{k-1} ⊆ H_k");
            const auto& q = m.block_prices[k - 1];
            if (static_cast<int>(q.size()) != h.block_count())
                throw std::invalid_argument("one claim price per block required");
            // claim prices per parent must be positive and consistent with the bond
            std::vector<double> mass(t.level_size(k - 1), 0.0);
            for (int b = 0; b < h.block_count(); ++b) {
                if (!(q[b] > 0.0)) throw std::invalid_argument("block claim prices must be > 0");
                mass[t.parent(k, h.blocks()[b].front())] += q[b];
            }
            for (int n = 0; n < t.level_size(k - 1); ++n)
                if (std::abs(mass[n] * (1.0 + m.rate[k - 1][n]) - 1.0) > 1e-10)
                    throw std::invalid_argument("block claim prices inconsistent with the bond rate");
        }
    }
}

// ---------------------------------------------------------------------------
// Pricing-identity verification
// ---------------------------------------------------------------------------

struct PricingResidual {
    double value = 0.0;
    int level = 0; // level of the node where the identity is priced (k)
    int node = 0;
    std::string instrument;
};

struct SpdReport {
    double max_abs = 0.0;
    PricingResidual worst;
    double tol = 0.0;
    bool pass = true;
};

/// Max absolute residual of the asset/claim and bond pricing identities
/// S_k xi_k = E[S_{k+1} xi_{k+1} | F_k] over all nodes and periods.
inline SpdReport verify_spd(const MarketSpec& m, const SPD& spd, double tol) {
    const Tree& t = m.tree;
    const int T = t.horizon();
    SpdReport rep;
    rep.tol = tol;
    auto record = [&](double r, int level, int node, const std::string& inst) {
        if (std::abs(r) > rep.max_abs) {
            rep.max_abs = std::abs(r);
            rep.worst = {r, level, node, inst};
        }
    };
    const AdaptedProcess& xi = spd.xi;
    for (int k = 0; k < T; ++k) {
        for (int n = 0; n < t.level_size(k); ++n) {
            const double r_next = m.rate[k][n];
            double bond = xi.at(k, n);
            for (int c : t.children(k, n)) bond -= t.cond_prob(k + 1, c) * (1.0 + r_next) * xi.at(k + 1, c);
            record(bond, k, n, "bond");
            if (m.form == WealthForm::Span) {
                for (const Asset& a : m.assets) {
                    double res = a.price.at(k, n) * xi.at(k, n);
                    for (int c : t.children(k, n))
                        res -= t.cond_prob(k + 1, c) * a.price.at(k + 1, c) * xi.at(k + 1, c);
                    record(res, k, n, a.name);
                }
            }
        }
        if (m.form == WealthForm::TypeC) {
            const SubAlgebra& h = m.partitions[k];
            for (int b = 0; b < h.block_count(); ++b) {
                const int n = t.parent(k + 1, h.blocks()[b].front());
                double res = m.block_prices[k][b] * xi.at(k, n);
                for (int c : h.blocks()[b]) res -= t.cond_prob(k + 1, c) * xi.at(k + 1, c);
                record(res, k, n, "claim[" + std::to_string(k + 1) + "," + std::to_string(b) + "]");
            }
        }
    }
    rep.pass = rep.max_abs <= tol;
    return rep;
}

// ---------------------------------------------------------------------------
// No-arbitrage feasibility: a strictly positive SPD exists iff, node by node,
// the one-step pricing system A q = b admits q > 0. On a bounded polytope the
// per-coordinate maxima are attained at vertices, which we enumerate (children
// counts are small on the trees this library targets; hard cap below).
// ---------------------------------------------------------------------------

namespace detail {

inline bool strictly_positive_solution_exists(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
    const int nc = static_cast<int>(A.cols());
    if (nc > 16) throw std::invalid_argument("no-arbitrage vertex check capped at 16 children per node");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    qr.setThreshold(1e-11);
    const int r = static_cast<int>(qr.rank());
    std::vector<double> coord_max(nc, 0.0);
    bool any_feasible = false;
    std::vector<int> idx(r);
    // enumerate all r-subsets of columns
    std::vector<int> comb(r);
    std::iota(comb.begin(), comb.end(), 0);
    auto advance = [&]() {
        int i = r - 1;
        while (i >= 0 && comb[i] == nc - r + i) --i;
        if (i < 0) return false;
        ++comb[i];
        for (int j = i + 1; j < r; ++j) comb[j] = comb[j - 1] + 1;
        return true;
    };
    if (r == 0) return false;
    do {
        Eigen::MatrixXd As(A.rows(), r);
        for (int j = 0; j < r; ++j) As.col(j) = A.col(comb[j]);
        Eigen::VectorXd qs = As.colPivHouseholderQr().solve(b);
        if (!qs.allFinite()) continue;
        if ((As * qs - b).lpNorm<Eigen::Infinity>() > 1e-9) continue;
        bool nonneg = true;
        for (int j = 0; j < r; ++j)
            if (qs[j] < -1e-11) { nonneg = false; break; }
        if (!nonneg) continue;
        any_feasible = true;
        for (int j = 0; j < r; ++j)
            coord_max[comb[j]] = std::max(coord_max[comb[j]], qs[j]);
    } while (advance());
    if (!any_feasible) return false;
    for (double v : coord_max)
        if (v <= 1e-11) return false;
    return true;
}

} // namespace detail

/// Feasibility of a strictly positive (unrestricted) SPD for the market.
inline bool strictly_positive_spd_exists(const MarketSpec& m) {
    const Tree& t = m.tree;
    for (int k = 0; k < t.horizon(); ++k) {
        for (int n = 0; n < t.level_size(k); ++n) {
            const auto& ch = t.children(k, n);
            const int nc = static_cast<int>(ch.size());
            std::vector<Eigen::VectorXd> rows;
            std::vector<double> rhs;
            Eigen::VectorXd bond(nc);
            for (int j = 0; j < nc; ++j) bond[j] = 1.0 + m.rate[k][n];
            rows.push_back(bond);
            rhs.push_back(1.0);
            if (m.form == WealthForm::Span) {
                for (const Asset& a : m.assets) {
                    Eigen::VectorXd row(nc);
                    for (int j = 0; j < nc; ++j) row[j] = a.price.at(k + 1, ch[j]);
                    rows.push_back(row);
                    rhs.push_back(a.price.at(k, n));
                }
            } else {
                const SubAlgebra& h = m.partitions[k];
                for (int b = 0; b < h.block_count(); ++b) {
                    if (t.parent(k + 1, h.blocks()[b].front()) != n) continue;
                    Eigen::VectorXd row = Eigen::VectorXd::Zero(nc);
                    for (int j = 0; j < nc; ++j)
                        if (h.block_of(ch[j]) == b) row[j] = 1.0;
                    rows.push_back(row);
                    rhs.push_back(m.block_prices[k][b]);
                }
            }
            Eigen::MatrixXd A(static_cast<int>(rows.size()), nc);
            Eigen::VectorXd b(static_cast<int>(rows.size()));
            for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
                A.row(i) = rows[i].transpose();
                b[i] = rhs[i];
            }
            if (!detail::strictly_positive_solution_exists(A, b)) return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Wealth spaces
// ---------------------------------------------------------------------------

/// The period-k wealth space L_k as a subspace of level-k node values, with
/// projections taken in the E[XY] inner product.
class WealthSpace {
  public:
    static WealthSpace for_period(const MarketSpec& m, int k) {
        const Tree& t = m.tree;
        if (k < 1 || k > t.horizon()) throw std::invalid_argument("wealth space period out of range");
        const int nk = t.level_size(k);
        WealthSpace w;
        w.sqrtp_.resize(nk);
        for (int n = 0; n < nk; ++n) w.sqrtp_[n] = std::sqrt(t.prob(k, n));
        if (m.form == WealthForm::TypeC) {
            const SubAlgebra& h = m.partitions[k - 1];
            w.coeff_basis_ = Eigen::MatrixXd::Zero(nk, h.block_count());
            for (int n = 0; n < nk; ++n) w.coeff_basis_(n, h.block_of(n)) = 1.0;
            w.blocks_ = h.blocks();
            w.type_c_ = true;
        } else {
            std::vector<Eigen::VectorXd> raw;
            for (int n = 0; n < t.level_size(k - 1); ++n) {
                const auto& ch = t.children(k - 1, n);
                Eigen::VectorXd bond = Eigen::VectorXd::Zero(nk);
                for (int c : ch) bond[c] = 1.0 + m.rate[k - 1][n];
                raw.push_back(bond);
                for (const Asset& a : m.assets) {
                    Eigen::VectorXd v = Eigen::VectorXd::Zero(nk);
                    for (int c : ch) v[c] = a.price.at(k, c);
                    raw.push_back(v);
                }
            }
            Eigen::MatrixXd V(nk, static_cast<int>(raw.size()));
            for (int j = 0; j < static_cast<int>(raw.size()); ++j)
                V.col(j) = w.sqrtp_.asDiagonal() * raw[j];
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(V);
            qr.setThreshold(1e-12);
            const int r = static_cast<int>(qr.rank());
            Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(nk, r);
            w.q_ = Q;
            w.coeff_basis_ = w.sqrtp_.cwiseInverse().asDiagonal() * Q;
        }
        return w;
    }

    int dim() const { return static_cast<int>(coeff_basis_.cols()); }

    /// Node-value matrix B with L_k = { B a }. For type-C markets the columns
    /// are the block indicators, so coefficients are block values.
    const Eigen::MatrixXd& coeff_basis() const { return coeff_basis_; }

    Eigen::VectorXd project(const Eigen::VectorXd& x) const {
        if (type_c_) {
            Eigen::VectorXd out(x.size());
            for (const auto& blk : blocks_) {
                double mass = 0.0, acc = 0.0;
                for (int n : blk) {
                    const double p = sqrtp_[n] * sqrtp_[n];
                    mass += p;
                    acc += p * x[n];
                }
                const double mean = acc / mass;
                for (int n : blk) out[n] = mean;
            }
            return out;
        }
        const Eigen::VectorXd y = sqrtp_.asDiagonal() * x;
        return sqrtp_.cwiseInverse().asDiagonal() * (q_ * (q_.transpose() * y));
    }

    /// Weighted norm of x - P x, i.e. the L2(P) distance to the subspace.
    double membership_residual(const Eigen::VectorXd& x) const {
        const Eigen::VectorXd d = x - project(x);
        return (sqrtp_.asDiagonal() * d).norm();
    }

  private:
    Eigen::VectorXd sqrtp_;
    Eigen::MatrixXd coeff_basis_;
    Eigen::MatrixXd q_;
    std::vector<std::vector<int>> blocks_;
    bool type_c_ = false;
};

// ---------------------------------------------------------------------------
// Aggregate SPD
// ---------------------------------------------------------------------------

struct AggregateSpdResult {
    SPD spd;
    int unknowns = 0;
    int rank = 0;
    double system_residual = 0.0;
    bool unique = false;
};

/// Solves for the unique normalized SPD M with M_k in the period-k wealth
/// space. All pricing identities and the subspace memberships are stacked
/// into one linear system over the subspace coefficients; uniqueness is
/// certified by a rank check. Throws if the market admits no strictly
/// positive SPD, if the system is infeasible, or if it is rank-deficient.
inline AggregateSpdResult aggregate_spd_certified(const MarketSpec& m) {
    validate_market(m);
    if (!strictly_positive_spd_exists(m))
        throw std::runtime_error("market admits no strictly positive SPD (arbitrage)");
    const Tree& t = m.tree;
    const int T = t.horizon();

    std::vector<WealthSpace> spaces;
    std::vector<int> offset(T + 1, 0);
    int unknowns = 0;
    for (int k = 1; k <= T; ++k) {
        spaces.push_back(WealthSpace::for_period(m, k));
        offset[k] = unknowns;
        unknowns += spaces.back().dim();
    }

    // rows: every pricing identity, probability-scaled
    struct Entry {
        int row, col;
        double value;
    };
    std::vector<Entry> trips;
    std::vector<double> rhs;
    auto basis = [&](int k) -> const Eigen::MatrixXd& { return spaces[k - 1].coeff_basis(); };
    auto add_term = [&](int row, int k, int node, double coef) {
        // coef * M_k(node); k = 0 contributes to the rhs with M_0 = 1
        if (k == 0) {
            rhs[row] -= coef;
            return;
        }
        const Eigen::MatrixXd& B = basis(k);
        for (int j = 0; j < B.cols(); ++j)
            if (B(node, j) != 0.0) trips.push_back({row, offset[k] + j, coef * B(node, j)});
    };
    int row = 0;
    auto new_row = [&]() {
        rhs.push_back(0.0);
        return row++;
    };
    for (int k = 0; k < T; ++k) {
        for (int n = 0; n < t.level_size(k); ++n) {
            const int rbond = new_row();
            add_term(rbond, k, n, t.prob(k, n));
            for (int c : t.children(k, n))
                add_term(rbond, k + 1, c, -t.prob(k + 1, c) * (1.0 + m.rate[k][n]));
            if (m.form == WealthForm::Span) {
                for (const Asset& a : m.assets) {
                    const int r2 = new_row();
                    add_term(r2, k, n, t.prob(k, n) * a.price.at(k, n));
                    for (int c : t.children(k, n))
                        add_term(r2, k + 1, c, -t.prob(k + 1, c) * a.price.at(k + 1, c));
                }
            }
        }
        if (m.form == WealthForm::TypeC) {
            const SubAlgebra& h = m.partitions[k];
            for (int b = 0; b < h.block_count(); ++b) {
                const int n = t.parent(k + 1, h.blocks()[b].front());
                const int r2 = new_row();
                add_term(r2, k, n, t.prob(k, n) * m.block_prices[k][b]);
                for (int c : h.blocks()[b]) add_term(r2, k + 1, c, -t.prob(k + 1, c));
            }
        }
    }

    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(row, unknowns);
    for (const auto& tr : trips) A(tr.row, tr.col) += tr.value;
    Eigen::VectorXd b = Eigen::Map<Eigen::VectorXd>(rhs.data(), row);

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    qr.setThreshold(1e-11);
    Eigen::VectorXd alpha = qr.solve(b);
    const double sys_res = (A * alpha - b).lpNorm<Eigen::Infinity>();
    if (sys_res > 1e-9)
        throw std::runtime_error("aggregate SPD: pricing and membership constraints infeasible");
    const int rank = static_cast<int>(qr.rank());
    if (rank < unknowns)
        throw std::runtime_error("aggregate SPD: linear system rank-deficient, uniqueness not certified");

    AdaptedProcess mvals(t, 0, T, 0.0);
    mvals.at(0, 0) = 1.0;
    for (int k = 1; k <= T; ++k) {
        const Eigen::VectorXd mk = basis(k) * alpha.segment(offset[k], spaces[k - 1].dim());
        for (int n = 0; n < t.level_size(k); ++n) mvals.at(k, n) = mk[n];
    }
    for (int k = 1; k <= T; ++k)
        for (int n = 0; n < t.level_size(k); ++n)
            if (!(mvals.at(k, n) > 0.0))
                throw std::runtime_error("aggregate SPD solution is not strictly positive");

    return AggregateSpdResult{SPD(t, std::move(mvals)), unknowns, rank, sys_res, rank == unknowns};
}

inline SPD aggregate_spd(const MarketSpec& m) { return aggregate_spd_certified(m).spd; }

// ---------------------------------------------------------------------------
// Construction helpers (markets consistent with a reference SPD)
// ---------------------------------------------------------------------------

/// Predictable rate implied by a reference SPD: 1 + r_k = xi_{k-1} / E[xi_k | F_{k-1}].
/// Throws if the implied rate is negative anywhere.
inline std::vector<std::vector<double>> implied_rate(const Tree& t, const SPD& ref) {
    std::vector<std::vector<double>> rate;
    for (int k = 1; k <= t.horizon(); ++k) {
        std::vector<double> cond = expect_given_parent(t, ref.xi, k);
        std::vector<double> rk(t.level_size(k - 1));
        for (int n = 0; n < t.level_size(k - 1); ++n) {
            rk[n] = ref.xi.at(k - 1, n) / cond[n] - 1.0;
            if (rk[n] < 0.0) throw std::invalid_argument("reference SPD implies a negative rate");
        }
        rate.push_back(std::move(rk));
    }
    return rate;
}

/// Span market whose assets are backward-priced from given terminal payoffs
/// under the reference SPD (hence arbitrage-free by construction).
inline MarketSpec make_span_market(const Tree& t, const SPD& ref,
                                   const std::vector<std::vector<double>>& terminal_payoffs) {
    MarketSpec m;
    m.tree = t;
    m.form = WealthForm::Span;
    m.rate = implied_rate(t, ref);
    int idx = 0;
    for (const auto& payoff : terminal_payoffs) {
        if (static_cast<int>(payoff.size()) != t.level_size(t.horizon()))
            throw std::invalid_argument("terminal payoff size mismatch");
        AdaptedProcess price(t, 0, t.horizon(), 0.0);
        for (int n = 0; n < t.level_size(t.horizon()); ++n) {
            if (payoff[n] < 0.0) throw std::invalid_argument("terminal payoffs must be non-negative");
            price.at(t.horizon(), n) = payoff[n];
        }
        for (int k = t.horizon() - 1; k >= 0; --k)
            for (int n = 0; n < t.level_size(k); ++n) {
                double acc = 0.0;
                for (int c : t.children(k, n))
                    acc += t.cond_prob(k + 1, c) * ref.xi.at(k + 1, c) * price.at(k + 1, c);
                price.at(k, n) = acc / ref.xi.at(k, n);
            }
        m.assets.push_back(Asset{"asset" + std::to_string(idx++), std::move(price)});
    }
    validate_market(m);
    return m;
}

/// Type-C market with block claims priced under a reference SPD:
/// q_B = E[xi_k 1_B | F_{k-1}] / xi_{k-1}.
inline MarketSpec make_type_c_market(const Tree& t, std::vector<SubAlgebra> partitions, const SPD& ref) {
    MarketSpec m;
    m.tree = t;
    m.form = WealthForm::TypeC;
    m.partitions = std::move(partitions);
    m.rate = implied_rate(t, ref);
    for (int k = 1; k <= t.horizon(); ++k) {
        const SubAlgebra& h = m.partitions[k - 1];
        std::vector<double> q(h.block_count(), 0.0);
        for (int b = 0; b < h.block_count(); ++b) {
            const int parent = t.parent(k, h.blocks()[b].front());
            double acc = 0.0;
            for (int c : h.blocks()[b]) acc += t.cond_prob(k, c) * ref.xi.at(k, c);
            q[b] = acc / ref.xi.at(k - 1, parent);
        }
        m.block_prices.push_back(std::move(q));
    }
    validate_market(m);
    return m;
}

/// Complete market: one-period-spanning assets generated from a reference SPD.
/// Terminal payoffs are chosen so that, together with the bond, each node's
/// children space is spanned (verified by the aggregate solve downstream).
inline MarketSpec make_complete_market(const Tree& t, const SPD& ref,
                                       const std::vector<std::vector<double>>& terminal_payoffs) {
    MarketSpec m = make_span_market(t, ref, terminal_payoffs);
    for (int k = 1; k <= t.horizon(); ++k) {
        WealthSpace w = WealthSpace::for_period(m, k);
        if (w.dim() != t.level_size(k))
            throw std::invalid_argument("payoffs do not complete the market");
    }
    return m;
}

} // namespace caratree
