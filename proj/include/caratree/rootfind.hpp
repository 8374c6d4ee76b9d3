#pragma once

// Small deterministic root-finding helpers shared by the solvers: bracketed
// bisection with optional Newton polish for scalars, and a damped Newton with
// finite-difference Jacobian for low-dimensional systems.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>

namespace caratree {

struct ScalarRoot {
    double x = 0.0;
    double residual = 0.0;
    int iterations = 0;
};

/// Expands [lo, hi] on the positive half-line until f(lo) >= 0 >= f(hi).
/// f must be (weakly) decreasing; flat segments are handled by the known
/// direction. Throws when no sign change exists within the expansion budget.
template <class F>
inline void bracket_decreasing(F&& f, double& lo, double& hi, double& flo, double& fhi,
                               int max_steps = 2000) {
    flo = f(lo);
    fhi = f(hi);
    int guard = 0;
    while (flo < 0.0 && guard++ < max_steps) {
        hi = lo;
        fhi = flo;
        lo *= 0.5;
        flo = f(lo);
    }
    while (fhi > 0.0 && guard++ < max_steps) {
        lo = hi;
        flo = fhi;
        hi *= 2.0;
        fhi = f(hi);
    }
    if (!(flo >= 0.0 && fhi <= 0.0))
        throw std::runtime_error("bracket expansion failed to find a sign change");
}

/// Bisection on a bracketing interval followed by a guarded Newton polish
/// (when a derivative is supplied). Targets f(x) = 0.
template <class F>
inline ScalarRoot bisect_then_newton(F&& f, double lo, double hi, double flo, double fhi,
                                     std::function<double(double)> df = nullptr,
                                     double xtol_rel = 1e-15, int max_iter = 240) {
    if (flo == 0.0) return {lo, 0.0, 0};
    if (fhi == 0.0) return {hi, 0.0, 0};
    if (flo * fhi > 0.0) throw std::invalid_argument("bisect_then_newton: interval does not bracket a root");
    int it = 0;
    double mid = 0.5 * (lo + hi), fmid = 0.0;
    while (it < max_iter) {
        mid = 0.5 * (lo + hi);
        fmid = f(mid);
        ++it;
        if (fmid == 0.0) break;
        if ((fmid > 0.0) == (flo > 0.0)) {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
            fhi = fmid;
        }
        if (hi - lo <= xtol_rel * std::max(1.0, std::abs(mid))) break;
    }
    double x = mid, fx = fmid;
    if (df) {
        for (int j = 0; j < 4; ++j) {
            const double d = df(x);
            if (d == 0.0 || !std::isfinite(d)) break;
            const double xn = x - fx / d;
            if (!(xn >= lo && xn <= hi)) break;
            const double fn = f(xn);
            if (std::abs(fn) >= std::abs(fx)) break;
            x = xn;
            fx = fn;
            ++it;
            if (fx == 0.0) break;
        }
    }
    return {x, fx, it};
}

struct NewtonOptions {
    int max_iter = 200;
    double ftol = 1e-13;     // infinity norm of F at convergence
    double fd_step = 1e-7;   // relative finite-difference step
    int max_backtracks = 40;
};

struct NewtonResult {
    Eigen::VectorXd x;
    double residual = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
};

/// Damped Newton on F(x) = 0 with forward-difference Jacobian and Armijo
/// backtracking on |F|^2. Suited to the small weight/multiplier systems here.
inline NewtonResult damped_newton(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& F,
                                  Eigen::VectorXd x0, const NewtonOptions& opt = {}) {
    NewtonResult res;
    Eigen::VectorXd x = std::move(x0);
    Eigen::VectorXd fx = F(x);
    const auto norm2 = [](const Eigen::VectorXd& v) { return v.squaredNorm(); };
    for (int it = 0; it < opt.max_iter; ++it) {
        res.iterations = it;
        if (fx.lpNorm<Eigen::Infinity>() <= opt.ftol) {
            res.converged = true;
            break;
        }
        const int n = static_cast<int>(x.size());
        const int m = static_cast<int>(fx.size());
        Eigen::MatrixXd J(m, n);
        for (int j = 0; j < n; ++j) {
            const double h = opt.fd_step * std::max(1.0, std::abs(x[j]));
            Eigen::VectorXd xp = x;
            xp[j] += h;
            J.col(j) = (F(xp) - fx) / h;
        }
        Eigen::VectorXd step = J.completeOrthogonalDecomposition().solve(-fx);
        if (!step.allFinite()) break;
        double alpha = 1.0;
        const double f0 = norm2(fx);
        bool accepted = false;
        for (int b = 0; b < opt.max_backtracks; ++b) {
            Eigen::VectorXd xn = x + alpha * step;
            Eigen::VectorXd fn = F(xn);
            if (fn.allFinite() && norm2(fn) < f0 * (1.0 - 1e-4 * alpha)) {
                x = std::move(xn);
                fx = std::move(fn);
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) break; // stalled; caller inspects residual
    }
    if (fx.lpNorm<Eigen::Infinity>() <= opt.ftol) res.converged = true;
    res.x = std::move(x);
    res.residual = fx.lpNorm<Eigen::Infinity>();
    return res;
}

} // namespace caratree
