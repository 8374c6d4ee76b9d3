#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "caratree/complete.hpp"
#include "caratree/oracle.hpp"
#include "test_util.hpp"

using namespace caratree;

namespace {

AgentSpec point_agent(const Tree& t, double gamma, double rho, double eps0) {
    AgentSpec a;
    a.gamma = gamma;
    a.rho = rho;
    a.endowment = AdaptedProcess(t, 0, t.horizon(), 0.0);
    a.endowment.at(0, 0) = eps0;
    return a;
}

} // namespace

TEST_CASE("one-point space: budget forces consumption equal to endowment") {
    Tree t = build_tree({});
    SPD xi(t, AdaptedProcess(t, 0, 0, 1.0));
    AgentSpec a = point_agent(t, 1.0, 0.0, 1.0);
    ConsumptionSolution sol = solve_unconstrained(a, t, xi);
    REQUIRE(sol.multiplier == Catch::Approx(std::exp(-1.0)).margin(1e-15));
    REQUIRE(sol.consumption.at(0, 0) == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("psi hand values and lambda* on the one-point space") {
    Tree t = build_tree({});
    SPD xi(t, AdaptedProcess(t, 0, 0, 1.0));
    AgentSpec a = point_agent(t, 1.0, 0.0, 1.0);
    REQUIRE(psi(1.0, a, t, xi) == 0.0);
    REQUIRE(psi(std::exp(-1.0), a, t, xi) == Catch::Approx(1.0).margin(1e-15));
    REQUIRE_THROWS_AS(psi(0.0, a, t, xi), std::invalid_argument);
    REQUIRE(solve_lambda_star(a, t, xi) == Catch::Approx(std::exp(-1.0)).epsilon(1e-14));
}

TEST_CASE("homogeneous economy: the agent consumes its endowment") {
    Tree t = ctest::binary_tree(2, 0.4);
    const double gamma = 0.8, rho = 0.05;
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.5, 2.5);
    AgentSpec a;
    a.gamma = gamma;
    a.rho = rho;
    a.endowment = ctest::random_process(t, rng, 0.5, 2.5);
    AdaptedProcess xiv(t, 0, 2, 0.0);
    for (int k = 0; k <= 2; ++k)
        for (int n = 0; n < t.level_size(k); ++n)
            xiv.at(k, n) =
                std::exp(gamma * (a.endowment.at(0, 0) - a.endowment.at(k, n)) - rho * k);
    SPD xi(t, std::move(xiv));

    ConsumptionSolution uncon = solve_unconstrained(a, t, xi);
    ConsumptionSolution con = constrained_consumption(a, t, xi);
    for (int k = 0; k <= 2; ++k)
        for (int n = 0; n < t.level_size(k); ++n) {
            REQUIRE(uncon.consumption.at(k, n) ==
                    Catch::Approx(a.endowment.at(k, n)).margin(1e-12));
            REQUIRE(con.consumption.at(k, n) ==
                    Catch::Approx(a.endowment.at(k, n)).margin(1e-12));
        }
}

TEST_CASE("unconstrained solution matches the Lagrangian-Newton oracle") {
    std::mt19937_64 rng(2024);
    Tree t = ctest::binary_tree(2);
    SPD xi = ctest::random_spd(t, rng);
    AgentSpec a;
    a.gamma = 2.0;
    a.rho = 0.1;
    a.endowment = ctest::random_process(t, rng, 0.2, 1.5);
    ConsumptionSolution sol = solve_unconstrained(a, t, xi);
    OracleResult orc = oracle_complete(a, t, xi, /*allow_negative=*/true);
    NodeIndex idx(t);
    for (int k = 0; k <= 2; ++k)
        for (int n = 0; n < t.level_size(k); ++n)
            REQUIRE(sol.consumption.at(k, n) ==
                    Catch::Approx(orc.consumption[idx(k, n)]).margin(1e-8));
}

TEST_CASE("psi is nonincreasing and strictly decreasing where positive") {
    std::mt19937_64 rng(5);
    Tree t = ctest::binary_tree(2);
    SPD xi = ctest::random_spd(t, rng);
    AgentSpec a;
    a.gamma = 1.5;
    a.rho = 0.08;
    a.endowment = ctest::random_process(t, rng, 0.1, 1.0);
    double prev = psi(1e-4, a, t, xi);
    for (double lam = 2e-4; lam < 1e3; lam *= 1.7) {
        const double cur = psi(lam, a, t, xi);
        REQUIRE(cur <= prev + 1e-14);
        if (cur > 0.0) REQUIRE(cur < prev);
        prev = cur;
    }
    REQUIRE(psi(1e-120, a, t, xi) > 100.0); // grows like log(1/lambda) towards 0+
    REQUIRE(psi(1e12, a, t, xi) == 0.0); // vanishes at infinity
}

TEST_CASE("lambda* solves the budget equation to 1e-12") {
    std::mt19937_64 rng(6);
    for (int rep = 0; rep < 20; ++rep) {
        Tree t = ctest::make_random_tree(rng, 2, 3);
        SPD xi = ctest::random_spd(t, rng);
        AgentSpec a;
        a.gamma = std::uniform_real_distribution<double>(0.5, 3.0)(rng);
        a.rho = std::uniform_real_distribution<double>(0.0, 0.3)(rng);
        a.endowment = ctest::random_process(t, rng, 0.05, 2.0);
        const double lambda = solve_lambda_star(a, t, xi);
        const double pv = pv_sum(t, xi.xi, a.endowment);
        REQUIRE(std::abs(psi(lambda, a, t, xi) - pv) <= 1e-12);
    }
}

TEST_CASE("zero endowment present value is rejected") {
    Tree t = ctest::binary_tree(1);
    SPD xi(t, AdaptedProcess(t, 0, 1, 1.0));
    AgentSpec a;
    a.gamma = 1.0;
    a.rho = 0.0;
    a.endowment = AdaptedProcess(t, 0, 1, 0.0);
    REQUIRE_THROWS_AS(solve_lambda_star(a, t, xi), std::invalid_argument);
    REQUIRE_THROWS_AS(solve_unconstrained(a, t, xi), std::invalid_argument);
}

TEST_CASE("an expensive state is clipped to zero consumption") {
    Tree t = ctest::binary_tree(1, 0.5);
    AdaptedProcess xiv(t, 0, 1, 1.0);
    xiv.at(1, 1) = 10.0; // deep out-of-the-money state
    SPD xi(t, std::move(xiv));
    AgentSpec a;
    a.gamma = 1.0;
    a.rho = 0.0;
    a.endowment = AdaptedProcess(t, 0, 1, 0.4);
    a.endowment.at(1, 1) = 0.1;
    ConsumptionSolution sol = constrained_consumption(a, t, xi);
    REQUIRE(sol.consumption.at(1, 1) == 0.0);
    REQUIRE(sol.consumption.at(0, 0) > 0.0);
    REQUIRE(sol.budget_residual <= 1e-10);
}

TEST_CASE("positivity certificate: corollary conditions give the no-clipping form") {
    Tree t = ctest::binary_tree(2, 0.45);
    std::mt19937_64 rng(8);
    SPD xi = ctest::random_spd(t, rng, 0.6, 1.4);
    AgentSpec a;
    a.gamma = 1.2;
    a.rho = 0.04;
    a.endowment = ctest::random_process(t, rng, 6.0, 8.0); // large endowment

    double C = 0.0;
    for (int k = 0; k <= 2; ++k)
        for (int n = 0; n < t.level_size(k); ++n) C = std::max(C, xi.xi.at(k, n));
    C *= 1.5;

    PositivityCertificate cert = positivity_certificate(a, t, xi, C);
    REQUIRE(cert.holds);
    ConsumptionSolution con = constrained_consumption(a, t, xi);
    ConsumptionSolution uncon = solve_unconstrained(a, t, xi);
    for (int k = 0; k <= 2; ++k)
        for (int n = 0; n < t.level_size(k); ++n) {
            REQUIRE(cert.consumption.at(k, n) > 0.0);
            REQUIRE(cert.consumption.at(k, n) ==
                    Catch::Approx(con.consumption.at(k, n)).margin(1e-12));
            REQUIRE(cert.consumption.at(k, n) ==
                    Catch::Approx(uncon.consumption.at(k, n)).margin(1e-12));
        }
}

TEST_CASE("positivity certificate refusals") {
    Tree t = ctest::binary_tree(1);
    SPD xi(t, AdaptedProcess(t, 0, 1, 1.0));
    AgentSpec a;
    a.gamma = 1.0;
    a.rho = 0.0;

    SECTION("zero endowment fails the threshold") {
        a.endowment = AdaptedProcess(t, 0, 1, 0.0);
        REQUIRE_FALSE(positivity_certificate(a, t, xi, 2.0).holds);
    }
    SECTION("exact threshold fails (strict inequality required)") {
        const double C = 2.0;
        a.endowment = AdaptedProcess(t, 0, 1, 10.0);
        a.endowment.at(1, 0) = std::log(C / 1.0); // exactly at the bound, rho = 0
        REQUIRE_FALSE(positivity_certificate(a, t, xi, C).holds);
    }
}

TEST_CASE("constrained solution matches the boxed oracle on small endowments") {
    std::mt19937_64 rng(77);
    for (int rep = 0; rep < 5; ++rep) {
        Tree t = ctest::binary_tree(2);
        SPD xi = ctest::random_spd(t, rng, 0.4, 2.2);
        AgentSpec a;
        a.gamma = 1.0;
        a.rho = 0.05;
        a.endowment = ctest::random_process(t, rng, 0.0, 0.4); // small, forces clipping
        if (pv_sum(t, xi.xi, a.endowment) <= 1e-8) continue;
        ConsumptionSolution sol = constrained_consumption(a, t, xi);
        OracleResult orc = oracle_complete(a, t, xi, /*allow_negative=*/false);
        NodeIndex idx(t);
        for (int k = 0; k <= 2; ++k)
            for (int n = 0; n < t.level_size(k); ++n)
                REQUIRE(sol.consumption.at(k, n) ==
                        Catch::Approx(orc.consumption[idx(k, n)]).margin(1e-7));
    }
}

TEST_CASE("first-order conditions hold at the constrained optimum") {
    std::mt19937_64 rng(13);
    Tree t = ctest::make_random_tree(rng, 3, 3);
    SPD xi = ctest::random_spd(t, rng, 0.4, 2.0);
    AgentSpec a;
    a.gamma = 1.7;
    a.rho = 0.12;
    a.endowment = ctest::random_process(t, rng, 0.0, 0.8);
    ConsumptionSolution sol = constrained_consumption(a, t, xi);
    for (int k = 0; k <= t.horizon(); ++k)
        for (int n = 0; n < t.level_size(k); ++n) {
            const double c = sol.consumption.at(k, n);
            const double lhs = a.gamma * std::exp(-a.rho * k) * std::exp(-a.gamma * c);
            const double rhs = sol.multiplier * xi.xi.at(k, n);
            if (c > 0.0)
                REQUIRE(lhs == Catch::Approx(rhs).margin(1e-9 * std::max(1.0, rhs)));
            else
                REQUIRE(a.gamma * std::exp(-a.rho * k) <= rhs + 1e-9);
        }
}

TEST_CASE("endowment monotonicity: more endowment, lower lambda*, more consumption") {
    std::mt19937_64 rng(14);
    Tree t = ctest::binary_tree(2);
    SPD xi = ctest::random_spd(t, rng);
    AgentSpec lo;
    lo.gamma = 1.1;
    lo.rho = 0.02;
    lo.endowment = ctest::random_process(t, rng, 0.1, 1.0);
    AgentSpec hi = lo;
    std::uniform_real_distribution<double> bump(0.0, 0.5);
    for (int k = 0; k <= 2; ++k)
        for (int n = 0; n < t.level_size(k); ++n) hi.endowment.at(k, n) += bump(rng);

    ConsumptionSolution slo = constrained_consumption(lo, t, xi);
    ConsumptionSolution shi = constrained_consumption(hi, t, xi);
    REQUIRE(shi.multiplier <= slo.multiplier + 1e-12);
    for (int k = 0; k <= 2; ++k)
        for (int n = 0; n < t.level_size(k); ++n)
            REQUIRE(shi.consumption.at(k, n) >= slo.consumption.at(k, n) - 1e-12);
}

TEST_CASE("the closed form dominates random feasible perturbations") {
    std::mt19937_64 rng(15);
    Tree t = ctest::binary_tree(2);
    SPD xi = ctest::random_spd(t, rng);
    AgentSpec a;
    a.gamma = 1.0;
    a.rho = 0.03;
    a.endowment = ctest::random_process(t, rng, 0.1, 1.2);
    ConsumptionSolution sol = constrained_consumption(a, t, xi);

    NodeIndex idx(t);
    const int nn = idx.total();
    std::vector<double> price(nn), copt(nn);
    for (int k = 0; k <= 2; ++k)
        for (int n = 0; n < t.level_size(k); ++n) {
            price[idx(k, n)] = t.prob(k, n) * xi.xi.at(k, n);
            copt[idx(k, n)] = sol.consumption.at(k, n);
        }
    std::normal_distribution<double> g(0.0, 1.0);
    int dominated = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        // random budget-neutral direction, scaled to keep c >= 0
        std::vector<double> d(nn);
        double pd = 0.0, pp = 0.0;
        for (int i = 0; i < nn; ++i) {
            d[i] = g(rng);
            pd += price[i] * d[i];
            pp += price[i] * price[i];
        }
        for (int i = 0; i < nn; ++i) d[i] -= price[i] * pd / pp;
        double scale = 0.25;
        for (int i = 0; i < nn; ++i)
            if (d[i] < 0.0) scale = std::min(scale, -copt[i] / d[i]);
        AdaptedProcess cand(t, 0, 2, 0.0);
        for (int k = 0; k <= 2; ++k)
            for (int n = 0; n < t.level_size(k); ++n)
                cand.at(k, n) = copt[idx(k, n)] + scale * d[idx(k, n)];
        if (cara_utility(t, a, cand) <= sol.utility + 1e-12) ++dominated;
    }
    REQUIRE(dominated == 1000);
}
