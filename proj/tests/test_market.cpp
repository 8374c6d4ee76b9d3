#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "caratree/market.hpp"
#include "test_util.hpp"

using namespace caratree;

namespace {

MarketSpec bond_only_market(const Tree& t, double r = 0.0) {
    MarketSpec m;
    m.tree = t;
    m.form = WealthForm::Span;
    for (int k = 1; k <= t.horizon(); ++k)
        m.rate.push_back(std::vector<double>(t.level_size(k - 1), r));
    validate_market(m);
    return m;
}

} // namespace

TEST_CASE("constant SPD prices the zero-rate bond exactly") {
    Tree t = ctest::binary_tree(2);
    MarketSpec m = bond_only_market(t, 0.0);
    SPD xi(t, AdaptedProcess(t, 0, 2, 1.0));
    SpdReport rep = verify_spd(m, xi, 1e-14);
    REQUIRE(rep.max_abs == 0.0);
    REQUIRE(rep.pass);
}

TEST_CASE("homogeneous-economy SPD prices its implied bond") {
    // xi_k = e^{gamma (eps_0 - eps_k) - rho k} with a growing endowment
    Tree t = ctest::binary_tree(3, 0.45);
    const double gamma = 1.3, rho = 0.07;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> inc(0.1, 0.8);
    AdaptedProcess eps(t, 0, 3, 0.0);
    eps.at(0, 0) = 1.0;
    for (int k = 1; k <= 3; ++k)
        for (int n = 0; n < t.level_size(k); ++n)
            eps.at(k, n) = eps.at(k - 1, t.parent(k, n)) + inc(rng);
    AdaptedProcess xiv(t, 0, 3, 0.0);
    for (int k = 0; k <= 3; ++k)
        for (int n = 0; n < t.level_size(k); ++n)
            xiv.at(k, n) = std::exp(gamma * (eps.at(0, 0) - eps.at(k, n)) - rho * k);
    SPD xi(t, std::move(xiv));

    MarketSpec m;
    m.tree = t;
    m.form = WealthForm::Span;
    m.rate = implied_rate(t, xi);
    validate_market(m);
    REQUIRE(verify_spd(m, xi, 1e-12).pass);
}

TEST_CASE("a perturbed SPD is flagged at the offending pricing node") {
    Tree t = ctest::binary_tree(2);
    MarketSpec m = bond_only_market(t, 0.0);
    AdaptedProcess xiv(t, 0, 2, 1.0);
    xiv.at(2, 3) = 1.1; // +10% on one node
    SPD xi(t, std::move(xiv));
    SpdReport rep = verify_spd(m, xi, 1e-12);
    REQUIRE_FALSE(rep.pass);
    REQUIRE(rep.max_abs > 0.01);
    REQUIRE(rep.worst.level == 1);
    REQUIRE(rep.worst.node == t.parent(2, 3));
}

TEST_CASE("verify_spd rejects dimension mismatches") {
    Tree t2 = ctest::binary_tree(2);
    Tree t1 = ctest::binary_tree(1);
    MarketSpec m = bond_only_market(t2, 0.0);
    SPD xi_small(t1, AdaptedProcess(t1, 0, 1, 1.0));
    REQUIRE_THROWS(verify_spd(m, xi_small, 1e-12));
}

TEST_CASE("aggregate SPD of a complete market is the unique SPD") {
    std::mt19937_64 rng(42);
    Tree t = ctest::binary_tree(2, 0.35);
    SPD ref = ctest::decaying_spd(t, rng);
    std::uniform_real_distribution<double> pay(0.5, 2.0);
    std::vector<std::vector<double>> payoffs(1, std::vector<double>(t.level_size(2)));
    for (double& v : payoffs[0]) v = pay(rng);
    MarketSpec m = make_complete_market(t, ref, payoffs);

    AggregateSpdResult res = aggregate_spd_certified(m);
    REQUIRE(res.unique);
    for (int k = 0; k <= 2; ++k)
        for (int n = 0; n < t.level_size(k); ++n)
            REQUIRE(res.spd.xi.at(k, n) == Catch::Approx(ref.xi.at(k, n)).margin(1e-12));
}

TEST_CASE("type-C with the finest partition reduces to the complete case") {
    std::mt19937_64 rng(43);
    Tree t = ctest::binary_tree(1, 0.3);
    SPD ref = ctest::decaying_spd(t, rng);
    MarketSpec m = make_type_c_market(t, {SubAlgebra::finest(t, 1)}, ref);
    SPD M = aggregate_spd(m);
    for (int n = 0; n < 2; ++n) REQUIRE(M.xi.at(1, n) == Catch::Approx(ref.xi.at(1, n)).margin(1e-12));
}

TEST_CASE("four nodes, two blocks, zero rate: block-constant aggregate SPD") {
    // risk-neutral block claim prices q_B = P(B); the aggregate SPD must be
    // constant per block with E[M_1] = 1
    LevelSpec ls{{4}, {{0.15, 0.25, 0.35, 0.25}}};
    Tree t = build_tree({ls});
    SubAlgebra h(t, 1, {0, 0, 1, 1});
    MarketSpec m;
    m.tree = t;
    m.form = WealthForm::TypeC;
    m.partitions = {h};
    m.block_prices = {{0.15 + 0.25, 0.35 + 0.25}};
    m.rate = {{0.0}};
    validate_market(m);

    AggregateSpdResult res = aggregate_spd_certified(m);
    REQUIRE(res.unique);
    REQUIRE(res.spd.xi.at(1, 0) == Catch::Approx(res.spd.xi.at(1, 1)).margin(1e-14));
    REQUIRE(res.spd.xi.at(1, 2) == Catch::Approx(res.spd.xi.at(1, 3)).margin(1e-14));
    double mean = 0.0;
    for (int n = 0; n < 4; ++n) mean += t.prob(1, n) * res.spd.xi.at(1, n);
    REQUIRE(mean == Catch::Approx(1.0).margin(1e-14));

    // independent oracle: solve the two-unknown linear system directly
    Eigen::Matrix2d A;
    Eigen::Vector2d b;
    A << t.prob(1, 0) + t.prob(1, 1), 0.0, 0.0, t.prob(1, 2) + t.prob(1, 3);
    b << m.block_prices[0][0], m.block_prices[0][1];
    Eigen::Vector2d v = A.colPivHouseholderQr().solve(b);
    REQUIRE(res.spd.xi.at(1, 0) == Catch::Approx(v[0]).margin(1e-14));
    REQUIRE(res.spd.xi.at(1, 2) == Catch::Approx(v[1]).margin(1e-14));
}

TEST_CASE("aggregate SPD invariants on random incomplete markets") {
    std::mt19937_64 rng(99);
    for (int rep = 0; rep < 12; ++rep) {
        Tree t = ctest::make_random_tree(rng, 2, 3);
        SPD ref = ctest::decaying_spd(t, rng);
        MarketSpec m;
        if (rep % 2 == 0) {
            std::uniform_real_distribution<double> pay(0.2, 2.0);
            std::vector<std::vector<double>> payoffs(1, std::vector<double>(t.level_size(t.horizon())));
            for (double& v : payoffs[0]) v = pay(rng);
            m = make_span_market(t, ref, payoffs);
        } else {
            std::vector<SubAlgebra> parts;
            for (int k = 1; k <= t.horizon(); ++k) {
                if (k == 1) {
                    parts.push_back(ctest::random_partition(
                        t, 1, std::max(1, t.level_size(1) - 1), rng));
                } else {
                    // refine parents: blocks = children sets (predictable wealth)
                    std::vector<int> ids(t.level_size(k));
                    for (int n = 0; n < t.level_size(k); ++n) ids[n] = t.parent(k, n);
                    parts.emplace_back(t, k, ids);
                }
            }
            m = make_type_c_market(t, parts, ref);
        }
        AggregateSpdResult res = aggregate_spd_certified(m);
        REQUIRE(res.unique);
        REQUIRE(verify_spd(m, res.spd, 1e-10).pass);
        for (int k = 1; k <= t.horizon(); ++k) {
            WealthSpace ws = WealthSpace::for_period(m, k);
            Eigen::VectorXd mk(t.level_size(k));
            for (int n = 0; n < t.level_size(k); ++n) mk[n] = res.spd.xi.at(k, n);
            REQUIRE(ws.membership_residual(mk) <= 1e-10);
        }
    }
}

TEST_CASE("wealth spaces contain all predictable processes") {
    std::mt19937_64 rng(123);
    for (int rep = 0; rep < 10; ++rep) {
        Tree t = ctest::make_random_tree(rng, 2, 3);
        SPD ref = ctest::decaying_spd(t, rng);
        std::uniform_real_distribution<double> pay(0.2, 2.0);
        std::vector<std::vector<double>> payoffs(1, std::vector<double>(t.level_size(t.horizon())));
        for (double& v : payoffs[0]) v = pay(rng);
        MarketSpec m = make_span_market(t, ref, payoffs);
        std::uniform_real_distribution<double> val(-2.0, 2.0);
        for (int k = 1; k <= t.horizon(); ++k) {
            WealthSpace ws = WealthSpace::for_period(m, k);
            // random predictable process: constant on each parent's children
            Eigen::VectorXd x(t.level_size(k));
            std::vector<double> parent_val(t.level_size(k - 1));
            for (double& v : parent_val) v = val(rng);
            for (int n = 0; n < t.level_size(k); ++n) x[n] = parent_val[t.parent(k, n)];
            REQUIRE(ws.membership_residual(x) <= 1e-10);
        }
    }
}

TEST_CASE("arbitrage is detected") {
    // two assets with identical terminal payoff but different time-0 prices
    Tree t = ctest::binary_tree(1);
    MarketSpec m;
    m.tree = t;
    m.form = WealthForm::Span;
    m.rate = {{0.0}};
    AdaptedProcess s1(t, 0, 1, 0.0), s2(t, 0, 1, 0.0);
    s1.at(0, 0) = 1.0;
    s1.at(1, 0) = 1.5;
    s1.at(1, 1) = 0.5;
    s2.at(0, 0) = 1.2; // overpriced duplicate
    s2.at(1, 0) = 1.5;
    s2.at(1, 1) = 0.5;
    m.assets = {Asset{"a", s1}, Asset{"b", s2}};
    validate_market(m);
    REQUIRE_FALSE(strictly_positive_spd_exists(m));
    REQUIRE_THROWS_AS(aggregate_spd(m), std::runtime_error);
}

TEST_CASE("market validation rejects inconsistent type-C prices") {
    Tree t = ctest::binary_tree(1);
    MarketSpec m;
    m.tree = t;
    m.form = WealthForm::TypeC;
    m.partitions = {SubAlgebra::finest(t, 1)};
    m.block_prices = {{0.3, 0.3}}; // bond would imply a rate different from 0
    m.rate = {{0.0}};
    REQUIRE_THROWS_AS(validate_market(m), std::invalid_argument);
}
