// Experiment runner: one subcommand per study, JSON config in, JSON + CSV
// out, residual table on stdout. Exit codes: 0 all declared tolerances met,
// 2 config/schema violation, 3 solver failure or tolerance breach.

#include <CLI11.hpp>

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "caratree/bonds.hpp"
#include "caratree/complete.hpp"
#include "caratree/equilibrium.hpp"
#include "caratree/incomplete.hpp"
#include "caratree/io.hpp"
#include "caratree/market.hpp"
#include "caratree/oracle.hpp"
#include "caratree/savings.hpp"
#include "caratree/tree.hpp"

namespace {

using caratree::io::json;

struct Flags {
    double tol = 0.0; // 0 = per-command default
    std::uint64_t seed = 20240901;
    int starts = 5;
    std::string out_dir = "out";
};

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_file(const std::filesystem::path& p, const std::string& content) {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << content;
}

void write_json(const std::filesystem::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

struct ResidualTable {
    struct Row {
        std::string name;
        double value;
        double tol;
        bool pass;
    };
    std::vector<Row> rows;

    void add(const std::string& name, double value, double tol) {
        rows.push_back({name, value, tol, value <= tol});
    }
    void add_flag(const std::string& name, bool ok) {
        rows.push_back({name, ok ? 0.0 : 1.0, 0.5, ok});
    }
    bool all_pass() const {
        for (const Row& r : rows)
            if (!r.pass) return false;
        return true;
    }
    void print() const {
        std::printf("%-44s %-24s %-12s %s\n", "check", "value", "tolerance", "status");
        for (const Row& r : rows)
            std::printf("%-44s %-24s %-12g %s\n", r.name.c_str(), fmt(r.value).c_str(), r.tol,
                        r.pass ? "pass" : "FAIL");
    }
};

json consumption_json(const caratree::Tree& t, const caratree::AdaptedProcess& c) {
    return caratree::io::process_to_json(t, c);
}

// ---------------------------------------------------------------------------

int run_optimize_complete(const json& cfg, const Flags& flags) {
    caratree::io::reject_unknown_keys(cfg, {"tree", "agent", "spd", "positivity_bound"},
                                      "config");
    const caratree::Tree t = caratree::io::parse_tree(caratree::io::require_key(cfg, "tree", "config"));
    const caratree::AgentSpec agent =
        caratree::io::parse_agent(caratree::io::require_key(cfg, "agent", "config"), t);
    const caratree::SPD spd =
        caratree::io::parse_spd(caratree::io::require_key(cfg, "spd", "config"), t);
    const double tol = flags.tol > 0.0 ? flags.tol : 1e-10;

    const caratree::ConsumptionSolution uncon = caratree::solve_unconstrained(agent, t, spd);
    const caratree::ConsumptionSolution con = caratree::constrained_consumption(agent, t, spd);

    json out;
    out["lambda_unconstrained"] = uncon.multiplier;
    out["lambda_star"] = con.multiplier;
    out["utility_unconstrained"] = uncon.utility;
    out["utility"] = con.utility;
    out["budget_residual"] = con.budget_residual;
    out["consumption"] = consumption_json(t, con.consumption);
    out["unconstrained_consumption"] = consumption_json(t, uncon.consumption);
    if (cfg.contains("positivity_bound")) {
        const double C = cfg.at("positivity_bound").get<double>();
        const caratree::PositivityCertificate cert = caratree::positivity_certificate(agent, t, spd, C);
        out["positivity_certificate"] = {{"bound", C}, {"holds", cert.holds}};
        if (cert.holds)
            out["positivity_certificate"]["consumption"] = consumption_json(t, cert.consumption);
    }

    std::string csv = "level,node,prob,xi,endowment,consumption,unconstrained\n";
    for (int k = 0; k <= t.horizon(); ++k)
        for (int n = 0; n < t.level_size(k); ++n)
            csv += std::to_string(k) + "," + std::to_string(n) + "," + fmt(t.prob(k, n)) + "," +
                   fmt(spd.xi.at(k, n)) + "," + fmt(agent.endowment.at(k, n)) + "," +
                   fmt(con.consumption.at(k, n)) + "," + fmt(uncon.consumption.at(k, n)) + "\n";

    ResidualTable table;
    table.add("budget residual (constrained)", con.budget_residual, tol);
    table.add("budget residual (unconstrained)", uncon.budget_residual, tol);
    double min_c = 0.0;
    for (int k = 0; k <= t.horizon(); ++k)
        for (int n = 0; n < t.level_size(k); ++n)
            min_c = std::min(min_c, con.consumption.at(k, n));
    table.add("negative consumption", -min_c, 0.0);
    table.print();

    write_json(std::filesystem::path(flags.out_dir) / "optimize_complete_result.json", out);
    write_file(std::filesystem::path(flags.out_dir) / "optimize_complete_summary.csv", csv);
    return table.all_pass() ? 0 : 3;
}

int run_optimize_incomplete(const json& cfg, const Flags& flags) {
    caratree::io::reject_unknown_keys(cfg, {"tree", "market", "agent"}, "config");
    const caratree::Tree t = caratree::io::parse_tree(caratree::io::require_key(cfg, "tree", "config"));
    const caratree::MarketSpec market =
        caratree::io::parse_market(caratree::io::require_key(cfg, "market", "config"), t);
    const caratree::AgentSpec agent =
        caratree::io::parse_agent(caratree::io::require_key(cfg, "agent", "config"), t);
    const double tol = flags.tol > 0.0 ? flags.tol : 1e-8;

    caratree::KKTOptions opt;
    opt.seed = flags.seed;
    opt.extra_starts = flags.starts;
    const caratree::KKTSolution sol = caratree::solve_kkt(agent, market, opt);
    const caratree::KKTReport rep = caratree::verify_kkt(sol, agent, market, tol);

    json out;
    out["utility"] = sol.utility;
    out["consumption"] = consumption_json(t, sol.consumption);
    out["multipliers"] = consumption_json(t, sol.multipliers);
    out["wealth"] = consumption_json(t, sol.wealth);
    out["multipliers_unique"] = sol.multipliers_unique;
    out["report"] = {{"projection_residual", rep.projection_residual},
                     {"complementarity", rep.complementarity},
                     {"multiplier_negativity", rep.multiplier_negativity},
                     {"budget_residual", rep.budget_residual},
                     {"consumption_negativity", rep.consumption_negativity},
                     {"tol", rep.tol},
                     {"pass", rep.pass}};
    if (t.horizon() == 1 && market.form == caratree::WealthForm::TypeC) {
        const caratree::OnePeriodSolution cf = caratree::one_period_closed_form(agent, market);
        double gap = std::abs(cf.c0 - sol.consumption.at(0, 0));
        for (int n = 0; n < t.level_size(1); ++n)
            gap = std::max(gap, std::abs(cf.c1.at(1, n) - sol.consumption.at(1, n)));
        out["closed_form"] = {{"lambda", cf.lambda}, {"c0", cf.c0}, {"gap_vs_kkt", gap}};
    }

    std::string csv = "level,node,prob,endowment,consumption,multiplier,wealth\n";
    for (int k = 0; k <= t.horizon(); ++k)
        for (int n = 0; n < t.level_size(k); ++n)
            csv += std::to_string(k) + "," + std::to_string(n) + "," + fmt(t.prob(k, n)) + "," +
                   fmt(agent.endowment.at(k, n)) + "," + fmt(sol.consumption.at(k, n)) + "," +
                   fmt(sol.multipliers.at(k, n)) + "," + fmt(sol.wealth.at(k, n)) + "\n";

    ResidualTable table;
    table.add("projection condition", rep.projection_residual, tol);
    table.add("complementary slackness", rep.complementarity, tol);
    table.add("multiplier negativity", rep.multiplier_negativity, tol);
    table.add("budget identity", rep.budget_residual, tol);
    table.add("consumption negativity", rep.consumption_negativity, tol);
    if (out.contains("closed_form"))
        table.add("closed form vs KKT", out["closed_form"]["gap_vs_kkt"].get<double>(), 1e-8);
    table.print();

    write_json(std::filesystem::path(flags.out_dir) / "optimize_incomplete_result.json", out);
    write_file(std::filesystem::path(flags.out_dir) / "optimize_incomplete_summary.csv", csv);
    return table.all_pass() ? 0 : 3;
}

int run_equilibrium(const json& cfg, const Flags& flags) {
    caratree::io::reject_unknown_keys(cfg, {"tree", "agents", "starts"}, "config");
    const caratree::Tree t = caratree::io::parse_tree(caratree::io::require_key(cfg, "tree", "config"));
    std::vector<caratree::AgentSpec> agents;
    for (const json& a : caratree::io::require_key(cfg, "agents", "config"))
        agents.push_back(caratree::io::parse_agent(a, t));
    const caratree::EconomySpec economy = caratree::make_economy(t, agents);

    std::vector<std::vector<double>> starts;
    if (cfg.contains("starts"))
        starts = cfg.at("starts").get<std::vector<std::vector<double>>>();

    caratree::EquilibriumOptions opt;
    if (flags.tol > 0.0) opt.budget_tol = flags.tol;
    const auto sols = caratree::solve_equilibrium(economy, starts, opt);

    json out;
    out["solutions"] = json::array();
    std::string csv = "solution,clearing,max_budget_residual,normalization";
    for (std::size_t i = 0; i < agents.size(); ++i) csv += ",weight_" + std::to_string(i);
    csv += "\n";
    ResidualTable table;
    for (std::size_t s = 0; s < sols.size(); ++s) {
        const auto& sol = sols[s];
        json js;
        js["weights"] = sol.weights;
        js["spd"] = consumption_json(t, sol.xi);
        js["consumptions"] = json::array();
        for (const auto& c : sol.consumptions) js["consumptions"].push_back(consumption_json(t, c));
        js["budget_residuals"] =
            std::vector<double>(sol.budget_residual.data(),
                                sol.budget_residual.data() + sol.budget_residual.size());
        js["clearing"] = sol.clearing;
        js["normalization"] = sol.normalization;
        out["solutions"].push_back(js);

        csv += std::to_string(s) + "," + fmt(sol.clearing) + "," +
               fmt(sol.budget_residual.lpNorm<Eigen::Infinity>()) + "," + fmt(sol.normalization);
        for (double w : sol.weights) csv += "," + fmt(w);
        csv += "\n";
        table.add("solution " + std::to_string(s) + " clearing", sol.clearing, opt.budget_tol);
        table.add("solution " + std::to_string(s) + " budgets",
                  sol.budget_residual.lpNorm<Eigen::Infinity>(), opt.budget_tol);
        table.add("solution " + std::to_string(s) + " normalization", sol.normalization,
                  opt.norm_tol);
    }
    table.print();
    write_json(std::filesystem::path(flags.out_dir) / "equilibrium_result.json", out);
    write_file(std::filesystem::path(flags.out_dir) / "equilibrium_summary.csv", csv);
    return table.all_pass() ? 0 : 3;
}

int run_equilibria_scan(const json& cfg, const Flags& flags) {
    caratree::io::reject_unknown_keys(cfg, {"example", "scan"}, "config");
    const json& ex = caratree::io::require_key(cfg, "example", "config");
    caratree::io::reject_unknown_keys(ex, {"eps10", "eps11", "eps20", "eps21"}, "example");
    caratree::TwoAgentExample p;
    p.eps10 = caratree::io::require_key(ex, "eps10", "example").get<double>();
    p.eps11 = caratree::io::require_key(ex, "eps11", "example").get<double>();
    p.eps20 = caratree::io::require_key(ex, "eps20", "example").get<double>();
    p.eps21 = caratree::io::require_key(ex, "eps21", "example").get<double>();
    caratree::ScanOptions sopt;
    if (cfg.contains("scan")) {
        const json& sc = cfg.at("scan");
        caratree::io::reject_unknown_keys(sc, {"lo", "hi", "resolution"}, "scan");
        if (sc.contains("lo")) sopt.lo = sc.at("lo").get<double>();
        if (sc.contains("hi")) sopt.hi = sc.at("hi").get<double>();
        if (sc.contains("resolution")) sopt.resolution = sc.at("resolution").get<int>();
    }
    const double tol = flags.tol > 0.0 ? flags.tol : 1e-9;

    const auto written =
        caratree::nonuniqueness_scan(p, caratree::ExampleEquations::AsWritten, sopt);
    const auto budget = caratree::nonuniqueness_scan(p, caratree::ExampleEquations::Budget, sopt);

    json out;
    out["hypotheses"] = {{"eps11_below_inv_e", p.eps11 < std::exp(-1.0)},
                         {"growth_condition", std::exp(2.0 * p.eps11 - 1.0) > p.eps11}};
    auto root_json = [&](const caratree::ScanRoot& r) {
        const double budget_resid =
            caratree::two_agent_equations(r.x, r.y, p, caratree::ExampleEquations::Budget)
                .lpNorm<Eigen::Infinity>();
        return json{{"x", r.x}, {"y", r.y}, {"residual", r.residual},
                    {"budget_residual", budget_resid}};
    };
    out["written_roots"] = json::array();
    for (const auto& r : written) out["written_roots"].push_back(root_json(r));
    out["budget_roots"] = json::array();
    for (const auto& r : budget) out["budget_roots"].push_back(root_json(r));

    std::string csv = "form,x,y,residual,budget_residual\n";
    ResidualTable table;
    int idx = 0;
    for (const auto& r : written) {
        const json j = root_json(r);
        csv += "written," + fmt(r.x) + "," + fmt(r.y) + "," + fmt(r.residual) + "," +
               fmt(j["budget_residual"].get<double>()) + "\n";
        table.add("written root " + std::to_string(idx++) + " residual", r.residual, tol);
    }
    idx = 0;
    for (const auto& r : budget) {
        const json j = root_json(r);
        csv += "budget," + fmt(r.x) + "," + fmt(r.y) + "," + fmt(r.residual) + "," +
               fmt(j["budget_residual"].get<double>()) + "\n";
        table.add("budget root " + std::to_string(idx++) + " residual", r.residual, tol);
    }
    table.add_flag("example hypotheses hold",
                   out["hypotheses"]["eps11_below_inv_e"].get<bool>() &&
                       out["hypotheses"]["growth_condition"].get<bool>());
    table.print();
    std::printf("written-form roots: %zu, budget-form roots: %zu\n", written.size(), budget.size());

    write_json(std::filesystem::path(flags.out_dir) / "equilibria_scan_result.json", out);
    write_file(std::filesystem::path(flags.out_dir) / "equilibria_scan_summary.csv", csv);
    return table.all_pass() ? 0 : 3;
}

int run_bond_yields(const json& cfg, const Flags& flags) {
    caratree::io::reject_unknown_keys(cfg, {"agents", "law", "weights", "maturities", "mc"},
                                      "config");
    caratree::BondEconomy economy;
    economy.agents =
        caratree::io::parse_bond_agents(caratree::io::require_key(cfg, "agents", "config"));
    economy.law = caratree::io::parse_law(caratree::io::require_key(cfg, "law", "config"));
    std::vector<double> weights(economy.agents.size(), 1.0);
    if (cfg.contains("weights")) weights = cfg.at("weights").get<std::vector<double>>();

    const json& mat = caratree::io::require_key(cfg, "maturities", "config");
    caratree::io::reject_unknown_keys(mat, {"from", "to", "step"}, "maturities");
    const int t_from = caratree::io::require_key(mat, "from", "maturities").get<int>();
    const int t_to = caratree::io::require_key(mat, "to", "maturities").get<int>();
    const int t_step = caratree::io::require_key(mat, "step", "maturities").get<int>();
    if (t_from < 1 || t_to < t_from || t_step < 1)
        throw caratree::io::SchemaError("maturities: need 1 <= from <= to and step >= 1");

    // regime: common rho -> limit; common gamma + decreasing rho -> bounds
    bool common_rho = true, common_gamma = true;
    for (const auto& a : economy.agents) {
        common_rho = common_rho && a.rho == economy.agents.front().rho;
        common_gamma = common_gamma && a.gamma == economy.agents.front().gamma;
    }

    json out;
    double limit = 0.0;
    caratree::YieldBounds bounds;
    const bool has_limit = common_rho;
    const bool has_bounds = !common_rho && common_gamma;
    if (has_limit) {
        limit = caratree::hetero_gamma_limit(economy);
        out["limit"] = limit;
    } else if (has_bounds) {
        bounds = caratree::yield_bounds(economy, weights);
        out["bounds"] = {{"lower", bounds.lower}, {"upper", bounds.upper},
                         {"a", bounds.a},         {"b", bounds.b},
                         {"t_prime", bounds.t_prime}};
    }

    std::string csv = "t,price,log_price,yield";
    if (has_limit) csv += ",limit,gap";
    if (has_bounds) csv += ",lower,upper,within";
    csv += "\n";
    out["rows"] = json::array();
    bool contained = true;
    for (int t = t_from; t <= t_to; t += t_step) {
        const double lp = caratree::log_bond_price(economy, weights, t);
        const double y = -lp / t;
        json row = {{"t", t}, {"price", std::exp(lp)}, {"log_price", lp}, {"yield", y}};
        csv += std::to_string(t) + "," + fmt(std::exp(lp)) + "," + fmt(lp) + "," + fmt(y);
        if (has_limit) {
            row["limit"] = limit;
            row["gap"] = std::abs(y - limit);
            csv += "," + fmt(limit) + "," + fmt(std::abs(y - limit));
        }
        if (has_bounds) {
            const bool within = y >= bounds.lower - 0.005 && y <= bounds.upper + 0.005;
            contained = contained && within;
            row["within_bounds"] = within;
            csv += "," + fmt(bounds.lower) + "," + fmt(bounds.upper) + "," +
                   (within ? "1" : "0");
        }
        csv += "\n";
        out["rows"].push_back(row);
    }

    ResidualTable table;
    if (cfg.contains("mc")) {
        const json& mc = cfg.at("mc");
        caratree::io::reject_unknown_keys(mc, {"paths", "maturities"}, "mc");
        const long paths = caratree::io::require_key(mc, "paths", "mc").get<long>();
        out["mc"] = json::array();
        for (int t : caratree::io::require_key(mc, "maturities", "mc").get<std::vector<int>>()) {
            const double exact = caratree::bond_price(economy, weights, t);
            const caratree::McEstimate est =
                caratree::mc_bond_price(economy, weights, t, paths, flags.seed + t);
            const double gap = std::abs(exact - est.value);
            out["mc"].push_back({{"t", t},
                                 {"exact", exact},
                                 {"estimate", est.value},
                                 {"std_error", est.std_error},
                                 {"within_3se", gap <= 3.0 * est.std_error}});
            table.add("mc check t=" + std::to_string(t) + " (units of 3 s.e.)",
                      gap / (3.0 * est.std_error), 1.0);
        }
    }
    if (has_bounds) table.add_flag("yields within long-run bounds", contained);
    if (has_limit && t_to >= 200) {
        const double gap200 =
            std::abs(-caratree::log_bond_price(economy, weights, 200) / 200.0 - limit);
        table.add("gap to limit at t=200", gap200, 0.01);
    }
    table.print();

    write_json(std::filesystem::path(flags.out_dir) / "bond_yields_result.json", out);
    write_file(std::filesystem::path(flags.out_dir) / "bond_yields_summary.csv", csv);
    return table.all_pass() ? 0 : 3;
}

int run_precautionary(const json& cfg, const Flags& flags) {
    caratree::io::reject_unknown_keys(cfg, {"tree", "market", "agent", "x", "eps_grid"}, "config");
    const caratree::Tree t = caratree::io::parse_tree(caratree::io::require_key(cfg, "tree", "config"));
    caratree::SavingsInstance inst;
    inst.market = caratree::io::parse_market(caratree::io::require_key(cfg, "market", "config"), t);
    const json& agent = caratree::io::require_key(cfg, "agent", "config");
    caratree::io::reject_unknown_keys(agent, {"gamma", "rho", "eps0"}, "agent");
    inst.gamma = caratree::io::require_key(agent, "gamma", "agent").get<double>();
    inst.rho = caratree::io::require_key(agent, "rho", "agent").get<double>();
    inst.eps0 = caratree::io::require_key(agent, "eps0", "agent").get<double>();
    inst.X = caratree::io::parse_process(caratree::io::require_key(cfg, "x", "config"), t, 1, 1,
                                         "x");
    inst.eps_grid = cfg.contains("eps_grid")
                        ? cfg.at("eps_grid").get<std::vector<double>>()
                        : caratree::default_eps_grid();

    const auto curve = caratree::solve_c0_curve(inst);
    const caratree::SubAlgebra& h = inst.market.partitions[0];

    json out;
    out["points"] = json::array();
    std::string csv = "eps,c0,lambda,in_regime,budget_residual,dc0_deps";
    for (int b = 0; b < h.block_count(); ++b) csv += ",var_block_" + std::to_string(b);
    csv += "\n";
    bool all_in_regime = true;
    double max_budget = 0.0;
    for (const auto& pt : curve) {
        all_in_regime = all_in_regime && pt.in_regime;
        max_budget = std::max(max_budget, pt.budget_residual);
        const caratree::AdaptedProcess var = caratree::cond_variance(t, inst.X, pt.eps, h);
        json row = {{"eps", pt.eps},
                    {"c0", pt.c0},
                    {"lambda", pt.lambda},
                    {"in_regime", pt.in_regime},
                    {"budget_residual", pt.budget_residual},
                    {"dc0_deps", pt.dc0_deps},
                    {"c1", consumption_json(t, pt.c1)}};
        csv += fmt(pt.eps) + "," + fmt(pt.c0) + "," + fmt(pt.lambda) + "," +
               (pt.in_regime ? "1" : "0") + "," + fmt(pt.budget_residual) + "," +
               fmt(pt.dc0_deps);
        json vars = json::array();
        for (int b = 0; b < h.block_count(); ++b) {
            const double v = var.at(1, h.blocks()[b].front());
            vars.push_back(v);
            csv += "," + fmt(v);
        }
        row["conditional_variance"] = vars;
        csv += "\n";
        out["points"].push_back(row);
    }

    ResidualTable table;
    table.add("max budget residual", max_budget, flags.tol > 0.0 ? flags.tol : 1e-10);
    table.add_flag("all points in the interior regime", all_in_regime);
    if (all_in_regime) {
        const caratree::MonotonicityReport rep = caratree::monotonicity_report(curve);
        out["monotonicity"] = {{"pass", rep.pass},
                               {"max_upward_violation", rep.max_upward_violation},
                               {"max_derivative", rep.max_derivative}};
        table.add("max upward violation of c0", rep.max_upward_violation, 1e-9);
    }
    table.print();

    write_json(std::filesystem::path(flags.out_dir) / "precautionary_result.json", out);
    write_file(std::filesystem::path(flags.out_dir) / "precautionary_summary.csv", csv);
    return table.all_pass() ? 0 : 3;
}

int run_oracle_check(const json& cfg, const Flags& flags) {
    caratree::io::reject_unknown_keys(cfg, {"complete_instances", "incomplete_instances"},
                                      "config");
    const int n_complete = cfg.contains("complete_instances")
                               ? cfg.at("complete_instances").get<int>()
                               : 10;
    const int n_incomplete = cfg.contains("incomplete_instances")
                                 ? cfg.at("incomplete_instances").get<int>()
                                 : 5;
    std::mt19937_64 rng(flags.seed);
    std::string csv = "kind,instance,consumption_gap,utility_gap\n";
    ResidualTable table;
    json out;
    out["complete"] = json::array();
    out["incomplete"] = json::array();

    auto random_tree = [&](int maxT) {
        std::uniform_int_distribution<int> tdist(1, maxT);
        std::uniform_int_distribution<int> bdist(2, 3);
        std::uniform_real_distribution<double> u(0.2, 1.0);
        const int T = tdist(rng);
        caratree::TreeSpec spec;
        int nodes = 1;
        for (int k = 0; k < T; ++k) {
            caratree::LevelSpec ls;
            int next = 0;
            for (int n = 0; n < nodes; ++n) {
                const int b = bdist(rng);
                ls.branching.push_back(b);
                std::vector<double> q(b);
                double s = 0.0;
                for (double& x : q) {
                    x = u(rng);
                    s += x;
                }
                double acc = 0.0;
                for (int i = 0; i < b; ++i) {
                    q[i] /= s;
                    if (i + 1 < b) acc += q[i];
                }
                q[b - 1] = 1.0 - acc;
                ls.child_probs.push_back(q);
                next += b;
            }
            spec.push_back(ls);
            nodes = next;
        }
        return caratree::build_tree(spec);
    };
    auto random_process = [&](const caratree::Tree& t, double lo, double hi) {
        std::uniform_real_distribution<double> u(lo, hi);
        caratree::AdaptedProcess x(t, 0, t.horizon(), 0.0);
        for (int k = 0; k <= t.horizon(); ++k)
            for (int n = 0; n < t.level_size(k); ++n) x.at(k, n) = u(rng);
        return x;
    };

    for (int i = 0; i < n_complete; ++i) {
        const caratree::Tree t = random_tree(3);
        caratree::AdaptedProcess xiv(t, 0, t.horizon(), 0.0);
        xiv.at(0, 0) = 1.0;
        std::uniform_real_distribution<double> ratio(0.5, 1.6);
        for (int k = 1; k <= t.horizon(); ++k)
            for (int n = 0; n < t.level_size(k); ++n)
                xiv.at(k, n) = xiv.at(k - 1, t.parent(k, n)) * ratio(rng);
        const caratree::SPD spd(t, std::move(xiv));
        caratree::AgentSpec a;
        a.gamma = std::uniform_real_distribution<double>(0.5, 2.5)(rng);
        a.rho = std::uniform_real_distribution<double>(0.0, 0.25)(rng);
        a.endowment = random_process(t, 0.0, 0.8);
        if (caratree::pv_sum(t, spd.xi, a.endowment) <= 1e-8) continue;
        const caratree::ConsumptionSolution closed = caratree::constrained_consumption(a, t, spd);
        const caratree::OracleResult orc = caratree::oracle_complete(a, t, spd, false, flags.seed);
        caratree::NodeIndex idx(t);
        double gap = 0.0;
        for (int k = 0; k <= t.horizon(); ++k)
            for (int n = 0; n < t.level_size(k); ++n)
                gap = std::max(gap, std::abs(closed.consumption.at(k, n) -
                                             orc.consumption[idx(k, n)]));
        const double ugap = std::abs(closed.utility - orc.value);
        out["complete"].push_back({{"consumption_gap", gap}, {"utility_gap", ugap}});
        csv += "complete," + std::to_string(i) + "," + fmt(gap) + "," + fmt(ugap) + "\n";
        table.add("complete " + std::to_string(i) + " sup gap", gap, 1e-7);
    }
    for (int i = 0; i < n_incomplete; ++i) {
        const caratree::Tree t = random_tree(2);
        caratree::AdaptedProcess xiv(t, 0, t.horizon(), 0.0);
        xiv.at(0, 0) = 1.0;
        std::uniform_real_distribution<double> ratio(0.55, 0.99);
        for (int k = 1; k <= t.horizon(); ++k)
            for (int n = 0; n < t.level_size(k); ++n)
                xiv.at(k, n) = xiv.at(k - 1, t.parent(k, n)) * ratio(rng);
        const caratree::SPD ref(t, std::move(xiv));
        std::uniform_real_distribution<double> pay(0.2, 2.0);
        std::vector<std::vector<double>> payoffs(1, std::vector<double>(t.level_size(t.horizon())));
        for (double& v : payoffs[0]) v = pay(rng);
        const caratree::MarketSpec m = caratree::make_span_market(t, ref, payoffs);
        caratree::AgentSpec a;
        a.gamma = std::uniform_real_distribution<double>(0.6, 2.0)(rng);
        a.rho = std::uniform_real_distribution<double>(0.0, 0.2)(rng);
        a.endowment = random_process(t, 0.05, 1.0);
        caratree::KKTOptions opt;
        opt.seed = flags.seed + i;
        opt.extra_starts = flags.starts;
        const caratree::KKTSolution kkt = caratree::solve_kkt(a, m, opt);
        const caratree::OracleResult orc = caratree::oracle_incomplete(a, m, flags.seed);
        const double ugap = std::abs(kkt.utility - orc.value);
        caratree::NodeIndex idx(t);
        double gap = 0.0;
        for (int k = 0; k <= t.horizon(); ++k)
            for (int n = 0; n < t.level_size(k); ++n)
                gap = std::max(gap,
                               std::abs(kkt.consumption.at(k, n) - orc.consumption[idx(k, n)]));
        out["incomplete"].push_back({{"consumption_gap", gap}, {"utility_gap", ugap}});
        csv += "incomplete," + std::to_string(i) + "," + fmt(gap) + "," + fmt(ugap) + "\n";
        table.add("incomplete " + std::to_string(i) + " utility gap", ugap, 1e-8);
    }
    table.print();
    write_json(std::filesystem::path(flags.out_dir) / "oracle_check_result.json", out);
    write_file(std::filesystem::path(flags.out_dir) / "oracle_check_summary.csv", csv);
    return table.all_pass() ? 0 : 3;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"consumption, equilibrium, bond, and savings experiments on finite trees"};
    app.require_subcommand(1);

    Flags flags;
    std::string config_path;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("config", config_path, "JSON experiment config")->required();
        cmd->add_option("--tol", flags.tol, "override the command's certification tolerance");
        cmd->add_option("--seed", flags.seed, "RNG seed for solvers and oracles");
        cmd->add_option("--starts", flags.starts, "extra random solver starts");
        cmd->add_option("--out-dir", flags.out_dir, "output directory (default: out)");
    };

    CLI::App* c1 = app.add_subcommand("optimize-complete", "complete-market optimal consumption");
    CLI::App* c2 = app.add_subcommand("optimize-incomplete", "incomplete-market KKT optimum");
    CLI::App* c3 = app.add_subcommand("equilibrium", "heterogeneous-agent equilibria");
    CLI::App* c4 = app.add_subcommand("equilibria-scan", "two-agent non-uniqueness scan");
    CLI::App* c5 = app.add_subcommand("bond-yields", "zero-coupon yields and long-run behavior");
    CLI::App* c6 = app.add_subcommand("precautionary", "precautionary-savings experiment");
    CLI::App* c7 = app.add_subcommand("oracle-check", "closed forms vs brute-force oracles");
    for (CLI::App* c : {c1, c2, c3, c4, c5, c6, c7}) add_common(c);

    CLI11_PARSE(app, argc, argv);

    try {
        const json cfg = caratree::io::load_config(config_path);
        if (c1->parsed()) return run_optimize_complete(cfg, flags);
        if (c2->parsed()) return run_optimize_incomplete(cfg, flags);
        if (c3->parsed()) return run_equilibrium(cfg, flags);
        if (c4->parsed()) return run_equilibria_scan(cfg, flags);
        if (c5->parsed()) return run_bond_yields(cfg, flags);
        if (c6->parsed()) return run_precautionary(cfg, flags);
        if (c7->parsed()) return run_oracle_check(cfg, flags);
    } catch (const caratree::io::SchemaError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "solver error: %s\n", e.what());
        return 3;
    }
    return 2;
}
