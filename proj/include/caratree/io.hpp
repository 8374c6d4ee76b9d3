#pragma once

// JSON (de)serialization for the experiment configs and results. Schemas are
// strict: unknown keys are rejected so config typos fail loudly instead of
// silently using defaults.

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "caratree/bonds.hpp"
#include "caratree/complete.hpp"
#include "caratree/equilibrium.hpp"
#include "caratree/market.hpp"
#include "caratree/savings.hpp"
#include "caratree/tree.hpp"

namespace caratree::io {

using nlohmann::json;

struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require_object(const json& j, const std::string& where) {
    if (!j.is_object()) throw SchemaError(where + ": expected an object");
}

inline void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                                const std::string& where) {
    require_object(j, where);
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw SchemaError(where + ": unknown key '" + it.key() + "'");
}

inline const json& require_key(const json& j, const std::string& key, const std::string& where) {
    if (!j.contains(key)) throw SchemaError(where + ": missing key '" + key + "'");
    return j.at(key);
}

// ---------------------------------------------------------------------------
// domain parsers
// ---------------------------------------------------------------------------

inline Tree parse_tree(const json& j) {
    reject_unknown_keys(j, {"levels"}, "tree");
    TreeSpec spec;
    for (const json& lvl : require_key(j, "levels", "tree")) {
        reject_unknown_keys(lvl, {"branching", "probs"}, "tree.levels[]");
        LevelSpec ls;
        ls.branching = require_key(lvl, "branching", "tree.levels[]").get<std::vector<int>>();
        ls.child_probs = require_key(lvl, "probs", "tree.levels[]")
                             .get<std::vector<std::vector<double>>>();
        spec.push_back(std::move(ls));
    }
    try {
        return build_tree(spec);
    } catch (const std::invalid_argument& e) {
        throw SchemaError(std::string("tree: ") + e.what());
    }
}

/// Adapted process as one array of node values per level, first_level first.
inline AdaptedProcess parse_process(const json& j, const Tree& t, int first_level, int last_level,
                                    const std::string& where) {
    if (!j.is_array()) throw SchemaError(where + ": expected an array of per-level arrays");
    auto values = j.get<std::vector<std::vector<double>>>();
    if (static_cast<int>(values.size()) != last_level - first_level + 1)
        throw SchemaError(where + ": expected one entry per level");
    for (int k = first_level; k <= last_level; ++k)
        if (static_cast<int>(values[k - first_level].size()) != t.level_size(k))
            throw SchemaError(where + ": level " + std::to_string(k) + " has wrong node count");
    return AdaptedProcess(first_level, std::move(values));
}

inline json process_to_json(const Tree&, const AdaptedProcess& x) {
    json out = json::array();
    for (int k = x.first_level(); k <= x.last_level(); ++k) out.push_back(x.level(k));
    return out;
}

inline AgentSpec parse_agent(const json& j, const Tree& t) {
    reject_unknown_keys(j, {"gamma", "rho", "endowment"}, "agent");
    AgentSpec a;
    a.gamma = require_key(j, "gamma", "agent").get<double>();
    a.rho = require_key(j, "rho", "agent").get<double>();
    a.endowment = parse_process(require_key(j, "endowment", "agent"), t, 0, t.horizon(),
                                "agent.endowment");
    try {
        validate_agent(t, a);
    } catch (const std::invalid_argument& e) {
        throw SchemaError(std::string("agent: ") + e.what());
    }
    return a;
}

inline SPD parse_spd(const json& j, const Tree& t) {
    try {
        return SPD(t, parse_process(j, t, 0, t.horizon(), "spd"));
    } catch (const std::invalid_argument& e) {
        throw SchemaError(std::string("spd: ") + e.what());
    }
}

inline MarketSpec parse_market(const json& j, const Tree& t) {
    reject_unknown_keys(j, {"form", "rate", "partitions", "block_prices", "assets"}, "market");
    MarketSpec m;
    m.tree = t;
    const std::string form = require_key(j, "form", "market").get<std::string>();
    if (form == "span")
        m.form = WealthForm::Span;
    else if (form == "type_c")
        m.form = WealthForm::TypeC;
    else
        throw SchemaError("market.form: expected 'span' or 'type_c'");
    m.rate = require_key(j, "rate", "market").get<std::vector<std::vector<double>>>();
    if (m.form == WealthForm::TypeC) {
        const json& parts = require_key(j, "partitions", "market");
        int k = 1;
        for (const json& p : parts) {
            try {
                m.partitions.emplace_back(t, k, p.get<std::vector<int>>());
            } catch (const std::invalid_argument& e) {
                throw SchemaError(std::string("market.partitions: ") + e.what());
            }
            ++k;
        }
        m.block_prices = require_key(j, "block_prices", "market")
                             .get<std::vector<std::vector<double>>>();
    } else if (j.contains("assets")) {
        for (const json& a : j.at("assets")) {
            reject_unknown_keys(a, {"name", "prices"}, "market.assets[]");
            Asset asset;
            asset.name = require_key(a, "name", "market.assets[]").get<std::string>();
            asset.price = parse_process(require_key(a, "prices", "market.assets[]"), t, 0,
                                        t.horizon(), "market.assets[].prices");
            m.assets.push_back(std::move(asset));
        }
    }
    try {
        validate_market(m);
    } catch (const std::invalid_argument& e) {
        throw SchemaError(std::string("market: ") + e.what());
    }
    return m;
}

inline IncrementLaw parse_law(const json& j) {
    reject_unknown_keys(j, {"support", "probs"}, "law");
    IncrementLaw law;
    law.support = require_key(j, "support", "law").get<std::vector<double>>();
    law.probs = require_key(j, "probs", "law").get<std::vector<double>>();
    try {
        validate_law(law);
    } catch (const std::invalid_argument& e) {
        throw SchemaError(std::string("law: ") + e.what());
    }
    return law;
}

inline std::vector<BondAgent> parse_bond_agents(const json& j) {
    std::vector<BondAgent> agents;
    for (const json& a : j) {
        reject_unknown_keys(a, {"gamma", "rho"}, "agents[]");
        agents.push_back(BondAgent{require_key(a, "gamma", "agents[]").get<double>(),
                                   require_key(a, "rho", "agents[]").get<double>()});
    }
    return agents;
}

inline json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string("config parse error: ") + e.what());
    }
    return j;
}

} // namespace caratree::io
