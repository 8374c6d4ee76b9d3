#pragma once

// Finite filtered probability space on a node tree, plus the adapted-process
// containers used throughout the library. Nodes carry stable integer ids per
// level so every process is a plain dense array and iteration order is
// deterministic.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace caratree {

inline constexpr double kProbTol = 1e-12;

/// Branching description of one tree level: for each node at level k, the
/// number of children and their conditional probabilities (summing to 1).
struct LevelSpec {
    std::vector<int> branching;
    std::vector<std::vector<double>> child_probs;
};

/// Transition specs for levels 0->1, 1->2, ..., T-1->T. Empty spec is the
/// trivial one-node tree (T = 0).
using TreeSpec = std::vector<LevelSpec>;

class Tree {
  public:
    int horizon() const { return T_; }
    int level_size(int k) const { return static_cast<int>(prob_.at(k).size()); }

    int parent(int k, int node) const { return parent_.at(k).at(node); }
    const std::vector<int>& children(int k, int node) const { return children_.at(k).at(node); }

    /// Unconditional probability of the node (masses sum to 1 per level).
    double prob(int k, int node) const { return prob_.at(k).at(node); }
    /// P(node | parent), k >= 1.
    double cond_prob(int k, int node) const {
        return prob_.at(k).at(node) / prob_.at(k - 1).at(parent(k, node));
    }

    friend Tree build_tree(const TreeSpec& spec);

  private:
    int T_ = 0;
    std::vector<std::vector<double>> prob_;               // [k][node]
    std::vector<std::vector<int>> parent_;                // [k][node], level 0 unused
    std::vector<std::vector<std::vector<int>>> children_; // [k][node] -> ids at k+1
};

/// Builds and validates a tree from per-level branching. Throws
/// std::invalid_argument on malformed specs (branching < 1, non-positive or
/// non-normalized probabilities).
inline Tree build_tree(const TreeSpec& spec) {
    Tree t;
    t.T_ = static_cast<int>(spec.size());
    t.prob_.resize(t.T_ + 1);
    t.parent_.resize(t.T_ + 1);
    t.children_.resize(t.T_ + 1);
    t.prob_[0] = {1.0};
    t.parent_[0] = {-1};
    for (int k = 0; k < t.T_; ++k) {
        const LevelSpec& ls = spec[k];
        const int parents = t.level_size(k);
        if (static_cast<int>(ls.branching.size()) != parents ||
            static_cast<int>(ls.child_probs.size()) != parents)
            throw std::invalid_argument("tree spec level " + std::to_string(k) +
                                        ": branching entries do not match node count");
        t.children_[k].resize(parents);
        for (int n = 0; n < parents; ++n) {
            const int b = ls.branching[n];
            if (b < 1) throw std::invalid_argument("branching factor must be >= 1");
            if (static_cast<int>(ls.child_probs[n].size()) != b)
                throw std::invalid_argument("child probability count does not match branching");
            double sum = 0.0;
            for (double q : ls.child_probs[n]) {
                if (!(q > 0.0)) throw std::invalid_argument("child probabilities must be > 0");
                sum += q;
            }
            if (std::abs(sum - 1.0) > kProbTol)
                throw std::invalid_argument("child probabilities must sum to 1");
            for (int c = 0; c < b; ++c) {
                t.children_[k][n].push_back(static_cast<int>(t.prob_[k + 1].size()));
                t.prob_[k + 1].push_back(t.prob_[k][n] * ls.child_probs[n][c]);
                t.parent_[k + 1].push_back(n);
            }
        }
        double level_mass = 0.0;
        for (double p : t.prob_[k + 1]) level_mass += p;
        if (std::abs(level_mass - 1.0) > kProbTol)
            throw std::invalid_argument("level mass drifted from 1 beyond tolerance");
        t.children_[k + 1].resize(t.prob_[k + 1].size());
    }
    return t;
}

/// One real value per node over a contiguous level range [first_level, last_level].
/// Measurability w.r.t. F_k is structural: a value is constant on its node.
class AdaptedProcess {
  public:
    AdaptedProcess() = default;
    AdaptedProcess(const Tree& t, int first_level, int last_level, double fill = 0.0)
        : first_(first_level) {
        if (first_level < 0 || last_level > t.horizon() || first_level > last_level)
            throw std::invalid_argument("invalid level range for adapted process");
        for (int k = first_level; k <= last_level; ++k)
            values_.emplace_back(t.level_size(k), fill);
    }
    AdaptedProcess(int first_level, std::vector<std::vector<double>> values)
        : first_(first_level), values_(std::move(values)) {}

    int first_level() const { return first_; }
    int last_level() const { return first_ + static_cast<int>(values_.size()) - 1; }
    bool covers(int k) const { return k >= first_level() && k <= last_level(); }

    double at(int k, int node) const { return values_.at(k - first_).at(node); }
    double& at(int k, int node) { return values_.at(k - first_).at(node); }
    const std::vector<double>& level(int k) const { return values_.at(k - first_); }
    std::vector<double>& level(int k) { return values_.at(k - first_); }

  private:
    int first_ = 0;
    std::vector<std::vector<double>> values_;
};

/// Partition of one level's nodes into blocks: a sub-sigma-algebra H with
/// F_0 ⊆ H ⊆ F_k. Block ids must be dense 0..B-1.
class SubAlgebra {
  public:
    SubAlgebra(const Tree& t, int level, std::vector<int> block_of_node)
        : level_(level), block_of_(std::move(block_of_node)) {
        if (level < 0 || level > t.horizon())
            throw std::invalid_argument("sub-algebra level out of range");
        if (static_cast<int>(block_of_.size()) != t.level_size(level))
            throw std::invalid_argument("sub-algebra must label every node of its level");
        int max_id = -1;
        for (int b : block_of_) {
            if (b < 0) throw std::invalid_argument("negative block id");
            max_id = std::max(max_id, b);
        }
        blocks_.resize(max_id + 1);
        for (int n = 0; n < static_cast<int>(block_of_.size()); ++n)
            blocks_[block_of_[n]].push_back(n);
        for (const auto& blk : blocks_)
            if (blk.empty()) throw std::invalid_argument("block ids must be dense 0..B-1");
    }

    static SubAlgebra finest(const Tree& t, int level) {
        std::vector<int> ids(t.level_size(level));
        for (int n = 0; n < static_cast<int>(ids.size()); ++n) ids[n] = n;
        return SubAlgebra(t, level, std::move(ids));
    }
    static SubAlgebra trivial(const Tree& t, int level) {
        return SubAlgebra(t, level, std::vector<int>(t.level_size(level), 0));
    }

    int level() const { return level_; }
    int block_count() const { return static_cast<int>(blocks_.size()); }
    int block_of(int node) const { return block_of_.at(node); }
    const std::vector<std::vector<int>>& blocks() const { return blocks_; }

    /// True iff every block lies within the children of a single level-(k-1)
    /// node, i.e. F_{k-1} ⊆ H. Required for type-C wealth spaces at k >= 2.
    bool refines_parents(const Tree& t) const {
        if (level_ == 0) return true;
        for (const auto& blk : blocks_) {
            const int p0 = t.parent(level_, blk.front());
            for (int n : blk)
                if (t.parent(level_, n) != p0) return false;
        }
        return true;
    }

  private:
    int level_;
    std::vector<int> block_of_;
    std::vector<std::vector<int>> blocks_;
};

/// E[X | H] for X living on H's level: block-wise probability-weighted mean,
/// returned as a process on the same level (constant per block).
inline AdaptedProcess cond_expect(const Tree& t, const AdaptedProcess& x, const SubAlgebra& g) {
    const int k = g.level();
    if (!x.covers(k)) throw std::invalid_argument("process does not cover the sub-algebra level");
    AdaptedProcess out(t, k, k);
    for (const auto& blk : g.blocks()) {
        double mass = 0.0, acc = 0.0;
        for (int n : blk) {
            mass += t.prob(k, n);
            acc += t.prob(k, n) * x.at(k, n);
        }
        const double mean = acc / mass;
        for (int n : blk) out.at(k, n) = mean;
    }
    return out;
}

/// essinf[X | H]: per-block minimum (attained, the space is finite).
inline AdaptedProcess ess_inf(const Tree& t, const AdaptedProcess& x, const SubAlgebra& g) {
    const int k = g.level();
    if (!x.covers(k)) throw std::invalid_argument("process does not cover the sub-algebra level");
    AdaptedProcess out(t, k, k);
    for (const auto& blk : g.blocks()) {
        double m = x.at(k, blk.front());
        for (int n : blk) m = std::min(m, x.at(k, n));
        for (int n : blk) out.at(k, n) = m;
    }
    return out;
}

/// E[X_k] over level k.
inline double expectation(const Tree& t, const AdaptedProcess& x, int k) {
    double acc = 0.0;
    for (int n = 0; n < t.level_size(k); ++n) acc += t.prob(k, n) * x.at(k, n);
    return acc;
}

/// E[X_k | F_{k-1}] as node values on level k-1 (k >= 1).
inline std::vector<double> expect_given_parent(const Tree& t, const AdaptedProcess& x, int k) {
    std::vector<double> out(t.level_size(k - 1), 0.0);
    for (int n = 0; n < t.level_size(k); ++n)
        out[t.parent(k, n)] += t.cond_prob(k, n) * x.at(k, n);
    return out;
}

/// Flat index over all nodes of levels 0..T, level-major. Deterministic
/// layout for solvers that stack node values into one vector.
class NodeIndex {
  public:
    explicit NodeIndex(const Tree& t) {
        offsets_.push_back(0);
        for (int k = 0; k <= t.horizon(); ++k) {
            sizes_.push_back(t.level_size(k));
            offsets_.push_back(offsets_.back() + t.level_size(k));
        }
    }
    int operator()(int k, int node) const { return offsets_[k] + node; }
    int total() const { return offsets_.back(); }
    int level_offset(int k) const { return offsets_[k]; }
    int level_size(int k) const { return sizes_[k]; }
    std::pair<int, int> level_node(int flat) const {
        int k = 0;
        while (flat >= offsets_[k + 1]) ++k;
        return {k, flat - offsets_[k]};
    }

  private:
    std::vector<int> offsets_;
    std::vector<int> sizes_;
};

/// Present-value pairing sum_k E[xi_k c_k] over the levels both cover.
inline double pv_sum(const Tree& t, const AdaptedProcess& xi, const AdaptedProcess& c) {
    double acc = 0.0;
    for (int k = 0; k <= t.horizon(); ++k)
        if (xi.covers(k) && c.covers(k))
            for (int n = 0; n < t.level_size(k); ++n)
                acc += t.prob(k, n) * xi.at(k, n) * c.at(k, n);
    return acc;
}

} // namespace caratree
