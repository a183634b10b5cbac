#ifndef HMX_CLUSTERING_HPP
#define HMX_CLUSTERING_HPP

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"

namespace hmx {

inline constexpr Index default_n_min = 16;
inline constexpr double default_eta = 1.0;

/// Axis-aligned bounding box.
struct Box {
    Point3 lo = Point3::Zero();
    Point3 hi = Point3::Zero();

    double diameter() const { return (hi - lo).norm(); }
};

/// Euclidean distance between two boxes (zero when they overlap).
inline double distance(const Box& a, const Box& b)
{
    double sq = 0.0;
    for (int d = 0; d < 3; ++d) {
        const double gap = std::max({0.0, b.lo[d] - a.hi[d], a.lo[d] - b.hi[d]});
        sq += gap * gap;
    }
    return std::sqrt(sq);
}

/// min{diam(tau), diam(sigma)} <= eta * dist(tau, sigma). Touching or
/// overlapping boxes are never admissible.
inline bool admissible(const Box& tau, const Box& sigma, double eta)
{
    const double dist = distance(tau, sigma);
    if (dist <= 0.0)
        return false;
    return std::min(tau.diameter(), sigma.diameter()) <= eta * dist;
}

struct Cluster {
    Index begin = 0; // position range in tree order
    Index end = 0;
    Box box;
    int level = 0;
    int parent = -1;
    std::array<int, 2> children{-1, -1};

    Index size() const { return end - begin; }
    bool is_leaf() const { return children[0] < 0; }
    int child_count() const { return is_leaf() ? 0 : 2; }
};

/// Binary cluster tree over a panel set. Tree order position p holds the
/// panel with original index permutation()[p].
class ClusterTree {
public:
    const Cluster& operator[](int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    const Cluster& root() const { return nodes_.front(); }
    int cluster_count() const { return static_cast<int>(nodes_.size()); }
    Index size() const { return root().size(); }
    int depth() const { return depth_; }
    Index n_min() const { return n_min_; }

    const std::vector<Index>& permutation() const { return perm_; }
    const std::vector<Index>& inverse_permutation() const { return inverse_; }

    /// Reorders a mesh-ordered vector into tree order.
    Eigen::VectorXd to_tree_order(const Eigen::VectorXd& mesh) const
    {
        Eigen::VectorXd out(mesh.size());
        for (std::size_t p = 0; p < perm_.size(); ++p)
            out[static_cast<Index>(p)] = mesh[perm_[p]];
        return out;
    }

    Eigen::VectorXd to_mesh_order(const Eigen::VectorXd& tree) const
    {
        Eigen::VectorXd out(tree.size());
        for (std::size_t p = 0; p < perm_.size(); ++p)
            out[perm_[p]] = tree[static_cast<Index>(p)];
        return out;
    }

    /// Symmetric reordering P M P^T of a mesh-ordered matrix into tree order.
    Eigen::MatrixXd to_tree_order(const Eigen::MatrixXd& mesh) const
    {
        const Index n = size();
        Eigen::MatrixXd out(n, n);
        for (Index j = 0; j < n; ++j)
            for (Index i = 0; i < n; ++i)
                out(i, j) = mesh(perm_[static_cast<std::size_t>(i)], perm_[static_cast<std::size_t>(j)]);
        return out;
    }

    /// Cardinality-balanced bisection along the longest box axis.
    static ClusterTree build(const PanelSet& panels, Index n_min)
    {
        if (n_min < 1)
            throw precondition_error("build_cluster_tree: n_min must be >= 1");
        if (panels.size() == 0)
            throw precondition_error("build_cluster_tree: empty panel set");
        ClusterTree tree;
        tree.n_min_ = n_min;
        tree.perm_.resize(static_cast<std::size_t>(panels.size()));
        std::iota(tree.perm_.begin(), tree.perm_.end(), Index{0});
        tree.nodes_.reserve(static_cast<std::size_t>(4 * panels.size() / n_min + 2));
        tree.nodes_.push_back({});
        tree.split(0, 0, panels.size(), 0, -1, panels);
        tree.finish();
        return tree;
    }

    /// One-cluster tree with identity ordering and an empty box.
    static ClusterTree single(Index n)
    {
        if (n < 1)
            throw precondition_error("ClusterTree::single: empty index set");
        ClusterTree tree;
        tree.n_min_ = n;
        tree.perm_.resize(static_cast<std::size_t>(n));
        std::iota(tree.perm_.begin(), tree.perm_.end(), Index{0});
        Cluster c;
        c.begin = 0;
        c.end = n;
        tree.nodes_.push_back(c);
        tree.finish();
        return tree;
    }

    /// True if `inner` is `outer` or one of its descendants.
    bool contains(int outer, int inner) const
    {
        const Cluster& a = (*this)[outer];
        const Cluster& b = (*this)[inner];
        return b.level >= a.level && b.begin >= a.begin && b.end <= a.end;
    }

    std::uint64_t structure_hash() const
    {
        std::uint64_t h = 1469598103934665603ULL;
        auto mix = [&h](std::uint64_t v) {
            for (int i = 0; i < 8; ++i) {
                h ^= (v >> (8 * i)) & 0xffU;
                h *= 1099511628211ULL;
            }
        };
        mix(static_cast<std::uint64_t>(perm_.size()));
        for (Index p : perm_)
            mix(static_cast<std::uint64_t>(p));
        for (const Cluster& c : nodes_) {
            mix(static_cast<std::uint64_t>(c.begin));
            mix(static_cast<std::uint64_t>(c.end));
            mix(static_cast<std::uint64_t>(c.children[0] + 1));
        }
        return h;
    }

private:
    void split(int id, Index begin, Index end, int level, int parent, const PanelSet& panels)
    {
        Box box;
        box.lo = Point3::Constant(std::numeric_limits<double>::infinity());
        box.hi = -box.lo;
        for (Index p = begin; p < end; ++p) {
            const Point3& x = panels.centers[static_cast<std::size_t>(perm_[static_cast<std::size_t>(p)])];
            box.lo = box.lo.cwiseMin(x);
            box.hi = box.hi.cwiseMax(x);
        }
        Cluster& c = nodes_[static_cast<std::size_t>(id)];
        c.begin = begin;
        c.end = end;
        c.box = box;
        c.level = level;
        c.parent = parent;
        if (end - begin <= n_min_)
            return;

        int axis = 0;
        const Point3 extent = box.hi - box.lo;
        for (int d = 1; d < 3; ++d)
            if (extent[d] > extent[axis])
                axis = d;
        auto first = perm_.begin() + begin;
        auto last = perm_.begin() + end;
        std::sort(first, last, [&](Index a, Index b) {
            const double xa = panels.centers[static_cast<std::size_t>(a)][axis];
            const double xb = panels.centers[static_cast<std::size_t>(b)][axis];
            return xa < xb || (xa == xb && a < b);
        });
        const Index mid = begin + (end - begin) / 2;
        const int left = static_cast<int>(nodes_.size());
        nodes_.push_back({});
        nodes_.push_back({});
        nodes_[static_cast<std::size_t>(id)].children = {left, left + 1};
        split(left, begin, mid, level + 1, id, panels);
        split(left + 1, mid, end, level + 1, id, panels);
    }

    void finish()
    {
        depth_ = 0;
        for (const Cluster& c : nodes_)
            depth_ = std::max(depth_, c.level);
        inverse_.assign(perm_.size(), 0);
        for (std::size_t p = 0; p < perm_.size(); ++p)
            inverse_[static_cast<std::size_t>(perm_[p])] = static_cast<Index>(p);
    }

    std::vector<Cluster> nodes_;
    std::vector<Index> perm_;
    std::vector<Index> inverse_;
    int depth_ = 0;
    Index n_min_ = default_n_min;
};

inline ClusterTree build_cluster_tree(const PanelSet& panels, Index n_min = default_n_min)
{
    return ClusterTree::build(panels, n_min);
}

enum class BlockKind { Inner, FarLeaf, NearLeaf };

inline const char* to_string(BlockKind kind)
{
    switch (kind) {
    case BlockKind::Inner: return "inner";
    case BlockKind::FarLeaf: return "far";
    case BlockKind::NearLeaf: return "near";
    }
    return "unknown";
}

struct Block {
    int tau = 0;
    int sigma = 0;
    BlockKind kind = BlockKind::NearLeaf;
    int level = 0;
    int parent = -1;
    int first_child = -1; // children are contiguous, row-child-major
    int child_count = 0;

    bool is_leaf() const { return kind != BlockKind::Inner; }
};

/// Level-conserving block-cluster tree over I x I.
class BlockClusterTree {
public:
    BlockClusterTree(std::shared_ptr<const ClusterTree> clusters, double eta)
        : clusters_(std::move(clusters)), eta_(eta)
    {
        if (!clusters_)
            throw precondition_error("BlockClusterTree: null cluster tree");
        if (!(eta > 0.0))
            throw precondition_error("BlockClusterTree: eta must be positive");
        nodes_.push_back({});
        build(0, 0, 0, 0, -1);
        index_.reserve(nodes_.size());
        for (std::size_t b = 0; b < nodes_.size(); ++b) {
            index_.emplace(key(nodes_[b].tau, nodes_[b].sigma), static_cast<int>(b));
            depth_ = std::max(depth_, nodes_[b].level);
        }
    }

    const ClusterTree& clusters() const { return *clusters_; }
    std::shared_ptr<const ClusterTree> clusters_ptr() const { return clusters_; }
    double eta() const { return eta_; }
    int depth() const { return depth_; }
    Index size() const { return clusters_->size(); }

    const Block& operator[](int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    const Block& root() const { return nodes_.front(); }
    int block_count() const { return static_cast<int>(nodes_.size()); }

    const Cluster& rows(int id) const { return (*clusters_)[(*this)[id].tau]; }
    const Cluster& cols(int id) const { return (*clusters_)[(*this)[id].sigma]; }

    /// Child block (children(tau)[i], children(sigma)[j]) of an inner block.
    int child(int id, int i, int j) const
    {
        const Block& b = (*this)[id];
        return b.first_child + i * clusters()[b.sigma].child_count() + j;
    }

    /// Block id of tau x sigma, or -1 if the pair is not a block of the tree.
    int find(int tau, int sigma) const
    {
        const auto it = index_.find(key(tau, sigma));
        return it == index_.end() ? -1 : it->second;
    }

    std::vector<int> leaves() const
    {
        std::vector<int> out;
        for (int b = 0; b < block_count(); ++b)
            if ((*this)[b].is_leaf())
                out.push_back(b);
        return out;
    }

    std::size_t count(BlockKind kind) const
    {
        return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(),
                                                      [kind](const Block& b) { return b.kind == kind; }));
    }

    std::uint64_t structure_hash() const
    {
        std::uint64_t h = clusters_->structure_hash();
        for (const Block& b : nodes_) {
            h ^= static_cast<std::uint64_t>(b.tau) * 0x9E3779B97F4A7C15ULL +
                 static_cast<std::uint64_t>(b.sigma) * 0xC2B2AE3D27D4EB4FULL +
                 static_cast<std::uint64_t>(b.kind);
            h *= 1099511628211ULL;
        }
        return h;
    }

private:
    std::uint64_t key(int tau, int sigma) const
    {
        return static_cast<std::uint64_t>(tau) * static_cast<std::uint64_t>(clusters_->cluster_count()) +
               static_cast<std::uint64_t>(sigma);
    }

    void build(int id, int tau, int sigma, int level, int parent)
    {
        const ClusterTree& ct = *clusters_;
        {
            Block& b = nodes_[static_cast<std::size_t>(id)];
            b.tau = tau;
            b.sigma = sigma;
            b.level = level;
            b.parent = parent;
        }
        if (admissible(ct[tau].box, ct[sigma].box, eta_)) {
            nodes_[static_cast<std::size_t>(id)].kind = BlockKind::FarLeaf;
            return;
        }
        if (ct[tau].is_leaf() || ct[sigma].is_leaf()) {
            nodes_[static_cast<std::size_t>(id)].kind = BlockKind::NearLeaf;
            return;
        }
        const int first = static_cast<int>(nodes_.size());
        const int n = ct[tau].child_count() * ct[sigma].child_count();
        nodes_.resize(nodes_.size() + static_cast<std::size_t>(n));
        {
            Block& b = nodes_[static_cast<std::size_t>(id)];
            b.kind = BlockKind::Inner;
            b.first_child = first;
            b.child_count = n;
        }
        int c = first;
        for (int tc : ct[tau].children)
            for (int sc : ct[sigma].children)
                build(c++, tc, sc, level + 1, id);
    }

    std::shared_ptr<const ClusterTree> clusters_;
    double eta_;
    std::vector<Block> nodes_;
    std::unordered_map<std::uint64_t, int> index_;
    int depth_ = 0;
};

inline std::shared_ptr<const BlockClusterTree>
build_block_cluster_tree(std::shared_ptr<const ClusterTree> tree, double eta = default_eta)
{
    return std::make_shared<const BlockClusterTree>(std::move(tree), eta);
}

/// Csp: max over clusters tau of the number of blocks tau x sigma in the tree.
inline int sparsity_constant(const BlockClusterTree& bct)
{
    std::vector<int> per_row(static_cast<std::size_t>(bct.clusters().cluster_count()), 0);
    for (int b = 0; b < bct.block_count(); ++b)
        ++per_row[static_cast<std::size_t>(bct[b].tau)];
    return *std::max_element(per_row.begin(), per_row.end());
}

/// Cid: max over leaves tau x sigma of the number of successor pairs
/// (tau', sigma') connected through some rho' with tau' x rho' and
/// rho' x sigma' both in the tree. Exhaustive; intended for diagnostics.
inline int identity_constant(const BlockClusterTree& bct)
{
    const ClusterTree& ct = bct.clusters();
    std::vector<std::vector<int>> row_partners(static_cast<std::size_t>(ct.cluster_count()));
    for (int b = 0; b < bct.block_count(); ++b)
        row_partners[static_cast<std::size_t>(bct[b].tau)].push_back(bct[b].sigma);

    std::vector<int> stamp(static_cast<std::size_t>(ct.cluster_count()), -1);
    int best = 0;
    for (int leaf : bct.leaves()) {
        const Block& b = bct[leaf];
        int count = 0;
        std::vector<int> stack{b.tau};
        while (!stack.empty()) {
            const int t = stack.back();
            stack.pop_back();
            for (int c : ct[t].children)
                if (c >= 0)
                    stack.push_back(c);
            // distinct sigma' reachable from this tau'
            for (int rho : row_partners[static_cast<std::size_t>(t)])
                for (int s : row_partners[static_cast<std::size_t>(rho)])
                    if (ct.contains(b.sigma, s) && stamp[static_cast<std::size_t>(s)] != t) {
                        stamp[static_cast<std::size_t>(s)] = t;
                        ++count;
                    }
        }
        // stamps are keyed by tau'; reset for the next leaf
        std::fill(stamp.begin(), stamp.end(), -1);
        best = std::max(best, count);
    }
    return best;
}

/// Depth-first listing of the block tree, one block per line.
inline void dump_tree(const BlockClusterTree& bct, std::ostream& os)
{
    std::vector<int> stack{0};
    while (!stack.empty()) {
        const int id = stack.back();
        stack.pop_back();
        const Block& b = bct[id];
        const Cluster& r = bct.rows(id);
        const Cluster& c = bct.cols(id);
        os << std::string(static_cast<std::size_t>(2 * b.level), ' ') << "level=" << b.level << " rows=["
           << r.begin << "," << r.end << ") cols=[" << c.begin << "," << c.end << ") kind=" << to_string(b.kind)
           << '\n';
        for (int k = b.child_count - 1; k >= 0; --k)
            stack.push_back(b.first_child + k);
    }
}

inline std::string dump_tree(const BlockClusterTree& bct)
{
    std::ostringstream os;
    dump_tree(bct, os);
    return os.str();
}

} // namespace hmx

#endif // HMX_CLUSTERING_HPP
