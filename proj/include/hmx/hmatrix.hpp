#ifndef HMX_HMATRIX_HPP
#define HMX_HMATRIX_HPP

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "clustering.hpp"
#include "compressors.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "lowrank.hpp"
#include "parallel.hpp"

namespace hmx {

/// Multiply-add counter shared by concurrent operations.
class OpCounter {
public:
    void add(std::uint64_t n) { count_.fetch_add(n, std::memory_order_relaxed); }
    std::uint64_t value() const { return count_.load(std::memory_order_relaxed); }
    void reset() { count_.store(0); }

private:
    std::atomic<std::uint64_t> count_{0};
};

/// Hierarchical matrix over a block-cluster tree, in tree ordering. Far
/// leaves hold LowRank payloads, near leaves dense ones; a far leaf whose
/// compression failed may hold a dense payload and is flagged degraded.
class HMatrix {
public:
    struct Inner {};
    using Payload = std::variant<Inner, LowRank, Eigen::MatrixXd>;

    explicit HMatrix(std::shared_ptr<const BlockClusterTree> tree)
        : tree_(std::move(tree)),
          payload_(static_cast<std::size_t>(tree_->block_count())),
          degraded_(static_cast<std::size_t>(tree_->block_count()), 0)
    {
    }

    const BlockClusterTree& tree() const { return *tree_; }
    std::shared_ptr<const BlockClusterTree> tree_ptr() const { return tree_; }
    Index size() const { return tree_->size(); }

    const Payload& payload(int b) const { return payload_[static_cast<std::size_t>(b)]; }
    const LowRank* lowrank(int b) const { return std::get_if<LowRank>(&payload(b)); }
    const Eigen::MatrixXd* dense(int b) const { return std::get_if<Eigen::MatrixXd>(&payload(b)); }

    void set(int b, LowRank value)
    {
        check_leaf_shape(b, value.rows(), value.cols());
        payload_[static_cast<std::size_t>(b)] = std::move(value);
    }
    void set(int b, Eigen::MatrixXd value)
    {
        check_leaf_shape(b, value.rows(), value.cols());
        payload_[static_cast<std::size_t>(b)] = std::move(value);
    }

    void mark_degraded(int b) { degraded_[static_cast<std::size_t>(b)] = 1; }
    bool degraded(int b) const { return degraded_[static_cast<std::size_t>(b)] != 0; }
    std::vector<int> degraded_blocks() const
    {
        std::vector<int> out;
        for (int b = 0; b < tree_->block_count(); ++b)
            if (degraded(b))
                out.push_back(b);
        return out;
    }

    /// True when every leaf carries a payload of a kind allowed for its block.
    bool complete() const
    {
        for (int b = 0; b < tree_->block_count(); ++b) {
            const Block& blk = (*tree_)[b];
            const Payload& p = payload(b);
            switch (blk.kind) {
            case BlockKind::Inner:
                if (!std::holds_alternative<Inner>(p))
                    return false;
                break;
            case BlockKind::NearLeaf:
                if (!std::holds_alternative<Eigen::MatrixXd>(p))
                    return false;
                break;
            case BlockKind::FarLeaf:
                if (!std::holds_alternative<LowRank>(p) && !(degraded(b) && std::holds_alternative<Eigen::MatrixXd>(p)))
                    return false;
                break;
            }
        }
        return true;
    }

    /// One dense block on a single-cluster tree.
    static HMatrix from_dense(const Eigen::MatrixXd& a)
    {
        if (a.rows() != a.cols())
            throw dimension_error("HMatrix::from_dense: matrix must be square");
        auto ct = std::make_shared<const ClusterTree>(ClusterTree::single(a.rows()));
        HMatrix h(build_block_cluster_tree(ct));
        h.set(0, a);
        return h;
    }

    /// Identity: dense diagonal near blocks, zero elsewhere, rank-0 far blocks.
    static HMatrix identity(std::shared_ptr<const BlockClusterTree> tree)
    {
        HMatrix h(std::move(tree));
        const BlockClusterTree& t = h.tree();
        for (int b = 0; b < t.block_count(); ++b) {
            const Block& blk = t[b];
            const Cluster& r = t.rows(b);
            const Cluster& c = t.cols(b);
            if (blk.kind == BlockKind::FarLeaf) {
                h.set(b, LowRank(r.size(), c.size()));
            } else if (blk.kind == BlockKind::NearLeaf) {
                Eigen::MatrixXd d = Eigen::MatrixXd::Zero(r.size(), c.size());
                if (blk.tau == blk.sigma)
                    d.setIdentity();
                h.set(b, std::move(d));
            }
        }
        return h;
    }

private:
    void check_leaf_shape(int b, Index rows, Index cols) const
    {
        if (rows != tree_->rows(b).size() || cols != tree_->cols(b).size())
            throw dimension_error("HMatrix::set: payload " + std::to_string(rows) + "x" + std::to_string(cols) +
                                  " does not match block " + std::to_string(b));
    }

    std::shared_ptr<const BlockClusterTree> tree_;
    std::vector<Payload> payload_;
    std::vector<char> degraded_;
};

namespace detail {

inline void block_multiply(const HMatrix& h, int b, const Eigen::Ref<const Eigen::MatrixXd>& x,
                           Eigen::Ref<Eigen::MatrixXd> y, bool transpose, OpCounter* ops)
{
    const BlockClusterTree& t = h.tree();
    const Block& blk = t[b];
    if (blk.kind == BlockKind::Inner) {
        const Cluster& r = t.rows(b);
        const Cluster& c = t.cols(b);
        for (int k = 0; k < blk.child_count; ++k) {
            const int child = blk.first_child + k;
            const Cluster& rc = t.rows(child);
            const Cluster& cc = t.cols(child);
            if (!transpose)
                block_multiply(h, child, x.middleRows(cc.begin - c.begin, cc.size()),
                               y.middleRows(rc.begin - r.begin, rc.size()), false, ops);
            else
                block_multiply(h, child, x.middleRows(rc.begin - r.begin, rc.size()),
                               y.middleRows(cc.begin - c.begin, cc.size()), true, ops);
        }
        return;
    }
    const auto ncols = static_cast<std::uint64_t>(x.cols());
    if (const LowRank* lr = h.lowrank(b)) {
        if (lr->rank() == 0)
            return;
        if (!transpose)
            y.noalias() += lr->left() * (lr->right().transpose() * x);
        else
            y.noalias() += lr->right() * (lr->left().transpose() * x);
        if (ops)
            ops->add(static_cast<std::uint64_t>(lr->rank() * (lr->rows() + lr->cols())) * ncols);
    } else if (const Eigen::MatrixXd* d = h.dense(b)) {
        if (!transpose)
            y.noalias() += (*d) * x;
        else
            y.noalias() += d->transpose() * x;
        if (ops)
            ops->add(static_cast<std::uint64_t>(d->rows() * d->cols()) * ncols);
    } else {
        throw precondition_error("hmat_vec: leaf block " + std::to_string(b) + " has no payload");
    }
}

} // namespace detail

/// Y += H|_b X (or (H|_b)^T X), with X and Y indexed relative to the block.
inline void multiply_block(const HMatrix& h, int b, const Eigen::Ref<const Eigen::MatrixXd>& x,
                           Eigen::Ref<Eigen::MatrixXd> y, bool transpose = false, OpCounter* ops = nullptr)
{
    const Index in = transpose ? h.tree().rows(b).size() : h.tree().cols(b).size();
    const Index out = transpose ? h.tree().cols(b).size() : h.tree().rows(b).size();
    if (x.rows() != in || y.rows() != out || x.cols() != y.cols())
        throw dimension_error("multiply_block: operand shapes do not match block " + std::to_string(b));
    detail::block_multiply(h, b, x, y, transpose, ops);
}

/// y += H x (tree ordering).
inline void hmat_vec(const HMatrix& h, const Eigen::VectorXd& x, Eigen::VectorXd& y, OpCounter* ops = nullptr)
{
    if (x.size() != h.size() || y.size() != h.size())
        throw dimension_error("hmat_vec: vector length " + std::to_string(x.size()) + " vs " +
                              std::to_string(h.size()));
    detail::block_multiply(h, 0, x, y, false, ops);
}

inline Eigen::VectorXd hmat_vec(const HMatrix& h, const Eigen::VectorXd& x, OpCounter* ops = nullptr)
{
    Eigen::VectorXd y = Eigen::VectorXd::Zero(h.size());
    hmat_vec(h, x, y, ops);
    return y;
}

/// y += H^T x (tree ordering).
inline void hmat_vec_transpose(const HMatrix& h, const Eigen::VectorXd& x, Eigen::VectorXd& y,
                               OpCounter* ops = nullptr)
{
    if (x.size() != h.size() || y.size() != h.size())
        throw dimension_error("hmat_vec_transpose: vector length mismatch");
    detail::block_multiply(h, 0, x, y, true, ops);
}

inline Eigen::VectorXd hmat_vec_transpose(const HMatrix& h, const Eigen::VectorXd& x, OpCounter* ops = nullptr)
{
    Eigen::VectorXd y = Eigen::VectorXd::Zero(h.size());
    hmat_vec_transpose(h, x, y, ops);
    return y;
}

/// Y += H X for a block of vectors.
inline Eigen::MatrixXd hmat_mat(const HMatrix& h, const Eigen::MatrixXd& x, OpCounter* ops = nullptr)
{
    if (x.rows() != h.size())
        throw dimension_error("hmat_mat: row count mismatch");
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(h.size(), x.cols());
    detail::block_multiply(h, 0, x, y, false, ops);
    return y;
}

/// Dense copy of the sub-block H|_b.
inline Eigen::MatrixXd to_dense(const HMatrix& h, int b)
{
    const BlockClusterTree& t = h.tree();
    const Cluster& r = t.rows(b);
    const Cluster& c = t.cols(b);
    if (r.size() > max_dense_size || c.size() > max_dense_size)
        throw capacity_error("to_dense: block exceeds guard");
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(r.size(), c.size());
    std::vector<int> stack{b};
    while (!stack.empty()) {
        const int id = stack.back();
        stack.pop_back();
        const Block& blk = t[id];
        if (blk.kind == BlockKind::Inner) {
            for (int k = 0; k < blk.child_count; ++k)
                stack.push_back(blk.first_child + k);
            continue;
        }
        auto dst = out.block(t.rows(id).begin - r.begin, t.cols(id).begin - c.begin, t.rows(id).size(),
                             t.cols(id).size());
        if (const LowRank* lr = h.lowrank(id))
            dst = lr->dense();
        else if (const Eigen::MatrixXd* d = h.dense(id))
            dst = *d;
    }
    return out;
}

inline Eigen::MatrixXd to_dense(const HMatrix& h) { return to_dense(h, 0); }

/// Blockwise Frobenius norm; low-rank blocks through their Gram matrices.
inline double frobenius_norm(const HMatrix& h)
{
    double sum = 0.0;
    const BlockClusterTree& t = h.tree();
    for (int b = 0; b < t.block_count(); ++b) {
        if (const LowRank* lr = h.lowrank(b)) {
            const double n = lr->norm();
            sum += n * n;
        } else if (const Eigen::MatrixXd* d = h.dense(b)) {
            sum += d->squaredNorm();
        }
    }
    return std::sqrt(sum);
}

inline Index max_far_rank(const HMatrix& h)
{
    Index k = 0;
    for (int b = 0; b < h.tree().block_count(); ++b)
        if (const LowRank* lr = h.lowrank(b))
            k = std::max(k, lr->rank());
    return k;
}

/// Kernel entries of one block, addressed in tree ordering.
class KernelBlockMap {
public:
    KernelBlockMap(KernelKind kind, const PanelSet& panels, const ClusterTree& clusters, const Cluster& rows,
                   const Cluster& cols)
        : kind_(kind), panels_(&panels), perm_(&clusters.permutation()), row0_(rows.begin), col0_(cols.begin),
          m_(rows.size()), n_(cols.size())
    {
    }

    Index rows() const { return m_; }
    Index cols() const { return n_; }

    double entry(Index i, Index j) const
    {
        return kernel_entry(kind_, (*perm_)[static_cast<std::size_t>(row0_ + i)],
                            (*perm_)[static_cast<std::size_t>(col0_ + j)], *panels_);
    }

    Eigen::VectorXd row(Index i) const
    {
        Eigen::VectorXd r(n_);
        for (Index j = 0; j < n_; ++j)
            r[j] = entry(i, j);
        return r;
    }
    Eigen::VectorXd column(Index j) const
    {
        Eigen::VectorXd c(m_);
        for (Index i = 0; i < m_; ++i)
            c[i] = entry(i, j);
        return c;
    }
    Eigen::MatrixXd dense() const
    {
        Eigen::MatrixXd d(m_, n_);
        for (Index j = 0; j < n_; ++j)
            for (Index i = 0; i < m_; ++i)
                d(i, j) = entry(i, j);
        return d;
    }
    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const { return dense() * x; }
    Eigen::MatrixXd apply_transpose(const Eigen::MatrixXd& x) const { return dense().transpose() * x; }

private:
    KernelKind kind_;
    const PanelSet* panels_;
    const std::vector<Index>* perm_;
    Index row0_, col0_, m_, n_;
};

/// Near leaves from kernel entries, far leaves by ACA on entry access. A far
/// block on which ACA does not converge is stored densely and flagged.
inline HMatrix assemble_hmatrix(KernelKind kind, const PanelSet& panels,
                                std::shared_ptr<const BlockClusterTree> tree, const TruncationPolicy& policy,
                                unsigned threads = 1)
{
    if (panels.size() != tree->size())
        throw dimension_error("assemble_hmatrix: panel count does not match tree");
    HMatrix h(tree);
    const BlockClusterTree& t = *tree;
    const std::vector<int> leaves = t.leaves();
    parallel_for(leaves.size(), threads, [&](std::size_t i) {
        const int b = leaves[i];
        const KernelBlockMap map(kind, panels, t.clusters(), t.rows(b), t.cols(b));
        if (t[b].kind == BlockKind::NearLeaf) {
            h.set(b, map.dense());
            return;
        }
        Compressed c = aca(map, policy);
        if (c.degraded) {
            h.set(b, map.dense());
            h.mark_degraded(b);
            warn("assemble_hmatrix: ACA did not converge on block " + std::to_string(b) + ", stored dense");
        } else {
            h.set(b, std::move(c.lowrank));
        }
    });
    return h;
}

} // namespace hmx

#endif // HMX_HMATRIX_HPP
