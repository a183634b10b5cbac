#ifndef HMX_SUMEXPR_HPP
#define HMX_SUMEXPR_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <memory>
#include <string>
#include <vector>

#include "errors.hpp"
#include "hmatrix.hpp"
#include "lowrank.hpp"

namespace hmx {

/// Row/column window into shared low-rank factors. Restricting a term moves
/// the window; the factors themselves are never copied.
struct LowRankTerm {
    std::shared_ptr<const Eigen::MatrixXd> left;
    std::shared_ptr<const Eigen::MatrixXd> right;
    Index row0 = 0;
    Index col0 = 0;
    Index rows = 0;
    Index cols = 0;

    static LowRankTerm whole(LowRank value)
    {
        LowRankTerm t;
        t.rows = value.rows();
        t.cols = value.cols();
        t.left = std::make_shared<const Eigen::MatrixXd>(std::move(value.left()));
        t.right = std::make_shared<const Eigen::MatrixXd>(std::move(value.right()));
        return t;
    }

    Index rank() const { return left->cols(); }
    auto left_view() const { return left->middleRows(row0, rows); }
    auto right_view() const { return right->middleRows(col0, cols); }
    LowRank materialize() const { return LowRank(left_view(), right_view()); }
};

/// Pair of block references H|_{tau x rho}, K|_{rho x sigma}.
struct ProductTerm {
    int h_block = -1;
    int k_block = -1;
};

/// Exact, lazily evaluated product block: sum of low-rank terms plus sum of
/// products of H and K blocks, all over one block of the shared tree.
class SumExpression {
public:
    SumExpression(const HMatrix& h, const HMatrix& k, int block, OpCounter* ops = nullptr)
        : h_(&h), k_(&k), block_(block), ops_(ops)
    {
    }

    const HMatrix& h() const { return *h_; }
    const HMatrix& k() const { return *k_; }
    int block() const { return block_; }
    const BlockClusterTree& tree() const { return h_->tree(); }
    Index rows() const { return tree().rows(block_).size(); }
    Index cols() const { return tree().cols(block_).size(); }
    OpCounter* ops() const { return ops_; }

    const std::vector<LowRankTerm>& lowrank_terms() const { return lowrank_; }
    const std::vector<ProductTerm>& product_terms() const { return products_; }
    bool empty() const { return lowrank_.empty() && products_.empty(); }

    void add(LowRankTerm term)
    {
        if (term.rows != rows() || term.cols != cols())
            throw dimension_error("SumExpression: low-rank term shape does not match block");
        if (term.rank() > 0)
            lowrank_.push_back(std::move(term));
    }
    void add(LowRank value) { add(LowRankTerm::whole(std::move(value))); }
    void add(ProductTerm term)
    {
        const BlockClusterTree& t = tree();
        const Block& target = t[block_];
        if (t[term.h_block].tau != target.tau || t[term.k_block].sigma != target.sigma ||
            t[term.h_block].sigma != t[term.k_block].tau)
            throw dimension_error("SumExpression: product term does not conform to block");
        products_.push_back(term);
    }

    /// S x = sum A_j (B_j^T x) + sum H_j (K_j x)
    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const
    {
        if (x.rows() != cols())
            throw dimension_error("SumExpression::apply: expected " + std::to_string(cols()) + " rows, got " +
                                  std::to_string(x.rows()));
        Eigen::MatrixXd y = Eigen::MatrixXd::Zero(rows(), x.cols());
        for (const LowRankTerm& t : lowrank_) {
            y.noalias() += t.left_view() * (t.right_view().transpose() * x);
            count(t.rank() * (t.rows + t.cols) * x.cols());
        }
        for (const ProductTerm& p : products_) {
            const Index inner = tree().cols(p.h_block).size();
            Eigen::MatrixXd z = Eigen::MatrixXd::Zero(inner, x.cols());
            multiply_block(*k_, p.k_block, x, z, false, ops_);
            multiply_block(*h_, p.h_block, z, y, false, ops_);
        }
        return y;
    }

    Eigen::MatrixXd apply_transpose(const Eigen::MatrixXd& x) const
    {
        if (x.rows() != rows())
            throw dimension_error("SumExpression::apply_transpose: expected " + std::to_string(rows()) +
                                  " rows, got " + std::to_string(x.rows()));
        Eigen::MatrixXd y = Eigen::MatrixXd::Zero(cols(), x.cols());
        for (const LowRankTerm& t : lowrank_) {
            y.noalias() += t.right_view() * (t.left_view().transpose() * x);
            count(t.rank() * (t.rows + t.cols) * x.cols());
        }
        for (const ProductTerm& p : products_) {
            const Index inner = tree().cols(p.h_block).size();
            Eigen::MatrixXd z = Eigen::MatrixXd::Zero(inner, x.cols());
            multiply_block(*h_, p.h_block, x, z, true, ops_);
            multiply_block(*k_, p.k_block, z, y, true, ops_);
        }
        return y;
    }

private:
    void count(Index n) const
    {
        if (ops_)
            ops_->add(static_cast<std::uint64_t>(n));
    }

    const HMatrix* h_;
    const HMatrix* k_;
    int block_;
    OpCounter* ops_;
    std::vector<LowRankTerm> lowrank_;
    std::vector<ProductTerm> products_;
};

/// S_H(I, I) = H K
inline SumExpression sumexpr_root(const HMatrix& h, const HMatrix& k, OpCounter* ops = nullptr)
{
    if (h.tree_ptr() != k.tree_ptr() && h.tree().structure_hash() != k.tree().structure_hash())
        throw dimension_error("sumexpr_root: factors are built on different block-cluster trees");
    SumExpression s(h, k, 0, ops);
    s.add(ProductTerm{0, 0});
    return s;
}

namespace detail {

// Stored far leaf as exact factors; a densely stored (degraded) far leaf
// becomes D * I^T.
inline LowRank far_factors(const HMatrix& m, int b)
{
    if (const LowRank* lr = m.lowrank(b))
        return *lr;
    const Eigen::MatrixXd& d = *m.dense(b);
    return LowRank(d, Eigen::MatrixXd::Identity(d.cols(), d.cols()));
}

inline bool is_far(const HMatrix& m, int b) { return m.tree()[b].kind == BlockKind::FarLeaf; }

inline void count_ops(OpCounter* ops, Index n)
{
    if (ops)
        ops->add(static_cast<std::uint64_t>(n));
}

} // namespace detail

/// Exact low-rank form of H|_hb * K|_kb when at least one factor is a far leaf.
/// The smaller rank is multiplied through the other factor.
inline LowRank far_product(const HMatrix& h, int hb, const HMatrix& k, int kb, OpCounter* ops = nullptr)
{
    const BlockClusterTree& t = h.tree();
    const bool hf = detail::is_far(h, hb);
    const bool kf = detail::is_far(k, kb);
    if (hf && kf) {
        const LowRank a = detail::far_factors(h, hb);
        const LowRank b = detail::far_factors(k, kb);
        if (a.rank() == 0 || b.rank() == 0)
            return LowRank(a.rows(), b.cols());
        const Eigen::MatrixXd core = a.right().transpose() * b.left();
        detail::count_ops(ops, a.rank() * b.rank() * a.cols());
        if (a.rank() <= b.rank()) {
            detail::count_ops(ops, b.cols() * b.rank() * a.rank());
            return LowRank(a.left(), b.right() * core.transpose());
        }
        detail::count_ops(ops, a.rows() * a.rank() * b.rank());
        return LowRank(a.left() * core, b.right());
    }
    if (hf) {
        const LowRank a = detail::far_factors(h, hb);
        Eigen::MatrixXd right = Eigen::MatrixXd::Zero(t.cols(kb).size(), a.rank());
        if (a.rank() > 0)
            multiply_block(k, kb, a.right(), right, true, ops);
        return LowRank(a.left(), std::move(right));
    }
    if (kf) {
        const LowRank b = detail::far_factors(k, kb);
        Eigen::MatrixXd left = Eigen::MatrixXd::Zero(t.rows(hb).size(), b.rank());
        if (b.rank() > 0)
            multiply_block(h, hb, b.left(), left, false, ops);
        return LowRank(std::move(left), b.right());
    }
    throw precondition_error("far_product: neither factor is a far leaf");
}

/// Exact product of two blocks as factors of rank #rho. Used when a product
/// term cannot be split further because its inner cluster is a leaf.
inline LowRank exact_product(const HMatrix& h, int hb, const HMatrix& k, int kb)
{
    if (detail::is_far(h, hb) || detail::is_far(k, kb))
        return far_product(h, hb, k, kb);
    return LowRank(to_dense(h, hb), to_dense(k, kb).transpose());
}

/// Sum-expression of a child block. Low-rank terms are shifted; product
/// terms split over the children of their inner cluster, and sub-products
/// with a far factor are multiplied out. No truncation happens here.
inline SumExpression restrict(const SumExpression& s, int child)
{
    const BlockClusterTree& t = s.tree();
    const Block& parent = t[s.block()];
    if (child < 0 || child >= t.block_count() || t[child].parent != s.block())
        throw precondition_error("restrict: block " + std::to_string(child) + " is not a child of block " +
                                 std::to_string(s.block()));
    const Cluster& tau = t.clusters()[parent.tau];
    const Cluster& sigma = t.clusters()[parent.sigma];
    const Cluster& tau_c = t.rows(child);
    const Cluster& sigma_c = t.cols(child);
    const Index dr = tau_c.begin - tau.begin;
    const Index dc = sigma_c.begin - sigma.begin;

    SumExpression out(s.h(), s.k(), child, s.ops());
    auto shifted = [&](LowRankTerm term) {
        term.row0 += dr;
        term.col0 += dc;
        term.rows = tau_c.size();
        term.cols = sigma_c.size();
        return term;
    };
    for (const LowRankTerm& term : s.lowrank_terms())
        out.add(shifted(term));

    const int tc = t[child].tau;
    const int sc = t[child].sigma;
    for (const ProductTerm& p : s.product_terms()) {
        const Block& hb = t[p.h_block];
        const Block& kb = t[p.k_block];
        if (hb.kind != BlockKind::Inner || kb.kind != BlockKind::Inner) {
            out.add(shifted(LowRankTerm::whole(exact_product(s.h(), p.h_block, s.k(), p.k_block))));
            continue;
        }
        for (int rho : t.clusters()[hb.sigma].children) {
            const int h2 = t.find(tc, rho);
            const int k2 = t.find(rho, sc);
            if (detail::is_far(s.h(), h2) || detail::is_far(s.k(), k2))
                out.add(far_product(s.h(), h2, s.k(), k2, s.ops()));
            else
                out.add(ProductTerm{h2, k2});
        }
    }
    return out;
}

/// LinearMap view of a sum-expression whose low-rank terms are gathered into
/// one contiguous factor pair, so each apply costs two thin products for the
/// whole low-rank part. When the gathered rank makes the factors larger than
/// the block itself, the low-rank part is formed densely instead (exact, no
/// truncation). Blocks with min(m, n) <= materialize_below are formed densely
/// as a whole, which is cheaper than that many single-vector applies. Meant
/// for leaves, where the map is applied many times.
class SumExpressionMap {
public:
    explicit SumExpressionMap(const SumExpression& s, Index materialize_below = 0) : s_(&s)
    {
        const Index m = s.rows();
        const Index n = s.cols();
        for (const LowRankTerm& t : s.lowrank_terms())
            rank_ += t.rank();
        if (std::min(m, n) <= materialize_below) {
            if (m <= n) {
                dense_ = s.apply_transpose(Eigen::MatrixXd::Identity(m, m)).transpose();
            } else {
                dense_ = s.apply(Eigen::MatrixXd::Identity(n, n));
            }
            whole_ = true;
            return;
        }
        if (rank_ == 0)
            return;
        if (rank_ * (m + n) >= m * n) {
            dense_ = Eigen::MatrixXd::Zero(m, n);
            for (const LowRankTerm& t : s.lowrank_terms())
                dense_.noalias() += t.left_view() * t.right_view().transpose();
            count(rank_ * m * n);
            return;
        }
        left_.resize(m, rank_);
        right_.resize(n, rank_);
        Index at = 0;
        for (const LowRankTerm& t : s.lowrank_terms()) {
            left_.middleCols(at, t.rank()) = t.left_view();
            right_.middleCols(at, t.rank()) = t.right_view();
            at += t.rank();
        }
    }

    Index rows() const { return s_->rows(); }
    Index cols() const { return s_->cols(); }
    Index gathered_rank() const { return rank_; }
    bool lowrank_part_dense() const { return dense_.size() > 0; }
    bool materialized() const { return whole_; }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const
    {
        if (x.rows() != cols())
            throw dimension_error("SumExpressionMap::apply: dimension mismatch");
        Eigen::MatrixXd y(rows(), x.cols());
        if (dense_.size() > 0) {
            y.noalias() = dense_ * x;
            count(dense_.size() * x.cols());
        } else if (left_.cols() > 0) {
            y.noalias() = left_ * (right_.transpose() * x);
            count(left_.cols() * (rows() + cols()) * x.cols());
        } else {
            y.setZero();
        }
        if (whole_)
            return y;
        const BlockClusterTree& t = s_->tree();
        for (const ProductTerm& p : s_->product_terms()) {
            Eigen::MatrixXd z = Eigen::MatrixXd::Zero(t.cols(p.h_block).size(), x.cols());
            multiply_block(s_->k(), p.k_block, x, z, false, s_->ops());
            multiply_block(s_->h(), p.h_block, z, y, false, s_->ops());
        }
        return y;
    }

    Eigen::MatrixXd apply_transpose(const Eigen::MatrixXd& x) const
    {
        if (x.rows() != rows())
            throw dimension_error("SumExpressionMap::apply_transpose: dimension mismatch");
        Eigen::MatrixXd y(cols(), x.cols());
        if (dense_.size() > 0) {
            y.noalias() = dense_.transpose() * x;
            count(dense_.size() * x.cols());
        } else if (left_.cols() > 0) {
            y.noalias() = right_ * (left_.transpose() * x);
            count(left_.cols() * (rows() + cols()) * x.cols());
        } else {
            y.setZero();
        }
        if (whole_)
            return y;
        const BlockClusterTree& t = s_->tree();
        for (const ProductTerm& p : s_->product_terms()) {
            Eigen::MatrixXd z = Eigen::MatrixXd::Zero(t.cols(p.h_block).size(), x.cols());
            multiply_block(s_->h(), p.h_block, x, z, true, s_->ops());
            multiply_block(s_->k(), p.k_block, z, y, true, s_->ops());
        }
        return y;
    }

private:
    void count(Index n) const
    {
        if (s_->ops())
            s_->ops()->add(static_cast<std::uint64_t>(n));
    }

    const SumExpression* s_;
    Index rank_ = 0;
    Eigen::MatrixXd left_;
    Eigen::MatrixXd right_;
    Eigen::MatrixXd dense_;
    bool whole_ = false;
};

/// S applied to the identity.
inline Eigen::MatrixXd evaluate_dense(const SumExpression& s)
{
    if (s.rows() > max_dense_size || s.cols() > max_dense_size)
        throw capacity_error("evaluate_dense: block exceeds guard");
    return s.apply(Eigen::MatrixXd::Identity(s.cols(), s.cols()));
}

} // namespace hmx

#endif // HMX_SUMEXPR_HPP
