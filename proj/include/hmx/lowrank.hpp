#ifndef HMX_LOWRANK_HPP
#define HMX_LOWRANK_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace hmx {

using Index = Eigen::Index;

/// Factorized matrix left * right^T. Rank 0 (empty factors) is the zero matrix.
class LowRank {
public:
    LowRank() = default;
    LowRank(Index rows, Index cols) : left_(rows, 0), right_(cols, 0) {}
    LowRank(Eigen::MatrixXd left, Eigen::MatrixXd right) : left_(std::move(left)), right_(std::move(right))
    {
        if (left_.cols() != right_.cols())
            throw dimension_error("LowRank: factor ranks differ (" + std::to_string(left_.cols()) + " vs " +
                                  std::to_string(right_.cols()) + ")");
    }

    Index rows() const { return left_.rows(); }
    Index cols() const { return right_.rows(); }
    Index rank() const { return left_.cols(); }

    const Eigen::MatrixXd& left() const { return left_; }
    const Eigen::MatrixXd& right() const { return right_; }
    Eigen::MatrixXd& left() { return left_; }
    Eigen::MatrixXd& right() { return right_; }

    Eigen::MatrixXd dense() const
    {
        if (rank() == 0)
            return Eigen::MatrixXd::Zero(rows(), cols());
        return left_ * right_.transpose();
    }

    /// ||left * right^T||_F via the k x k Gram matrices.
    double norm() const
    {
        if (rank() == 0)
            return 0.0;
        const Eigen::MatrixXd gl = left_.transpose() * left_;
        const Eigen::MatrixXd gr = right_.transpose() * right_;
        return std::sqrt(std::max(0.0, gl.cwiseProduct(gr).sum()));
    }

private:
    Eigen::MatrixXd left_;
    Eigen::MatrixXd right_;
};

/// Rank selection for truncations: a hard rank cap or a relative Frobenius tolerance.
struct TruncationPolicy {
    enum class Mode { FixedRank, EpsRank };

    Mode mode = Mode::FixedRank;
    Index max_rank = 16;
    double eps = 0.0;

    static TruncationPolicy fixed_rank(Index k)
    {
        if (k < 1)
            throw precondition_error("TruncationPolicy: fixed rank must be >= 1");
        return {Mode::FixedRank, k, 0.0};
    }
    static TruncationPolicy eps_rank(double eps)
    {
        if (!(eps > 0.0))
            throw precondition_error("TruncationPolicy: eps must be positive");
        return {Mode::EpsRank, std::numeric_limits<Index>::max(), eps};
    }

    bool is_fixed() const { return mode == Mode::FixedRank; }

    std::string describe() const
    {
        if (is_fixed())
            return "rank" + std::to_string(max_rank);
        char buf[32];
        std::snprintf(buf, sizeof buf, "eps%.0e", eps);
        return buf;
    }

    /// Number of leading singular values to keep; `s` sorted descending.
    Index select(const Eigen::VectorXd& s) const
    {
        const Index n = s.size();
        if (is_fixed()) {
            Index r = std::min(n, max_rank);
            while (r > 0 && s[r - 1] == 0.0)
                --r;
            return r;
        }
        const double total = s.squaredNorm();
        if (total == 0.0)
            return 0;
        const double bound = eps * eps * total;
        double tail = 0.0;
        Index r = n;
        // grow the tail from the back while it stays within the bound
        while (r > 0 && tail + s[r - 1] * s[r - 1] <= bound) {
            tail += s[r - 1] * s[r - 1];
            --r;
        }
        return r;
    }
};

/// Thin SVD U * diag(S) * V^T of a low-rank matrix.
struct LowRankSVD {
    Eigen::MatrixXd U;
    Eigen::VectorXd S;
    Eigen::MatrixXd V;
};

namespace detail {

// Thin QR with Q of min(m, k) columns and R of size min(m, k) x k.
inline void thin_qr(const Eigen::MatrixXd& a, Eigen::MatrixXd& q, Eigen::MatrixXd& r)
{
    const Index m = a.rows();
    const Index k = a.cols();
    const Index p = std::min(m, k);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    q = qr.householderQ() * Eigen::MatrixXd::Identity(m, p);
    r = qr.matrixQR().topRows(p).triangularView<Eigen::Upper>();
}

inline void small_svd(const Eigen::MatrixXd& core, Eigen::MatrixXd& u, Eigen::VectorXd& s, Eigen::MatrixXd& v)
{
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(core, Eigen::ComputeThinU | Eigen::ComputeThinV);
    u = svd.matrixU();
    s = svd.singularValues();
    v = svd.matrixV();
}

} // namespace detail

/// QR of both factors, SVD of the small core R_L R_R^T, recombination.
inline LowRankSVD lowrank_svd(const LowRank& m)
{
    LowRankSVD out;
    if (m.rank() == 0) {
        out.U.resize(m.rows(), 0);
        out.V.resize(m.cols(), 0);
        out.S.resize(0);
        return out;
    }
    Eigen::MatrixXd ql, rl, qr, rr;
    detail::thin_qr(m.left(), ql, rl);
    detail::thin_qr(m.right(), qr, rr);
    Eigen::MatrixXd cu, cv;
    detail::small_svd(rl * rr.transpose(), cu, out.S, cv);
    out.U = ql * cu;
    out.V = qr * cv;
    return out;
}

/// Keeps the leading singular triples selected by the policy, singular values
/// absorbed into the left factor.
inline LowRank truncate_svd(const LowRankSVD& svd, const TruncationPolicy& policy)
{
    const Index r = policy.select(svd.S);
    return LowRank(svd.U.leftCols(r) * svd.S.head(r).asDiagonal(), svd.V.leftCols(r));
}

inline LowRank truncate(const LowRank& m, const TruncationPolicy& policy)
{
    if (m.rank() == 0)
        return m;
    return truncate_svd(lowrank_svd(m), policy);
}

/// Exact sum of two low-rank matrices by factor concatenation.
inline LowRank concatenate(const LowRank& a, const LowRank& b)
{
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw dimension_error("LowRank sum: shapes " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                              " and " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    Eigen::MatrixXd left(a.rows(), a.rank() + b.rank());
    Eigen::MatrixXd right(a.cols(), a.rank() + b.rank());
    left.leftCols(a.rank()) = a.left();
    left.rightCols(b.rank()) = b.left();
    right.leftCols(a.rank()) = a.right();
    right.rightCols(b.rank()) = b.right();
    return LowRank(std::move(left), std::move(right));
}

/// Pairwise truncated summation: M_2 = T(A_1 + A_2), M_i = T(M_{i-1} + A_i).
inline LowRank fast_truncate_sum(std::span<const LowRank> terms, const TruncationPolicy& policy)
{
    if (terms.empty())
        throw precondition_error("fast_truncate_sum: no terms");
    if (terms.size() == 1)
        return truncate(terms.front(), policy);
    LowRank acc = truncate(concatenate(terms[0], terms[1]), policy);
    for (std::size_t i = 2; i < terms.size(); ++i)
        acc = truncate(concatenate(acc, terms[i]), policy);
    return acc;
}

} // namespace hmx

#endif // HMX_LOWRANK_HPP
