#ifndef HMX_COMPRESSORS_HPP
#define HMX_COMPRESSORS_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "linear_map.hpp"
#include "lowrank.hpp"

namespace hmx {

/// Receives non-fatal diagnostics (clamped tolerances, degraded blocks).
inline std::function<void(std::string_view)>& warning_handler()
{
    static std::function<void(std::string_view)> handler = [](std::string_view msg) {
        std::cerr << "hmx warning: " << msg << '\n';
    };
    return handler;
}

inline void warn(std::string_view msg)
{
    if (warning_handler())
        warning_handler()(msg);
}

inline constexpr double min_tolerance = 1e-15;

inline double clamp_tolerance(double eps)
{
    if (eps <= std::numeric_limits<double>::epsilon()) {
        warn("tolerance " + std::to_string(eps) + " clamped to 1e-15");
        return min_tolerance;
    }
    return eps;
}

enum class CompressorKind { ACA, BiLanczos, Randomized, DenseSVD };

inline std::string_view to_string(CompressorKind kind)
{
    switch (kind) {
    case CompressorKind::ACA: return "aca";
    case CompressorKind::BiLanczos: return "bilanczos";
    case CompressorKind::Randomized: return "randomized";
    case CompressorKind::DenseSVD: return "svd";
    }
    return "unknown";
}

struct CompressorOptions {
    CompressorKind kind = CompressorKind::ACA;
    int subspace_iterations = 1; // Randomized, fixed rank only
    int oversample = 2;          // ACA and BiLanczos, fixed rank only; 1 stops at k
    std::uint64_t seed = 0;
};

struct Compressed {
    LowRank lowrank;
    bool degraded = false; // the scheme stopped without meeting its criterion
};

/// ||l|| * ||u|| <= eps * ||L_k U_k||_F
inline bool stop_criterion(double update_norm, double accumulated_norm, double eps)
{
    return update_norm <= eps * accumulated_norm;
}

inline bool stop_criterion(const Eigen::VectorXd& l, const Eigen::VectorXd& u, double accumulated_norm, double eps)
{
    return stop_criterion(l.norm() * u.norm(), accumulated_norm, eps);
}

namespace detail {

inline Eigen::MatrixXd gaussian(Index rows, Index cols, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd g(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i)
            g(i, j) = normal(rng);
    return g;
}

inline Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& a)
{
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    return qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), std::min(a.rows(), a.cols()));
}

// Two passes of classical Gram-Schmidt against the first `count` columns of q.
inline void reorthogonalize(Eigen::VectorXd& v, const Eigen::MatrixXd& q, Index count)
{
    if (count == 0)
        return;
    const auto basis = q.leftCols(count);
    for (int pass = 0; pass < 2; ++pass)
        v.noalias() -= basis * (basis.transpose() * v);
}

// Adaptive schemes stop once this many consecutive updates pass the
// criterion; a single small update is often an unlucky pivot or probe.
inline constexpr int stop_confirmations = 2;

// Update norms underestimate the residual, so adaptive schemes iterate to
// this fraction of the tolerance and recompress with the remainder.
inline constexpr double adaptive_tightening = 0.25;

inline TruncationPolicy recompression_policy(double eps)
{
    return TruncationPolicy::eps_rank(std::max((1.0 - adaptive_tightening) * eps, min_tolerance));
}

// Steps taken by an iterative scheme under FixedRank before recompression.
inline Index fixed_steps(const TruncationPolicy& policy, int oversample)
{
    if (oversample < 1)
        throw precondition_error("oversample factor must be >= 1");
    return policy.max_rank * oversample;
}

// Growable column store; avoids reallocating on every appended vector.
class Columns {
public:
    Columns(Index rows, Index reserve) : data_(rows, std::max<Index>(reserve, 1)) {}

    Index size() const { return count_; }
    void push(const Eigen::VectorXd& v)
    {
        if (count_ == data_.cols())
            data_.conservativeResize(Eigen::NoChange, 2 * data_.cols());
        data_.col(count_++) = v;
    }
    auto col(Index j) const { return data_.col(j); }
    auto view() const { return data_.leftCols(count_); }
    const Eigen::MatrixXd& storage() const { return data_; }
    Eigen::MatrixXd take() const { return data_.leftCols(count_); }

private:
    Eigen::MatrixXd data_;
    Index count_ = 0;
};

} // namespace detail

/// Adaptive cross approximation with partial pivoting. Column pivot: largest
/// entry of the residual row; next row pivot: largest entry of the new
/// column among unused rows. For FixedRank(k) the iteration runs to
/// oversample * k crosses and is then recompressed to rank k.
template <LinearMap M>
Compressed aca(const M& map, const TruncationPolicy& policy, int oversample = 1)
{
    const Index m = map.rows();
    const Index n = map.cols();
    if (m < 1 || n < 1)
        throw precondition_error("aca: empty map");
    const bool fixed = policy.is_fixed();
    const double eps = fixed ? min_tolerance : clamp_tolerance(policy.eps);
    const double inner_eps = fixed ? eps : detail::adaptive_tightening * eps;
    const Index cap = std::min({m, n, fixed ? detail::fixed_steps(policy, oversample) : std::min(m, n)});

    detail::Columns L(m, std::min<Index>(cap, 32));
    detail::Columns U(n, std::min<Index>(cap, 32));
    std::vector<char> used(static_cast<std::size_t>(m), 0);
    double acc2 = 0.0;
    bool converged = false;
    int small_updates = 0;
    Index pivot_row = 0;
    Index next_unused = 0;

    auto first_unused = [&]() -> Index {
        while (next_unused < m && used[static_cast<std::size_t>(next_unused)])
            ++next_unused;
        return next_unused;
    };

    while (L.size() < cap) {
        if (used[static_cast<std::size_t>(pivot_row)])
            pivot_row = first_unused();
        if (pivot_row >= m) {
            // every row has a vanishing residual: the approximant is exact
            converged = true;
            break;
        }
        used[static_cast<std::size_t>(pivot_row)] = 1;

        Eigen::VectorXd u = row_of(map, pivot_row);
        for (Index r = 0; r < L.size(); ++r)
            u -= L.col(r)[pivot_row] * U.col(r);
        Index pivot_col = 0;
        const double pivot = u.cwiseAbs().maxCoeff(&pivot_col);
        if (pivot == 0.0) {
            pivot_row = first_unused();
            continue;
        }
        u /= u[pivot_col];

        Eigen::VectorXd l = column_of(map, pivot_col);
        for (Index r = 0; r < L.size(); ++r)
            l -= U.col(r)[pivot_col] * L.col(r);

        const double update = l.norm() * u.norm();
        const double before = std::sqrt(acc2);
        double cross = 0.0;
        if (L.size() > 0) {
            const Eigen::VectorXd lt = L.view().transpose() * l;
            const Eigen::VectorXd ut = U.view().transpose() * u;
            cross = lt.dot(ut);
        }
        acc2 = std::max(0.0, acc2 + 2.0 * cross + update * update);
        L.push(l);
        U.push(u);

        small_updates = L.size() > 1 && stop_criterion(update, before, inner_eps) ? small_updates + 1 : 0;
        if (small_updates >= detail::stop_confirmations) {
            converged = true;
            break;
        }

        used[static_cast<std::size_t>(pivot_row)] = 1;
        Index best = -1;
        double best_value = -1.0;
        for (Index i = 0; i < m; ++i) {
            if (!used[static_cast<std::size_t>(i)] && std::abs(l[i]) > best_value) {
                best_value = std::abs(l[i]);
                best = i;
            }
        }
        pivot_row = best < 0 ? m : best;
        if (pivot_row >= m && first_unused() >= m) {
            converged = true;
            break;
        }
    }

    // rank min(m, n) with nonzero pivots reproduces the block exactly
    Compressed out{LowRank(L.take(), U.take()), false};
    out.degraded = !fixed && !converged && out.lowrank.rank() < std::min(m, n);
    if (fixed && out.lowrank.rank() > policy.max_rank)
        out.lowrank = truncate(out.lowrank, policy);
    else if (!fixed && out.lowrank.rank() > 1)
        out.lowrank = truncate(out.lowrank, detail::recompression_policy(eps));
    return out;
}

struct BiLanczosOptions {
    std::uint64_t seed = 0;
    std::optional<Eigen::VectorXd> start; // overrides the random start vector
    int max_restarts = 3;
    int oversample = 1; // FixedRank: steps = oversample * k, then recompression
};

/// Golub-Kahan-Lanczos bidiagonalization with full reorthogonalization of
/// both Lanczos bases. The result is Q (A^T Q)^T for the left basis Q.
template <LinearMap M>
Compressed bilanczos(const M& map, const TruncationPolicy& policy, const BiLanczosOptions& opts = {})
{
    const Index m = map.rows();
    const Index n = map.cols();
    if (m < 1 || n < 1)
        throw precondition_error("bilanczos: empty map");
    const bool fixed = policy.is_fixed();
    const double eps = fixed ? min_tolerance : clamp_tolerance(policy.eps);
    const double inner_eps = detail::adaptive_tightening * eps;
    const Index cap = std::min({m, n, fixed ? detail::fixed_steps(policy, opts.oversample) : std::min(m, n)});
    constexpr double breakdown_tol = 1e-14;

    std::mt19937_64 rng(opts.seed);
    detail::Columns Q(m, std::min<Index>(cap, 32));
    detail::Columns W(n, std::min<Index>(cap, 32) + 1);
    detail::Columns ATQ(n, std::min<Index>(cap, 32));

    auto fresh_start = [&]() -> std::optional<Eigen::VectorXd> {
        if (W.size() >= n)
            return std::nullopt;
        for (int attempt = 0; attempt < 4; ++attempt) {
            Eigen::VectorXd w = detail::gaussian(n, 1, rng);
            detail::reorthogonalize(w, W.storage(), W.size());
            const double norm = w.norm();
            if (norm > 1e-8)
                return Eigen::VectorXd(w / norm);
        }
        return std::nullopt;
    };

    Eigen::VectorXd w;
    if (opts.start) {
        if (opts.start->size() != n)
            throw dimension_error("bilanczos: start vector length");
        w = *opts.start / opts.start->norm();
    } else {
        w = *fresh_start();
    }

    Eigen::VectorXd q_prev = Eigen::VectorXd::Zero(m);
    double beta_prev = 0.0;
    double acc2 = 0.0;
    double scale = 0.0;
    int restarts = 0;
    bool converged = false;

    // For unit random w, sqrt(n) * ||(I - QQ^T) A w|| estimates the
    // Frobenius norm of the part of A outside span(Q).
    auto missed_energy = [&](const Eigen::VectorXd& probe, double threshold) {
        Eigen::VectorXd r = map.apply(probe);
        detail::reorthogonalize(r, Q.storage(), Q.size());
        return std::sqrt(static_cast<double>(n)) * r.norm() > threshold;
    };

    for (;;) {
        W.push(w);
        Eigen::VectorXd q = map.apply(w);
        scale = std::max(scale, q.norm());
        q -= beta_prev * q_prev;
        detail::reorthogonalize(q, Q.storage(), Q.size());
        const double alpha = q.norm();
        if (alpha <= breakdown_tol * std::max(scale, std::sqrt(acc2))) {
            // A w lies in span(Q): restart from a new direction orthogonal to W
            if (restarts++ >= opts.max_restarts) {
                converged = true;
                break;
            }
            const auto next = fresh_start();
            if (!next) {
                converged = true;
                break;
            }
            w = *next;
            beta_prev = 0.0;
            q_prev.setZero();
            continue;
        }
        q /= alpha;
        Q.push(q);
        Eigen::VectorXd atq = map.apply_transpose(q);
        ATQ.push(atq);

        // adding q to the basis adds ||A^T q||^2 to ||Q Q^T A||_F^2
        const double update = atq.norm();
        const double before = std::sqrt(acc2);
        acc2 += update * update;
        if (!fixed && Q.size() > 1 && stop_criterion(update, before, inner_eps)) {
            // a single Krylov sequence misses repeated singular values, so
            // confirm with a random direction orthogonal to W first
            const auto probe = restarts < opts.max_restarts && Q.size() < cap ? fresh_start() : std::nullopt;
            if (!probe || !missed_energy(*probe, inner_eps * std::sqrt(acc2))) {
                converged = true;
                break;
            }
            ++restarts;
            w = *probe;
            beta_prev = 0.0;
            q_prev.setZero();
            continue;
        }
        if (Q.size() >= cap)
            break;

        Eigen::VectorXd z = atq - alpha * w;
        detail::reorthogonalize(z, W.storage(), W.size());
        const double beta = z.norm();
        if (beta > breakdown_tol * std::max(scale, std::sqrt(acc2))) {
            w = z / beta;
            q_prev = q;
            beta_prev = beta;
            continue;
        }
        // invariant subspace; repeated singular values can hide behind it
        if (restarts++ >= opts.max_restarts) {
            converged = true;
            break;
        }
        const auto next = fresh_start();
        if (!next) {
            converged = true;
            break;
        }
        w = *next;
        beta_prev = 0.0;
        q_prev.setZero();
    }

    Compressed out;
    if (Q.size() == 0) {
        out.lowrank = LowRank(m, n);
        return out;
    }
    // Q Q^T A = Q B W^T including the trailing beta coupling; reaching full
    // rank leaves nothing outside span(Q)
    const LowRankSVD svd = lowrank_svd(LowRank(Q.take(), ATQ.take()));
    const Index r = fixed ? std::min<Index>(policy.max_rank, svd.S.size())
                          : detail::recompression_policy(eps).select(svd.S);
    out.lowrank = LowRank(svd.U.leftCols(r) * svd.S.head(r).asDiagonal(), svd.V.leftCols(r));
    out.degraded = !converged && Q.size() < std::min(m, n) && !fixed;
    return out;
}

/// Adaptive randomized range approximation: one Gaussian probe per step,
/// projected against the current orthonormal basis.
template <LinearMap M>
Compressed randomized_adaptive(const M& map, double eps, std::uint64_t seed)
{
    const Index m = map.rows();
    const Index n = map.cols();
    if (m < 1 || n < 1)
        throw precondition_error("randomized_adaptive: empty map");
    eps = clamp_tolerance(eps);
    const Index cap = std::min(m, n);
    constexpr double negligible = 1e-14;

    std::mt19937_64 rng(seed);
    detail::Columns L(m, std::min<Index>(cap, 32));
    detail::Columns U(n, std::min<Index>(cap, 32));
    double acc2 = 0.0;
    int small_updates = 0;

    while (L.size() < cap) {
        const Eigen::VectorXd omega = detail::gaussian(n, 1, rng);
        const Eigen::VectorXd y = map.apply(omega);
        Eigen::VectorXd l = y;
        detail::reorthogonalize(l, L.storage(), L.size());
        const double lnorm = l.norm();
        if (lnorm <= negligible * std::max(y.norm(), std::sqrt(acc2)))
            break;
        l /= lnorm;
        const Eigen::VectorXd u = map.apply_transpose(l);
        L.push(l);
        U.push(u);
        // L has orthonormal columns, so ||L U^T||_F = ||U||_F
        const double update = u.norm();
        const double before = std::sqrt(acc2);
        acc2 += update * update;
        small_updates =
            L.size() > 1 && stop_criterion(update, before, detail::adaptive_tightening * eps) ? small_updates + 1 : 0;
        if (small_updates >= detail::stop_confirmations)
            break;
    }
    // a full basis captures the whole range, so stopping at the cap is exact
    LowRank out(L.take(), U.take());
    if (out.rank() > 1)
        out = truncate(out, detail::recompression_policy(eps));
    return {std::move(out), false};
}

/// Blocked randomized rank-k approximation with q subspace iterations.
template <LinearMap M>
Compressed randomized_fixed(const M& map, Index k, int q, std::uint64_t seed)
{
    const Index m = map.rows();
    const Index n = map.cols();
    if (k < 1 || k > std::min(m, n))
        throw precondition_error("randomized_fixed: rank " + std::to_string(k) + " outside [1, " +
                                 std::to_string(std::min(m, n)) + "]");
    if (q < 0)
        throw precondition_error("randomized_fixed: negative subspace iteration count");
    std::mt19937_64 rng(seed);
    Eigen::MatrixXd L = detail::orthonormalize(map.apply(detail::gaussian(n, k, rng)));
    for (int it = 0; it < q; ++it) {
        const Eigen::MatrixXd U = detail::orthonormalize(map.apply_transpose(L));
        L = detail::orthonormalize(map.apply(U));
    }
    Eigen::MatrixXd U = map.apply_transpose(L);
    return {LowRank(std::move(L), std::move(U)), false};
}

/// Materializes the map against the identity and truncates its SVD: the
/// best approximation for the policy.
template <LinearMap M>
Compressed dense_svd_compress(const M& map, const TruncationPolicy& policy)
{
    const Index m = map.rows();
    const Index n = map.cols();
    if (n > max_dense_size || m > max_dense_size)
        throw capacity_error("dense_svd_compress: block exceeds guard");
    const Eigen::MatrixXd a = map.apply(Eigen::MatrixXd::Identity(n, n));
    Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    TruncationPolicy p = policy;
    if (!p.is_fixed())
        p.eps = clamp_tolerance(p.eps);
    const Index r = p.select(svd.singularValues());
    return {LowRank(svd.matrixU().leftCols(r) * svd.singularValues().head(r).asDiagonal(), svd.matrixV().leftCols(r)),
            false};
}

/// Dispatches to the configured scheme. Randomized uses the adaptive variant
/// for EpsRank and the blocked variant for FixedRank.
template <LinearMap M>
Compressed compress(const M& map, const TruncationPolicy& policy, const CompressorOptions& opts)
{
    switch (opts.kind) {
    case CompressorKind::ACA: return aca(map, policy, opts.oversample);
    case CompressorKind::BiLanczos: return bilanczos(map, policy, BiLanczosOptions{opts.seed, std::nullopt, 3, opts.oversample});
    case CompressorKind::Randomized:
        if (policy.is_fixed()) {
            const Index k = std::min({policy.max_rank, map.rows(), map.cols()});
            return randomized_fixed(map, k, opts.subspace_iterations, opts.seed);
        }
        return randomized_adaptive(map, policy.eps, opts.seed);
    case CompressorKind::DenseSVD: return dense_svd_compress(map, policy);
    }
    throw precondition_error("compress: unknown compressor");
}

} // namespace hmx

#endif // HMX_COMPRESSORS_HPP
