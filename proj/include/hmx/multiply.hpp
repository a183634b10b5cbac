#ifndef HMX_MULTIPLY_HPP
#define HMX_MULTIPLY_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <mutex>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "compressors.hpp"
#include "errors.hpp"
#include "hmatrix.hpp"
#include "linear_map.hpp"
#include "lowrank.hpp"
#include "parallel.hpp"
#include "sumexpr.hpp"

namespace hmx {

struct MultiplyConfig {
    enum class Mode { New, Traditional };
    // how the traditional mode turns an H-block product into low rank
    enum class Converter { HierApprox, ACA, BiLanczos, Randomized, DenseSVD };

    Mode mode = Mode::New;
    CompressorOptions compressor;
    TruncationPolicy policy = TruncationPolicy::fixed_rank(16);
    Converter converter = Converter::HierApprox;
    unsigned threads = 1;
};

inline std::string_view to_string(MultiplyConfig::Mode mode)
{
    return mode == MultiplyConfig::Mode::New ? "new" : "traditional";
}

inline std::string_view to_string(MultiplyConfig::Converter c)
{
    switch (c) {
    case MultiplyConfig::Converter::HierApprox: return "hierapprox";
    case MultiplyConfig::Converter::ACA: return "aca";
    case MultiplyConfig::Converter::BiLanczos: return "bilanczos";
    case MultiplyConfig::Converter::Randomized: return "randomized";
    case MultiplyConfig::Converter::DenseSVD: return "svd";
    }
    return "unknown";
}

/// Aggregated diagnostics of one multiplication; safe to update concurrently.
class MultiplyReport {
public:
    void note_degraded(int block)
    {
        std::lock_guard lock(mutex_);
        degraded_.push_back(block);
    }
    void note_rank(Index rank)
    {
        Index cur = max_rank_.load(std::memory_order_relaxed);
        while (rank > cur && !max_rank_.compare_exchange_weak(cur, rank))
            ;
    }
    void add_matvecs(std::uint64_t n) { matvecs_.fetch_add(n, std::memory_order_relaxed); }

    std::vector<int> degraded_blocks() const
    {
        std::lock_guard lock(mutex_);
        std::vector<int> out = degraded_;
        std::sort(out.begin(), out.end());
        return out;
    }
    std::size_t degraded_count() const
    {
        std::lock_guard lock(mutex_);
        return degraded_.size();
    }
    Index max_far_rank() const { return max_rank_.load(); }
    std::uint64_t matvecs() const { return matvecs_.load(); }
    OpCounter& ops() { return ops_; }
    const OpCounter& ops() const { return ops_; }

private:
    mutable std::mutex mutex_;
    std::vector<int> degraded_;
    std::atomic<Index> max_rank_{0};
    std::atomic<std::uint64_t> matvecs_{0};
    OpCounter ops_;
};

namespace detail {

inline std::uint64_t block_seed(std::uint64_t seed, int block)
{
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(block) + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Embeds x at offset (r0, c0) of an m x n zero block.
inline LowRank pad(const LowRank& x, Index m, Index n, Index r0, Index c0)
{
    Eigen::MatrixXd left = Eigen::MatrixXd::Zero(m, x.rank());
    Eigen::MatrixXd right = Eigen::MatrixXd::Zero(n, x.rank());
    left.middleRows(r0, x.rows()) = x.left();
    right.middleRows(c0, x.cols()) = x.right();
    return LowRank(std::move(left), std::move(right));
}

inline LowRank sum_or_zero(const std::vector<LowRank>& terms, Index m, Index n, const TruncationPolicy& policy)
{
    if (terms.empty())
        return LowRank(m, n);
    return fast_truncate_sum(terms, policy);
}

// Smallest terms first: each pairwise truncation then discards a tail that
// is small relative to the terms still to come.
inline std::vector<LowRank> by_norm(std::vector<LowRank> terms)
{
    std::vector<std::pair<double, std::size_t>> order(terms.size());
    for (std::size_t i = 0; i < terms.size(); ++i)
        order[i] = {terms[i].norm(), i};
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<LowRank> sorted;
    sorted.reserve(terms.size());
    for (const auto& o : order)
        sorted.push_back(std::move(terms[o.second]));
    return sorted;
}

inline LowRank dense_truncate(const Eigen::MatrixXd& d, const TruncationPolicy& policy)
{
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(d, Eigen::ComputeThinU | Eigen::ComputeThinV);
    return truncate_svd({svd.matrixU(), svd.singularValues(), svd.matrixV()}, policy);
}

inline CompressorKind compressor_for(MultiplyConfig::Converter c)
{
    switch (c) {
    case MultiplyConfig::Converter::ACA: return CompressorKind::ACA;
    case MultiplyConfig::Converter::BiLanczos: return CompressorKind::BiLanczos;
    case MultiplyConfig::Converter::Randomized: return CompressorKind::Randomized;
    default: return CompressorKind::DenseSVD;
    }
}

} // namespace detail

/// Bottom-up conversion of H|_b to one low-rank matrix: leaves are truncated
/// directly, inner blocks agglomerate their 2x2 children (row-child-major) by
/// zero padding and fast truncation.
inline LowRank hierarchical_approximation(const HMatrix& h, int b, const TruncationPolicy& policy)
{
    const BlockClusterTree& t = h.tree();
    const Block& blk = t[b];
    if (blk.kind != BlockKind::Inner) {
        if (const LowRank* lr = h.lowrank(b))
            return truncate(*lr, policy);
        return detail::dense_truncate(*h.dense(b), policy);
    }
    const Cluster& r = t.rows(b);
    const Cluster& c = t.cols(b);
    std::vector<LowRank> parts;
    for (int k = 0; k < blk.child_count; ++k) {
        const int child = blk.first_child + k;
        LowRank part = hierarchical_approximation(h, child, policy);
        if (part.rank() > 0)
            parts.push_back(detail::pad(part, r.size(), c.size(), t.rows(child).begin - r.begin,
                                        t.cols(child).begin - c.begin));
    }
    return detail::sum_or_zero(parts, r.size(), c.size(), policy);
}

/// Low-rank approximation of the product H|_hb K|_kb computed the traditional
/// way: the product is formed blockwise on the finer structure, every partial
/// result truncated, then agglomerated upwards.
inline LowRank hierarchical_product(const HMatrix& h, int hb, const HMatrix& k, int kb,
                                    const TruncationPolicy& policy, OpCounter* ops = nullptr)
{
    const BlockClusterTree& t = h.tree();
    if (detail::is_far(h, hb) || detail::is_far(k, kb))
        return truncate(far_product(h, hb, k, kb, ops), policy);
    if (t[hb].kind != BlockKind::Inner || t[kb].kind != BlockKind::Inner)
        return truncate(exact_product(h, hb, k, kb), policy);

    const ClusterTree& ct = t.clusters();
    const Cluster& r = t.rows(hb);
    const Cluster& c = t.cols(kb);
    std::vector<LowRank> parts;
    for (int tc : r.children) {
        for (int sc : c.children) {
            std::vector<LowRank> terms;
            for (int rho : t.clusters()[t[hb].sigma].children) {
                LowRank x = hierarchical_product(h, t.find(tc, rho), k, t.find(rho, sc), policy, ops);
                if (x.rank() > 0)
                    terms.push_back(std::move(x));
            }
            LowRank sub = detail::sum_or_zero(terms, ct[tc].size(), ct[sc].size(), policy);
            if (sub.rank() > 0)
                parts.push_back(detail::pad(sub, r.size(), c.size(), ct[tc].begin - r.begin, ct[sc].begin - c.begin));
        }
    }
    return detail::sum_or_zero(parts, r.size(), c.size(), policy);
}

namespace detail {

class Multiplier {
public:
    Multiplier(const HMatrix& h, const HMatrix& k, const MultiplyConfig& cfg, MultiplyReport& report,
               HMatrix& out)
        : h_(h), k_(k), cfg_(cfg), report_(report), out_(out)
    {
    }

    void run()
    {
        // expand breadth-first until there is enough independent work
        std::vector<SumExpression> frontier;
        frontier.push_back(sumexpr_root(h_, k_, &report_.ops()));
        const std::size_t want = cfg_.threads > 1 ? 8 * static_cast<std::size_t>(cfg_.threads) : 1;
        while (frontier.size() < want) {
            std::vector<SumExpression> next;
            bool expanded = false;
            for (SumExpression& s : frontier) {
                const Block& blk = tree()[s.block()];
                if (blk.kind != BlockKind::Inner) {
                    next.push_back(std::move(s));
                    continue;
                }
                expanded = true;
                for (int c = 0; c < blk.child_count; ++c)
                    next.push_back(restrict(s, blk.first_child + c));
            }
            frontier = std::move(next);
            if (!expanded)
                break;
        }
        parallel_for(frontier.size(), cfg_.threads, [&](std::size_t i) { process(frontier[i]); });
    }

private:
    const BlockClusterTree& tree() const { return h_.tree(); }

    void process(const SumExpression& s)
    {
        const Block& blk = tree()[s.block()];
        switch (blk.kind) {
        case BlockKind::Inner:
            for (int c = 0; c < blk.child_count; ++c)
                process(restrict(s, blk.first_child + c));
            return;
        case BlockKind::NearLeaf:
            out_.set(s.block(), evaluate_dense(s));
            report_.add_matvecs(static_cast<std::uint64_t>(s.cols()));
            return;
        case BlockKind::FarLeaf:
            if (cfg_.mode == MultiplyConfig::Mode::New)
                far_new(s);
            else
                far_traditional(s);
            return;
        }
    }

    void far_new(const SumExpression& s)
    {
        if (s.empty()) {
            out_.set(s.block(), LowRank(s.rows(), s.cols()));
            return;
        }
        CompressorOptions opts = cfg_.compressor;
        opts.seed = block_seed(opts.seed, s.block());
        const SumExpressionMap flat(s, materialize_below());
        const CountingMap<SumExpressionMap> counted(flat);
        Compressed c = compress(counted, cfg_.policy, opts);
        report_.add_matvecs(counted.total());
        store(s.block(), std::move(c));
    }

    // An iterative scheme applies the map about twice per step; below that
    // many columns one blocked evaluation is cheaper.
    Index materialize_below() const
    {
        if (cfg_.compressor.kind == CompressorKind::DenseSVD)
            return 0;
        const Index steps = cfg_.policy.is_fixed() ? cfg_.policy.max_rank * cfg_.compressor.oversample : 32;
        return 2 * steps;
    }

    void far_traditional(const SumExpression& s)
    {
        std::vector<LowRank> terms;
        for (const LowRankTerm& t : s.lowrank_terms())
            terms.push_back(t.materialize());
        bool degraded = false;
        for (const ProductTerm& p : s.product_terms()) {
            if (cfg_.converter == MultiplyConfig::Converter::HierApprox) {
                terms.push_back(hierarchical_product(h_, p.h_block, k_, p.k_block, cfg_.policy, &report_.ops()));
                continue;
            }
            SumExpression single(h_, k_, s.block(), &report_.ops());
            single.add(p);
            CompressorOptions opts = cfg_.compressor;
            opts.kind = compressor_for(cfg_.converter);
            opts.seed = block_seed(opts.seed, s.block());
            const CountingMap<SumExpression> counted(single);
            Compressed c = compress(counted, cfg_.policy, opts);
            report_.add_matvecs(counted.total());
            degraded = degraded || c.degraded;
            terms.push_back(std::move(c.lowrank));
        }
        store(s.block(), Compressed{sum_or_zero(by_norm(std::move(terms)), s.rows(), s.cols(), cfg_.policy), degraded});
    }

    void store(int block, Compressed c)
    {
        if (c.degraded) {
            out_.mark_degraded(block);
            report_.note_degraded(block);
            warn("hmult: compressor did not meet its criterion on block " + std::to_string(block));
        }
        report_.note_rank(c.lowrank.rank());
        out_.set(block, std::move(c.lowrank));
    }

    const HMatrix& h_;
    const HMatrix& k_;
    const MultiplyConfig& cfg_;
    MultiplyReport& report_;
    HMatrix& out_;
};

inline void check_factors(const HMatrix& h, const HMatrix& k)
{
    if (h.tree_ptr() != k.tree_ptr() && h.tree().structure_hash() != k.tree().structure_hash())
        throw dimension_error("hmult: factors are built on different block-cluster trees");
}

} // namespace detail

/// L = H K with every far leaf compressed directly from its sum-expression.
inline HMatrix hmult_new(const HMatrix& h, const HMatrix& k, const MultiplyConfig& cfg,
                         MultiplyReport* report = nullptr)
{
    if (cfg.mode != MultiplyConfig::Mode::New)
        throw precondition_error("hmult_new: configuration is not in new mode");
    detail::check_factors(h, k);
    MultiplyReport local;
    HMatrix out(h.tree_ptr());
    detail::Multiplier(h, k, cfg, report ? *report : local, out).run();
    return out;
}

/// L = H K with far leaves assembled from converted partial products and
/// combined by fast truncation.
inline HMatrix hmult_traditional(const HMatrix& h, const HMatrix& k, const MultiplyConfig& cfg,
                                 MultiplyReport* report = nullptr)
{
    if (cfg.mode != MultiplyConfig::Mode::Traditional)
        throw precondition_error("hmult_traditional: configuration is not in traditional mode");
    detail::check_factors(h, k);
    MultiplyReport local;
    HMatrix out(h.tree_ptr());
    detail::Multiplier(h, k, cfg, report ? *report : local, out).run();
    return out;
}

inline HMatrix hmult(const HMatrix& h, const HMatrix& k, const MultiplyConfig& cfg,
                     MultiplyReport* report = nullptr)
{
    return cfg.mode == MultiplyConfig::Mode::New ? hmult_new(h, k, cfg, report)
                                                 : hmult_traditional(h, k, cfg, report);
}

/// Frobenius-norm estimate of L - H K by block subspace iteration on the
/// residual operator. A lower bound for the true norm.
inline double estimate_product_error(const HMatrix& h, const HMatrix& k, const HMatrix& l, int iters = 10,
                                     Index block_size = 0, std::uint64_t seed = 0)
{
    const Index n = l.size();
    if (h.size() != n || k.size() != n)
        throw dimension_error("estimate_product_error: operand sizes differ");
    if (block_size <= 0)
        block_size = std::min<Index>(100, n);
    if (block_size > n)
        throw precondition_error("estimate_product_error: block size exceeds N");

    auto residual = [&](const Eigen::MatrixXd& x) {
        Eigen::MatrixXd kx = Eigen::MatrixXd::Zero(n, x.cols());
        multiply_block(k, 0, x, kx);
        Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, x.cols());
        multiply_block(l, 0, x, y);
        multiply_block(h, 0, -kx, y);
        return y;
    };
    auto residual_t = [&](const Eigen::MatrixXd& x) {
        Eigen::MatrixXd hx = Eigen::MatrixXd::Zero(n, x.cols());
        multiply_block(h, 0, x, hx, true);
        Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, x.cols());
        multiply_block(l, 0, x, y, true);
        multiply_block(k, 0, -hx, y, true);
        return y;
    };

    std::mt19937_64 rng(seed);
    Eigen::MatrixXd q = detail::orthonormalize(detail::gaussian(n, block_size, rng));
    for (int i = 0; i < iters; ++i)
        q = detail::orthonormalize(residual_t(residual(q)));
    return residual(q).norm();
}

} // namespace hmx

#endif // HMX_MULTIPLY_HPP
