#include <gtest/gtest.h>

#include "test_support.hpp"

#include <string>

using namespace hmx;
using namespace hmx::test;

namespace {

// Shapes that are hard to get right: tall, wide, square.
const std::pair<Index, Index> shapes[] = {{60, 40}, {40, 60}, {50, 50}};

double error_of(const Compressed& c, const Eigen::MatrixXd& a) { return (c.lowrank.dense() - a).norm(); }

Compressed run(CompressorKind kind, const Eigen::MatrixXd& a, const TruncationPolicy& p, int oversample = 2,
               std::uint64_t seed = 1)
{
    const DenseMap map(a);
    CompressorOptions o;
    o.kind = kind;
    o.oversample = oversample;
    o.seed = seed;
    return compress(map, p, o);
}

const CompressorKind adaptive_kinds[] = {CompressorKind::ACA, CompressorKind::BiLanczos, CompressorKind::Randomized};

} // namespace

TEST(StopCriterion, Examples)
{
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(4);
    const Eigen::VectorXd one = Eigen::VectorXd::Unit(4, 0);
    EXPECT_TRUE(stop_criterion(zero, one, 1.0, 1e-12));
    EXPECT_TRUE(stop_criterion(1e-13, 1.0, 1e-12));
    EXPECT_FALSE(stop_criterion(1e-11, 1.0, 1e-12));
    EXPECT_TRUE(stop_criterion(one * 1e-7, one * 1e-6, 1.0, 1e-12));
}

TEST(ACA, RankOneIsExact)
{
    const Eigen::MatrixXd a = random_matrix(30, 1, 1) * random_matrix(20, 1, 2).transpose();
    const Compressed c = run(CompressorKind::ACA, a, TruncationPolicy::eps_rank(1e-12));
    EXPECT_EQ(c.lowrank.rank(), 1);
    EXPECT_LE(error_of(c, a), 1e-13 * a.norm());
    EXPECT_FALSE(c.degraded);
}

TEST(Compressors, ZeroMapGivesRankZero)
{
    const Eigen::MatrixXd a = Eigen::MatrixXd::Zero(12, 9);
    for (CompressorKind kind : adaptive_kinds) {
        const Compressed c = run(kind, a, TruncationPolicy::eps_rank(1e-8));
        EXPECT_EQ(c.lowrank.rank(), 0) << to_string(kind);
        EXPECT_FALSE(c.degraded) << to_string(kind);
    }
}

TEST(ACA, RankNearDenseEpsRank)
{
    Eigen::VectorXd s = geometric(32, 0.5);
    const Eigen::MatrixXd a = with_singular_values(32, 32, s, 5);
    const double eps = 1e-8;
    const Index want = TruncationPolicy::eps_rank(eps).select(s);
    const Compressed c = run(CompressorKind::ACA, a, TruncationPolicy::eps_rank(eps));
    EXPECT_LE(std::abs(c.lowrank.rank() - want), 2) << "aca rank " << c.lowrank.rank() << " svd rank " << want;
}

TEST(Compressors, ExactRecoveryOfRankRInRSteps)
{
    for (auto [m, n] : shapes) {
        const Index r = 5;
        const Eigen::MatrixXd a = random_matrix(m, r, m) * random_matrix(n, r, n + 1).transpose();
        for (CompressorKind kind : {CompressorKind::ACA, CompressorKind::BiLanczos}) {
            const DenseMap dense(a);
            const CountingMap<DenseMap> counted(dense);
            CompressorOptions o;
            o.kind = kind;
            o.oversample = 1;
            const Compressed c = compress(counted, TruncationPolicy::fixed_rank(r), o);
            EXPECT_LE(c.lowrank.rank(), r);
            EXPECT_LE(error_of(c, a), 1e-12 * a.norm()) << to_string(kind) << " " << m << "x" << n;
            // r steps of one forward and one adjoint product each
            EXPECT_LE(counted.total(), static_cast<std::uint64_t>(2 * r + 1)) << to_string(kind);
        }
    }
}

TEST(Compressors, AdaptiveMatvecBudget)
{
    const Eigen::VectorXd s = geometric(40, 0.5);
    const Eigen::MatrixXd a = with_singular_values(60, 50, s, 17);
    for (CompressorKind kind : {CompressorKind::ACA, CompressorKind::BiLanczos}) {
        const DenseMap dense(a);
        const CountingMap<DenseMap> counted(dense);
        CompressorOptions o;
        o.kind = kind;
        const Compressed c = compress(counted, TruncationPolicy::eps_rank(1e-6), o);
        // a constant number of steps past the returned rank (tightening,
        // confirmation, probe), two products each
        constexpr std::uint64_t overhead = 2 * 10;
        EXPECT_LE(counted.total(), static_cast<std::uint64_t>(2 * c.lowrank.rank()) + overhead) << to_string(kind);
    }
}

TEST(Compressors, StopCriterionDeliversTwoEpsOnFastDecay)
{
    for (double ratio : {0.3, 0.5, 0.7}) {
        for (auto [m, n] : shapes) {
            const Eigen::MatrixXd a = with_singular_values(m, n, geometric(40, ratio), 31 + m);
            for (double eps : {1e-4, 1e-8}) {
                for (CompressorKind kind : adaptive_kinds) {
                    const Compressed c = run(kind, a, TruncationPolicy::eps_rank(eps));
                    EXPECT_LE(error_of(c, a), 2.0 * eps * a.norm())
                        << to_string(kind) << " ratio " << ratio << " eps " << eps << " " << m << "x" << n;
                }
            }
        }
    }
}

TEST(Compressors, TenEpsOnSlowDecay)
{
    for (double ratio : {0.8, 0.9}) {
        const Eigen::MatrixXd a = with_singular_values(80, 70, geometric(70, ratio), 77);
        for (CompressorKind kind : adaptive_kinds) {
            const Compressed c = run(kind, a, TruncationPolicy::eps_rank(1e-3));
            EXPECT_LE(error_of(c, a), 10.0 * 1e-3 * a.norm()) << to_string(kind) << " ratio " << ratio;
        }
    }
}

TEST(Compressors, FixedRankIsNearOptimal)
{
    const Eigen::MatrixXd a = with_singular_values(60, 50, geometric(40, 0.7), 3);
    for (CompressorKind kind : {CompressorKind::ACA, CompressorKind::BiLanczos, CompressorKind::Randomized,
                                CompressorKind::DenseSVD}) {
        const Compressed c = run(kind, a, TruncationPolicy::fixed_rank(8));
        EXPECT_LE(c.lowrank.rank(), 8);
        EXPECT_LE(error_of(c, a), 2.0 * optimal_error(a, 8)) << to_string(kind);
    }
}

TEST(BiLanczos, SymmetricRankTwoInTwoSteps)
{
    const Eigen::MatrixXd u = random_orthonormal(20, 2, 4);
    const Eigen::MatrixXd a = u * Eigen::Vector2d(3.0, 1.0).asDiagonal() * u.transpose();
    const DenseMap map(a);
    BiLanczosOptions o;
    o.oversample = 1;
    const Compressed c = bilanczos(map, TruncationPolicy::fixed_rank(2), o);
    EXPECT_LE(error_of(c, a), 1e-12 * a.norm());
}

TEST(BiLanczos, StartInNullSpaceRestarts)
{
    const Eigen::MatrixXd v = random_orthonormal(15, 4, 8);
    const Eigen::MatrixXd a = random_matrix(20, 3, 9) * v.leftCols(3).transpose();
    BiLanczosOptions o;
    o.start = Eigen::VectorXd(v.col(3)); // A v_3 = 0: alpha_1 vanishes
    const DenseMap map(a);
    const Compressed c = bilanczos(map, TruncationPolicy::eps_rank(1e-12), o);
    EXPECT_LE(error_of(c, a), 1e-11 * a.norm());
    EXPECT_FALSE(c.degraded);
}

TEST(BiLanczos, RepeatedSingularValues)
{
    Eigen::VectorXd s(6);
    s << 1, 1, 1, 1e-3, 1e-3, 1e-6;
    const Eigen::MatrixXd a = with_singular_values(30, 30, s, 12);
    const DenseMap map(a);
    const Compressed c = bilanczos(map, TruncationPolicy::eps_rank(1e-10), {});
    EXPECT_LE(error_of(c, a), 1e-9 * a.norm());
}

TEST(BiLanczos, FactorsOrthogonal)
{
    const Eigen::MatrixXd a = random_matrix(64, 64, 99);
    const DenseMap map(a);
    BiLanczosOptions o;
    o.oversample = 1;
    const Compressed c = bilanczos(map, TruncationPolicy::fixed_rank(20), o);
    ASSERT_EQ(c.lowrank.rank(), 20);
    const Eigen::MatrixXd q = c.lowrank.left().colwise().normalized();
    const Eigen::MatrixXd w = c.lowrank.right();
    EXPECT_LE((q.transpose() * q - Eigen::MatrixXd::Identity(20, 20)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((w.transpose() * w - Eigen::MatrixXd::Identity(20, 20)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(RandomizedAdaptive, RankThreeMap)
{
    const Eigen::MatrixXd a = random_matrix(40, 3, 1) * random_matrix(30, 3, 2).transpose();
    const DenseMap map(a);
    const Compressed c = randomized_adaptive(map, 1e-10, 5);
    EXPECT_GE(c.lowrank.rank(), 3);
    EXPECT_LE(c.lowrank.rank(), 5);
    EXPECT_LE(error_of(c, a), 1e-9 * a.norm());
}

TEST(Randomized, DeterministicUnderSeed)
{
    const Eigen::MatrixXd a = with_singular_values(40, 35, geometric(30, 0.6), 6);
    const DenseMap map(a);
    const Compressed x = randomized_adaptive(map, 1e-8, 123);
    const Compressed y = randomized_adaptive(map, 1e-8, 123);
    EXPECT_EQ(x.lowrank.left(), y.lowrank.left());
    EXPECT_EQ(x.lowrank.right(), y.lowrank.right());
    const Compressed f = randomized_fixed(map, 6, 1, 9);
    const Compressed g = randomized_fixed(map, 6, 1, 9);
    EXPECT_EQ(f.lowrank.left(), g.lowrank.left());
    EXPECT_EQ(f.lowrank.right(), g.lowrank.right());
    const Compressed other = randomized_fixed(map, 6, 1, 10);
    EXPECT_NE(f.lowrank.left(), other.lowrank.left());
}

TEST(RandomizedFixed, FullRankCapturesEverything)
{
    const Eigen::MatrixXd a = random_matrix(25, 18, 4);
    const DenseMap map(a);
    for (int q : {0, 1}) {
        const Compressed c = randomized_fixed(map, 18, q, 2);
        EXPECT_LE(error_of(c, a), 1e-12 * a.norm());
    }
}

TEST(RandomizedFixed, ExactRecoveryAndOrthonormalBasis)
{
    const Eigen::MatrixXd a = random_matrix(30, 7, 1) * random_matrix(26, 7, 2).transpose();
    const DenseMap map(a);
    const Compressed c = randomized_fixed(map, 7, 1, 3);
    EXPECT_LE(error_of(c, a), 1e-11 * a.norm());
    const Eigen::MatrixXd& l = c.lowrank.left();
    EXPECT_LE((l.transpose() * l - Eigen::MatrixXd::Identity(7, 7)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RandomizedFixed, Preconditions)
{
    const Eigen::MatrixXd a = random_matrix(6, 4, 1);
    const DenseMap map(a);
    EXPECT_THROW(randomized_fixed(map, 5, 1, 0), precondition_error);
    EXPECT_THROW(randomized_fixed(map, 0, 1, 0), precondition_error);
    EXPECT_THROW(randomized_fixed(map, 2, -1, 0), precondition_error);
}

TEST(DenseSVD, ErrorIsTailNorm)
{
    const Eigen::VectorXd s = geometric(20, 0.8);
    const Eigen::MatrixXd a = with_singular_values(30, 24, s, 4);
    for (Index k : {1, 5, 12}) {
        const Compressed c = run(CompressorKind::DenseSVD, a, TruncationPolicy::fixed_rank(k));
        EXPECT_NEAR(error_of(c, a), s.tail(20 - k).norm(), 1e-13);
    }
    const Eigen::MatrixXd d = Eigen::Vector3d(3, 2, 1).asDiagonal();
    EXPECT_NEAR(error_of(run(CompressorKind::DenseSVD, d, TruncationPolicy::fixed_rank(2)), d), 1.0, 1e-14);
}

TEST(DenseSVD, CapacityGuard)
{
    struct Huge {
        Index rows() const { return 10; }
        Index cols() const { return max_dense_size + 1; }
        Eigen::MatrixXd apply(const Eigen::MatrixXd&) const { throw std::logic_error("must not be applied"); }
        Eigen::MatrixXd apply_transpose(const Eigen::MatrixXd&) const { throw std::logic_error("must not be applied"); }
    };
    EXPECT_THROW(dense_svd_compress(Huge{}, TruncationPolicy::fixed_rank(2)), capacity_error);
}

TEST(Compressors, AcaWithinTwiceSvdOnKernelBlocks)
{
    const PanelSet panels = build_sphere_mesh(3);
    auto ct = std::make_shared<const ClusterTree>(build_cluster_tree(panels, 16));
    const auto bct = build_block_cluster_tree(ct, 1.0);
    int checked = 0;
    for (int b : bct->leaves()) {
        if ((*bct)[b].kind != BlockKind::FarLeaf || bct->rows(b).size() < 24)
            continue;
        const KernelBlockMap map(KernelKind::Exponential, panels, *ct, bct->rows(b), bct->cols(b));
        const Eigen::MatrixXd a = map.dense();
        for (Index k : {4, 8}) {
            const double svd = error_of(dense_svd_compress(map, TruncationPolicy::fixed_rank(k)), a);
            const double aca_err = error_of(aca(map, TruncationPolicy::fixed_rank(k), 2), a);
            EXPECT_LE(aca_err, 2.0 * svd) << "block " << b << " k " << k;
        }
        ++checked;
    }
    EXPECT_GT(checked, 0);
}

TEST(Compressors, TinyToleranceClampedWithWarning)
{
    std::vector<std::string> seen;
    auto saved = warning_handler();
    warning_handler() = [&](std::string_view msg) { seen.emplace_back(msg); };
    const Eigen::MatrixXd a = random_matrix(8, 8, 1);
    const Compressed c = run(CompressorKind::ACA, a, TruncationPolicy::eps_rank(1e-20));
    warning_handler() = saved;
    EXPECT_FALSE(seen.empty());
    EXPECT_LE(error_of(c, a), 1e-13 * a.norm());
}

TEST(Compressors, OnlyUseForwardAndAdjointProducts)
{
    // DenseMap has no entry access: every row or column request must have
    // gone through apply / apply_transpose of the counting wrapper
    const Eigen::MatrixXd a = with_singular_values(30, 30, geometric(20, 0.5), 2);
    for (CompressorKind kind : adaptive_kinds) {
        const DenseMap dense(a);
        const CountingMap<DenseMap> counted(dense);
        CompressorOptions o;
        o.kind = kind;
        const Compressed c = compress(counted, TruncationPolicy::eps_rank(1e-8), o);
        EXPECT_GT(counted.total(), 0u);
        EXPECT_LE(error_of(c, a), 2e-8 * a.norm());
    }
}

TEST(Compressors, OversampleValidated)
{
    const Eigen::MatrixXd a = random_matrix(5, 5, 1);
    EXPECT_THROW(run(CompressorKind::ACA, a, TruncationPolicy::fixed_rank(2), 0), precondition_error);
}
