#include <gtest/gtest.h>

#include "test_support.hpp"

#include <cstring>
#include <sstream>

using namespace hmx;
using namespace hmx::test;

namespace {

const Problem& n96()
{
    static const Problem p = make_problem(2, 6, 1.0, KernelKind::Exponential, KernelKind::SingleLayer, 1e-10);
    return p;
}

const Problem& n384()
{
    static const Problem p = make_problem(3);
    return p;
}

} // namespace

TEST(Assembly, SingleDenseBlockWhenNminCoversEverything)
{
    const PanelSet panels = build_sphere_mesh(1);
    auto ct = std::make_shared<const ClusterTree>(build_cluster_tree(panels, 24));
    const HMatrix h = assemble_hmatrix(KernelKind::Exponential, panels, build_block_cluster_tree(ct),
                                       TruncationPolicy::eps_rank(1e-10));
    ASSERT_EQ(h.tree().block_count(), 1);
    ASSERT_NE(h.dense(0), nullptr);
    EXPECT_EQ(to_dense(h), dense_in_tree_order(KernelKind::Exponential, panels, *ct));
}

TEST(Assembly, EpsRankMatchesDenseOracle)
{
    const Problem& p = n96();
    const Eigen::MatrixXd oracle = dense_in_tree_order(KernelKind::Exponential, p.panels, p.clusters());
    EXPECT_LE((to_dense(*p.h) - oracle).norm(), 5e-10 * oracle.norm());
    EXPECT_TRUE(p.h->complete());
    EXPECT_TRUE(p.h->degraded_blocks().empty());
}

TEST(Assembly, NearFieldIsExact)
{
    const Problem& p = n96();
    const Eigen::MatrixXd oracle = dense_in_tree_order(KernelKind::SingleLayer, p.panels, p.clusters());
    for (int b : p.tree->leaves()) {
        if ((*p.tree)[b].kind != BlockKind::NearLeaf)
            continue;
        const Cluster& r = p.tree->rows(b);
        const Cluster& c = p.tree->cols(b);
        EXPECT_EQ(*p.k->dense(b), oracle.block(r.begin, c.begin, r.size(), c.size())) << "block " << b;
    }
}

TEST(Assembly, FixedRankCapsFarRanks)
{
    const Problem& p = n384();
    const PanelSet& panels = p.panels;
    const HMatrix h = assemble_hmatrix(KernelKind::SingleLayer, panels, p.tree, TruncationPolicy::fixed_rank(16));
    EXPECT_LE(max_far_rank(h), 16);
    for (int b : p.tree->leaves())
        if ((*p.tree)[b].kind == BlockKind::FarLeaf) {
            ASSERT_NE(h.lowrank(b), nullptr);
            EXPECT_LE(h.lowrank(b)->rank(), 16);
        }
}

TEST(Assembly, ThreadCountDoesNotChangeResult)
{
    const Problem& p = n96();
    const TruncationPolicy policy = TruncationPolicy::eps_rank(1e-8);
    const HMatrix a = assemble_hmatrix(KernelKind::SingleLayer, p.panels, p.tree, policy, 1);
    const HMatrix b = assemble_hmatrix(KernelKind::SingleLayer, p.panels, p.tree, policy, 3);
    EXPECT_EQ(to_dense(a), to_dense(b));
}

TEST(Assembly, PanelCountMismatch)
{
    EXPECT_THROW(assemble_hmatrix(KernelKind::Exponential, build_sphere_mesh(1), n96().tree,
                                  TruncationPolicy::fixed_rank(4)),
                 dimension_error);
}

TEST(MatVec, ZeroInputGivesZero)
{
    const HMatrix& h = *n96().h;
    EXPECT_EQ(hmat_vec(h, Eigen::VectorXd::Zero(h.size())), Eigen::VectorXd::Zero(h.size()));
}

TEST(MatVec, UnitVectorsExtractColumns)
{
    const HMatrix& h = *n96().h;
    const Eigen::MatrixXd d = to_dense(h);
    const double tol = 1e-12 * frobenius_norm(h);
    for (Index j = 0; j < h.size(); ++j) {
        const Eigen::VectorXd col = hmat_vec(h, Eigen::VectorXd::Unit(h.size(), j));
        EXPECT_LE((col - d.col(j)).cwiseAbs().maxCoeff(), tol) << "column " << j;
    }
}

TEST(MatVec, AccumulatesIntoOutput)
{
    const HMatrix& h = *n96().h;
    const Eigen::VectorXd x = random_matrix(h.size(), 1, 3);
    Eigen::VectorXd y = Eigen::VectorXd::Ones(h.size());
    hmat_vec(h, x, y);
    EXPECT_LE((y - Eigen::VectorXd::Ones(h.size()) - to_dense(h) * x).cwiseAbs().maxCoeff(),
              1e-12 * frobenius_norm(h) * x.cwiseAbs().maxCoeff());
}

TEST(MatVec, AgreesWithDenseOnRandomVectors)
{
    for (const Problem* p : {&n96(), &n384()}) {
        for (const HMatrix* h : {p->h.get(), p->k.get()}) {
            const Eigen::MatrixXd d = to_dense(*h);
            const double norm = frobenius_norm(*h);
            for (std::uint64_t seed = 0; seed < 10; ++seed) {
                const Eigen::VectorXd x = random_matrix(h->size(), 1, seed);
                const Eigen::VectorXd y = hmat_vec(*h, x);
                const Eigen::VectorXd expected = d * x;
                EXPECT_LE((y - expected).norm(), 1e-12 * expected.norm());
                EXPECT_LE((y - expected).cwiseAbs().maxCoeff(), 1e-12 * norm * x.cwiseAbs().maxCoeff());
            }
        }
    }
}

TEST(MatVec, TransposeIsAdjoint)
{
    const HMatrix& h = *n384().k; // the scaled kernel is not symmetric
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Eigen::VectorXd x = random_matrix(h.size(), 1, seed);
        const Eigen::VectorXd y = random_matrix(h.size(), 1, seed + 50);
        const double lhs = hmat_vec(h, x).dot(y);
        const double rhs = x.dot(hmat_vec_transpose(h, y));
        EXPECT_NEAR(lhs, rhs, 1e-11 * std::abs(lhs));
    }
    const Eigen::MatrixXd d = to_dense(h);
    const Eigen::VectorXd y = random_matrix(h.size(), 1, 9);
    EXPECT_LE((hmat_vec_transpose(h, y) - d.transpose() * y).norm(), 1e-12 * (d.transpose() * y).norm());
}

TEST(MatVec, BlockMultiplyMatchesDenseBlock)
{
    const HMatrix& h = *n384().h;
    const BlockClusterTree& t = h.tree();
    const Eigen::MatrixXd d = to_dense(h);
    for (int b : {0, 1, t[0].first_child + 3}) {
        const Cluster& r = t.rows(b);
        const Cluster& c = t.cols(b);
        const Eigen::MatrixXd x = random_matrix(c.size(), 3, b);
        Eigen::MatrixXd y = Eigen::MatrixXd::Zero(r.size(), 3);
        multiply_block(h, b, x, y);
        const Eigen::MatrixXd expected = d.block(r.begin, c.begin, r.size(), c.size()) * x;
        EXPECT_LE((y - expected).norm(), 1e-12 * expected.norm()) << "block " << b;
    }
    Eigen::MatrixXd bad(3, 1);
    Eigen::MatrixXd out(t.rows(0).size(), 1);
    EXPECT_THROW(multiply_block(h, 0, bad, out), dimension_error);
}

TEST(MatVec, OperationCountWithinBound)
{
    const Problem& p = n384();
    const HMatrix& h = *p.h;
    OpCounter ops;
    hmat_vec(h, random_matrix(h.size(), 1, 1), &ops);
    const double csp = sparsity_constant(*p.tree);
    const double k = static_cast<double>(max_far_rank(h));
    const double depth = p.tree->depth();
    const double n = static_cast<double>(h.size());
    const double bound = 2.0 * csp * std::max<double>(k, default_n_min) * ((depth + 1) * n * 2.0);
    EXPECT_GT(ops.value(), 0u);
    EXPECT_LE(static_cast<double>(ops.value()), bound);

    // oracle count: one multiply-add per dense entry, k(m+n) per factor pair
    std::uint64_t expected = 0;
    for (int b : p.tree->leaves()) {
        if (const LowRank* lr = h.lowrank(b))
            expected += static_cast<std::uint64_t>(lr->rank() * (lr->rows() + lr->cols()));
        else
            expected += static_cast<std::uint64_t>(h.dense(b)->size());
    }
    EXPECT_EQ(ops.value(), expected);
}

TEST(MatVec, DimensionMismatch)
{
    const HMatrix& h = *n96().h;
    EXPECT_THROW(hmat_vec(h, Eigen::VectorXd::Zero(5)), dimension_error);
    EXPECT_THROW(hmat_vec_transpose(h, Eigen::VectorXd::Zero(5)), dimension_error);
    EXPECT_THROW(hmat_mat(h, Eigen::MatrixXd::Zero(5, 2)), dimension_error);
}

TEST(MatVec, MissingPayloadIsReported)
{
    HMatrix empty(n96().tree);
    EXPECT_FALSE(empty.complete());
    EXPECT_THROW(hmat_vec(empty, Eigen::VectorXd::Zero(empty.size())), precondition_error);
}

TEST(HMatMat, ColumnsAreMatVecs)
{
    const HMatrix& h = *n96().k;
    const Eigen::MatrixXd x = random_matrix(h.size(), 4, 2);
    const Eigen::MatrixXd y = hmat_mat(h, x);
    for (Index j = 0; j < 4; ++j)
        EXPECT_LE((y.col(j) - hmat_vec(h, Eigen::VectorXd(x.col(j)))).norm(), 1e-13 * y.col(j).norm());
}

TEST(Norm, MatchesDense)
{
    const HMatrix& h = *n96().h;
    const double dense = to_dense(h).norm();
    EXPECT_NEAR(frobenius_norm(h), dense, 1e-12 * dense);
    EXPECT_EQ(frobenius_norm(HMatrix::from_dense(Eigen::MatrixXd::Zero(4, 4))), 0.0);
}

TEST(Norm, RankOneBlock)
{
    // all blocks zero except one rank-1 far block
    const PanelSet panels = build_sphere_mesh(2);
    auto ct = std::make_shared<const ClusterTree>(build_cluster_tree(panels, 6));
    HMatrix far(build_block_cluster_tree(ct));
    for (int b : far.tree().leaves()) {
        const Cluster& r = far.tree().rows(b);
        const Cluster& c = far.tree().cols(b);
        if (far.tree()[b].kind == BlockKind::FarLeaf)
            far.set(b, LowRank(r.size(), c.size()));
        else
            far.set(b, Eigen::MatrixXd(Eigen::MatrixXd::Zero(r.size(), c.size())));
    }
    int target = -1;
    for (int b : far.tree().leaves())
        if (far.tree()[b].kind == BlockKind::FarLeaf && far.tree().rows(b).size() == 6) {
            target = b;
            break;
        }
    ASSERT_GE(target, 0);
    const Eigen::VectorXd a = random_matrix(6, 1, 3), w = random_matrix(far.tree().cols(target).size(), 1, 4);
    far.set(target, LowRank(a, w));
    EXPECT_NEAR(frobenius_norm(far), a.norm() * w.norm(), 1e-14 * a.norm() * w.norm());
}

TEST(Identity, ActsAsIdentity)
{
    const HMatrix id = HMatrix::identity(n384().tree);
    EXPECT_TRUE(id.complete());
    EXPECT_EQ(to_dense(id), Eigen::MatrixXd::Identity(id.size(), id.size()));
    const Eigen::VectorXd x = random_matrix(id.size(), 1, 5);
    EXPECT_EQ(hmat_vec(id, x), x);
}

TEST(HMatrix, SetChecksShape)
{
    HMatrix h(n96().tree);
    const int leaf = h.tree().leaves().front();
    EXPECT_THROW(h.set(leaf, Eigen::MatrixXd(Eigen::MatrixXd::Zero(1, 1))), dimension_error);
    EXPECT_THROW(h.set(leaf, LowRank(1, 1)), dimension_error);
}

TEST(HMatrix, FromDenseRejectsNonSquare)
{
    EXPECT_THROW(HMatrix::from_dense(Eigen::MatrixXd::Zero(3, 4)), dimension_error);
    const Eigen::MatrixXd a = random_matrix(7, 7, 1);
    EXPECT_EQ(to_dense(HMatrix::from_dense(a)), a);
}

TEST(HMatrix, ToDenseGuard)
{
    const PanelSet panels = build_sphere_mesh(6);
    auto ct = std::make_shared<const ClusterTree>(build_cluster_tree(panels, panels.size()));
    const HMatrix h(build_block_cluster_tree(ct));
    EXPECT_THROW(to_dense(h), capacity_error);
}

TEST(OpCounter, SafeUnderConcurrentUse)
{
    OpCounter ops;
    parallel_for(4000, 4, [&](std::size_t) { ops.add(3); });
    EXPECT_EQ(ops.value(), 12000u);
    ops.reset();
    EXPECT_EQ(ops.value(), 0u);
}

TEST(Serialization, RoundTripIsBitExact)
{
    const Problem& p = n96();
    HMatrix h = *p.h;
    const int flagged = p.tree->leaves().back();
    h.mark_degraded(flagged);
    std::stringstream buffer;
    save_hmatrix(h, buffer);
    const HMatrix back = load_hmatrix(buffer, p.tree);
    EXPECT_EQ(to_dense(back), to_dense(h));
    EXPECT_TRUE(back.degraded(flagged));
    for (int b : p.tree->leaves()) {
        EXPECT_EQ(back.lowrank(b) != nullptr, h.lowrank(b) != nullptr);
        if (h.lowrank(b)) {
            EXPECT_EQ(back.lowrank(b)->left(), h.lowrank(b)->left());
            EXPECT_EQ(back.lowrank(b)->right(), h.lowrank(b)->right());
        }
    }
}

TEST(Serialization, HeaderLayout)
{
    const Problem& p = n96();
    std::stringstream buffer;
    save_hmatrix(*p.h, buffer);
    const std::string bytes = buffer.str();
    ASSERT_GT(bytes.size(), 32u);
    EXPECT_EQ(bytes.substr(0, 4), "HMXB");
    std::uint32_t version;
    std::uint64_t n, hash, count;
    std::memcpy(&version, bytes.data() + 4, 4);
    std::memcpy(&n, bytes.data() + 8, 8);
    std::memcpy(&hash, bytes.data() + 16, 8);
    std::memcpy(&count, bytes.data() + 24, 8);
    EXPECT_EQ(version, 1u);
    EXPECT_EQ(n, 96u);
    EXPECT_EQ(hash, p.tree->structure_hash());
    EXPECT_EQ(count, p.tree->leaves().size());
}

TEST(Serialization, RejectsForeignTree)
{
    const Problem& p = n96();
    std::stringstream buffer;
    save_hmatrix(*p.h, buffer);
    const std::string bytes = buffer.str();

    auto other = build_block_cluster_tree(std::make_shared<const ClusterTree>(p.clusters()), 2.0);
    std::stringstream a(bytes);
    EXPECT_THROW(load_hmatrix(a, other), precondition_error);

    auto smaller = make_problem(1, 6).tree;
    std::stringstream b(bytes);
    EXPECT_THROW(load_hmatrix(b, smaller), dimension_error);
}

TEST(Serialization, RejectsCorruptInput)
{
    const Problem& p = n96();
    std::stringstream buffer;
    save_hmatrix(*p.h, buffer);
    const std::string bytes = buffer.str();

    std::string magic = bytes;
    magic[0] = 'X';
    std::stringstream a(magic);
    EXPECT_THROW(load_hmatrix(a, p.tree), format_error);

    std::string version = bytes;
    version[4] = 7;
    std::stringstream b(version);
    EXPECT_THROW(load_hmatrix(b, p.tree), format_error);

    std::stringstream c(bytes.substr(0, bytes.size() - 9));
    EXPECT_THROW(load_hmatrix(c, p.tree), format_error);

    std::stringstream d(bytes.substr(0, 20));
    EXPECT_THROW(load_hmatrix(d, p.tree), format_error);
}
