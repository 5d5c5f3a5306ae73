#include "fewshot/episodes.hpp"
#include "fewshot/qda.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace fewshot;
using namespace fewshot::qda;
using testutil::random_matrix;

namespace {

Matrix uniform_cost(Rng& rng, int m, int k) {
    Matrix c(m, k);
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = rng.uniform01();
    return c;
}

// Random feasible coupling of two uniform n-point measures: a mixture of permutation plans.
Matrix random_coupling(Rng& rng, int n) {
    Matrix t = Matrix::Zero(n, n);
    std::vector<double> w(5);
    double total = 0;
    for (double& x : w) total += (x = rng.uniform(0.1, 1.0));
    for (double x : w) {
        std::vector<int> perm(static_cast<std::size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        for (int i = n - 1; i > 0; --i) std::swap(perm[static_cast<std::size_t>(i)], perm[rng.index(static_cast<std::uint64_t>(i + 1))]);
        for (int i = 0; i < n; ++i) t(i, perm[static_cast<std::size_t>(i)]) += x / total / n;
    }
    return t;
}

TransportPlan plan_of(const Matrix& t) {
    TransportPlan p;
    p.plan = t;
    return p;
}

}  // namespace

TEST(CostMatrix, ZeroForIdenticalPoint) {
    Matrix a(1, 3);
    a << 0.3, -1, 2;
    const Matrix c = cost_matrix(a, a);
    EXPECT_EQ(c(0, 0), 0.0);
}

TEST(CostMatrix, ThreeFourFive) {
    Matrix a(1, 2), b(1, 2);
    a << 0, 0;
    b << 3, 4;
    EXPECT_NEAR(cost_matrix(a, b)(0, 0), 25.0, 1e-12);
}

TEST(CostMatrix, MatchesNaiveLoop) {
    Rng rng(1);
    for (int t = 0; t < 20; ++t) {
        const Matrix a = random_matrix(rng, 7, 5, 3.0);
        const Matrix b = random_matrix(rng, 4, 5, 3.0);
        const Matrix c = cost_matrix(a, b);
        for (int i = 0; i < 7; ++i) {
            for (int j = 0; j < 4; ++j) {
                double d = 0;
                for (int k = 0; k < 5; ++k) d += (a(i, k) - b(j, k)) * (a(i, k) - b(j, k));
                EXPECT_NEAR(c(i, j), d, 1e-10);
            }
        }
    }
}

TEST(CostMatrix, NonNegativeAndTranslationInvariant) {
    Rng rng(2);
    Matrix a = random_matrix(rng, 6, 3);
    a.row(2) = a.row(0);
    const Matrix b = a.topRows(3);
    const Matrix c = cost_matrix(a, b);
    EXPECT_GE(c.minCoeff(), 0.0);
    EXPECT_LT(c(2, 0), 1e-12);
    const Eigen::RowVector3d t(1e3, -5e2, 7);
    const Matrix c2 = cost_matrix(a.rowwise() + t, b.rowwise() + t);
    EXPECT_LT((c - c2).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(CostMatrix, WidthMismatch) {
    try {
        cost_matrix(Matrix::Zero(2, 3), Matrix::Zero(2, 4));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::shape);
    }
}

TEST(Sinkhorn, SingleCell) {
    Matrix c(1, 1);
    c << 0.7;
    const auto p = sinkhorn(c, 0.01);
    EXPECT_NEAR(p.plan(0, 0), 1.0, 1e-12);
    EXPECT_NEAR(p.cost, 0.7, 1e-12);
    EXPECT_TRUE(p.converged);
}

TEST(Sinkhorn, TwoByTwoAntiDiagonal) {
    Matrix c(2, 2);
    c << 0, 1, 1, 0;
    const auto p = sinkhorn(c, 1e-3 * c.mean());
    EXPECT_NEAR(p.cost, 0.0, 1e-2);
    EXPECT_NEAR(p.plan(0, 0), 0.5, 1e-2);
    EXPECT_NEAR(p.plan(1, 1), 0.5, 1e-2);
    EXPECT_NEAR(p.plan(0, 1), 0.0, 1e-2);
    EXPECT_NEAR(p.plan(1, 0), 0.0, 1e-2);
}

TEST(Sinkhorn, FourByFourNearOracle) {
    Rng rng(44);
    const Matrix c = uniform_cost(rng, 4, 4);
    const auto p = sinkhorn(c, 1e-3 * c.mean());
    const auto ex = exact_ot_oracle(c);
    EXPECT_GE(p.cost, ex.cost - 1e-12);
    EXPECT_LT((p.cost - ex.cost) / ex.cost, 0.01);
}

TEST(Sinkhorn, MarginalsAndNonNegativity) {
    Rng rng(5);
    for (int t = 0; t < 30; ++t) {
        const int m = 1 + static_cast<int>(rng.index(12));
        const int k = 1 + static_cast<int>(rng.index(6));
        const Matrix c = uniform_cost(rng, m, k) * 10.0;
        const auto p = sinkhorn(c, 0.05 * c.mean() + 1e-12, 1e-6, 200000);
        ASSERT_TRUE(p.converged) << m << "x" << k;
        EXPECT_GE(p.plan.minCoeff(), 0.0);
        EXPECT_LT(p.marginal_violation, 1e-6);
        EXPECT_LT((p.plan.rowwise().sum().array() - 1.0 / m).abs().maxCoeff(), 1e-6);
        EXPECT_LT((p.plan.colwise().sum().array() - 1.0 / k).abs().maxCoeff(), 1e-6);
        EXPECT_NEAR(p.plan.sum(), 1.0, 1e-6);
        EXPECT_NEAR(p.cost, c.cwiseProduct(p.plan).sum(), 1e-15);
    }
}

TEST(Sinkhorn, NonConvergenceIsReported) {
    Rng rng(6);
    const Matrix c = uniform_cost(rng, 6, 6);
    const auto p = sinkhorn(c, 1e-4 * c.mean(), 1e-14, 2, false);
    EXPECT_FALSE(p.converged);
    EXPECT_EQ(p.iterations_used, 2);
}

TEST(Sinkhorn, NonFiniteCostRejected) {
    Matrix c(2, 2);
    c << 0, std::numeric_limits<double>::infinity(), 1, 0;
    try {
        sinkhorn(c, 0.1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::numeric);
    }
}

TEST(Sinkhorn, WithoutScalingAgrees) {
    Rng rng(7);
    const Matrix c = uniform_cost(rng, 5, 3);
    const auto a = sinkhorn(c, 0.1, 1e-10, 10000, true);
    const auto b = sinkhorn(c, 0.1, 1e-10, 10000, false);
    ASSERT_TRUE(a.converged && b.converged);
    EXPECT_LT((a.plan - b.plan).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(ExactOracle, IdentityPermutation) {
    Matrix c(2, 2);
    c << 0, 1, 1, 0;
    const auto ex = exact_ot_oracle(c);
    EXPECT_EQ(ex.cost, 0.0);
    EXPECT_EQ(ex.plan(0, 0), 0.5);
    EXPECT_EQ(ex.plan(1, 1), 0.5);
    EXPECT_EQ(ex.plan(0, 1), 0.0);
}

TEST(ExactOracle, ConstantCost) {
    EXPECT_NEAR(exact_ot_oracle(Matrix::Ones(3, 3)).cost, 1.0, 1e-15);
}

TEST(ExactOracle, BeatsRandomCouplings) {
    Rng rng(55);
    const Matrix c = uniform_cost(rng, 5, 5);
    const auto ex = exact_ot_oracle(c);
    for (int t = 0; t < 100; ++t) {
        const Matrix t_plan = random_coupling(rng, 5);
        ASSERT_LT((t_plan.rowwise().sum().array() - 0.2).abs().maxCoeff(), 1e-12);
        ASSERT_LT((t_plan.colwise().sum().array() - 0.2).abs().maxCoeff(), 1e-12);
        EXPECT_LE(ex.cost, c.cwiseProduct(t_plan).sum() + 1e-12);
    }
}

TEST(ExactOracle, UnsupportedSizes) {
    for (const auto& c : {Matrix(Matrix::Zero(2, 3)), Matrix(Matrix::Zero(9, 9))}) {
        try {
            exact_ot_oracle(c);
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::unsupported_size);
        }
    }
}

TEST(Retrieve, ZeroAndFull) {
    Rng rng(8);
    const Matrix c = uniform_cost(rng, 6, 2);
    const auto p = sinkhorn(c, 0.05 * c.mean());
    EXPECT_TRUE(retrieve_top_r(p, c, 0).empty());
    const auto all = retrieve_top_r(p, c, 6);
    ASSERT_EQ(all.size(), 6u);
    std::vector<double> score;
    for (int i : all) score.push_back(p.plan.row(i).dot(c.row(i)) / p.plan.row(i).sum());
    EXPECT_TRUE(std::is_sorted(score.begin(), score.end()));
    EXPECT_EQ(retrieve_top_r(p, c, 50).size(), 6u);
}

TEST(Retrieve, CoincidingQueryRankedFirst) {
    Rng rng(9);
    Matrix support(2, 3);
    support << 0, 0, 0, 1, 1, 1;
    Matrix queries(6, 3);
    for (int i = 0; i < 6; ++i) {
        Vector dir = random_matrix(rng, 3, 1).col(0);
        queries.row(i) = (12.0 + i) * dir.normalized().transpose();
    }
    queries.row(3) = support.row(1);
    const Matrix c = cost_matrix(queries, support);
    const auto p = sinkhorn(c, 0.05 * c.mean());
    EXPECT_EQ(retrieve_top_r(p, c, 1), std::vector<int>{3});
}

TEST(Retrieve, TiesByIndex) {
    const Matrix t = Matrix::Constant(4, 2, 0.125);
    Matrix c(4, 2);
    c << 1, 1, 0, 0, 1, 1, 0, 0;
    EXPECT_EQ(retrieve_top_r(plan_of(t), c, 3), (std::vector<int>{1, 3, 0}));
}

TEST(Retrieve, ZeroMassRow) {
    Matrix t = Matrix::Constant(3, 2, 1.0 / 4);
    t.row(1).setZero();
    try {
        retrieve_top_r(plan_of(t), Matrix::Ones(3, 2), 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::degenerate_plan);
    }
}

TEST(Barycentric, PointMass) {
    Matrix t(1, 3);
    t << 0, 0.4, 0;
    Matrix s(3, 2);
    s << 1, 1, 5, -2, 0, 3;
    const auto mp = barycentric_map(plan_of(t), {0}, s);
    EXPECT_EQ(mp.points.row(0), s.row(1));
}

TEST(Barycentric, Midpoint) {
    Matrix t(1, 2);
    t << 0.25, 0.25;
    Matrix s(2, 2);
    s << 0, 2, 4, 6;
    const auto mp = barycentric_map(plan_of(t), {0}, s);
    EXPECT_EQ(mp.points.row(0), Eigen::RowVector2d(2, 4));
}

TEST(Barycentric, RowAndMatrixFormsAgree) {
    Rng rng(88);
    const Matrix q = random_matrix(rng, 8, 4);
    const Matrix s = random_matrix(rng, 3, 4);
    const Matrix c = cost_matrix(q, s);
    const auto p = sinkhorn(c, 0.05 * c.mean());
    const std::vector<int> idx{7, 0, 3, 5};
    const auto rows = barycentric_map(p, idx, s);
    const Matrix mat = barycentric_map_matrix(p, idx, s);
    EXPECT_LT((rows.points - mat).cwiseAbs().maxCoeff(), 1e-10);
    for (Eigen::Index i = 0; i < rows.weights.rows(); ++i) {
        EXPECT_GE(rows.weights.row(i).minCoeff(), 0.0);
        EXPECT_NEAR(rows.weights.row(i).sum(), 1.0, 1e-9);
    }
}

TEST(Barycentric, ZeroMassRow) {
    Matrix t = Matrix::Zero(2, 2);
    t(0, 0) = 0.5;
    EXPECT_THROW(barycentric_map(plan_of(t), {1}, Matrix::Ones(2, 2)), Error);
    EXPECT_THROW(barycentric_map_matrix(plan_of(t), {1}, Matrix::Ones(2, 2)), Error);
}

class EstimateBothModes : public ::testing::TestWithParam<Projection> {
protected:
    OtSettings settings() const {
        OtSettings s;
        s.projection = GetParam();
        return s;
    }
};

TEST_P(EstimateBothModes, RZeroIsBitwiseSupportMean) {
    Rng rng(1);
    std::vector<Matrix> support;
    for (int c = 0; c < 4; ++c) support.push_back(random_matrix(rng, 3, 5));
    const Matrix q = random_matrix(rng, 12, 5);
    const auto est = estimate_prototypes(support, q, 0, settings());
    const auto pn = protonet::support_mean_prototypes(support, {"0", "1", "2", "3"});
    EXPECT_TRUE(est.prototypes.prototypes == pn.prototypes);
    const auto no_queries = estimate_prototypes(support, Matrix(0, 5), 10, settings());
    EXPECT_TRUE(no_queries.prototypes.prototypes == pn.prototypes);
}

TEST_P(EstimateBothModes, CoincidingSingleQuery) {
    Matrix s0(1, 3), s1(1, 3), q(1, 3);
    s0 << 1, 2, 3;
    s1 << -4, 0, 1;
    q = s0;
    const auto est = estimate_prototypes({s0, s1}, q, 1, settings());
    EXPECT_LT((est.prototypes.prototypes.row(0) - s0).cwiseAbs().maxCoeff(), 1e-9);
}

TEST_P(EstimateBothModes, TranslationEquivariant) {
    Rng rng(3);
    std::vector<Matrix> support;
    for (int c = 0; c < 5; ++c) support.push_back(random_matrix(rng, 2, 4));
    const Matrix q = random_matrix(rng, 25, 4);
    const Eigen::RowVector4d t(3.5, -2, 0.25, 10);
    std::vector<Matrix> shifted;
    for (const auto& s : support) shifted.push_back(s.rowwise() + t);
    const auto a = estimate_prototypes(support, q, 10, settings());
    const auto b = estimate_prototypes(shifted, q.rowwise() + t, 10, settings());
    EXPECT_LT(((a.prototypes.prototypes.rowwise() + t) - b.prototypes.prototypes).cwiseAbs().maxCoeff(), 1e-9);
    for (std::size_t c = 0; c < a.classes.size(); ++c) EXPECT_EQ(a.classes[c].retrieved, b.classes[c].retrieved);
}

TEST_P(EstimateBothModes, WeightsReproducePrototypes) {
    Rng rng(4);
    std::vector<Matrix> support;
    for (int c = 0; c < 5; ++c) support.push_back(random_matrix(rng, 3, 6));
    const Matrix q = random_matrix(rng, 30, 6);
    const auto est = estimate_prototypes(support, q, 7, settings());
    std::vector<PrototypeWeights> w;
    for (const auto& c : est.classes) {
        double total = c.weights.support.sum();
        for (const auto& [i, x] : c.weights.query) {
            EXPECT_GE(x, 0.0);
            total += x;
        }
        EXPECT_GE(c.weights.support.minCoeff(), 0.0);
        EXPECT_NEAR(total, 1.0, 1e-12);
        EXPECT_EQ(c.mapped.rows(), static_cast<Eigen::Index>(c.retrieved.size()));
        w.push_back(c.weights);
    }
    EXPECT_LT((prototypes_from_weights(support, q, w) - est.prototypes.prototypes).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_P(EstimateBothModes, Deterministic) {
    Rng rng(5);
    std::vector<Matrix> support;
    for (int c = 0; c < 3; ++c) support.push_back(random_matrix(rng, 2, 4));
    const Matrix q = random_matrix(rng, 9, 4);
    const auto a = estimate_prototypes(support, q, 4, settings());
    const auto b = estimate_prototypes(support, q, 4, settings());
    EXPECT_TRUE(a.prototypes.prototypes == b.prototypes.prototypes);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_TRUE(a.classes[c].plan.plan == b.classes[c].plan.plan);
}

TEST_P(EstimateBothModes, NeedsTwoClasses) {
    EXPECT_THROW(estimate_prototypes({Matrix::Ones(1, 2)}, Matrix::Ones(3, 2), 1, settings()), Error);
}

INSTANTIATE_TEST_SUITE_P(Projections, EstimateBothModes,
                         ::testing::Values(Projection::retrieved_queries, Projection::support_barycentric));

TEST(EstimateBarycentric, MappedPointsInSupportHull) {
    Rng rng(6);
    OtSettings s;
    s.projection = Projection::support_barycentric;
    std::vector<Matrix> support;
    for (int c = 0; c < 5; ++c) support.push_back(random_matrix(rng, 4, 3));
    const Matrix q = random_matrix(rng, 40, 3);
    const auto est = estimate_prototypes(support, q, 10, s);
    for (std::size_t c = 0; c < est.classes.size(); ++c) {
        const auto& ac = est.classes[c];
        const auto mp = barycentric_map(ac.plan, ac.retrieved, support[c]);
        for (Eigen::Index i = 0; i < mp.weights.rows(); ++i) {
            EXPECT_GE(mp.weights.row(i).minCoeff(), 0.0);
            EXPECT_NEAR(mp.weights.row(i).sum(), 1.0, 1e-9);
        }
        EXPECT_LT((mp.points - ac.mapped).cwiseAbs().maxCoeff(), 1e-12);
        // prototype = convex combination of supports only
        EXPECT_TRUE(ac.weights.query.empty());
        EXPECT_NEAR(ac.weights.support.sum(), 1.0, 1e-9);
        const Vector combo = support[c].transpose() * ac.weights.support;
        EXPECT_LT((combo - ac.prototype).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(EstimateRetrieved, QueryMayServeSeveralClasses) {
    // two classes with identical supports retrieve the same nearest query
    Matrix s(1, 2);
    s << 0, 0;
    Matrix q(3, 2);
    q << 0.1, 0, 5, 5, -6, 1;
    const auto est = estimate_prototypes({s, s}, q, 1, OtSettings{});
    EXPECT_EQ(est.classes[0].retrieved, std::vector<int>{0});
    EXPECT_EQ(est.classes[1].retrieved, std::vector<int>{0});
    EXPECT_LT((est.prototypes.prototypes.row(0) - Eigen::RowVector2d(0.05, 0)).norm(), 1e-12);
}

TEST(EstimateRetrieved, MovesPrototypesTowardCenters) {
    // smaller Monte-Carlo version of the synthetic geometry check
    episodes::SyntheticSpec spec;
    spec.dim = 16;
    spec.intra_class_stddev = 1.0;
    episodes::SyntheticSource src(spec);
    double plain = 0, augmented = 0;
    for (int e = 0; e < 100; ++e) {
        const auto se = src.sample_with_centers(derive_seed(1, "qda-unit", static_cast<std::uint64_t>(e)));
        std::vector<Matrix> support;
        for (const auto& shots : se.episode.support) support.push_back(shots[0]->vectors);
        Matrix q(static_cast<Eigen::Index>(se.episode.query.size()), 16);
        for (std::size_t i = 0; i < se.episode.query.size(); ++i) q.row(static_cast<Eigen::Index>(i)) = se.episode.query[i]->vectors.row(0);
        const auto est = estimate_prototypes(support, q, 10, OtSettings{});
        for (int c = 0; c < 5; ++c) {
            plain += (support[static_cast<std::size_t>(c)].row(0) - se.true_centers.row(c)).norm();
            augmented += (est.prototypes.prototypes.row(c) - se.true_centers.row(c)).norm();
        }
    }
    EXPECT_LT(augmented, 0.8 * plain);
}
