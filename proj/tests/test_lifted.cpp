#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <ftc/experiments.hpp>

using namespace ftc;

TEST_CASE("scalar T=3 lifted operators match the closed form") {
    Mat<double> A(1, 1), B(1, 1);
    A << 0.8;
    B << 0.5;
    auto ops = build_lifted(LtvSystem<double>::time_invariant(A, B, 3));
    Mat<double> G(3, 3), F(3, 3);
    G << 1, 0, 0, 0.8, 1, 0, 0.64, 0.8, 1;
    F << 0, 0, 0, 0.5, 0, 0, 0.4, 0.5, 0;
    CHECK((ops.G - G).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((ops.F - F).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("T=1 degenerates to identity state map and zero input map") {
    Mat<double> A(2, 2), B(2, 1);
    A.setRandom();
    B.setRandom();
    auto ops = build_lifted(LtvSystem<double>::time_invariant(A, B, 1));
    CHECK(ops.G.isIdentity(0.0));
    CHECK(ops.F.isZero(0.0));
}

TEST_CASE("reference plant entry") {
    Mat<double> A(3, 3), B(3, 2);
    A << 0.735, 0.21, 0.0, 0.315, 0.735, -0.105, 0.0, -0.21, 0.84;
    B << 1.0, 0.2, 2.0, 0.3, 1.5, 0.5;
    auto ops = build_lifted(LtvSystem<double>::time_invariant(A, B, 30));
    CHECK(ops.G(3, 0) == doctest::Approx(0.735).epsilon(1e-15));
    CHECK(ops.F(3, 0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("x = F u + G w agrees with the step recursion on random systems") {
    SplitRng rng(401);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 1 + (int)(rng.uniform() * 4) % 4;
        const int m = 1 + (int)(rng.uniform() * 4) % 4;
        const int T = 1 + (int)(rng.uniform() * 10) % 10;
        auto sys = random_ltv(rng, n, m, T, 1.0);
        auto ops = build_lifted(sys);
        Vec<double> w = random_vec(rng, ops.nT());
        Vec<double> u = random_vec(rng, ops.mT());
        Vec<double> x = ops.F * u + ops.G * w;
        CHECK((x - rollout(sys, w, u)).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("block triangularity: G unit lower, F strictly lower") {
    SplitRng rng(402);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 1 + (int)(rng.uniform() * 3) % 3;
        const int m = 1 + (int)(rng.uniform() * 3) % 3;
        const int T = 2 + (int)(rng.uniform() * 8) % 8;
        auto ops = build_lifted(random_ltv(rng, n, m, T, 1.0));
        for (int t = 0; t < T; ++t) {
            CHECK(ops.G.block(t * n, t * n, n, n).isIdentity(0.0));
            for (int s = t; s < T; ++s) {
                if (s > t) CHECK(ops.G.block(t * n, s * n, n, n).isZero(0.0));
                CHECK(ops.F.block(t * n, s * m, n, m).isZero(0.0));
            }
        }
    }
}

TEST_CASE("system validation errors") {
    Mat<double> A(2, 2), B(2, 1);
    A.setIdentity();
    B.setOnes();
    CHECK_THROWS_AS(LtvSystem<double>::time_invariant(A, B, 0), DimensionError);
    LtvSystem<double> sys = LtvSystem<double>::time_invariant(A, B, 4);
    sys.A_seq.pop_back();
    CHECK_THROWS_AS(sys.validate(), DimensionError);
    sys = LtvSystem<double>::time_invariant(A, B, 4);
    sys.B_seq[1] = Mat<double>::Zero(1, 1);
    CHECK_THROWS_AS(sys.validate(), DimensionError);
}

TEST_CASE("cost weights: PSD flooring, square root, and PD check on R") {
    SplitRng rng(403);
    const int k = 6;
    Mat<double> M(k, k);
    for (Index i = 0; i < k; ++i)
        for (Index j = 0; j < k; ++j) M(i, j) = 2.0 * rng.uniform() - 1.0;
    Mat<double> Qin = M + M.transpose();  // indefinite on purpose
    Mat<double> Rin = Mat<double>::Identity(3, 3) * 0.7;
    auto cw = CostWeights<double>::from(Qin, Rin);
    Eigen::SelfAdjointEigenSolver<Mat<double>> es(cw.Q);
    CHECK(es.eigenvalues().minCoeff() >= -1e-12);
    CHECK((cw.Csqrt * cw.Csqrt - cw.C).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((cw.Csqrt - cw.Csqrt.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(CostWeights<double>::from(Qin, -Rin), DimensionError);
    CHECK(CostWeights<double>::identity(2, 1, 5).is_identity());
}
