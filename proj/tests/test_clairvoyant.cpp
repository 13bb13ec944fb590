#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <ftc/experiments.hpp>

using namespace ftc;

namespace {

LiftedOperators<double> scalar_ops(double a, double b, int T) {
    Mat<double> A(1, 1), B(1, 1);
    A << a;
    B << b;
    return build_lifted(LtvSystem<double>::time_invariant(A, B, T));
}

}  // namespace

TEST_CASE("scalar T=2 optimum matches the hand-solved normal equations") {
    auto ops = scalar_ops(1.0, 1.0, 2);
    auto cw = CostWeights<double>::identity(1, 1, 2);
    auto psi = unconstrained_optimal(ops, cw);
    // P = R + F'F = diag(2,1); F'G = [[1,1],[0,0]] -> Psi_u = -[[.5,.5],[0,0]]
    Mat<double> want_u(2, 2), want_x(2, 2);
    want_u << -0.5, -0.5, 0.0, 0.0;
    want_x << 1.0, 0.0, 0.5, 0.5;
    CHECK((psi.Psi_u - want_u).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((psi.Psi_x - want_x).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(achievability_residual(ops, psi.Psi_x, psi.Psi_u) < 1e-13);
}

TEST_CASE("stationarity and achievability hold on random systems") {
    CHECK(stationarity_max(501, 20) < 1e-8);
    SplitRng rng(502);
    for (int trial = 0; trial < 10; ++trial) {
        auto ops = build_lifted(random_ltv(rng, 2, 2, 7, 0.8));
        auto cw = random_diag_weights(rng, ops);
        auto psi = unconstrained_optimal(ops, cw);
        CHECK(achievability_residual(ops, psi.Psi_x, psi.Psi_u) < 1e-9);
    }
}

TEST_CASE("optimal cost function agrees with direct simulation of the optimum") {
    SplitRng rng(503);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 1 + (int)(rng.uniform() * 3) % 3;
        const int m = 1 + (int)(rng.uniform() * 3) % 3;
        const int T = 2 + (int)(rng.uniform() * 8) % 8;
        auto ops = build_lifted(random_ltv(rng, n, m, T, 0.8));
        auto cw = random_diag_weights(rng, ops);
        auto psi = unconstrained_optimal(ops, cw);
        Vec<double> w = random_vec(rng, ops.nT());
        const double via_sim = lqr_cost(simulate(psi, w, cw, n, m, T));
        const double via_formula = clairvoyant_cost(ops, cw, w);
        CHECK(via_formula == doctest::Approx(via_sim).epsilon(1e-9));
        CHECK(via_formula >= 0.0);
    }
}

TEST_CASE("no causal policy beats the noncausal optimum") {
    CHECK(clairvoyant_gap_min(504, 50, 20) >= -1e-9);
}

TEST_CASE("inversion-lemma residual vanishes on random systems") {
    CHECK(mil_max_residual(505, 20) < 1e-9);
}

TEST_CASE("ill-conditioned curvature is rejected with rescaling advice") {
    auto ops = scalar_ops(1.0, 1.0, 3);
    Mat<double> Q = 1e8 * Mat<double>::Identity(3, 3);
    Mat<double> R = 1e-8 * Mat<double>::Identity(3, 3);
    auto cw = CostWeights<double>::from(Q, R);
    try {
        unconstrained_optimal(ops, cw);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("R") != std::string::npos);
    }
}

TEST_CASE("unbounded safe set reproduces the unconstrained optimum") {
    auto ops = scalar_ops(1.5, 1.0, 5);
    auto cw = CostWeights<double>::identity(1, 1, 5);
    const double inf = std::numeric_limits<double>::infinity();
    auto spec = SafetySpec<double>::box(1, 1, 5, inf, inf, 1.0);
    auto bench = constrained_h2(ops, cw, spec);
    auto psi = unconstrained_optimal(ops, cw);
    CHECK((bench.Psi_u - psi.Psi_u).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((bench.Psi_x - psi.Psi_x).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("active box constraints: scalar T=5 frozen reference") {
    auto ops = scalar_ops(1.5, 1.0, 5);
    auto cw = CostWeights<double>::identity(1, 1, 5);
    auto spec = SafetySpec<double>::box(1, 1, 5, 2.0, 2.0, 1.0);
    auto psi = unconstrained_optimal(ops, cw);
    Mat<double> stacked_psi(10, 5);
    stacked_psi << psi.Psi_x, psi.Psi_u;
    CHECK(stacked_psi.cwiseAbs().rowwise().sum().maxCoeff() > 2.0);  // clipping is real

    auto bench = constrained_h2(ops, cw, spec);
    Mat<double> stacked(10, 5);
    stacked << bench.Psi_x, bench.Psi_u;
    const double obj = (cw.Csqrt * stacked).squaredNorm();
    CHECK(obj == doctest::Approx(4.4096549460568895).epsilon(1e-6));
    CHECK(stacked.cwiseAbs().rowwise().sum().maxCoeff() <= 2.0 + 1e-7);
    CHECK(certify_safety(bench, spec).minCoeff() >= -1e-6);
    CHECK(achievability_residual(ops, bench.Psi_x, bench.Psi_u) < 1e-8);
}

TEST_CASE("impossible bounds raise an infeasibility error with a witness row") {
    auto ops = scalar_ops(1.5, 1.0, 5);
    auto cw = CostWeights<double>::identity(1, 1, 5);
    auto spec = SafetySpec<double>::box(1, 1, 5, 0.9, 0.9, 1.0);
    try {
        constrained_h2(ops, cw, spec);
        FAIL("expected InfeasibleError");
    } catch (const InfeasibleError& e) {
        CHECK(e.violation > 1e-8);
        CHECK(e.row >= 0);
    }
}

TEST_CASE("preview band limits which disturbances the benchmark sees") {
    Mat<double> A(2, 2), B(2, 1);
    A << 1.0, 0.1, 0.0, 0.95;
    B << 0.0, 1.0;
    auto ops = build_lifted(LtvSystem<double>::time_invariant(A, B, 6));
    auto cw = CostWeights<double>::identity(2, 1, 6);
    const double inf = std::numeric_limits<double>::infinity();
    auto spec = SafetySpec<double>::box(2, 1, 6, inf, inf, 1.0);
    const int p = 2;
    auto bench = constrained_h2(ops, cw, spec, p);
    CHECK(bench.preview == p);
    bool any_inside = false;
    for (int t = 0; t < 6; ++t)
        for (int s = 0; s < 6; ++s) {
            Mat<double> blk = bench.Psi_u.block(t * 1, s * 2, 1, 2);
            if (s > t + p) CHECK(blk.isZero(0.0));
            else any_inside = any_inside || !blk.isZero(1e-12);
        }
    CHECK(any_inside);

    auto full_a = constrained_h2(ops, cw, spec, 5);
    auto full_b = constrained_h2(ops, cw, spec, kFullPreview);
    CHECK((full_a.Psi_u - full_b.Psi_u).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("preview shrinks the feasible imitation quality monotonically") {
    auto ops = scalar_ops(1.3, 1.0, 6);
    auto cw = CostWeights<double>::identity(1, 1, 6);
    const double inf = std::numeric_limits<double>::infinity();
    auto spec = SafetySpec<double>::box(1, 1, 6, inf, inf, 1.0);
    double prev = -1.0;
    for (int p = 0; p <= 5; ++p) {
        auto bench = constrained_h2(ops, cw, spec, p);
        Mat<double> stacked(12, 6);
        stacked << bench.Psi_x, bench.Psi_u;
        const double obj = (cw.Csqrt * stacked).squaredNorm();
        if (p > 0) CHECK(obj <= prev + 1e-9);
        prev = obj;
    }
}
