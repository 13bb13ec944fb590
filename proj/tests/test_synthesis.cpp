#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <ftc/experiments.hpp>

using namespace ftc;

namespace {

struct SmallInstance {
    LiftedOperators<double> ops;
    CostWeights<double> cw;
    SafetySpec<double> spec;
    NoncausalResponse<double> bench;
};

// n=2, m=1, T=6 double integrator-like plant with |x| <= 6, |u| <= 2. The
// reference objectives below were frozen from an independent solver run.
SmallInstance small_instance() {
    Mat<double> A(2, 2), B(2, 1);
    A << 1.0, 0.2, 0.0, 0.9;
    B << 0.0, 1.0;
    SmallInstance si;
    si.ops = build_lifted(LtvSystem<double>::time_invariant(A, B, 6));
    si.cw = CostWeights<double>::identity(2, 1, 6);
    si.spec = SafetySpec<double>::box(2, 1, 6, 6.0, 2.0, 1.0);
    si.bench = constrained_h2(si.ops, si.cw, si.spec);
    return si;
}

void check_common(const SynthesisResult<double>& res, const SmallInstance& si) {
    CHECK(res.objective >= 0.0);
    CHECK(achievability_residual(si.ops, res.response.Phi_x, res.response.Phi_u) < 1e-7);
    CausalResponse<double> copy = res.response;
    CHECK_NOTHROW(enforce_causal_structure(copy, 2, 1, 6, 1e-6));
    CHECK(certify_safety(res.response, si.spec).minCoeff() >= -1e-6);

    REQUIRE(res.dual_Y.size() > 0);
    CHECK(res.dual_Y.minCoeff() >= 0.0);
    Mat<double> Gm = si.spec.stacked() * res.response.stacked();
    CHECK((res.dual_Y.transpose() * si.spec.Hw - Gm).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(((res.dual_Y.transpose() * si.spec.hw) - si.spec.h).maxCoeff() < 1e-6);
}

}  // namespace

TEST_CASE("frozen small instance: all four criteria hit their reference values") {
    auto si = small_instance();
    Mat<double> bench_stacked(18, 12);
    bench_stacked << si.bench.Psi_x, si.bench.Psi_u;
    CHECK((si.cw.Csqrt * bench_stacked).squaredNorm() ==
          doctest::Approx(22.80117494816423).epsilon(1e-6));

    auto ftc = synthesize_ftc(si.ops, si.cw, si.bench, &si.spec);
    CHECK(ftc.objective == doctest::Approx(1.8108866248746585).epsilon(1e-5));
    check_common(ftc, si);

    auto reg = synthesize_regret(si.ops, si.cw, si.bench, &si.spec);
    CHECK(reg.objective == doctest::Approx(2.2259116927452114).epsilon(1e-5));
    check_common(reg, si);

    auto h2 = synthesize_h2(si.ops, si.cw, &si.spec);
    CHECK(h2.objective == doctest::Approx(30.531717880699762).epsilon(1e-5));
    check_common(h2, si);

    auto hinf = synthesize_hinf(si.ops, si.cw, &si.spec);
    CHECK(hinf.objective == doctest::Approx(14.776018623728927).epsilon(1e-5));
    check_common(hinf, si);

    // objective self-consistency against the synthesized response
    Mat<double> Df = si.cw.Csqrt * (ftc.response.stacked() - bench_stacked);
    const double smax_f = Df.bdcSvd().singularValues()[0];
    CHECK(ftc.objective == doctest::Approx(smax_f * smax_f).epsilon(1e-5));

    Mat<double> CP = si.cw.Csqrt * reg.response.stacked();
    Mat<double> CPsi = si.cw.Csqrt * bench_stacked;
    Eigen::SelfAdjointEigenSolver<Mat<double>> es(
        Mat<double>(CP.transpose() * CP - CPsi.transpose() * CPsi), Eigen::EigenvaluesOnly);
    CHECK(reg.objective == doctest::Approx(es.eigenvalues().maxCoeff()).epsilon(1e-5));

    Mat<double> Dh = si.cw.Csqrt * hinf.response.stacked();
    const double smax_h = Dh.bdcSvd().singularValues()[0];
    CHECK(hinf.objective == doctest::Approx(smax_h * smax_h).epsilon(1e-5));

    // criteria are genuinely different controllers on this instance
    CHECK((ftc.response.Phi_u - reg.response.Phi_u).cwiseAbs().maxCoeff() > 1e-3);
    CHECK((ftc.response.Phi_u - h2.response.Phi_u).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("imitation loss equals regret against the clairvoyant anchor") {
    CHECK(thm2_identity_max_err(701, 10, 10) < 1e-9);
    // a corrupted anchor must break the identity
    CHECK(thm2_identity_max_err(701, 10, 10, true) > 1e-3);
}

TEST_CASE("unconstrained h2 synthesis matches a per-column least-squares oracle") {
    SplitRng rng(702);
    auto ops = build_lifted(random_ltv(rng, 2, 2, 6, 0.8));
    auto cw = random_diag_weights(rng, ops);
    auto h2 = synthesize_h2(ops, cw);
    auto pb = make_structure(ops, causal_entries(2, 2, 6));
    Mat<double> CVs = cw.Csqrt * pb.Vs;
    Mat<double> X0(pb.nT + pb.mT, pb.nT);
    X0 << ops.G, Mat<double>::Zero(pb.mT, pb.nT);
    Mat<double> CX0 = cw.Csqrt * X0;
    for (Index c = 0; c < pb.nT; ++c) {
        std::vector<int> rows;
        for (size_t k = 0; k < pb.entries.size(); ++k)
            if (pb.entries[k].second == c) rows.push_back(pb.entries[k].first);
        if (rows.empty()) continue;
        Mat<double> Vc(CVs.rows(), rows.size());
        for (size_t k = 0; k < rows.size(); ++k) Vc.col(k) = CVs.col(rows[k]);
        Vec<double> phi =
            Vc.colPivHouseholderQr().solve(Vec<double>(-CX0.col(c)));
        for (size_t k = 0; k < rows.size(); ++k)
            CHECK(h2.response.Phi_u(rows[k], c) == doctest::Approx(phi[k]).epsilon(1e-7));
    }
}

TEST_CASE("nested safe sets tighten the objective monotonically") {
    Mat<double> A(1, 1), B(1, 1);
    A << 1.5;
    B << 1.0;
    auto ops = build_lifted(LtvSystem<double>::time_invariant(A, B, 5));
    auto cw = CostWeights<double>::identity(1, 1, 5);
    auto spec0 = SafetySpec<double>::box(1, 1, 5, 2.0, 2.0, 1.0);
    auto bench = constrained_h2(ops, cw, spec0);
    double prev = std::numeric_limits<double>::infinity();
    for (double bound : {2.0, 2.5, 3.0, 5.0}) {
        auto spec = SafetySpec<double>::box(1, 1, 5, bound, bound, 1.0);
        auto res = synthesize_ftc(ops, cw, bench, &spec);
        CHECK(res.objective <= prev + 1e-7);
        prev = res.objective;
    }
    auto free_res = synthesize_ftc(ops, cw, bench);
    CHECK(free_res.objective <= prev + 1e-7);
}

TEST_CASE("feedback reconstruction is block lower triangular and rolls out") {
    CHECK(reconstruct_rollout_max_err(703, 20) < 1e-8);
    SplitRng rng(704);
    auto ops = build_lifted(random_ltv(rng, 2, 2, 6, 0.8));
    auto resp = random_causal_response(rng, ops);
    Mat<double> K = reconstruct_feedback(resp);
    for (int t = 0; t < 6; ++t)
        for (int s = t + 1; s < 6; ++s)
            CHECK(K.block(t * 2, s * 2, 2, 2).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("causal-structure enforcement accepts clean and rejects corrupted maps") {
    SplitRng rng(705);
    auto ops = build_lifted(random_ltv(rng, 2, 1, 5, 0.8));
    auto resp = random_causal_response(rng, ops);
    CHECK_NOTHROW(enforce_causal_structure(resp, 2, 1, 5));
    resp.Phi_u(0, 4) = 1e-3;  // block (0,2): future disturbance
    CHECK_THROWS_AS(enforce_causal_structure(resp, 2, 1, 5), DimensionError);
    auto resp2 = random_causal_response(rng, ops);
    resp2.Phi_x(0, 0) = 0.5;
    CHECK_THROWS_AS(enforce_causal_structure(resp2, 2, 1, 5), DimensionError);
}

TEST_CASE("synthesis rejects non-box disturbance sets") {
    auto si = small_instance();
    Mat<double> Rm = Mat<double>::Identity(12, 12);
    Rm(0, 1) = 0.3;
    si.spec.Hw.resize(24, 12);
    si.spec.Hw << Rm, -Rm;
    si.spec.hw = Vec<double>::Ones(24);
    CHECK_THROWS_AS(synthesize_ftc(si.ops, si.cw, si.bench, &si.spec), ConfigError);
}

TEST_CASE("infeasible safety bounds surface as InfeasibleError from synthesis") {
    auto si = small_instance();
    auto tight = SafetySpec<double>::box(2, 1, 6, 0.5, 0.5, 1.0);
    CHECK_THROWS_AS(synthesize_ftc(si.ops, si.cw, si.bench, &tight), InfeasibleError);
    CHECK_THROWS_AS(synthesize_h2(si.ops, si.cw, &tight), InfeasibleError);
}

TEST_CASE("certification overloads agree with the matrix form") {
    auto si = small_instance();
    auto h2 = synthesize_h2(si.ops, si.cw, &si.spec);
    Vec<double> a = certify_safety(h2.response, si.spec);
    Vec<double> b = certify_safety(h2.response.stacked(), si.spec);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
    Vec<double> c = certify_safety(si.bench, si.spec);
    CHECK(c.minCoeff() >= -1e-6);
}
