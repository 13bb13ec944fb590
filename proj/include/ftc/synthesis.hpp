#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>

#include "clairvoyant.hpp"

namespace ftc {

enum class Criterion { Ftc, Regret, H2, Hinf };

inline const char* criterion_name(Criterion c) {
    switch (c) {
        case Criterion::Ftc: return "ftc";
        case Criterion::Regret: return "regret";
        case Criterion::H2: return "h2";
        case Criterion::Hinf: return "hinf";
    }
    return "?";
}

template <class S = double>
struct CausalResponse {
    Mat<S> Phi_x;  // nT x nT, unit lower block triangular
    Mat<S> Phi_u;  // mT x nT, lower block triangular

    Mat<S> stacked() const {
        Mat<S> out(Phi_x.rows() + Phi_u.rows(), Phi_x.cols());
        out << Phi_x, Phi_u;
        return out;
    }
};

template <class S = double>
struct SynthesisResult {
    CausalResponse<S> response;
    S objective = S(0);
    Mat<S> dual_Y;  // r x q, entrywise nonnegative; empty without safety
    Criterion criterion = Criterion::Ftc;
    SolveStats stats;
};

// Asserts the causal block sparsity within tol, then zeroes the upper blocks
// exactly so downstream triangular solves see clean structure.
template <class S>
void enforce_causal_structure(CausalResponse<S>& resp, int n, int m, int T, S tol = S(1e-8)) {
    for (int t = 0; t < T; ++t) {
        for (int s = t + 1; s < T; ++s) {
            if (resp.Phi_x.block(t * n, s * n, n, n).template lpNorm<Eigen::Infinity>() > tol ||
                resp.Phi_u.block(t * m, s * n, m, n).template lpNorm<Eigen::Infinity>() > tol)
                throw DimensionError("CausalResponse: upper block (" + std::to_string(t) + "," +
                                     std::to_string(s) + ") exceeds causal sparsity tolerance");
            resp.Phi_x.block(t * n, s * n, n, n).setZero();
            resp.Phi_u.block(t * m, s * n, m, n).setZero();
        }
        Mat<S> d = resp.Phi_x.block(t * n, t * n, n, n);
        if (!d.isIdentity(tol))
            throw DimensionError("CausalResponse: diagonal block " + std::to_string(t) +
                                 " of Phi_x is not the identity");
        resp.Phi_x.block(t * n, t * n, n, n).setIdentity();
    }
}

namespace detail {

template <class S>
Mat<S> reconstruct_dual(const Mat<S>& stacked_response, const SafetySpec<S>& spec) {
    auto box = detect_box(spec.Hw, spec.hw);
    if (!box) return Mat<S>();
    Mat<S> Gmat = spec.stacked() * stacked_response;  // q x nT
    Mat<S> Y = Mat<S>::Zero(spec.Hw.rows(), spec.rows());
    for (Index i = 0; i < Gmat.rows(); ++i) {
        for (Index j = 0; j < Gmat.cols(); ++j) {
            const S g = Gmat(i, j);
            if (g >= S(0))
                Y(box->pos_row[j], i) = g / spec.Hw(box->pos_row[j], j);
            else
                Y(box->neg_row[j], i) = g / spec.Hw(box->neg_row[j], j);
        }
    }
    return Y;
}

template <class S>
SynthesisResult<S> run_lambda_sdp(const LiftedOperators<S>& ops, const CostWeights<S>& cw,
                                  const Mat<S>& Psi_x, const Mat<S>& Psi_u, Criterion crit,
                                  const SafetySpec<S>* safety, const SolveOptions& opts) {
    ResponseStructure<S> pb = make_structure(ops, causal_entries(ops.n, ops.m, ops.T));
    std::optional<SafetyEncoding<S>> enc;
    if (safety) enc = make_encoding(*safety, ops.nT(), ops.mT());
    if (enc) check_robust_feasibility(pb, *enc, opts);
    ConeProgram<S> prog = crit == Criterion::Regret
                              ? build_regret_sdp(pb, Psi_x, Psi_u, cw.Csqrt, enc ? &*enc : nullptr)
                              : build_ftc_sdp(pb, Psi_x, Psi_u, cw.Csqrt, enc ? &*enc : nullptr);
    ConeSolution<S> sol = solve_cone(prog, opts);
    SynthesisResult<S> out;
    out.criterion = crit;
    out.objective = std::max(sol.x[pb.nphi()], S(0));
    auto [Phi_x, Phi_u] = phi_from_x(pb, Vec<S>(sol.x.head(pb.nphi())));
    out.response.Phi_x = std::move(Phi_x);
    out.response.Phi_u = std::move(Phi_u);
    out.stats = sol.stats;
    if (enc) out.dual_Y = reconstruct_dual(out.response.stacked(), *safety);
    return out;
}

}  // namespace detail

// min over causal responses of the worst-case imitation loss
// max_{|w|_2 <= 1} |Csq(Phi - Psi) w|^2, as the SDP epigraph of smax^2.
template <class S>
SynthesisResult<S> synthesize_ftc(const LiftedOperators<S>& ops, const CostWeights<S>& cw,
                                  const NoncausalResponse<S>& bench,
                                  const SafetySpec<S>* safety = nullptr,
                                  const SolveOptions& opts = {}) {
    return detail::run_lambda_sdp(ops, cw, bench.Psi_x, bench.Psi_u, Criterion::Ftc, safety,
                                  opts);
}

// min over causal responses of max_{|w|_2 <= 1} [J(pi,w) - J(psi,w)].
template <class S>
SynthesisResult<S> synthesize_regret(const LiftedOperators<S>& ops, const CostWeights<S>& cw,
                                     const NoncausalResponse<S>& bench,
                                     const SafetySpec<S>* safety = nullptr,
                                     const SolveOptions& opts = {}) {
    return detail::run_lambda_sdp(ops, cw, bench.Psi_x, bench.Psi_u, Criterion::Regret, safety,
                                  opts);
}

// min |Csq [Phi_x; Phi_u]|_F^2 (expected cost under unit-covariance w).
template <class S>
SynthesisResult<S> synthesize_h2(const LiftedOperators<S>& ops, const CostWeights<S>& cw,
                                 const SafetySpec<S>* safety = nullptr,
                                 const SolveOptions& opts = {}) {
    ResponseStructure<S> pb = make_structure(ops, causal_entries(ops.n, ops.m, ops.T));
    std::optional<SafetyEncoding<S>> enc;
    if (safety) enc = make_encoding(*safety, ops.nT(), ops.mT());
    Vec<S> x = detail::h2_least_squares(pb, cw.Csqrt);
    SynthesisResult<S> out;
    out.criterion = Criterion::H2;
    if (enc) {
        auto [Phi_x, Phi_u] = phi_from_x(pb, x);
        Mat<S> stacked(pb.nT + pb.mT, pb.nT);
        stacked << Phi_x, Phi_u;
        if (certify_safety(stacked, *safety).minCoeff() < S(0)) {
            check_robust_feasibility(pb, *enc, opts);
            auto [prog, constant] = build_h2_qp(pb, cw.Csqrt, &*enc);
            (void)constant;
            ConeSolution<S> sol = solve_cone(prog, opts);
            x = sol.x.head(pb.nphi());
            out.stats = sol.stats;
        }
    }
    auto [Phi_x, Phi_u] = phi_from_x(pb, x);
    out.response.Phi_x = std::move(Phi_x);
    out.response.Phi_u = std::move(Phi_u);
    Mat<S> stacked = out.response.stacked();
    out.objective = (cw.Csqrt * stacked).squaredNorm();
    if (enc) out.dual_Y = detail::reconstruct_dual(stacked, *safety);
    return out;
}

// min smax(Csq [Phi_x; Phi_u])^2: the FTC program against the zero target,
// which no achievable response attains.
template <class S>
SynthesisResult<S> synthesize_hinf(const LiftedOperators<S>& ops, const CostWeights<S>& cw,
                                   const SafetySpec<S>* safety = nullptr,
                                   const SolveOptions& opts = {}) {
    Mat<S> Zx = Mat<S>::Zero(ops.nT(), ops.nT());
    Mat<S> Zu = Mat<S>::Zero(ops.mT(), ops.nT());
    return detail::run_lambda_sdp(ops, cw, Zx, Zu, Criterion::Hinf, safety, opts);
}

// K = Phi_u Phi_x^{-1} through the unit-triangular structure of Phi_x.
template <class S>
Mat<S> reconstruct_feedback(const CausalResponse<S>& resp) {
    return resp.Phi_x.transpose()
        .template triangularView<Eigen::UnitUpper>()
        .solve(resp.Phi_u.transpose())
        .transpose();
}

// Closed-loop simulation with u_t = sum_{s<=t} K[t,s] x_s; checks that the
// recovered feedback reproduces the response maps.
template <class S>
std::pair<Vec<S>, Vec<S>> closed_loop_rollout(const LtvSystem<S>& sys, const Mat<S>& K,
                                              const Vec<S>& w) {
    const int n = sys.n, m = sys.m, T = sys.T;
    Vec<S> xs((Index)n * T), us((Index)m * T);
    xs.segment(0, n) = w.segment(0, n);
    for (int t = 0; t < T; ++t) {
        us.segment((Index)t * m, m) =
            K.block((Index)t * m, 0, m, (Index)n * (t + 1)) * xs.segment(0, (Index)n * (t + 1));
        if (t + 1 < T)
            xs.segment((Index)(t + 1) * n, n) = sys.A_seq[t] * xs.segment((Index)t * n, n) +
                                                sys.B_seq[t] * us.segment((Index)t * m, m) +
                                                w.segment((Index)(t + 1) * n, n);
    }
    return {xs, us};
}

template <class S>
Vec<S> certify_safety(const CausalResponse<S>& resp, const SafetySpec<S>& spec) {
    return certify_safety(resp.stacked(), spec);
}

template <class S>
Vec<S> certify_safety(const NoncausalResponse<S>& resp, const SafetySpec<S>& spec) {
    Mat<S> stacked(resp.Psi_x.rows() + resp.Psi_u.rows(), resp.Psi_x.cols());
    stacked << resp.Psi_x, resp.Psi_u;
    return certify_safety(stacked, spec);
}

}  // namespace ftc
