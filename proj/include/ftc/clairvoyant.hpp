#pragma once

#include <cmath>
#include <optional>
#include <utility>

#include <Eigen/LU>

#include "programs.hpp"

namespace ftc {

inline constexpr int kFullPreview = -1;

// Noncausal benchmark response; preview = kFullPreview allows dependence on
// the entire disturbance, preview = p >= 0 on at most p future blocks.
template <class S = double>
struct NoncausalResponse {
    Mat<S> Psi_x;  // nT x nT
    Mat<S> Psi_u;  // mT x nT
    int preview = kFullPreview;
};

template <class S>
S achievability_residual(const LiftedOperators<S>& ops, const Mat<S>& Px, const Mat<S>& Pu) {
    Mat<S> lhs = (Mat<S>::Identity(ops.nT(), ops.nT()) - ops.Z * ops.Ablk) * Px -
                 ops.Z * ops.Bblk * Pu;
    lhs.diagonal().array() -= S(1);
    return lhs.norm();
}

// Psi_u* = -(R + F'QF)^{-1} F'QG, the global quadratic-cost minimizer.
template <class S>
NoncausalResponse<S> unconstrained_optimal(const LiftedOperators<S>& ops,
                                           const CostWeights<S>& cw) {
    Mat<S> FtQ = ops.F.transpose() * cw.Q;
    Mat<S> P = cw.R + FtQ * ops.F;
    Eigen::SelfAdjointEigenSolver<Mat<S>> es(P, Eigen::EigenvaluesOnly);
    const S lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
    if (!(lo > S(0)) || hi / lo > S(1e12))
        throw ConfigError("unconstrained_optimal: R + F'QF is near singular (condition estimate " +
                          std::to_string((double)(hi / std::max(lo, S(1e-300)))) +
                          "); rescale R upward");
    NoncausalResponse<S> psi;
    psi.Psi_u = -Eigen::LLT<Mat<S>>(P).solve(FtQ * ops.G);
    psi.Psi_x = ops.F * psi.Psi_u + ops.G;
    psi.preview = kFullPreview;
    return psi;
}

// J(psi*, w) = w' G'Q (I + F R^{-1} F'Q)^{-1} G w.
template <class S>
S clairvoyant_cost(const LiftedOperators<S>& ops, const CostWeights<S>& cw, const Vec<S>& w) {
    if (w.size() != ops.nT()) throw DimensionError("clairvoyant_cost: w has wrong length");
    Vec<S> y = ops.G * w;
    Mat<S> M = Mat<S>::Identity(ops.nT(), ops.nT()) +
               ops.F * Eigen::LLT<Mat<S>>(cw.R).solve(ops.F.transpose() * cw.Q);
    Vec<S> z = Eigen::PartialPivLU<Mat<S>>(M).solve(y);
    return std::max(y.dot(cw.Q * z), S(0));
}

// Frobenius residual of QFP^{-1}F'Q + Q(I + FR^{-1}F'Q)^{-1} = Q.
template <class S>
S mil_identity_residual(const LiftedOperators<S>& ops, const CostWeights<S>& cw) {
    Mat<S> FtQ = ops.F.transpose() * cw.Q;
    Mat<S> P = cw.R + FtQ * ops.F;
    Mat<S> lhs = FtQ.transpose() * Eigen::LLT<Mat<S>>(P).solve(FtQ);
    Mat<S> M = Mat<S>::Identity(ops.nT(), ops.nT()) +
               ops.F * Eigen::LLT<Mat<S>>(cw.R).solve(FtQ);
    lhs += cw.Q * Eigen::PartialPivLU<Mat<S>>(M).inverse();
    return (lhs - cw.Q).norm();
}

namespace detail {

// Columnwise least squares over the free entries; the safe minimizer when no
// safety row is active.
template <class S>
Vec<S> h2_least_squares(const ResponseStructure<S>& pb, const Mat<S>& Csqrt) {
    Mat<S> Vfull = Csqrt * pb.Vs;
    Mat<S> X0(pb.nT + pb.mT, pb.nT);
    X0.topRows(pb.nT) = pb.G;
    X0.bottomRows(pb.mT).setZero();
    X0 = Csqrt * X0;
    std::vector<std::vector<Index>> col_entries(pb.nT);
    for (Index k = 0; k < pb.nphi(); ++k) col_entries[pb.entries[k].second].push_back(k);
    Vec<S> x = Vec<S>::Zero(pb.nphi());
    for (Index c = 0; c < pb.nT; ++c) {
        const auto& idx = col_entries[c];
        if (idx.empty()) continue;
        Mat<S> Vc(pb.nT + pb.mT, (Index)idx.size());
        for (size_t a = 0; a < idx.size(); ++a) Vc.col(a) = Vfull.col(pb.entries[idx[a]].first);
        Vec<S> sol = Eigen::LLT<Mat<S>>(Vc.transpose() * Vc).solve(-Vc.transpose() * X0.col(c));
        for (size_t a = 0; a < idx.size(); ++a) x[idx[a]] = sol[a];
    }
    return x;
}

}  // namespace detail

// Minimum-Frobenius-cost noncausal response under robust safety and an
// optional preview band. Tries the unconstrained minimizer first and only
// falls back to the conic QP when a safety row is active.
template <class S>
NoncausalResponse<S> constrained_h2(const LiftedOperators<S>& ops, const CostWeights<S>& cw,
                                    const SafetySpec<S>& safety, int preview = kFullPreview,
                                    const SolveOptions& opts = {}) {
    if (preview != kFullPreview && preview < 0)
        throw ConfigError("constrained_h2: preview must be >= 0 or full");
    const int band = preview == kFullPreview ? ops.T - 1 : preview;
    ResponseStructure<S> pb =
        make_structure(ops, banded_entries(ops.n, ops.m, ops.T, band));
    auto enc = make_encoding(safety, ops.nT(), ops.mT());
    Vec<S> x = detail::h2_least_squares(pb, cw.Csqrt);
    if (enc) {
        auto [Phi_x, Phi_u] = phi_from_x(pb, x);
        Mat<S> stacked(pb.nT + pb.mT, pb.nT);
        stacked << Phi_x, Phi_u;
        if (certify_safety(stacked, safety).minCoeff() < S(0)) {
            check_robust_feasibility(pb, *enc, opts);
            auto [prog, constant] = build_h2_qp(pb, cw.Csqrt, &*enc);
            (void)constant;
            x = solve_cone(prog, opts).x.head(pb.nphi());
        }
    }
    NoncausalResponse<S> psi;
    auto [Phi_x, Phi_u] = phi_from_x(pb, x);
    psi.Psi_x = std::move(Phi_x);
    psi.Psi_u = std::move(Phi_u);
    psi.preview = preview;
    return psi;
}

}  // namespace ftc
