#pragma once

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "conic.hpp"
#include "lifted.hpp"
#include "safety.hpp"

namespace ftc {

// Shared description of a response class: which block entries of Phi_u are
// free. Phi_x is always eliminated through Phi_x = F Phi_u + G, so the cone
// programs never carry its entries.
template <class S = double>
struct ResponseStructure {
    Mat<S> G, F;
    int n = 0, m = 0, T = 0;
    Index nT = 0, mT = 0;
    std::vector<std::pair<Index, Index>> entries;  // (row, col) of Phi_u
    Mat<S> Vs;                                     // [F; I], (nT+mT) x mT

    Index nphi() const { return (Index)entries.size(); }
};

inline std::vector<std::pair<Index, Index>> banded_entries(int n, int m, int T, int p) {
    std::vector<std::pair<Index, Index>> out;
    for (int t = 0; t < T; ++t)
        for (int s = 0; s < std::min(T, t + p + 1); ++s)
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    out.emplace_back((Index)t * m + i, (Index)s * n + j);
    return out;
}

inline std::vector<std::pair<Index, Index>> causal_entries(int n, int m, int T) {
    return banded_entries(n, m, T, 0);
}

template <class S>
ResponseStructure<S> make_structure(const LiftedOperators<S>& ops,
                                    std::vector<std::pair<Index, Index>> entries) {
    ResponseStructure<S> pb;
    pb.G = ops.G;
    pb.F = ops.F;
    pb.n = ops.n;
    pb.m = ops.m;
    pb.T = ops.T;
    pb.nT = ops.nT();
    pb.mT = ops.mT();
    pb.entries = std::move(entries);
    pb.Vs.resize(pb.nT + pb.mT, pb.mT);
    pb.Vs << pb.F, Mat<S>::Identity(pb.mT, pb.mT);
    return pb;
}

template <class S>
std::pair<Mat<S>, Mat<S>> phi_from_x(const ResponseStructure<S>& pb, const Vec<S>& x) {
    Mat<S> Phi_u = Mat<S>::Zero(pb.mT, pb.nT);
    for (Index k = 0; k < pb.nphi(); ++k) Phi_u(pb.entries[k].first, pb.entries[k].second) = x[k];
    Mat<S> Phi_x = pb.F * Phi_u + pb.G;
    return {std::move(Phi_x), std::move(Phi_u)};
}

// [[I, Csq(Phi - Psi)], [., lam I]] >= 0, i.e. lam >= smax(Csq(Phi-Psi))^2.
template <class S>
PsdBlock<S> build_lmi_ftc(const ResponseStructure<S>& pb, const Mat<S>& Psi_x,
                          const Mat<S>& Psi_u, int lam_var, const Mat<S>& Csqrt) {
    const Index nT = pb.nT, mT = pb.mT;
    const Index d1 = nT + mT;
    const Index dim = d1 + nT;
    Mat<S> V = Csqrt * pb.Vs;
    Mat<S> X0(d1, nT);
    X0.topRows(nT) = pb.G - Psi_x;
    X0.bottomRows(mT) = -Psi_u;
    X0 = Csqrt * X0;
    PsdBlock<S> blk;
    blk.dim = dim;
    blk.C0 = Mat<S>::Zero(dim, dim);
    blk.C0.topLeftCorner(d1, d1).setIdentity();
    blk.C0.topRightCorner(d1, nT) = X0;
    blk.C0.bottomLeftCorner(nT, d1) = X0.transpose();
    blk.pool_a = Mat<S>::Zero(dim, mT);
    blk.pool_a.topRows(d1) = V;
    blk.pool_b = Mat<S>::Zero(dim, nT);
    blk.pool_b.bottomRows(nT).setIdentity();
    blk.terms.reserve(pb.entries.size());
    for (Index k = 0; k < pb.nphi(); ++k)
        blk.terms.push_back({(int)k, (int)pb.entries[k].first, (int)pb.entries[k].second, S(1)});
    Mat<S> lam_coeff = Mat<S>::Zero(dim, dim);
    lam_coeff.bottomRightCorner(nT, nT).setIdentity();
    blk.dense_coeffs.emplace_back(lam_var, std::move(lam_coeff));
    return blk;
}

// [[lam I + Psi'C Psi, (Csq X)'], [Csq X, I]] >= 0 with X = [Phi_x; Phi_u],
// i.e. lam >= smax-form of X'CX - Psi'C Psi.
template <class S>
PsdBlock<S> build_lmi_regret(const ResponseStructure<S>& pb, const Mat<S>& Psi_x,
                             const Mat<S>& Psi_u, int lam_var, const Mat<S>& Csqrt) {
    const Index nT = pb.nT, mT = pb.mT;
    const Index d1 = nT;
    const Index dim = nT + (nT + mT);
    Mat<S> Psi(nT + mT, nT);
    Psi.topRows(nT) = Psi_x;
    Psi.bottomRows(mT) = Psi_u;
    Mat<S> CPsi = Csqrt * Psi;
    Mat<S> X0(nT + mT, nT);
    X0.topRows(nT) = pb.G;
    X0.bottomRows(mT).setZero();
    X0 = Csqrt * X0;
    PsdBlock<S> blk;
    blk.dim = dim;
    blk.C0 = Mat<S>::Zero(dim, dim);
    blk.C0.topLeftCorner(d1, d1) = CPsi.transpose() * CPsi;
    blk.C0.bottomRightCorner(nT + mT, nT + mT).setIdentity();
    blk.C0.topRightCorner(d1, nT + mT) = X0.transpose();
    blk.C0.bottomLeftCorner(nT + mT, d1) = X0;
    blk.pool_a = Mat<S>::Zero(dim, mT);
    blk.pool_a.bottomRows(nT + mT) = Csqrt * pb.Vs;
    blk.pool_b = Mat<S>::Zero(dim, nT);
    blk.pool_b.topRows(nT).setIdentity();
    blk.terms.reserve(pb.entries.size());
    for (Index k = 0; k < pb.nphi(); ++k)
        blk.terms.push_back({(int)k, (int)pb.entries[k].first, (int)pb.entries[k].second, S(1)});
    Mat<S> lam_coeff = Mat<S>::Zero(dim, dim);
    lam_coeff.topLeftCorner(d1, d1).setIdentity();
    blk.dense_coeffs.emplace_back(lam_var, std::move(lam_coeff));
    return blk;
}

// Robust safety rows for a symmetric box disturbance set, per stacked safety
// row i and disturbance coordinate j with auxiliary bound t_ij:
//   +- wbar_j (H [Phi_x; Phi_u])_ij - t_ij <= 0,    sum_j t_ij <= h_i.
// The t_ij of one safety row form an eliminable group. Rows with h_i = inf
// are skipped entirely.
template <class S>
struct SafetyRows {
    std::vector<Eigen::Triplet<S>> trip;
    std::vector<S> hl;
    std::vector<std::vector<int>> groups;
    std::vector<std::pair<Index, Index>> shared;  // (linear row, stacked safety row)
    Index naux = 0;
    Index nrow = 0;
};

template <class S>
SafetyRows<S> encode_safety_rows(const ResponseStructure<S>& pb, const Mat<S>& Hs,
                                 const Vec<S>& hvec, const Vec<S>& wbar, int aux_base) {
    const Index nT = pb.nT;
    const Index q = Hs.rows();
    if (Hs.cols() != pb.nT + pb.mT) throw DimensionError("encode_safety_rows: Hs column count");
    if (wbar.size() != nT) throw DimensionError("encode_safety_rows: wbar length");
    Mat<S> HV = Hs * pb.Vs;  // q x mT
    Mat<S> M0(q, nT);
    M0 = Hs.leftCols(nT) * pb.G;
    std::vector<std::vector<Index>> col_entries(nT);
    for (Index k = 0; k < pb.nphi(); ++k) col_entries[pb.entries[k].second].push_back(k);
    SafetyRows<S> out;
    Index nrow = 0;
    int aux = aux_base;
    for (Index i = 0; i < q; ++i) {
        if (std::isinf((double)hvec[i])) continue;
        const int g0 = aux;
        for (Index j = 0; j < nT; ++j) {
            for (S sgn : {S(1), S(-1)}) {
                for (Index k : col_entries[j]) {
                    const S hv = HV(i, pb.entries[k].first);
                    if (hv != S(0)) out.trip.emplace_back(nrow, k, sgn * wbar[j] * hv);
                }
                out.trip.emplace_back(nrow, aux, S(-1));
                out.hl.push_back(-sgn * wbar[j] * M0(i, j));
                ++nrow;
            }
            ++aux;
        }
        for (int a = g0; a < aux; ++a) out.trip.emplace_back(nrow, a, S(1));
        out.hl.push_back(hvec[i]);
        out.shared.emplace_back(nrow, i);
        ++nrow;
        std::vector<int> grp(aux - g0);
        for (int a = g0; a < aux; ++a) grp[a - g0] = a;
        out.groups.push_back(std::move(grp));
    }
    out.naux = aux - aux_base;
    out.nrow = nrow;
    return out;
}

template <class S>
struct SafetyEncoding {
    Mat<S> Hs;
    Vec<S> h;
    Vec<S> wbar;
};

namespace detail {

template <class S>
void attach_safety(ConeProgram<S>& prog, const ResponseStructure<S>& pb,
                   const SafetyEncoding<S>& enc, int aux_base, bool lam_lb_row, int lam_var) {
    SafetyRows<S> rows = encode_safety_rows(pb, enc.Hs, enc.h, enc.wbar, aux_base);
    prog.n = aux_base + (int)rows.naux;
    Vec<S> c = Vec<S>::Zero(prog.n);
    c.head(prog.c.size()) = prog.c;
    prog.c = c;
    if (lam_lb_row) {
        rows.trip.emplace_back(rows.nrow, lam_var, S(-1));
        rows.hl.push_back(S(0));
        ++rows.nrow;
    }
    Eigen::SparseMatrix<S, Eigen::RowMajor> Gl(rows.nrow, prog.n);
    Gl.setFromTriplets(rows.trip.begin(), rows.trip.end());
    prog.Gl = Gl;
    prog.hl = Eigen::Map<const Vec<S>>(rows.hl.data(), (Index)rows.hl.size());
    prog.groups = std::move(rows.groups);
}

}  // namespace detail

template <class S>
ConeProgram<S> build_ftc_sdp(const ResponseStructure<S>& pb, const Mat<S>& Psi_x,
                             const Mat<S>& Psi_u, const Mat<S>& Csqrt,
                             const SafetyEncoding<S>* enc = nullptr) {
    const int nphi = (int)pb.nphi();
    ConeProgram<S> prog;
    prog.n = nphi + 1;
    prog.c = Vec<S>::Zero(prog.n);
    prog.c[nphi] = S(1);
    prog.psd.push_back(build_lmi_ftc(pb, Psi_x, Psi_u, nphi, Csqrt));
    if (enc) {
        detail::attach_safety(prog, pb, *enc, nphi + 1, true, nphi);
    } else {
        Eigen::SparseMatrix<S, Eigen::RowMajor> Gl(1, prog.n);
        Gl.insert(0, nphi) = S(-1);
        Gl.makeCompressed();
        prog.Gl = Gl;
        prog.hl = Vec<S>::Zero(1);
    }
    prog.P.resize(prog.n, prog.n);
    return prog;
}

template <class S>
ConeProgram<S> build_regret_sdp(const ResponseStructure<S>& pb, const Mat<S>& Psi_x,
                                const Mat<S>& Psi_u, const Mat<S>& Csqrt,
                                const SafetyEncoding<S>* enc = nullptr) {
    const int nphi = (int)pb.nphi();
    ConeProgram<S> prog;
    prog.n = nphi + 1;
    prog.c = Vec<S>::Zero(prog.n);
    prog.c[nphi] = S(1);
    prog.psd.push_back(build_lmi_regret(pb, Psi_x, Psi_u, nphi, Csqrt));
    if (enc) {
        detail::attach_safety(prog, pb, *enc, nphi + 1, true, nphi);
    } else {
        Eigen::SparseMatrix<S, Eigen::RowMajor> Gl(1, prog.n);
        Gl.insert(0, nphi) = S(-1);
        Gl.makeCompressed();
        prog.Gl = Gl;
        prog.hl = Vec<S>::Zero(1);
    }
    prog.P.resize(prog.n, prog.n);
    return prog;
}

// min ||Csq [Phi_x; Phi_u]||_F^2 as a QP over the free entries; the quadratic
// decouples by disturbance column. Returns the program and the constant term.
template <class S>
std::pair<ConeProgram<S>, S> build_h2_qp(const ResponseStructure<S>& pb, const Mat<S>& Csqrt,
                                         const SafetyEncoding<S>* enc = nullptr) {
    const int nphi = (int)pb.nphi();
    const Index nT = pb.nT, mT = pb.mT;
    Mat<S> Vfull = Csqrt * pb.Vs;
    Mat<S> X0(nT + mT, nT);
    X0.topRows(nT) = pb.G;
    X0.bottomRows(mT).setZero();
    X0 = Csqrt * X0;
    std::vector<std::vector<Index>> col_entries(nT);
    for (Index k = 0; k < pb.nphi(); ++k) col_entries[pb.entries[k].second].push_back(k);
    std::vector<Eigen::Triplet<S>> ptrip;
    Vec<S> cvec = Vec<S>::Zero(nphi);
    S constant = S(0);
    for (Index c = 0; c < nT; ++c) {
        const auto& idx = col_entries[c];
        const Index kc = (Index)idx.size();
        Mat<S> Vc(nT + mT, kc);
        for (Index a = 0; a < kc; ++a) Vc.col(a) = Vfull.col(pb.entries[idx[a]].first);
        Mat<S> Pblk = S(2) * (Vc.transpose() * Vc);
        for (Index a = 0; a < kc; ++a)
            for (Index b = 0; b < kc; ++b) ptrip.emplace_back(idx[a], idx[b], Pblk(a, b));
        Vec<S> cb = S(2) * (Vc.transpose() * X0.col(c));
        for (Index a = 0; a < kc; ++a) cvec[idx[a]] = cb[a];
        constant += X0.col(c).squaredNorm();
    }
    ConeProgram<S> prog;
    prog.n = nphi;
    prog.c = cvec;
    if (enc) detail::attach_safety(prog, pb, *enc, nphi, false, -1);
    prog.P.resize(prog.n, prog.n);
    prog.P.setFromTriplets(ptrip.begin(), ptrip.end());
    return {std::move(prog), constant};
}

// Feasibility pre-check: min v over (Phi, t, v) with the private rows intact
// and each shared row relaxed to sum_j t_ij - v <= h_i. A positive optimum
// certifies that no response in the class satisfies the safe set robustly.
template <class S>
struct FeasibilityLp {
    ConeProgram<S> prog;
    int margin_var = -1;
    std::vector<int> shared_row_of;  // linear row -> stacked safety row, -1 for private
};

template <class S>
FeasibilityLp<S> build_feasibility_lp(const ResponseStructure<S>& pb,
                                      const SafetyEncoding<S>& enc) {
    const int nphi = (int)pb.nphi();
    SafetyRows<S> rows = encode_safety_rows(pb, enc.Hs, enc.h, enc.wbar, nphi + 1);
    FeasibilityLp<S> out;
    out.margin_var = nphi;
    out.prog.n = nphi + 1 + (int)rows.naux;
    out.prog.c = Vec<S>::Zero(out.prog.n);
    out.prog.c[nphi] = S(1);
    out.shared_row_of.assign(rows.nrow, -1);
    for (const auto& [lin, stacked] : rows.shared) {
        rows.trip.emplace_back(lin, nphi, S(-1));
        out.shared_row_of[lin] = (int)stacked;
    }
    Eigen::SparseMatrix<S, Eigen::RowMajor> Gl(rows.nrow, out.prog.n);
    Gl.setFromTriplets(rows.trip.begin(), rows.trip.end());
    out.prog.Gl = Gl;
    out.prog.hl = Eigen::Map<const Vec<S>>(rows.hl.data(), (Index)rows.hl.size());
    out.prog.groups = std::move(rows.groups);
    out.prog.P.resize(out.prog.n, out.prog.n);
    return out;
}

// Translates a SafetySpec into encoder inputs. Returns nullopt when every
// bound is infinite (nothing to enforce). Only symmetric box disturbance
// sets admit the l1 row encoding the synthesis programs rely on.
template <class S>
std::optional<SafetyEncoding<S>> make_encoding(const SafetySpec<S>& spec, Index nT, Index mT) {
    spec.validate(nT, mT);
    if (!spec.h.size() || spec.h.minCoeff() == std::numeric_limits<S>::infinity())
        return std::nullopt;
    auto box = detect_box(spec.Hw, spec.hw);
    if (!box)
        throw ConfigError(
            "synthesis requires a symmetric box disturbance set; certify_safety handles "
            "general polytopes");
    SafetyEncoding<S> enc;
    enc.Hs = spec.stacked();
    enc.h = spec.h;
    enc.wbar = box->wbar;
    return enc;
}

// Solves the margin LP; throws InfeasibleError carrying the minimal
// achievable worst-case violation and the stacked safety row attaining it.
template <class S>
void check_robust_feasibility(const ResponseStructure<S>& pb, const SafetyEncoding<S>& enc,
                              const SolveOptions& opts = {}) {
    FeasibilityLp<S> lp = build_feasibility_lp(pb, enc);
    ConeSolution<S> sol = solve_cone(lp.prog, opts);
    const S margin = sol.x[lp.margin_var];
    if (margin <= S(1e-8)) return;
    Vec<S> resid = lp.prog.Gl * sol.x - lp.prog.hl;
    int worst_row = -1;
    S worst = -std::numeric_limits<S>::infinity();
    for (Index r = 0; r < resid.size(); ++r) {
        if (lp.shared_row_of[r] < 0) continue;
        // undo the -v term to recover the actual violation of this row
        const S viol = resid[r] + sol.x[lp.margin_var];
        if (viol > worst) {
            worst = viol;
            worst_row = lp.shared_row_of[r];
        }
    }
    throw InfeasibleError("safety constraints are robustly infeasible for this response class: "
                          "minimal worst-case violation " +
                              std::to_string((double)margin) + " on stacked safety row " +
                              std::to_string(worst_row),
                          (double)margin, worst_row);
}

}  // namespace ftc
