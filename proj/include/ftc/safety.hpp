#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "conic.hpp"
#include "lifted.hpp"

namespace ftc {

// Polytopic safe set H_x x <= h per-trajectory row alongside H_u u, robust
// over the disturbance polytope {w : H_w w <= h_w}. The stacked row matrix is
// H = [H_x  H_u] applied to [x; u] = [Phi_x; Phi_u] w.
template <class S = double>
struct SafetySpec {
    Mat<S> Hx;  // q x nT
    Mat<S> Hu;  // q x mT
    Vec<S> h;   // q
    Mat<S> Hw;  // r x nT
    Vec<S> hw;  // r

    Index rows() const { return Hx.rows(); }

    void validate(Index nT, Index mT) const {
        if (Hx.cols() != nT) throw DimensionError("SafetySpec: Hx must have nT columns");
        if (Hu.cols() != mT) throw DimensionError("SafetySpec: Hu must have mT columns");
        if (Hu.rows() != Hx.rows() || h.size() != Hx.rows())
            throw DimensionError("SafetySpec: Hx, Hu, h row counts differ");
        if (Hw.cols() != nT || hw.size() != Hw.rows())
            throw DimensionError("SafetySpec: Hw/hw sized against nT");
    }

    Mat<S> stacked() const {
        Mat<S> H(Hx.rows(), Hx.cols() + Hu.cols());
        H << Hx, Hu;
        return H;
    }

    // |x_t| <= x_bound, |u_t| <= u_bound componentwise, w in [-w_bound, w_bound]^nT.
    // Rows ordered x+, x-, u+, u-. Infinite bounds yield vacuous rows that the
    // encoders skip.
    static SafetySpec box(int n, int m, int T, S x_bound, S u_bound, S w_bound = S(1)) {
        const Index nT = (Index)n * T, mT = (Index)m * T;
        SafetySpec sp;
        sp.Hx = Mat<S>::Zero(2 * (nT + mT), nT);
        sp.Hu = Mat<S>::Zero(2 * (nT + mT), mT);
        sp.Hx.topRows(nT).setIdentity();
        sp.Hx.block(nT, 0, nT, nT) = -Mat<S>::Identity(nT, nT);
        sp.Hu.block(2 * nT, 0, mT, mT).setIdentity();
        sp.Hu.bottomRows(mT) = -Mat<S>::Identity(mT, mT);
        sp.h.resize(2 * (nT + mT));
        sp.h.head(2 * nT).setConstant(x_bound);
        sp.h.tail(2 * mT).setConstant(u_bound);
        sp.Hw.resize(2 * nT, nT);
        sp.Hw << Mat<S>::Identity(nT, nT), -Mat<S>::Identity(nT, nT);
        sp.hw = Vec<S>::Constant(2 * nT, w_bound);
        return sp;
    }
};

// Recognized origin-symmetric box disturbance sets; wbar holds per-coordinate
// half-widths and pos_row/neg_row map coordinates back to the Hw rows so dual
// multipliers can be placed on the right constraint.
template <class S = double>
struct BoxDisturbance {
    Vec<S> wbar;
    std::vector<int> pos_row, neg_row;
};

template <class S>
std::optional<BoxDisturbance<S>> detect_box(const Mat<S>& Hw, const Vec<S>& hw) {
    const Index r = Hw.rows(), nT = Hw.cols();
    if (r != 2 * nT) return std::nullopt;
    BoxDisturbance<S> box;
    box.wbar = Vec<S>::Constant(nT, S(-1));
    box.pos_row.assign(nT, -1);
    box.neg_row.assign(nT, -1);
    Vec<S> lo = Vec<S>::Constant(nT, S(-1));
    for (Index i = 0; i < r; ++i) {
        Index j = -1;
        for (Index c = 0; c < nT; ++c) {
            if (Hw(i, c) != S(0)) {
                if (j != -1) return std::nullopt;
                j = c;
            }
        }
        if (j == -1) return std::nullopt;
        const S bound = hw[i] / std::abs((double)Hw(i, j));
        if (!(bound > S(0)) || !std::isfinite((double)bound)) return std::nullopt;
        if (Hw(i, j) > S(0)) {
            if (box.pos_row[j] != -1) return std::nullopt;
            box.pos_row[j] = (int)i;
            box.wbar[j] = bound;
        } else {
            if (box.neg_row[j] != -1) return std::nullopt;
            box.neg_row[j] = (int)i;
            lo[j] = bound;
        }
    }
    for (Index j = 0; j < nT; ++j) {
        if (box.pos_row[j] == -1 || box.neg_row[j] == -1) return std::nullopt;
        if (std::abs((double)(box.wbar[j] - lo[j])) >
            1e-12 * std::max(1.0, (double)box.wbar[j]))
            return std::nullopt;
    }
    return box;
}

namespace detail {

// max_{Hw w <= hw} g.w by LP; assumes the polytope is bounded and nonempty.
template <class S>
S polytope_support(const Mat<S>& Hw, const Vec<S>& hw, const Vec<S>& g) {
    ConeProgram<S> prog;
    prog.n = (int)g.size();
    prog.c = -g;
    prog.P.resize(prog.n, prog.n);
    Eigen::SparseMatrix<S, Eigen::RowMajor> Gl(Hw.rows(), prog.n);
    std::vector<Eigen::Triplet<S>> tr;
    for (Index i = 0; i < Hw.rows(); ++i)
        for (Index j = 0; j < Hw.cols(); ++j)
            if (Hw(i, j) != S(0)) tr.emplace_back(i, j, Hw(i, j));
    Gl.setFromTriplets(tr.begin(), tr.end());
    prog.Gl = Gl;
    prog.hl = hw;
    auto sol = solve_cone(prog);
    return g.dot(sol.x);
}

}  // namespace detail

// Throws unless {w : Hw w <= hw} is bounded and nonempty. The box fast path
// is analytic; general polytopes are checked by per-coordinate support LPs.
template <class S>
void check_disturbance_set(const SafetySpec<S>& spec) {
    if (detect_box(spec.Hw, spec.hw)) return;
    const Index nT = spec.Hw.cols();
    {
        // margin LP: min v s.t. Hw w - v <= hw; empty iff min > 0
        ConeProgram<S> prog;
        prog.n = (int)nT + 1;
        prog.c = Vec<S>::Zero(prog.n);
        prog.c[nT] = S(1);
        prog.P.resize(prog.n, prog.n);
        Eigen::SparseMatrix<S, Eigen::RowMajor> Gl(spec.Hw.rows(), prog.n);
        std::vector<Eigen::Triplet<S>> tr;
        for (Index i = 0; i < spec.Hw.rows(); ++i) {
            for (Index j = 0; j < nT; ++j)
                if (spec.Hw(i, j) != S(0)) tr.emplace_back(i, j, spec.Hw(i, j));
            tr.emplace_back(i, nT, S(-1));
        }
        Gl.setFromTriplets(tr.begin(), tr.end());
        prog.Gl = Gl;
        prog.hl = spec.hw;
        S margin;
        try {
            margin = solve_cone(prog).x[nT];
        } catch (const SolverError&) {
            throw ConfigError("SafetySpec: disturbance polytope is unbounded or degenerate");
        }
        if (margin > S(1e-8)) throw ConfigError("SafetySpec: disturbance polytope is empty");
    }
    for (Index j = 0; j < nT; ++j) {
        for (S sgn : {S(1), S(-1)}) {
            Vec<S> g = Vec<S>::Zero(nT);
            g[j] = sgn;
            try {
                detail::polytope_support(spec.Hw, spec.hw, g);
            } catch (const SolverError&) {
                throw ConfigError("SafetySpec: disturbance polytope is unbounded in coordinate " +
                                  std::to_string(j));
            }
        }
    }
}

// Worst-case slack h_i - max_{w in W} (H [Phi_x; Phi_u])_i w per safety row.
// Box sets use the weighted l1 closed form, anything else one LP per row.
template <class S>
Vec<S> certify_safety(const Mat<S>& stacked_response, const SafetySpec<S>& spec) {
    spec.validate(stacked_response.cols(), stacked_response.rows() - stacked_response.cols());
    Mat<S> Gmat = spec.stacked() * stacked_response;  // q x nT
    Vec<S> slack(spec.rows());
    auto box = detect_box(spec.Hw, spec.hw);
    for (Index i = 0; i < spec.rows(); ++i) {
        if (std::isinf((double)spec.h[i])) {
            slack[i] = std::numeric_limits<S>::infinity();
            continue;
        }
        const S worst = box ? Gmat.row(i).cwiseAbs().dot(box->wbar)
                            : detail::polytope_support(spec.Hw, spec.hw,
                                                       Vec<S>(Gmat.row(i).transpose()));
        slack[i] = spec.h[i] - worst;
    }
    return slack;
}

}  // namespace ftc
