#pragma once

#include <vector>

#include <Eigen/Eigenvalues>

#include "common.hpp"

namespace ftc {

// Finite-horizon plant x_{t+1} = A_t x_t + B_t u_t + w_t. A_seq/B_seq hold
// T-1 matrices; both are empty when T = 1.
template <class S = double>
struct LtvSystem {
    int n = 0;
    int m = 0;
    int T = 0;
    std::vector<Mat<S>> A_seq;
    std::vector<Mat<S>> B_seq;

    void validate() const {
        if (n <= 0 || m <= 0 || T <= 0)
            throw DimensionError("LtvSystem: n, m, T must be positive");
        if ((int)A_seq.size() != T - 1 || (int)B_seq.size() != T - 1)
            throw DimensionError("LtvSystem: need exactly T-1 matrices in A_seq and B_seq");
        for (int t = 0; t < T - 1; ++t) {
            if (A_seq[t].rows() != n || A_seq[t].cols() != n)
                throw DimensionError("LtvSystem: A_seq[" + std::to_string(t) + "] is not n x n");
            if (B_seq[t].rows() != n || B_seq[t].cols() != m)
                throw DimensionError("LtvSystem: B_seq[" + std::to_string(t) + "] is not n x m");
        }
    }

    static LtvSystem time_invariant(const Mat<S>& A, const Mat<S>& B, int T) {
        LtvSystem sys;
        sys.n = (int)A.rows();
        sys.m = (int)B.cols();
        sys.T = T;
        sys.A_seq.assign(std::max(T - 1, 0), A);
        sys.B_seq.assign(std::max(T - 1, 0), B);
        sys.validate();
        return sys;
    }
};

// Stacked operators on block trajectories. w stacks (x0, w_0, ..., w_{T-2}),
// so x = F u + G w and G carries the homogeneous response.
template <class S = double>
struct LiftedOperators {
    int n = 0, m = 0, T = 0;
    Mat<S> Z;     // nT x nT block downshift
    Mat<S> Ablk;  // nT x nT blkdiag(A_0..A_{T-2}, 0)
    Mat<S> Bblk;  // nT x mT blkdiag(B_0..B_{T-2}, 0)
    Mat<S> F;     // nT x mT, strictly lower block triangular
    Mat<S> G;     // nT x nT, unit-diagonal lower block triangular

    Index nT() const { return (Index)n * T; }
    Index mT() const { return (Index)m * T; }
};

template <class S>
LiftedOperators<S> build_lifted(const LtvSystem<S>& sys) {
    sys.validate();
    const int n = sys.n, m = sys.m, T = sys.T;
    const Index nT = (Index)n * T, mT = (Index)m * T;
    LiftedOperators<S> ops;
    ops.n = n;
    ops.m = m;
    ops.T = T;
    ops.Z = Mat<S>::Zero(nT, nT);
    ops.Ablk = Mat<S>::Zero(nT, nT);
    ops.Bblk = Mat<S>::Zero(nT, mT);
    for (int t = 1; t < T; ++t)
        ops.Z.block(t * n, (t - 1) * n, n, n).setIdentity();
    for (int t = 0; t < T - 1; ++t) {
        ops.Ablk.block(t * n, t * n, n, n) = sys.A_seq[t];
        ops.Bblk.block(t * n, t * m, n, m) = sys.B_seq[t];
    }
    // (I - Z Ablk) is unit lower block triangular; invert by forward
    // substitution one block row at a time.
    ops.G = Mat<S>::Zero(nT, nT);
    for (int t = 0; t < T; ++t)
        ops.G.block(t * n, t * n, n, n).setIdentity();
    for (int t = 1; t < T; ++t)
        for (int s = 0; s < t; ++s)
            ops.G.block(t * n, s * n, n, n) =
                sys.A_seq[t - 1] * ops.G.block((t - 1) * n, s * n, n, n);
    ops.F = Mat<S>::Zero(nT, mT);
    for (int t = 1; t < T; ++t)
        for (int s = 0; s < t; ++s)
            ops.F.block(t * n, s * m, n, m) =
                ops.G.block(t * n, (s + 1) * n, n, n) * sys.B_seq[s];
    return ops;
}

// Steps the recursion directly; independent of F and G.
template <class S, class DW, class DU>
Vec<S> rollout(const LtvSystem<S>& sys, const Eigen::MatrixBase<DW>& w,
               const Eigen::MatrixBase<DU>& u) {
    const int n = sys.n, m = sys.m, T = sys.T;
    if (w.size() != (Index)n * T) throw DimensionError("rollout: w has wrong length");
    if (u.size() != (Index)m * T) throw DimensionError("rollout: u has wrong length");
    Vec<S> x = Vec<S>::Zero((Index)n * T);
    x.head(n) = w.head(n);
    for (int t = 0; t + 1 < T; ++t)
        x.segment((t + 1) * n, n) = sys.A_seq[t] * x.segment(t * n, n) +
                                    sys.B_seq[t] * u.segment(t * m, m) +
                                    w.segment((t + 1) * n, n);
    return x;
}

namespace detail {

template <class S>
Mat<S> psd_sqrt(const Mat<S>& M, S floor = S(0)) {
    Eigen::SelfAdjointEigenSolver<Mat<S>> es(M);
    Vec<S> ev = es.eigenvalues().cwiseMax(floor);
    return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

// Stage weights stacked over the horizon; C = blkdiag(Q, R). Q is floored to
// the PSD cone before taking the square root, R must be positive definite.
template <class S = double>
struct CostWeights {
    Mat<S> Q;      // nT x nT
    Mat<S> R;      // mT x mT
    Mat<S> C;      // (n+m)T square
    Mat<S> Csqrt;  // symmetric PSD square root of C

    static CostWeights from(const Mat<S>& Q_in, const Mat<S>& R_in) {
        if (Q_in.rows() != Q_in.cols() || R_in.rows() != R_in.cols())
            throw DimensionError("CostWeights: Q and R must be square");
        CostWeights cw;
        Eigen::SelfAdjointEigenSolver<Mat<S>> esq(Q_in);
        cw.Q = esq.eigenvectors() * esq.eigenvalues().cwiseMax(S(0)).asDiagonal() *
               esq.eigenvectors().transpose();
        Eigen::SelfAdjointEigenSolver<Mat<S>> esr(R_in, Eigen::EigenvaluesOnly);
        if (esr.eigenvalues().minCoeff() <= S(1e-12))
            throw DimensionError("CostWeights: R must be positive definite");
        cw.R = R_in;
        const Index nq = Q_in.rows(), nr = R_in.rows();
        cw.C = Mat<S>::Zero(nq + nr, nq + nr);
        cw.C.topLeftCorner(nq, nq) = cw.Q;
        cw.C.bottomRightCorner(nr, nr) = cw.R;
        cw.Csqrt = Mat<S>::Zero(nq + nr, nq + nr);
        cw.Csqrt.topLeftCorner(nq, nq) = detail::psd_sqrt(cw.Q);
        cw.Csqrt.bottomRightCorner(nr, nr) = detail::psd_sqrt(cw.R);
        return cw;
    }

    static CostWeights identity(int n, int m, int T) {
        CostWeights cw;
        const Index nT = (Index)n * T, mT = (Index)m * T;
        cw.Q = Mat<S>::Identity(nT, nT);
        cw.R = Mat<S>::Identity(mT, mT);
        cw.C = Mat<S>::Identity(nT + mT, nT + mT);
        cw.Csqrt = cw.C;
        return cw;
    }

    bool is_identity() const {
        return C.isIdentity(S(0));
    }
};

}  // namespace ftc
