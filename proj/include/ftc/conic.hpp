#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <Eigen/Sparse>

#include "common.hpp"

namespace ftc {

// Linear matrix inequality C0 + sum_j x_j Coeff_j >= 0. Coefficients are
// stored low-rank through two column pools: a term (var, ia, ib, scale)
// contributes scale * (a_ia b_ib' + b_ib a_ia'). Full-rank coefficients go
// into dense_coeffs.
template <class S = double>
struct PsdBlock {
    Index dim = 0;
    Mat<S> C0;
    Mat<S> pool_a;
    Mat<S> pool_b;
    struct Term {
        int var;
        int ia;
        int ib;
        S scale;
    };
    std::vector<Term> terms;
    std::vector<std::pair<int, Mat<S>>> dense_coeffs;

    Mat<S> coeff_apply(const Vec<S>& x) const {
        Mat<S> M = Mat<S>::Zero(pool_a.cols(), pool_b.cols());
        for (const auto& t : terms) M(t.ia, t.ib) += t.scale * x[t.var];
        Mat<S> half = pool_a * M * pool_b.transpose();
        Mat<S> out = half + half.transpose();
        for (const auto& [v, Cm] : dense_coeffs) out += x[v] * Cm;
        return out;
    }

    void coeff_adjoint(const Mat<S>& Z, Vec<S>& out) const {
        Mat<S> Tm = pool_a.transpose() * Z * pool_b;
        for (const auto& t : terms) out[t.var] += S(2) * t.scale * Tm(t.ia, t.ib);
        for (const auto& [v, Cm] : dense_coeffs) out[v] += (Cm.array() * Z.array()).sum();
    }
};

// min 1/2 x'Px + c'x  s.t.  A x = b,  Gl x + s = hl (s >= 0),  LMI_k(x) >= 0.
// groups lists disjoint index sets of auxiliary variables that appear only in
// linear-cone rows; they are eliminated from the Schur complement.
template <class S = double>
struct ConeProgram {
    int n = 0;
    Eigen::SparseMatrix<S> P;
    Vec<S> c;
    Mat<S> A;
    Vec<S> b;
    Eigen::SparseMatrix<S, Eigen::RowMajor> Gl;
    Vec<S> hl;
    std::vector<PsdBlock<S>> psd;
    std::vector<std::vector<int>> groups;
};

struct SolveOptions {
    double feastol = 1e-8;
    double abstol = 1e-9;
    double reltol = 1e-8;
    int maxiter = 100;
    int refine = 1;
    bool verbose = false;
};

struct SolveStats {
    int iterations = 0;
    double gap = 0, relgap = 0, pres = 0, dres = 0, pcost = 0, dcost = 0;
};

template <class S = double>
struct ConeSolution {
    Vec<S> x;
    Vec<S> y;
    Vec<S> sl, zl;
    std::vector<Mat<S>> sp, zp;
    SolveStats stats;
};

struct SolverError : std::runtime_error {
    SolveStats stats;
    SolverError(const std::string& msg, SolveStats st) : std::runtime_error(msg), stats(st) {}
};

namespace detail {

template <class S>
struct ConeVec {
    Vec<S> l;
    std::vector<Mat<S>> p;
};

template <class S>
S cone_dot(const Vec<S>& al, const std::vector<Mat<S>>& ap, const Vec<S>& bl,
           const std::vector<Mat<S>>& bp) {
    S v = al.size() ? al.dot(bl) : S(0);
    for (size_t k = 0; k < ap.size(); ++k) v += (ap[k].array() * bp[k].array()).sum();
    return v;
}

template <class S>
S cone_norm(const Vec<S>& al, const std::vector<Mat<S>>& ap) {
    return std::sqrt(std::max(cone_dot(al, ap, al, ap), S(0)));
}

// Nesterov-Todd scaling state. For the PSD blocks r, rti are maintained
// incrementally from the step eigensystems rather than refactored.
template <class S>
struct Scaling {
    Vec<S> d, lmbda_l;
    std::vector<Mat<S>> r, rti;
    std::vector<Vec<S>> lmbda_p;
};

template <class S>
class ConeSolver {
  public:
    ConeSolver(const ConeProgram<S>& prog, const SolveOptions& opts)
        : prog_(prog), opts_(opts) {
        setup();
    }

    ConeSolution<S> run();

  private:
    const ConeProgram<S>& prog_;
    SolveOptions opts_;

    int n_ = 0;
    Index ml_ = 0;
    Index peq_ = 0;
    bool has_eq_ = false;
    bool has_p_ = false;
    Index degree_ = 0;

    std::vector<int> aux_idx_, dense_idx_;
    std::vector<int> dpos_, apos_, group_of_;
    std::vector<bool> is_aux_;
    Index nd_ = 0, naux_ = 0;
    bool use_elim_ = false;
    std::vector<std::pair<int, int>> group_slices_;

    // per-row split of Gl into dense and aux parts (CSR layout)
    std::vector<int> rd_ptr_, ra_ptr_;
    std::vector<int> rd_col_, ra_col_;
    std::vector<S> rd_val_, ra_val_;
    std::vector<int> row_aux_count_, row_group_;

    // factorization state, rebuilt every iteration
    Mat<S> schur_, schur_f_;
    Vec<S> dS_;
    Mat<S> Ad_, meq_f_;
    struct BlkCache {
        Mat<S> As, Bs;
        std::vector<std::pair<int, Mat<S>>> Cts;
    };
    std::vector<BlkCache> pcache_;
    Vec<S> w_d_;  // copy of the scaling d used by this factorization
    Eigen::SparseMatrix<S> cross_, cs_;
    struct GroupElim {
        int lo, hi;
        Vec<S> Dinv;
        Mat<S> Umat;
        Mat<S> Bf;  // cholesky factor, 0x0 when the group has no shared rows
    };
    std::vector<GroupElim> elim_;

    void setup();
    void factor_kkt(const Scaling<S>& W);

    ConeVec<S> apply_G(const Vec<S>& x) const {
        ConeVec<S> out;
        if (ml_) out.l = prog_.Gl * x;
        else out.l.resize(0);
        out.p.reserve(prog_.psd.size());
        for (const auto& blk : prog_.psd) out.p.push_back(-blk.coeff_apply(x));
        return out;
    }

    Vec<S> adjoint_G(const Vec<S>& zl, const std::vector<Mat<S>>& zp) const {
        Vec<S> out = ml_ ? Vec<S>(prog_.Gl.transpose() * zl) : Vec<S>(Vec<S>::Zero(n_));
        for (size_t k = 0; k < prog_.psd.size(); ++k) {
            Vec<S> tmp = Vec<S>::Zero(n_);
            prog_.psd[k].coeff_adjoint(zp[k], tmp);
            out -= tmp;
        }
        return out;
    }

    ConeVec<S> apply_Gsc(const Vec<S>& x) const {
        ConeVec<S> out;
        if (ml_) out.l = (prog_.Gl * x).cwiseQuotient(w_d_);
        else out.l.resize(0);
        out.p.reserve(prog_.psd.size());
        for (size_t k = 0; k < prog_.psd.size(); ++k) {
            const auto& blk = prog_.psd[k];
            const auto& pc = pcache_[k];
            Mat<S> M = Mat<S>::Zero(pc.As.cols(), pc.Bs.cols());
            for (const auto& t : blk.terms) M(t.ia, t.ib) += t.scale * x[t.var];
            Mat<S> half = pc.As * M * pc.Bs.transpose();
            Mat<S> o = half + half.transpose();
            for (const auto& [v, Ct] : pc.Cts) o += x[v] * Ct;
            out.p.push_back(-o);
        }
        return out;
    }

    Vec<S> adjoint_Gsc(const Vec<S>& zl_s, const std::vector<Mat<S>>& zp_s) const {
        Vec<S> out;
        if (ml_) out = prog_.Gl.transpose() * zl_s.cwiseQuotient(w_d_);
        else out = Vec<S>::Zero(n_);
        for (size_t k = 0; k < prog_.psd.size(); ++k) {
            const auto& blk = prog_.psd[k];
            const auto& pc = pcache_[k];
            Mat<S> Tm = pc.As.transpose() * zp_s[k] * pc.Bs;
            for (const auto& t : blk.terms) out[t.var] -= S(2) * t.scale * Tm(t.ia, t.ib);
            for (const auto& [v, Ct] : pc.Cts) out[v] -= (Ct.array() * zp_s[k].array()).sum();
        }
        return out;
    }

    Vec<S> solve_dense(const Vec<S>& rd) const {
        Vec<S> v = rd.cwiseQuotient(dS_);
        schur_f_.template triangularView<Eigen::Lower>().solveInPlace(v);
        schur_f_.template triangularView<Eigen::Lower>().transpose().solveInPlace(v);
        return v.cwiseQuotient(dS_);
    }

    Vec<S> saa_solve(const Vec<S>& ra) const {
        Vec<S> out = Vec<S>::Zero(ra.size());
        for (const auto& e : elim_) {
            Vec<S> v = e.Dinv.cwiseProduct(ra.segment(e.lo, e.hi - e.lo));
            if (e.Bf.size()) {
                Vec<S> t = e.Umat.transpose() * v;
                e.Bf.template triangularView<Eigen::Lower>().solveInPlace(t);
                e.Bf.template triangularView<Eigen::Lower>().transpose().solveInPlace(t);
                v -= e.Dinv.cwiseProduct(e.Umat * t);
            }
            out.segment(e.lo, e.hi - e.lo) = v;
        }
        return out;
    }

    Vec<S> elim_backcross(const Vec<S>& ra) const {
        Vec<S> out = Vec<S>::Zero(nd_);
        for (const auto& e : elim_) {
            if (!e.Bf.size()) continue;
            Vec<S> t = e.Umat.transpose() * e.Dinv.cwiseProduct(ra.segment(e.lo, e.hi - e.lo));
            e.Bf.template triangularView<Eigen::Lower>().solveInPlace(t);
            e.Bf.template triangularView<Eigen::Lower>().transpose().solveInPlace(t);
            Vec<S> ug = e.Umat * t;
            for (int j = 0; j < (int)ug.size(); ++j) {
                const S w = ug[j];
                if (w == S(0)) continue;
                for (typename Eigen::SparseMatrix<S>::InnerIterator it(cs_, e.lo + j); it; ++it)
                    out[it.row()] += w * it.value();
            }
        }
        return out;
    }

    void kkt_solve(const Vec<S>& bx, const Vec<S>& by, const Vec<S>& bz_l,
                   const std::vector<Mat<S>>& bz_p, Vec<S>& x, Vec<S>& y, Vec<S>& dz_l,
                   std::vector<Mat<S>>& dz_p) const {
        Vec<S> r_all = adjoint_Gsc(bz_l, bz_p) + bx;
        Vec<S> rd(nd_);
        for (Index i = 0; i < nd_; ++i) rd[i] = r_all[dense_idx_[i]];
        Vec<S> ra;
        if (use_elim_) {
            ra.resize(naux_);
            for (Index i = 0; i < naux_; ++i) ra[i] = r_all[aux_idx_[i]];
            Vec<S> csra = Vec<S>::Zero(nd_);
            for (Index a = 0; a < naux_; ++a)
                for (typename Eigen::SparseMatrix<S>::InnerIterator it(cs_, a); it; ++it)
                    csra[it.row()] += it.value() * ra[a];
            rd -= csra;
            rd += elim_backcross(ra);
        }
        Vec<S> xd;
        if (has_eq_) {
            Vec<S> t = solve_dense(rd);
            Vec<S> rhs_y = Ad_ * t - by;
            meq_f_.template triangularView<Eigen::Lower>().solveInPlace(rhs_y);
            meq_f_.template triangularView<Eigen::Lower>().transpose().solveInPlace(rhs_y);
            y = rhs_y;
            xd = solve_dense(rd - Ad_.transpose() * y);
        } else {
            y.resize(0);
            xd = solve_dense(rd);
        }
        x = Vec<S>::Zero(n_);
        for (Index i = 0; i < nd_; ++i) x[dense_idx_[i]] = xd[i];
        if (use_elim_) {
            Vec<S> ra2 = ra;
            for (Index a = 0; a < naux_; ++a) {
                S acc = S(0);
                for (typename Eigen::SparseMatrix<S>::InnerIterator it(cross_, a); it; ++it)
                    acc += it.value() * xd[it.row()];
                ra2[a] -= acc;
            }
            Vec<S> xa = saa_solve(ra2);
            for (Index i = 0; i < naux_; ++i) x[aux_idx_[i]] = xa[i];
        }
        ConeVec<S> gx = apply_Gsc(x);
        if (ml_) dz_l = gx.l - bz_l;
        else dz_l.resize(0);
        dz_p.resize(bz_p.size());
        for (size_t k = 0; k < bz_p.size(); ++k) dz_p[k] = gx.p[k] - bz_p[k];
    }

    void kkt_with_refine(const Vec<S>& bx, const Vec<S>& by, const Vec<S>& bz_l,
                         const std::vector<Mat<S>>& bz_p, Vec<S>& x, Vec<S>& y, Vec<S>& zl,
                         std::vector<Mat<S>>& zp) const {
        kkt_solve(bx, by, bz_l, bz_p, x, y, zl, zp);
        for (int pass = 0; pass < opts_.refine; ++pass) {
            Vec<S> rx = bx - adjoint_Gsc(zl, zp);
            if (has_p_) rx -= prog_.P * x;
            if (has_eq_) rx -= prog_.A.transpose() * y;
            Vec<S> ry;
            if (has_eq_) ry = by - prog_.A * x;
            else ry.resize(0);
            ConeVec<S> g = apply_Gsc(x);
            Vec<S> rzl;
            if (ml_) rzl = bz_l - g.l + zl;
            else rzl.resize(0);
            std::vector<Mat<S>> rzp(bz_p.size());
            for (size_t k = 0; k < bz_p.size(); ++k) rzp[k] = bz_p[k] - g.p[k] + zp[k];
            Vec<S> dx, dy, dzl;
            std::vector<Mat<S>> dzp;
            kkt_solve(rx, ry, rzl, rzp, dx, dy, dzl, dzp);
            x += dx;
            if (has_eq_) y += dy;
            if (ml_) zl += dzl;
            for (size_t k = 0; k < zp.size(); ++k) zp[k] += dzp[k];
        }
    }
};

template <class S>
void ConeSolver<S>::setup() {
    n_ = prog_.n;
    ml_ = prog_.Gl.rows();
    has_eq_ = prog_.A.rows() > 0;
    peq_ = prog_.A.rows();
    has_p_ = prog_.P.nonZeros() > 0;

    is_aux_.assign(n_, false);
    group_of_.assign(n_, -1);
    int off = 0;
    for (size_t gi = 0; gi < prog_.groups.size(); ++gi) {
        group_slices_.emplace_back(off, off + (int)prog_.groups[gi].size());
        for (int v : prog_.groups[gi]) {
            aux_idx_.push_back(v);
            is_aux_[v] = true;
            group_of_[v] = (int)gi;
        }
        off += (int)prog_.groups[gi].size();
    }
    naux_ = (Index)aux_idx_.size();
    use_elim_ = naux_ > 0;
    dpos_.assign(n_, -1);
    apos_.assign(n_, -1);
    for (int v = 0; v < n_; ++v)
        if (!is_aux_[v]) {
            dpos_[v] = (int)dense_idx_.size();
            dense_idx_.push_back(v);
        }
    nd_ = (Index)dense_idx_.size();
    for (Index i = 0; i < naux_; ++i) apos_[aux_idx_[i]] = (int)i;

    if (has_p_ && use_elim_) {
        for (int k = 0; k < prog_.P.outerSize(); ++k)
            for (typename Eigen::SparseMatrix<S>::InnerIterator it(prog_.P, k); it; ++it)
                if (is_aux_[it.row()] || is_aux_[it.col()])
                    throw DimensionError("ConeSolver: P must not touch aux variables");
    }
    for (const auto& blk : prog_.psd) {
        for (const auto& t : blk.terms)
            if (is_aux_[t.var]) throw DimensionError("ConeSolver: PSD coefficient on aux variable");
        for (const auto& [v, Cm] : blk.dense_coeffs)
            if (is_aux_[v]) throw DimensionError("ConeSolver: PSD coefficient on aux variable");
    }

    rd_ptr_.assign(ml_ + 1, 0);
    ra_ptr_.assign(ml_ + 1, 0);
    row_aux_count_.assign(ml_, 0);
    row_group_.assign(ml_, -1);
    for (Index r = 0; r < ml_; ++r) {
        for (typename Eigen::SparseMatrix<S, Eigen::RowMajor>::InnerIterator it(prog_.Gl, r); it;
             ++it) {
            const int v = (int)it.col();
            if (is_aux_[v]) {
                ++row_aux_count_[r];
                if (row_group_[r] == -1) row_group_[r] = group_of_[v];
                else if (row_group_[r] != group_of_[v])
                    throw DimensionError("ConeSolver: linear row touches two aux groups");
                ra_ptr_[r + 1]++;
            } else {
                rd_ptr_[r + 1]++;
            }
        }
    }
    for (Index r = 0; r < ml_; ++r) {
        rd_ptr_[r + 1] += rd_ptr_[r];
        ra_ptr_[r + 1] += ra_ptr_[r];
    }
    rd_col_.resize(rd_ptr_[ml_]);
    rd_val_.resize(rd_ptr_[ml_]);
    ra_col_.resize(ra_ptr_[ml_]);
    ra_val_.resize(ra_ptr_[ml_]);
    {
        std::vector<int> pd(rd_ptr_.begin(), rd_ptr_.end() - 1);
        std::vector<int> pa(ra_ptr_.begin(), ra_ptr_.end() - 1);
        for (Index r = 0; r < ml_; ++r)
            for (typename Eigen::SparseMatrix<S, Eigen::RowMajor>::InnerIterator it(prog_.Gl, r);
                 it; ++it) {
                const int v = (int)it.col();
                if (is_aux_[v]) {
                    ra_col_[pa[r]] = apos_[v];
                    ra_val_[pa[r]++] = it.value();
                } else {
                    rd_col_[pd[r]] = dpos_[v];
                    rd_val_[pd[r]++] = it.value();
                }
            }
    }

    degree_ = ml_;
    for (const auto& blk : prog_.psd) degree_ += blk.dim;
    if (degree_ == 0)
        throw DimensionError("ConeSolver: no cone constraints; use a linear solver");
}

template <class S>
void ConeSolver<S>::factor_kkt(const Scaling<S>& W) {
    w_d_ = W.d;
    if (schur_.rows() != nd_) schur_.resize(nd_, nd_);
    schur_.setZero();
    if (has_p_) {
        for (int k = 0; k < prog_.P.outerSize(); ++k)
            for (typename Eigen::SparseMatrix<S>::InnerIterator it(prog_.P, k); it; ++it)
                if (!is_aux_[it.row()] && !is_aux_[it.col()])
                    schur_(dpos_[it.row()], dpos_[it.col()]) += it.value();
    }

    pcache_.clear();
    pcache_.resize(prog_.psd.size());
    for (size_t k = 0; k < prog_.psd.size(); ++k) {
        const auto& blk = prog_.psd[k];
        auto& pc = pcache_[k];
        pc.As = W.rti[k].transpose() * blk.pool_a;
        pc.Bs = W.rti[k].transpose() * blk.pool_b;
        Mat<S> Gaa = pc.As.transpose() * pc.As;
        Mat<S> Gbb = pc.Bs.transpose() * pc.Bs;
        Mat<S> Gab = pc.As.transpose() * pc.Bs;
        const auto& tm = blk.terms;
        const size_t nt = tm.size();
        for (size_t i = 0; i < nt; ++i) {
            const int vi = dpos_[tm[i].var];
            const int iai = tm[i].ia, ibi = tm[i].ib;
            const S sci = tm[i].scale;
            for (size_t j = 0; j < nt; ++j) {
                const int vj = dpos_[tm[j].var];
                schur_(vi, vj) += S(2) * sci * tm[j].scale *
                                  (Gaa(iai, tm[j].ia) * Gbb(ibi, tm[j].ib) +
                                   Gab(iai, tm[j].ib) * Gab(tm[j].ia, ibi));
            }
        }
        pc.Cts.clear();
        for (const auto& [v, Cm] : blk.dense_coeffs) {
            Mat<S> Ct = W.rti[k].transpose() * Cm * W.rti[k];
            Mat<S> Tm = pc.As.transpose() * Ct * pc.Bs;
            for (size_t i = 0; i < nt; ++i) {
                const S cr = S(2) * tm[i].scale * Tm(tm[i].ia, tm[i].ib);
                schur_(dpos_[v], dpos_[tm[i].var]) += cr;
                schur_(dpos_[tm[i].var], dpos_[v]) += cr;
            }
            for (const auto& [v2, Cm2] : blk.dense_coeffs) {
                Mat<S> Ct2 = W.rti[k].transpose() * Cm2 * W.rti[k];
                schur_(dpos_[v], dpos_[v2]) += (Ct.array() * Ct2.array()).sum();
            }
            pc.Cts.emplace_back(v, std::move(Ct));
        }
    }

    Vec<S> diagA = Vec<S>::Zero(naux_);
    std::vector<Eigen::Triplet<S>> cross_tr;
    struct SharedRow {
        S w;
        int lo;
        std::vector<std::pair<int, S>> aux;
    };
    std::vector<std::vector<SharedRow>> ug(prog_.groups.size());
    if (ml_) {
        for (Index r = 0; r < ml_; ++r) {
            const S w = S(1) / (W.d[r] * W.d[r]);
            const int d0 = rd_ptr_[r], d1 = rd_ptr_[r + 1];
            const int a0 = ra_ptr_[r], a1 = ra_ptr_[r + 1];
            for (int i = d0; i < d1; ++i) {
                const S wv = w * rd_val_[i];
                for (int j = d0; j < d1; ++j)
                    schur_(rd_col_[i], rd_col_[j]) += wv * rd_val_[j];
            }
            for (int a = a0; a < a1; ++a) {
                const S wa = w * ra_val_[a];
                for (int i = d0; i < d1; ++i)
                    cross_tr.emplace_back(rd_col_[i], ra_col_[a], wa * rd_val_[i]);
            }
            if (row_aux_count_[r] == 1) {
                diagA[ra_col_[a0]] += w * ra_val_[a0] * ra_val_[a0];
            } else if (row_aux_count_[r] >= 2) {
                SharedRow sr;
                sr.w = w;
                sr.lo = group_slices_[row_group_[r]].first;
                for (int a = a0; a < a1; ++a) sr.aux.emplace_back(ra_col_[a], ra_val_[a]);
                ug[row_group_[r]].push_back(std::move(sr));
            }
        }
    }

    elim_.clear();
    if (use_elim_) {
        cross_.resize(nd_, naux_);
        cross_.setFromTriplets(cross_tr.begin(), cross_tr.end());
        for (size_t gi = 0; gi < prog_.groups.size(); ++gi) {
            const auto [lo, hi] = group_slices_[gi];
            GroupElim e;
            e.lo = lo;
            e.hi = hi;
            e.Dinv = diagA.segment(lo, hi - lo).cwiseInverse();
            const int kg = (int)ug[gi].size();
            e.Umat = Mat<S>::Zero(hi - lo, kg);
            Vec<S> wsh(kg);
            for (int t = 0; t < kg; ++t) {
                wsh[t] = ug[gi][t].w;
                for (const auto& [col, val] : ug[gi][t].aux) e.Umat(col - lo, t) = val;
            }
            if (kg) {
                Mat<S> Bm = wsh.cwiseInverse().asDiagonal();
                Bm += e.Umat.transpose() * e.Dinv.asDiagonal() * e.Umat;
                Eigen::LLT<Mat<S>> llt(Bm);
                if (llt.info() != Eigen::Success)
                    throw SolverError("ConeSolver: group elimination factorization failed", {});
                e.Bf = llt.matrixL();
            }
            elim_.push_back(std::move(e));
        }
        Vec<S> dall_inv(naux_);
        for (const auto& e : elim_) dall_inv.segment(e.lo, e.hi - e.lo) = e.Dinv;
        cs_ = cross_;
        for (Index a = 0; a < naux_; ++a)
            for (typename Eigen::SparseMatrix<S>::InnerIterator it(cs_, a); it; ++it)
                it.valueRef() *= dall_inv[a];
        for (Index a = 0; a < naux_; ++a) {
            for (typename Eigen::SparseMatrix<S>::InnerIterator i1(cs_, a); i1; ++i1) {
                const S v1 = i1.value();
                for (typename Eigen::SparseMatrix<S>::InnerIterator i2(cross_, a); i2; ++i2)
                    schur_(i1.row(), i2.row()) -= v1 * i2.value();
            }
        }
        Index krows = 0;
        for (const auto& e : elim_) krows += e.Bf.size() ? e.Umat.cols() : 0;
        if (krows) {
            Mat<S> vstack(krows, nd_);
            Index at = 0;
            for (const auto& e : elim_) {
                if (!e.Bf.size()) continue;
                const int kg = (int)e.Umat.cols();
                Mat<S> V = Mat<S>::Zero(nd_, kg);
                for (int j = 0; j < e.hi - e.lo; ++j)
                    for (typename Eigen::SparseMatrix<S>::InnerIterator it(cs_, e.lo + j); it;
                         ++it)
                        V.row(it.row()) += it.value() * e.Umat.row(j);
                Mat<S> Vt = V.transpose();
                e.Bf.template triangularView<Eigen::Lower>().solveInPlace(Vt);
                vstack.middleRows(at, kg) = Vt;
                at += kg;
            }
            schur_.noalias() += vstack.transpose() * vstack;
        }
    }

    dS_ = schur_.diagonal().cwiseMax(S(1e-300)).cwiseSqrt();
    S jitter = S(0);
    bool ok = false;
    for (int attempt = 0; attempt < 3 && !ok; ++attempt) {
        schur_f_ = dS_.cwiseInverse().asDiagonal() * schur_ * dS_.cwiseInverse().asDiagonal();
        if (jitter > S(0)) schur_f_.diagonal().array() += jitter;
        Eigen::LLT<Eigen::Ref<Mat<S>>> llt(schur_f_);
        ok = llt.info() == Eigen::Success;
        jitter = std::max(jitter * S(100), S(1e-13));
    }
    if (!ok) throw SolverError("ConeSolver: KKT Schur factorization failed", {});

    if (has_eq_) {
        Ad_.resize(peq_, nd_);
        for (Index i = 0; i < nd_; ++i) Ad_.col(i) = prog_.A.col(dense_idx_[i]);
        Mat<S> t1 = (Ad_ * dS_.cwiseInverse().asDiagonal()).transpose();
        schur_f_.template triangularView<Eigen::Lower>().solveInPlace(t1);
        Mat<S> meq = t1.transpose() * t1;
        Eigen::LLT<Mat<S>> llt(meq);
        if (llt.info() != Eigen::Success)
            throw SolverError("ConeSolver: equality block factorization failed", {});
        meq_f_ = llt.matrixL();
    }
}

template <class S>
Scaling<S> compute_scaling(const Vec<S>& sl, const Vec<S>& zl, const std::vector<Mat<S>>& sp,
                           const std::vector<Mat<S>>& zp) {
    Scaling<S> W;
    if (sl.size()) {
        W.d = (sl.array() / zl.array()).sqrt().matrix();
        W.lmbda_l = (sl.array() * zl.array()).sqrt().matrix();
    } else {
        W.d.resize(0);
        W.lmbda_l.resize(0);
    }
    for (size_t k = 0; k < sp.size(); ++k) {
        Eigen::LLT<Mat<S>> ls(sp[k]), lz(zp[k]);
        if (ls.info() != Eigen::Success || lz.info() != Eigen::Success)
            throw SolverError("ConeSolver: scaling point not positive definite", {});
        Mat<S> Ls = ls.matrixL();
        Mat<S> Lz = lz.matrixL();
        Eigen::BDCSVD<Mat<S>> svd(Lz.transpose() * Ls, Eigen::ComputeThinU | Eigen::ComputeThinV);
        Vec<S> isq = svd.singularValues().cwiseSqrt().cwiseInverse();
        W.r.push_back(Ls * svd.matrixV() * isq.asDiagonal());
        W.rti.push_back(Lz * svd.matrixU() * isq.asDiagonal());
        W.lmbda_p.push_back(svd.singularValues());
    }
    return W;
}

template <class S>
ConeSolution<S> ConeSolver<S>::run() {
    const auto& psd = prog_.psd;
    const size_t np = psd.size();
    std::vector<Mat<S>> hp;
    hp.reserve(np);
    for (const auto& blk : psd) hp.push_back(blk.C0);

    Scaling<S> W;
    W.d = Vec<S>::Ones(ml_);
    W.lmbda_l = Vec<S>::Ones(ml_);
    for (const auto& blk : psd) {
        W.r.push_back(Mat<S>::Identity(blk.dim, blk.dim));
        W.rti.push_back(Mat<S>::Identity(blk.dim, blk.dim));
        W.lmbda_p.push_back(Vec<S>::Ones(blk.dim));
    }
    factor_kkt(W);

    Vec<S> x, y, zl;
    std::vector<Mat<S>> zp;
    kkt_solve(-prog_.c, has_eq_ ? prog_.b : Vec<S>(), prog_.hl, hp, x, y, zl, zp);
    Vec<S> sl = -zl;
    std::vector<Mat<S>> spd(np);
    for (size_t k = 0; k < np; ++k) spd[k] = -zp[k];

    auto shift_into_cone = [&](Vec<S>& vl, std::vector<Mat<S>>& vp) {
        S ts = -std::numeric_limits<S>::infinity();
        if (ml_) ts = std::max(ts, (-vl).maxCoeff());
        for (const auto& X : vp) {
            Eigen::SelfAdjointEigenSolver<Mat<S>> es(X, Eigen::EigenvaluesOnly);
            ts = std::max(ts, -es.eigenvalues()[0]);
        }
        const S nrm = cone_norm(vl, vp);
        if (ts >= S(-1e-8) * std::max(nrm, S(1))) {
            if (ml_) vl.array() += S(1) + ts;
            for (auto& X : vp) X.diagonal().array() += S(1) + ts;
        }
    };
    shift_into_cone(sl, spd);
    shift_into_cone(zl, zp);
    W = compute_scaling(sl, zl, spd, zp);

    const S resx0 = std::max(S(1), prog_.c.norm());
    const S resy0 = has_eq_ ? std::max(S(1), prog_.b.norm()) : S(1);
    const S resz0 = std::max(S(1), cone_norm(prog_.hl, hp));

    SolveStats stats;
    S gap_min = std::numeric_limits<S>::infinity();
    S dres_min = std::numeric_limits<S>::infinity();
    Vec<S> rx, ry, rzl;
    std::vector<Mat<S>> rzp;

    for (int it = 0; it < opts_.maxiter; ++it) {
        Vec<S> Px = has_p_ ? Vec<S>(prog_.P * x) : Vec<S>(Vec<S>::Zero(n_));
        rx = Px + prog_.c + adjoint_G(zl, zp);
        if (has_eq_) rx += prog_.A.transpose() * y;
        if (has_eq_) ry = prog_.A * x - prog_.b;
        else ry.resize(0);
        ConeVec<S> g = apply_G(x);
        if (ml_) rzl = g.l + sl - prog_.hl;
        else rzl.resize(0);
        rzp.resize(np);
        for (size_t k = 0; k < np; ++k) rzp[k] = g.p[k] + spd[k] - hp[k];

        const S gap = cone_dot(sl, spd, zl, zp);
        const S pcost = S(0.5) * x.dot(Px) + prog_.c.dot(x);
        const S dcost = pcost + (has_eq_ ? y.dot(ry) : S(0)) + cone_dot(rzl, rzp, zl, zp) - gap;
        const S relgap = gap / std::max(S(1), std::abs(pcost));
        const S pres = std::max(has_eq_ ? ry.norm() / resy0 : S(0), cone_norm(rzl, rzp) / resz0);
        const S dres = rx.norm() / resx0;
        stats = {it, (double)gap, (double)relgap, (double)pres, (double)dres, (double)pcost,
                 (double)dcost};
        if (opts_.verbose)
            std::printf("it %3d pcost %+.6e gap %.2e pres %.2e dres %.2e\n", it, (double)pcost,
                        (double)gap, (double)pres, (double)dres);
        if (pres <= (S)opts_.feastol && dres <= (S)opts_.feastol &&
            (gap <= (S)opts_.abstol || relgap <= (S)opts_.reltol)) {
            ConeSolution<S> sol;
            sol.x = x;
            sol.y = y;
            sol.sl = sl;
            sol.zl = zl;
            sol.sp = spd;
            sol.zp = zp;
            sol.stats = stats;
            return sol;
        }
        if (!std::isfinite((double)gap) || !std::isfinite((double)dres))
            throw SolverError("ConeSolver: diverged (non-finite iterates)", stats);
        gap_min = std::min(gap_min, gap);
        dres_min = std::min(dres_min, dres);
        if (gap > S(1e8) * std::max(gap_min, S(1e-10)) &&
            dres > S(1e8) * std::max(dres_min, S(1e-10)))
            throw SolverError("ConeSolver: diverged (problem is likely infeasible)", stats);

        factor_kkt(W);
        const S mu = gap / (S)degree_;
        const Vec<S>& lam_l = W.lmbda_l;
        const auto& lam_p = W.lmbda_p;

        auto lambda_solve = [&](const Vec<S>& vl, const std::vector<Mat<S>>& vp, Vec<S>& ol,
                                std::vector<Mat<S>>& op) {
            if (ml_) ol = vl.cwiseQuotient(lam_l);
            else ol = vl;
            op.resize(vp.size());
            for (size_t k = 0; k < vp.size(); ++k) {
                op[k] = vp[k];
                const Vec<S>& lp = lam_p[k];
                for (Index i = 0; i < lp.size(); ++i)
                    for (Index j = 0; j < lp.size(); ++j)
                        op[k](i, j) /= S(0.5) * (lp[i] + lp[j]);
            }
        };

        auto do_step = [&](const Vec<S>& rhs_l, const std::vector<Mat<S>>& rhs_p, Vec<S>& dx,
                           Vec<S>& dy, Vec<S>& dzl_sc, std::vector<Mat<S>>& dzp_sc,
                           Vec<S>& dsl_sc, std::vector<Mat<S>>& dsp_sc) {
            Vec<S> tl;
            std::vector<Mat<S>> tp;
            lambda_solve(rhs_l, rhs_p, tl, tp);
            Vec<S> bzl;
            if (ml_) bzl = -rzl.cwiseQuotient(W.d) + tl;
            std::vector<Mat<S>> bzp(np);
            for (size_t k = 0; k < np; ++k)
                bzp[k] = -(W.rti[k].transpose() * rzp[k] * W.rti[k]) + tp[k];
            kkt_with_refine(-rx, -ry, bzl, bzp, dx, dy, dzl_sc, dzp_sc);
            if (ml_) dsl_sc = -tl - dzl_sc;
            else dsl_sc.resize(0);
            dsp_sc.resize(np);
            for (size_t k = 0; k < np; ++k) dsp_sc[k] = -tp[k] - dzp_sc[k];
        };

        Vec<S> rhs_l_aff;
        if (ml_) rhs_l_aff = lam_l.cwiseProduct(lam_l);
        std::vector<Mat<S>> rhs_p_aff(np);
        for (size_t k = 0; k < np; ++k)
            rhs_p_aff[k] = lam_p[k].cwiseProduct(lam_p[k]).asDiagonal();
        Vec<S> dxa, dya, dzl_sc, dsl_sc;
        std::vector<Mat<S>> dzp_sc, dsp_sc;
        do_step(rhs_l_aff, rhs_p_aff, dxa, dya, dzl_sc, dzp_sc, dsl_sc, dsp_sc);

        struct EigSys {
            Vec<S> ev;
            Mat<S> Q;
        };
        auto max_step_scaled = [&](const Vec<S>& dl, const std::vector<Mat<S>>& dp, bool want_eig,
                                   std::vector<EigSys>* eigs) -> S {
            S t = S(0);
            if (ml_ && dl.size()) t = std::max(t, (-dl.cwiseQuotient(lam_l)).maxCoeff());
            for (size_t k = 0; k < dp.size(); ++k) {
                Vec<S> sq = lam_p[k].cwiseSqrt();
                Mat<S> Ln = sq.cwiseInverse().asDiagonal() * dp[k] * sq.cwiseInverse().asDiagonal();
                if (want_eig) {
                    Eigen::SelfAdjointEigenSolver<Mat<S>> es(Ln);
                    t = std::max(t, -es.eigenvalues()[0]);
                    eigs->push_back({es.eigenvalues(), es.eigenvectors()});
                } else {
                    Eigen::SelfAdjointEigenSolver<Mat<S>> es(Ln, Eigen::EigenvaluesOnly);
                    t = std::max(t, -es.eigenvalues()[0]);
                }
            }
            return t;
        };

        S t = std::max(max_step_scaled(dsl_sc, dsp_sc, false, nullptr),
                       max_step_scaled(dzl_sc, dzp_sc, false, nullptr));
        const S step_aff = t <= S(0) ? S(1) : std::min(S(1), S(1) / t);
        const S dsdz = cone_dot(dsl_sc, dsp_sc, dzl_sc, dzp_sc);
        const S sigma_base =
            std::min(S(1), std::max(S(0), S(1) - step_aff + dsdz / gap * step_aff * step_aff));
        const S sigma = sigma_base * sigma_base * sigma_base;

        Vec<S> rhs_l;
        if (ml_)
            rhs_l = lam_l.cwiseProduct(lam_l) + dsl_sc.cwiseProduct(dzl_sc) -
                    Vec<S>::Constant(ml_, sigma * mu);
        std::vector<Mat<S>> rhs_p(np);
        for (size_t k = 0; k < np; ++k) {
            Mat<S> Rp = lam_p[k].cwiseProduct(lam_p[k]).asDiagonal();
            Rp += S(0.5) * (dsp_sc[k] * dzp_sc[k] + dzp_sc[k] * dsp_sc[k]);
            Rp.diagonal().array() -= sigma * mu;
            rhs_p[k] = Rp;
        }
        Vec<S> dx, dy, dzl_sc2, dsl_sc2;
        std::vector<Mat<S>> dzp_sc2, dsp_sc2;
        do_step(rhs_l, rhs_p, dx, dy, dzl_sc2, dzp_sc2, dsl_sc2, dsp_sc2);

        std::vector<EigSys> eig_s, eig_z;
        const S ts = max_step_scaled(dsl_sc2, dsp_sc2, true, &eig_s);
        const S tz = max_step_scaled(dzl_sc2, dzp_sc2, true, &eig_z);
        t = std::max(ts, tz);
        const S step = t <= S(0) ? S(1) : std::min(S(1), S(0.99) / t);

        x += step * dx;
        if (has_eq_) y += step * dy;
        if (ml_) {
            sl += step * W.d.cwiseProduct(dsl_sc2);
            zl += step * dzl_sc2.cwiseQuotient(W.d);
        }
        for (size_t k = 0; k < np; ++k) {
            spd[k] += step * (W.r[k] * dsp_sc2[k] * W.r[k].transpose());
            zp[k] += step * (W.rti[k] * dzp_sc2[k] * W.rti[k].transpose());
        }

        if (ml_) {
            Vec<S> s2 = W.lmbda_l + step * dsl_sc2;
            Vec<S> z2 = W.lmbda_l + step * dzl_sc2;
            W.d.array() *= (s2.array() / z2.array()).sqrt();
            W.lmbda_l = (s2.array() * z2.array()).sqrt().matrix();
        }
        for (size_t k = 0; k < np; ++k) {
            Vec<S> sq = W.lmbda_p[k].cwiseSqrt();
            Vec<S> fs = (S(1) + step * eig_s[k].ev.array()).max(S(1e-12)).sqrt().matrix();
            Vec<S> fz = (S(1) + step * eig_z[k].ev.array()).max(S(1e-12)).sqrt().matrix();
            Mat<S> Ls = sq.asDiagonal() * eig_s[k].Q * fs.asDiagonal();
            Mat<S> Lz = sq.asDiagonal() * eig_z[k].Q * fz.asDiagonal();
            Eigen::BDCSVD<Mat<S>> svd(Lz.transpose() * Ls,
                                      Eigen::ComputeThinU | Eigen::ComputeThinV);
            Vec<S> isq = svd.singularValues().cwiseSqrt().cwiseInverse();
            W.r[k] = W.r[k] * (Ls * svd.matrixV() * isq.asDiagonal());
            W.rti[k] = W.rti[k] * (Lz * svd.matrixU() * isq.asDiagonal());
            W.lmbda_p[k] = svd.singularValues();
        }
    }
    throw SolverError("ConeSolver: iteration limit reached", stats);
}

}  // namespace detail

template <class S>
ConeSolution<S> solve_cone(const ConeProgram<S>& prog, const SolveOptions& opts = {}) {
    detail::ConeSolver<S> solver(prog, opts);
    return solver.run();
}

}  // namespace ftc
