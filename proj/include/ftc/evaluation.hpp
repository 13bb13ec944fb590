#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "synthesis.hpp"

namespace ftc {

// All randomness is drawn through this engine wrapper so that serial and
// parallel evaluation agree bit for bit: explicit uniform/normal mappings,
// never std::distribution objects (their output is implementation-defined).
class SplitRng {
  public:
    explicit SplitRng(std::uint64_t seed) : s_(seed ? seed : 0x9E3779B97F4A7C15ull) {}

    static std::uint64_t derive(std::uint64_t base, std::uint64_t index) {
        std::uint64_t z = base + (index + 1) * 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() {
        // xorshift-multiply (splitmix64 step): tiny state, solid equidistribution
        std::uint64_t z = (s_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    double uniform() { return (double)(next_u64() >> 11) * 0x1.0p-53; }

    double uniform_open() { return (double)((next_u64() >> 11) + 1) * 0x1.0p-53; }

    double normal() {
        const double u1 = uniform_open();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

  private:
    std::uint64_t s_;
};

enum class ProfileTag {
    Gauss01,
    Uniform,
    ConstantOne,
    Sin,
    Sawtooth,
    Step,
    Stairs,
    WorstCase,
    VertexNearActive
};

struct DisturbanceProfile {
    ProfileTag tag = ProfileTag::Gauss01;
    double lo = 0.0, hi = 1.0;  // Uniform only
    std::uint64_t seed = 0;
    double scale = 1.0;
};

inline const char* profile_name(ProfileTag t) {
    switch (t) {
        case ProfileTag::Gauss01: return "gauss01";
        case ProfileTag::Uniform: return "uniform";
        case ProfileTag::ConstantOne: return "one";
        case ProfileTag::Sin: return "sin";
        case ProfileTag::Sawtooth: return "sawtooth";
        case ProfileTag::Step: return "step";
        case ProfileTag::Stairs: return "stairs";
        case ProfileTag::WorstCase: return "worst";
        case ProfileTag::VertexNearActive: return "vertex";
    }
    return "?";
}

// Deterministic disturbance generation; block t of w is (x0 for t = 0, then
// w_{t-1}) but the profiles index plain block time.
template <class S = double>
Vec<S> generate(const DisturbanceProfile& prof, int n, int T) {
    const Index nT = (Index)n * T;
    Vec<S> w(nT);
    SplitRng rng(prof.seed);
    auto fill_blocks = [&](auto&& value_of_t) {
        for (int t = 0; t < T; ++t)
            w.segment((Index)t * n, n).setConstant((S)value_of_t(t));
    };
    switch (prof.tag) {
        case ProfileTag::Gauss01:
            for (Index i = 0; i < nT; ++i) w[i] = (S)rng.normal();
            break;
        case ProfileTag::Uniform:
            for (Index i = 0; i < nT; ++i)
                w[i] = (S)(prof.lo + (prof.hi - prof.lo) * rng.uniform());
            break;
        case ProfileTag::ConstantOne:
            w.setOnes();
            break;
        case ProfileTag::Sin:
            fill_blocks([&](int t) { return std::sin(2.0 * 3.14159265358979323846 * t / T); });
            break;
        case ProfileTag::Sawtooth:
            fill_blocks([&](int t) {
                double ph = 2.0 * t / T;
                return 2.0 * (ph - std::floor(ph)) - 1.0;
            });
            break;
        case ProfileTag::Step:
            fill_blocks([&](int t) { return t >= T / 2 ? 1.0 : 0.0; });
            break;
        case ProfileTag::Stairs:
            fill_blocks([&](int t) { return (t / 5) % 2 == 0 ? 1.0 : -1.0; });
            break;
        case ProfileTag::WorstCase:
        case ProfileTag::VertexNearActive:
            throw ConfigError(std::string("generate: profile '") + profile_name(prof.tag) +
                              "' depends on a controller; use worst_case_disturbance or "
                              "sample_near_active_vertices");
    }
    return w * (S)prof.scale;
}

template <class S = double>
struct SimulationTrace {
    Mat<S> x;      // T x n
    Mat<S> u;      // T x m
    Vec<S> w;      // nT
    Vec<S> stage;  // per-step cost x_t'Q_t x_t + u_t'R_t u_t
};

namespace detail {

template <class S>
SimulationTrace<S> simulate_stacked(const Mat<S>& Phi_x, const Mat<S>& Phi_u, const Vec<S>& w,
                                    const CostWeights<S>& cw, int n, int m, int T) {
    if (w.size() != (Index)n * T) throw DimensionError("simulate: w has wrong length");
    SimulationTrace<S> tr;
    tr.w = w;
    Vec<S> xs = Phi_x * w;
    Vec<S> us = Phi_u * w;
    tr.x.resize(T, n);
    tr.u.resize(T, m);
    tr.stage.resize(T);
    for (int t = 0; t < T; ++t) {
        auto xt = xs.segment((Index)t * n, n);
        auto ut = us.segment((Index)t * m, m);
        tr.x.row(t) = xt.transpose();
        tr.u.row(t) = ut.transpose();
        tr.stage[t] = xt.dot(cw.Q.block((Index)t * n, (Index)t * n, n, n) * xt) +
                      ut.dot(cw.R.block((Index)t * m, (Index)t * m, m, m) * ut);
    }
    return tr;
}

}  // namespace detail

template <class S>
SimulationTrace<S> simulate(const CausalResponse<S>& resp, const Vec<S>& w,
                            const CostWeights<S>& cw, int n, int m, int T) {
    return detail::simulate_stacked(resp.Phi_x, resp.Phi_u, w, cw, n, m, T);
}

template <class S>
SimulationTrace<S> simulate(const NoncausalResponse<S>& resp, const Vec<S>& w,
                            const CostWeights<S>& cw, int n, int m, int T) {
    return detail::simulate_stacked(resp.Psi_x, resp.Psi_u, w, cw, n, m, T);
}

template <class S>
S lqr_cost(const SimulationTrace<S>& tr) {
    return tr.stage.sum();
}

// Per-step weighted squared deviation between two traces on the same w.
template <class S>
Vec<S> imitation_stages(const SimulationTrace<S>& tr, const SimulationTrace<S>& bench,
                        const CostWeights<S>& cw) {
    const int T = (int)tr.x.rows();
    const int n = (int)tr.x.cols(), m = (int)tr.u.cols();
    Vec<S> out(T);
    for (int t = 0; t < T; ++t) {
        Vec<S> dx = (tr.x.row(t) - bench.x.row(t)).transpose();
        Vec<S> du = (tr.u.row(t) - bench.u.row(t)).transpose();
        out[t] = dx.dot(cw.Q.block((Index)t * n, (Index)t * n, n, n) * dx) +
                 du.dot(cw.R.block((Index)t * m, (Index)t * m, m, m) * du);
    }
    return out;
}

template <class S, class Bench>
S imitation_loss(const SimulationTrace<S>& tr, const Bench& bench, const Vec<S>& w,
                 const CostWeights<S>& cw, int n, int m, int T) {
    return imitation_stages(tr, simulate(bench, w, cw, n, m, T), cw).sum();
}

template <class S, class Bench>
S regret(const SimulationTrace<S>& tr, const Bench& bench, const Vec<S>& w,
         const CostWeights<S>& cw, int n, int m, int T) {
    return lqr_cost(tr) - lqr_cost(simulate(bench, w, cw, n, m, T));
}

enum class WorstMetric { Imitation, Regret, Cost };

// Unit top eigenvector of the metric's quadratic form in w.
template <class S>
Vec<S> worst_case_disturbance(const CausalResponse<S>& resp, const NoncausalResponse<S>& bench,
                              const CostWeights<S>& cw, WorstMetric metric) {
    Mat<S> Psi(bench.Psi_x.rows() + bench.Psi_u.rows(), bench.Psi_x.cols());
    Psi << bench.Psi_x, bench.Psi_u;
    Mat<S> form;
    if (metric == WorstMetric::Imitation) {
        Mat<S> D = cw.Csqrt * (resp.stacked() - Psi);
        form = D.transpose() * D;
    } else {
        Mat<S> CP = cw.Csqrt * resp.stacked();
        form = CP.transpose() * CP;
        if (metric == WorstMetric::Regret) {
            Mat<S> CPsi = cw.Csqrt * Psi;
            form -= CPsi.transpose() * CPsi;
        }
    }
    Eigen::SelfAdjointEigenSolver<Mat<S>> es(form);
    Vec<S> w = es.eigenvectors().col(form.rows() - 1);
    Index imax;
    w.cwiseAbs().maxCoeff(&imax);
    if (w[imax] < S(0)) w = -w;
    return w;
}

namespace detail {

inline double log_cosh(double x) {
    const double a = std::abs(x);
    return a + std::log1p(std::exp(-2.0 * a)) - 0.6931471805599453;
}

}  // namespace detail

// Draws vertices of the box disturbance set whose benchmark trajectories
// bring some safety row within `threshold` of its bound. Proposals follow a
// per-row exponentially tilted sign law (saddlepoint-matched to the target
// activation) and rows are weighted by their Chernoff rate so the mixture
// mimics plain accept-reject over uniform vertices at a usable accept rate.
template <class S>
std::vector<Vec<S>> sample_near_active_vertices(const NoncausalResponse<S>& bench,
                                                const SafetySpec<S>& safety, int N,
                                                double threshold, std::uint64_t seed = 12345) {
    if (N < 1) throw ConfigError("sample_near_active_vertices: N must be >= 1");
    auto box = detect_box(safety.Hw, safety.hw);
    if (!box)
        throw ConfigError("sample_near_active_vertices: disturbance set must be a box");
    const Index nT = safety.Hw.cols();
    Mat<S> stacked(bench.Psi_x.rows() + bench.Psi_u.rows(), bench.Psi_x.cols());
    stacked << bench.Psi_x, bench.Psi_u;
    Mat<S> Gmat = safety.stacked() * stacked;  // q x nT
    Mat<S> Gs = Gmat * box->wbar.asDiagonal();  // vertex coordinates become signs

    struct Row {
        Index idx;
        double beta;
        double rate;
    };
    std::vector<Row> rows;
    for (Index i = 0; i < Gmat.rows(); ++i) {
        const double h = (double)safety.h[i];
        if (!std::isfinite(h) || h <= 0.0) continue;
        const double l1 = (double)Gs.row(i).cwiseAbs().sum();
        if (l1 < threshold * h || l1 == 0.0) continue;
        const double target = std::min(threshold * h, (1.0 - 1e-9) * l1);
        auto mean_at = [&](double beta) {
            double s = 0.0;
            for (Index j = 0; j < nT; ++j) {
                const double a = std::abs((double)Gs(i, j));
                if (a > 0.0) s += a * std::tanh(beta * a);
            }
            return s;
        };
        double lo = 0.0, hi2 = 1.0;
        while (mean_at(hi2) < target && hi2 < 1e12) hi2 *= 2.0;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi2);
            (mean_at(mid) < target ? lo : hi2) = mid;
        }
        const double beta = 0.5 * (lo + hi2);
        double rate = beta * target;
        for (Index j = 0; j < nT; ++j)
            rate -= detail::log_cosh(beta * (double)Gs(i, j));
        rows.push_back({i, beta, rate});
    }
    if (rows.empty())
        throw ConfigError("sample_near_active_vertices: no safety row can reach activation " +
                          std::to_string(threshold) + "; lower the threshold");
    double rmin = rows[0].rate;
    for (const auto& r : rows) rmin = std::min(rmin, r.rate);
    std::vector<double> cum(rows.size());
    double total = 0.0;
    for (size_t k = 0; k < rows.size(); ++k) {
        total += std::exp(-(rows[k].rate - rmin));
        cum[k] = total;
    }

    SplitRng rng(seed);
    std::vector<Vec<S>> out;
    out.reserve(N);
    Vec<S> w(nT);
    const long cap = 1000000;
    for (long draw = 0; draw < cap && (int)out.size() < N; ++draw) {
        const double u = rng.uniform() * total;
        const size_t k = std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
        const Row& row = rows[std::min(k, rows.size() - 1)];
        const double flip = rng.uniform() < 0.5 ? 1.0 : -1.0;
        for (Index j = 0; j < nT; ++j) {
            const double g = (double)Gs(row.idx, j);
            double p = 0.5;
            if (g != 0.0) p = 1.0 / (1.0 + std::exp(-2.0 * row.beta * std::abs(g)));
            const double sgn = (rng.uniform() < p ? 1.0 : -1.0) * (g >= 0.0 ? 1.0 : -1.0);
            w[j] = (S)(flip * sgn) * box->wbar[j];
        }
        double best = -std::numeric_limits<double>::infinity();
        for (Index i = 0; i < Gmat.rows(); ++i) {
            const double h = (double)safety.h[i];
            if (!std::isfinite(h) || h <= 0.0) continue;
            best = std::max(best, (double)Gmat.row(i).dot(w) / h);
        }
        if (best >= threshold) out.push_back(w);
    }
    if ((int)out.size() < N)
        throw ConfigError("sample_near_active_vertices: only " + std::to_string(out.size()) +
                          "/" + std::to_string(N) + " vertices accepted within the draw cap; "
                          "lower the threshold");
    return out;
}

// Cumulative per-realization series and cross-realization statistics. The
// delta fields compare this policy against a reference policy evaluated on
// the same disturbances, normalized by the reference mean at each t.
template <class S = double>
struct MetricSeries {
    Mat<S> E;  // N x T cumulative imitation loss vs the benchmark
    Mat<S> J;  // N x T cumulative control cost
    Vec<S> E_mean, J_mean;
    Vec<S> dE_mean, dE_std, dE_min, dE_max;
    Vec<S> dJ_mean, dJ_std, dJ_min, dJ_max;
};

template <class S>
MetricSeries<S> aggregate_metrics(const std::vector<SimulationTrace<S>>& pol,
                                  const std::vector<SimulationTrace<S>>& bench,
                                  const CostWeights<S>& cw) {
    if (pol.empty() || pol.size() != bench.size())
        throw DimensionError("aggregate_metrics: trace lists empty or mismatched");
    const int N = (int)pol.size();
    const int T = (int)pol[0].x.rows();
    MetricSeries<S> s;
    s.E.resize(N, T);
    s.J.resize(N, T);
    for (int i = 0; i < N; ++i) {
        Vec<S> de = imitation_stages(pol[i], bench[i], cw);
        S accE = S(0), accJ = S(0);
        for (int t = 0; t < T; ++t) {
            accE += de[t];
            accJ += pol[i].stage[t];
            s.E(i, t) = accE;
            s.J(i, t) = accJ;
        }
    }
    s.E_mean = s.E.colwise().mean().transpose();
    s.J_mean = s.J.colwise().mean().transpose();
    return s;
}

namespace detail {

template <class S>
void delta_stats(const Mat<S>& self, const Mat<S>& ref, const Vec<S>& ref_mean, Vec<S>& mean,
                 Vec<S>& sd, Vec<S>& mn, Vec<S>& mx) {
    const Index N = self.rows(), T = self.cols();
    mean.resize(T);
    sd.resize(T);
    mn.resize(T);
    mx.resize(T);
    for (Index t = 0; t < T; ++t) {
        if (!(ref_mean[t] > S(0))) {
            mean[t] = sd[t] = mn[t] = mx[t] = std::numeric_limits<S>::quiet_NaN();
            continue;
        }
        Vec<S> d = (self.col(t) - ref.col(t)) / ref_mean[t];
        mean[t] = d.mean();
        sd[t] = std::sqrt((d.array() - mean[t]).square().sum() / (S)N);
        mn[t] = d.minCoeff();
        mx[t] = d.maxCoeff();
    }
}

}  // namespace detail

// Fills the delta fields of `s` relative to `ref` (same disturbances, same
// ordering). d_i(t) = (X_t(self, w_i) - X_t(ref, w_i)) / mean_i X_t(ref, w_i),
// so the mean of d_i is exactly the relative mean difference.
template <class S>
void compare_to_reference(MetricSeries<S>& s, const MetricSeries<S>& ref) {
    if (s.E.rows() != ref.E.rows() || s.E.cols() != ref.E.cols())
        throw DimensionError("compare_to_reference: series shapes differ");
    detail::delta_stats(s.E, ref.E, ref.E_mean, s.dE_mean, s.dE_std, s.dE_min, s.dE_max);
    detail::delta_stats(s.J, ref.J, ref.J_mean, s.dJ_mean, s.dJ_std, s.dJ_min, s.dJ_max);
}

}  // namespace ftc
