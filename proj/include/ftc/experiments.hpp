#pragma once

#include <atomic>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <future>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "io.hpp"

namespace ftc {

template <class Fn>
void parallel_for(int N, int jobs, Fn&& fn) {
    jobs = std::max(1, std::min(jobs, N));
    if (jobs == 1) {
        for (int i = 0; i < N; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(jobs);
    for (int k = 0; k < jobs; ++k)
        pool.emplace_back([&] {
            for (int i; (i = next.fetch_add(1)) < N;) fn(i);
        });
    for (auto& t : pool) t.join();
}

inline SynthesisResult<double> synthesize(Criterion c, const LiftedOperators<double>& ops,
                                          const CostWeights<double>& cw,
                                          const NoncausalResponse<double>& bench,
                                          const SafetySpec<double>* safety,
                                          const SolveOptions& opts) {
    switch (c) {
        case Criterion::Ftc: return synthesize_ftc(ops, cw, bench, safety, opts);
        case Criterion::Regret: return synthesize_regret(ops, cw, bench, safety, opts);
        case Criterion::H2: return synthesize_h2(ops, cw, safety, opts);
        case Criterion::Hinf: return synthesize_hinf(ops, cw, safety, opts);
    }
    throw ConfigError("synthesize: unknown criterion");
}

struct SynthesisSet {
    LiftedOperators<double> ops;
    CostWeights<double> cw;
    SafetySpec<double> safety;
    NoncausalResponse<double> psi_star;
    NoncausalResponse<double> bench;
    std::vector<Criterion> criteria;
    std::vector<SynthesisResult<double>> results;
};

inline SynthesisSet run_synthesis(const ExperimentConfig& cfg) {
    SynthesisSet set;
    set.ops = build_lifted(cfg.system);
    set.cw = cfg.weights(set.ops);
    set.safety = cfg.safety();
    set.psi_star = unconstrained_optimal(set.ops, set.cw);
    const SolveOptions opts = cfg.solver.options();
    set.bench = constrained_h2(set.ops, set.cw, set.safety, cfg.preview, opts);
    set.criteria = cfg.criteria;
    set.results.resize(cfg.criteria.size());
    if (cfg.parallel_criteria && cfg.criteria.size() > 1) {
        std::vector<std::future<SynthesisResult<double>>> futs;
        for (Criterion c : cfg.criteria)
            futs.push_back(std::async(std::launch::async, [&, c] {
                return synthesize(c, set.ops, set.cw, set.bench, &set.safety, opts);
            }));
        for (size_t k = 0; k < futs.size(); ++k) set.results[k] = futs[k].get();
    } else {
        for (size_t k = 0; k < cfg.criteria.size(); ++k)
            set.results[k] = synthesize(cfg.criteria[k], set.ops, set.cw, set.bench, &set.safety, opts);
    }
    return set;
}

struct Exp1Report {
    double coincidence_err = 0.0;
    bool coincidence_ok = false;
    double worst_regret = std::numeric_limits<double>::quiet_NaN();
    std::map<std::string, double> objectives;
    std::vector<Table1Row> rows;
    bool ok = false;
};

namespace detail {

inline double max_abs_diff(const NoncausalResponse<double>& a, const NoncausalResponse<double>& b) {
    return std::max((a.Psi_x - b.Psi_x).cwiseAbs().maxCoeff(),
                    (a.Psi_u - b.Psi_u).cwiseAbs().maxCoeff());
}

inline double worst_case_regret_value(const CausalResponse<double>& resp,
                                      const NoncausalResponse<double>& bench,
                                      const CostWeights<double>& cw) {
    Mat<double> CP = cw.Csqrt * resp.stacked();
    Mat<double> Psi(bench.Psi_x.rows() + bench.Psi_u.rows(), bench.Psi_x.cols());
    Psi << bench.Psi_x, bench.Psi_u;
    Mat<double> CPsi = cw.Csqrt * Psi;
    Mat<double> form = CP.transpose() * CP - CPsi.transpose() * CPsi;
    Eigen::SelfAdjointEigenSolver<Mat<double>> es(form, Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff();
}

}  // namespace detail

inline Exp1Report run_experiment_one(const ExperimentConfig& cfg, const SynthesisSet& set) {
    Exp1Report rep;
    const int n = cfg.system.n, m = cfg.system.m, T = cfg.system.T;

    rep.coincidence_err = detail::max_abs_diff(set.bench, set.psi_star);
    rep.coincidence_ok = rep.coincidence_err <= 1e-4;
    for (size_t k = 0; k < set.criteria.size(); ++k) {
        rep.objectives[criterion_name(set.criteria[k])] = set.results[k].objective;
        if (set.criteria[k] == Criterion::Ftc)
            rep.worst_regret =
                detail::worst_case_regret_value(set.results[k].response, set.bench, set.cw);
    }

    const int P = (int)set.results.size();
    for (size_t r = 0; r < cfg.profiles.size(); ++r) {
        const ProfileConfig& pc = cfg.profiles[r];
        std::vector<double> avg(P, 0.0);
        if (pc.prof.tag == ProfileTag::WorstCase) {
            for (int p = 0; p < P; ++p) {
                Vec<double> w = worst_case_disturbance(set.results[p].response, set.bench, set.cw,
                                                       WorstMetric::Cost);
                avg[p] = lqr_cost(simulate(set.results[p].response, w, set.cw, n, m, T));
            }
        } else {
            const std::uint64_t row_seed = SplitRng::derive(cfg.seed, 1000 + r);
            Mat<double> costs(pc.draws, P);
            parallel_for(pc.draws, cfg.jobs, [&](int i) {
                DisturbanceProfile prof = pc.prof;
                prof.seed = SplitRng::derive(row_seed, (std::uint64_t)i);
                Vec<double> w = generate(prof, n, T);
                for (int p = 0; p < P; ++p)
                    costs(i, p) = lqr_cost(simulate(set.results[p].response, w, set.cw, n, m, T));
            });
            for (int p = 0; p < P; ++p) avg[p] = costs.col(p).mean();
        }
        double best = avg[0];
        for (double v : avg) best = std::min(best, v);
        for (int p = 0; p < P; ++p)
            rep.rows.push_back({pc.label, criterion_name(set.criteria[p]), avg[p],
                                100.0 * (avg[p] / best - 1.0)});
    }

    std::filesystem::create_directories(cfg.out_dir);
    write_table1_csv(cfg.out_dir + "/table1.csv", rep.rows);
    rep.ok = rep.coincidence_ok;
    return rep;
}

inline Exp1Report run_experiment_one(const ExperimentConfig& cfg) {
    return run_experiment_one(cfg, run_synthesis(cfg));
}

struct Exp2Report {
    double dE_final = std::numeric_limits<double>::quiet_NaN();
    double dJ_final = std::numeric_limits<double>::quiet_NaN();
    std::map<std::string, double> objectives;
    int samples = 0;
    MetricSeries<double> series;
    bool ok = false;
};

inline Exp2Report run_experiment_two(const ExperimentConfig& cfg, const SynthesisSet& set) {
    Exp2Report rep;
    const int n = cfg.system.n, m = cfg.system.m, T = cfg.system.T;

    const SynthesisResult<double>* ftc = nullptr;
    const SynthesisResult<double>* reg = nullptr;
    for (size_t k = 0; k < set.criteria.size(); ++k) {
        rep.objectives[criterion_name(set.criteria[k])] = set.results[k].objective;
        if (set.criteria[k] == Criterion::Ftc) ftc = &set.results[k];
        if (set.criteria[k] == Criterion::Regret) reg = &set.results[k];
    }
    if (!ftc || !reg)
        throw ConfigError("run_experiment_two: criteria must include ftc and regret");

    const int N = cfg.num_realizations;
    std::vector<Vec<double>> W = sample_near_active_vertices(
        set.bench, set.safety, N, cfg.threshold, SplitRng::derive(cfg.seed, 7001));
    rep.samples = (int)W.size();

    std::vector<SimulationTrace<double>> tb(N), tf(N), tr(N);
    parallel_for(N, cfg.jobs, [&](int i) {
        tb[i] = simulate(set.bench, W[i], set.cw, n, m, T);
        tf[i] = simulate(ftc->response, W[i], set.cw, n, m, T);
        tr[i] = simulate(reg->response, W[i], set.cw, n, m, T);
    });
    MetricSeries<double> sf = aggregate_metrics(tf, tb, set.cw);
    MetricSeries<double> sr = aggregate_metrics(tr, tb, set.cw);
    compare_to_reference(sr, sf);

    std::filesystem::create_directories(cfg.out_dir);
    write_series_csv(cfg.out_dir + "/delta_E.csv", sr.dE_mean, sr.dE_std, sr.dE_min, sr.dE_max);
    write_series_csv(cfg.out_dir + "/delta_J.csv", sr.dJ_mean, sr.dJ_std, sr.dJ_min, sr.dJ_max);

    rep.dE_final = sr.dE_mean[T - 1];
    rep.dJ_final = sr.dJ_mean[T - 1];
    rep.series = std::move(sr);
    rep.ok = std::isfinite(rep.dE_final) && std::isfinite(rep.dJ_final);
    return rep;
}

inline Exp2Report run_experiment_two(const ExperimentConfig& cfg) {
    return run_experiment_two(cfg, run_synthesis(cfg));
}

// Randomized check helpers shared by the property suite and the acceptance
// gate. Each returns a scalar "badness" the caller compares to a tolerance.

inline LtvSystem<double> random_ltv(SplitRng& rng, int n, int m, int T, double spread = 1.0) {
    std::vector<Mat<double>> As(T - 1), Bs(T - 1);
    for (int t = 0; t + 1 < T; ++t) {
        As[t].resize(n, n);
        Bs[t].resize(n, m);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j) As[t](i, j) = spread * (2.0 * rng.uniform() - 1.0);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < m; ++j) Bs[t](i, j) = spread * (2.0 * rng.uniform() - 1.0);
    }
    LtvSystem<double> sys{n, m, T, std::move(As), std::move(Bs)};
    sys.validate();
    return sys;
}

inline CostWeights<double> random_diag_weights(SplitRng& rng, const LiftedOperators<double>& ops) {
    Vec<double> q(ops.nT()), r(ops.mT());
    for (Index i = 0; i < q.size(); ++i) q[i] = 0.2 + 2.0 * rng.uniform();
    for (Index i = 0; i < r.size(); ++i) r[i] = 0.2 + 2.0 * rng.uniform();
    return CostWeights<double>::from(q.asDiagonal(), r.asDiagonal());
}

inline CausalResponse<double> random_causal_response(SplitRng& rng,
                                                     const LiftedOperators<double>& ops) {
    const int n = ops.n, m = ops.m, T = ops.T;
    Mat<double> Phi_u = Mat<double>::Zero(ops.mT(), ops.nT());
    for (int t = 0; t < T; ++t)
        for (int s = 0; s <= t; ++s)
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    Phi_u((Index)t * m + i, (Index)s * n + j) = 2.0 * rng.uniform() - 1.0;
    CausalResponse<double> resp;
    resp.Phi_u = Phi_u;
    resp.Phi_x = ops.G + ops.F * Phi_u;
    return resp;
}

inline Vec<double> random_vec(SplitRng& rng, Index k) {
    Vec<double> v(k);
    for (Index i = 0; i < k; ++i) v[i] = 2.0 * rng.uniform() - 1.0;
    return v;
}

// Worst-case imitation loss equals worst-case regret realization by
// realization when the anchor is the unconstrained clairvoyant optimum.
// `flip_sign` corrupts the anchor to confirm the check has teeth.
inline double thm2_identity_max_err(std::uint64_t seed, int num_sys, int num_w,
                                    bool flip_sign = false) {
    SplitRng rng(seed);
    double worst = 0.0;
    for (int s = 0; s < num_sys; ++s) {
        const int n = 1 + (int)(rng.uniform() * 4) % 4;
        const int m = 1 + (int)(rng.uniform() * 4) % 4;
        const int T = 2 + (int)(rng.uniform() * 11) % 11;
        auto sys = random_ltv(rng, n, m, T, 0.8);
        auto ops = build_lifted(sys);
        auto cw = random_diag_weights(rng, ops);
        auto psi = unconstrained_optimal(ops, cw);
        if (flip_sign) psi.Psi_u = -psi.Psi_u;
        auto resp = random_causal_response(rng, ops);
        for (int k = 0; k < num_w; ++k) {
            Vec<double> w = random_vec(rng, ops.nT());
            auto tr = simulate(resp, w, cw, n, m, T);
            const double reg = regret(tr, psi, w, cw, n, m, T);
            const double imi = imitation_loss(tr, psi, w, cw, n, m, T);
            worst = std::max(worst, std::abs(reg - imi) / std::max(1.0, std::abs(reg)));
        }
    }
    return worst;
}

inline double mil_max_residual(std::uint64_t seed, int count) {
    SplitRng rng(seed);
    double worst = 0.0;
    for (int s = 0; s < count; ++s) {
        const int n = 1 + (int)(rng.uniform() * 4) % 4;
        const int m = 1 + (int)(rng.uniform() * 4) % 4;
        const int T = 2 + (int)(rng.uniform() * 9) % 9;
        auto ops = build_lifted(random_ltv(rng, n, m, T, 0.8));
        auto cw = random_diag_weights(rng, ops);
        worst = std::max(worst, mil_identity_residual(ops, cw));
    }
    return worst;
}

inline double stationarity_max(std::uint64_t seed, int count) {
    SplitRng rng(seed);
    double worst = 0.0;
    for (int s = 0; s < count; ++s) {
        const int n = 1 + (int)(rng.uniform() * 4) % 4;
        const int m = 1 + (int)(rng.uniform() * 4) % 4;
        const int T = 2 + (int)(rng.uniform() * 9) % 9;
        auto ops = build_lifted(random_ltv(rng, n, m, T, 0.8));
        auto cw = random_diag_weights(rng, ops);
        auto psi = unconstrained_optimal(ops, cw);
        Mat<double> P = cw.R + ops.F.transpose() * cw.Q * ops.F;
        const double res =
            (P * psi.Psi_u + ops.F.transpose() * cw.Q * ops.G).norm();
        worst = std::max(worst, res);
    }
    return worst;
}

// Most negative value of J(pi, w) - J(psi*, w) over random causal policies;
// the clairvoyant optimum must win every realization (up to roundoff).
inline double clairvoyant_gap_min(std::uint64_t seed, int num_pi, int num_w) {
    SplitRng rng(seed);
    double gap = std::numeric_limits<double>::infinity();
    for (int s = 0; s < num_pi; ++s) {
        const int n = 1 + (int)(rng.uniform() * 4) % 4;
        const int m = 1 + (int)(rng.uniform() * 4) % 4;
        const int T = 2 + (int)(rng.uniform() * 9) % 9;
        auto ops = build_lifted(random_ltv(rng, n, m, T, 0.8));
        auto cw = random_diag_weights(rng, ops);
        auto resp = random_causal_response(rng, ops);
        for (int k = 0; k < num_w; ++k) {
            Vec<double> w = random_vec(rng, ops.nT());
            const double jpi = lqr_cost(simulate(resp, w, cw, n, m, T));
            gap = std::min(gap, jpi - clairvoyant_cost(ops, cw, w));
        }
    }
    return gap;
}

inline double reconstruct_rollout_max_err(std::uint64_t seed, int count) {
    SplitRng rng(seed);
    double worst = 0.0;
    for (int s = 0; s < count; ++s) {
        const int n = 1 + (int)(rng.uniform() * 4) % 4;
        const int m = 1 + (int)(rng.uniform() * 4) % 4;
        const int T = 2 + (int)(rng.uniform() * 9) % 9;
        auto sys = random_ltv(rng, n, m, T, 0.8);
        auto ops = build_lifted(sys);
        auto resp = random_causal_response(rng, ops);
        Mat<double> K = reconstruct_feedback(resp);
        Vec<double> w = random_vec(rng, ops.nT());
        auto [xs, us] = closed_loop_rollout(sys, K, w);
        const double ex = (xs - resp.Phi_x * w).cwiseAbs().maxCoeff();
        const double eu = (us - resp.Phi_u * w).cwiseAbs().maxCoeff();
        worst = std::max(worst, std::max(ex, eu));
    }
    return worst;
}

struct PropResult {
    std::string name;
    bool pass;
    std::string detail;
};

struct PropReport {
    std::vector<PropResult> results;
    bool all_pass = true;

    void add(const std::string& name, bool pass, const std::string& detail) {
        results.push_back({name, pass, detail});
        all_pass = all_pass && pass;
    }
};

inline PropReport run_property_suite(const ExperimentConfig& cfg) {
    PropReport rep;
    const double tol = cfg.prop_tol;
    const std::uint64_t seed = cfg.seed;

    {
        const double e = thm2_identity_max_err(SplitRng::derive(seed, 1), 50, 20);
        rep.add("thm2_identity", e <= tol, "max_rel_err=" + fmt17(e));
    }
    {
        const double e = mil_max_residual(SplitRng::derive(seed, 2), 20);
        rep.add("mil_identity", e <= tol, "max_residual=" + fmt17(e));
    }
    {
        const double e = stationarity_max(SplitRng::derive(seed, 3), 20);
        rep.add("clairvoyant_stationarity", e <= tol, "max_residual=" + fmt17(e));
    }
    {
        const double g = clairvoyant_gap_min(SplitRng::derive(seed, 4), 50, 20);
        rep.add("clairvoyant_lower_bound", g >= -1e-9, "min_gap=" + fmt17(g));
    }
    {
        const double e = reconstruct_rollout_max_err(SplitRng::derive(seed, 5), 20);
        rep.add("feedback_rollout", e <= std::max(tol, 1e-8), "max_err=" + fmt17(e));
    }
    {
        bool same = true;
        for (ProfileTag t : {ProfileTag::Gauss01, ProfileTag::Uniform, ProfileTag::Sin,
                             ProfileTag::Sawtooth, ProfileTag::Step, ProfileTag::Stairs,
                             ProfileTag::ConstantOne}) {
            DisturbanceProfile p;
            p.tag = t;
            p.seed = SplitRng::derive(seed, 6);
            Vec<double> a = generate(p, 3, 13), b = generate(p, 3, 13);
            same = same && a.size() == b.size() &&
                   std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
        }
        rep.add("profile_determinism", same, same ? "bit_identical" : "mismatch");
    }
    {
        SplitRng rng(SplitRng::derive(seed, 7));
        auto sys = random_ltv(rng, 3, 2, 10, 0.8);
        auto ops = build_lifted(sys);
        auto cw = random_diag_weights(rng, ops);
        auto psi = unconstrained_optimal(ops, cw);
        std::vector<SimulationTrace<double>> pol, ben;
        for (int i = 0; i < 8; ++i) {
            Vec<double> w = random_vec(rng, ops.nT());
            pol.push_back(simulate(random_causal_response(rng, ops), w, cw, 3, 2, 10));
            ben.push_back(simulate(psi, w, cw, 3, 2, 10));
        }
        auto series = aggregate_metrics(pol, ben, cw);
        double drop = 0.0;
        for (Index i = 0; i < series.E.rows(); ++i)
            for (Index t = 1; t < series.E.cols(); ++t) {
                drop = std::min(drop, series.E(i, t) - series.E(i, t - 1));
                drop = std::min(drop, series.J(i, t) - series.J(i, t - 1));
            }
        rep.add("metrics_nondecreasing", drop >= -1e-12, "min_increment=" + fmt17(drop));
    }
    {
        SplitRng rng(SplitRng::derive(seed, 8));
        auto sys = random_ltv(rng, 3, 2, 8, 0.8);
        auto ops = build_lifted(sys);
        auto cw = random_diag_weights(rng, ops);
        auto psi = unconstrained_optimal(ops, cw);
        auto resp = random_causal_response(rng, ops);
        Vec<double> wstar = worst_case_disturbance(resp, psi, cw, WorstMetric::Regret);
        Mat<double> CP = cw.Csqrt * resp.stacked();
        Mat<double> Psi(psi.Psi_x.rows() + psi.Psi_u.rows(), psi.Psi_x.cols());
        Psi << psi.Psi_x, psi.Psi_u;
        Mat<double> CPsi = cw.Csqrt * Psi;
        Mat<double> form = CP.transpose() * CP - CPsi.transpose() * CPsi;
        const double vstar = wstar.dot(form * wstar);
        double vbest = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < 1000; ++k) {
            Vec<double> v = random_vec(rng, ops.nT());
            v /= v.norm();
            vbest = std::max(vbest, v.dot(form * v));
        }
        rep.add("worst_case_maximality", vstar >= vbest - 1e-10,
                "eig=" + fmt17(vstar) + " sampled=" + fmt17(vbest));
    }
    return rep;
}

}  // namespace ftc
