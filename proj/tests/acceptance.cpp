// Acceptance gate: one [PASS]/[FAIL] line per criterion, nonzero exit if any
// criterion fails. Expensive pipelines (the two reference experiments) run
// once and feed several criteria.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <ftc/ftc.hpp>

using namespace ftc;
namespace fs = std::filesystem;

namespace {

struct Gate {
    bool all_ok = true;

    void report(int idx, const std::string& desc, bool pass, const std::string& measured) {
        std::printf("[%s] criterion-%d %s: %s\n", pass ? "PASS" : "FAIL", idx, desc.c_str(),
                    measured.c_str());
        std::fflush(stdout);
        all_ok = all_ok && pass;
    }

    void run(int idx, const std::string& desc, const std::function<std::pair<bool, std::string>()>& fn) {
        std::fprintf(stderr, "-- criterion-%d: %s\n", idx, desc.c_str());
        try {
            auto [pass, measured] = fn();
            report(idx, desc, pass, measured);
        } catch (const std::exception& e) {
            report(idx, desc, false, std::string("exception: ") + e.what());
        }
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return "<missing:" + p.string() + ">";
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Smallest spectral norm of C^(1/2)(Phi - Psi) over causal achievable
// responses, computed by bisection on the radius with alternating projections
// between the achievable affine set and the spectral-norm ball. Every affine
// projection is itself achievable, so its spectral norm is a valid upper
// bound; tracking the best one sharpens the bisection well past the
// resolution of the feasibility verdicts.
double bisection_projection_lambda(const LiftedOperators<double>& ops,
                                   const NoncausalResponse<double>& bench) {
    const Index nT = ops.nT(), mT = ops.mT();
    auto pb = make_structure(ops, causal_entries(ops.n, ops.m, ops.T));
    Mat<double> R0(nT + mT, nT);
    R0 << ops.G - bench.Psi_x, -bench.Psi_u;

    std::vector<std::vector<Index>> col_rows(nT);
    for (const auto& [r, c] : pb.entries) col_rows[c].push_back(r);
    std::vector<Mat<double>> sub(nT);
    std::vector<Eigen::CompleteOrthogonalDecomposition<Mat<double>>> pinv(nT);
    for (Index c = 0; c < nT; ++c) {
        if (col_rows[c].empty()) continue;
        sub[c].resize(nT + mT, (Index)col_rows[c].size());
        for (size_t k = 0; k < col_rows[c].size(); ++k)
            sub[c].col((Index)k) = pb.Vs.col(col_rows[c][k]);
        pinv[c].compute(sub[c]);
    }

    auto proj_affine = [&](const Mat<double>& D) {
        Mat<double> out = R0;
        for (Index c = 0; c < nT; ++c) {
            if (col_rows[c].empty()) continue;
            out.col(c) += sub[c] * pinv[c].solve(Vec<double>(D.col(c) - R0.col(c)));
        }
        return out;
    };
    auto proj_ball = [&](const Mat<double>& D, double s) {
        Eigen::JacobiSVD<Mat<double>> svd(D, Eigen::ComputeThinU | Eigen::ComputeThinV);
        Vec<double> sv = svd.singularValues().cwiseMin(s);
        return Mat<double>(svd.matrixU() * sv.asDiagonal() * svd.matrixV().transpose());
    };

    Mat<double> D = Mat<double>::Zero(nT + mT, nT);
    Mat<double> A = proj_affine(D);
    double best_up = A.bdcSvd().singularValues()[0];
    double lo = 0.0, hi = best_up;
    while (hi - lo > 1e-6 * std::max(1.0, hi)) {
        const double mid = 0.5 * (lo + hi);
        bool ok = false;
        for (int it = 0; it < 1500; ++it) {
            A = proj_affine(D);
            best_up = std::min(best_up, A.bdcSvd().singularValues()[0]);
            D = proj_ball(A, mid);
            if ((A - D).norm() <= 1e-9 * std::max(1.0, R0.norm())) {
                ok = true;
                break;
            }
        }
        if (ok)
            hi = mid;
        else
            lo = mid;
        hi = std::min(hi, best_up);
    }
    return best_up * best_up;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

}  // namespace

int main() {
    Gate gate;
    const fs::path out_root = fs::temp_directory_path() / "ftc_acceptance";
    fs::remove_all(out_root);
    fs::create_directories(out_root);
    const std::string config_dir = FTC_CONFIG_DIR;

    gate.run(1, "regret coincides with imitation loss against the optimal benchmark", [&] {
        const auto t0 = std::chrono::steady_clock::now();
        const double err = thm2_identity_max_err(91, 50, 20);
        const double secs = seconds_since(t0);
        return std::make_pair(err <= 1e-8 && secs < 10.0,
                              "max_rel_err=" + fmt(err) + " runtime=" + fmt(secs) + "s");
    });

    gate.run(2, "inversion-lemma form of the optimal benchmark", [&] {
        const double res = mil_max_residual(92, 20);
        return std::make_pair(res <= 1e-9, "max_frobenius_residual=" + fmt(res));
    });

    gate.run(3, "clairvoyant stationarity and global lower bound", [&] {
        const double stat = stationarity_max(93, 20);
        const double gap = clairvoyant_gap_min(94, 50, 20);
        return std::make_pair(stat <= 1e-8 && gap >= -1e-9,
                              "max_stationarity=" + fmt(stat) + " min_gap=" + fmt(gap));
    });

    // experiment pipelines (shared by criteria 4-7)
    ExperimentConfig cfg1, cfg2;
    SynthesisSet set1, set2;
    Exp1Report rep1;
    Exp2Report rep2;
    std::string exp1_err, exp2_err;
    try {
        cfg1 = load_config(config_dir + "/exp1.json");
        cfg1.out_dir = (out_root / "exp1").string();
        std::fprintf(stderr, "-- synthesizing experiment-1 policies (T=%d)...\n", cfg1.system.T);
        set1 = run_synthesis(cfg1);
        rep1 = run_experiment_one(cfg1, set1);
    } catch (const std::exception& e) {
        exp1_err = e.what();
    }
    try {
        cfg2 = load_config(config_dir + "/exp2.json");
        cfg2.out_dir = (out_root / "exp2").string();
        std::fprintf(stderr, "-- synthesizing experiment-2 policies (T=%d)...\n", cfg2.system.T);
        set2 = run_synthesis(cfg2);
        rep2 = run_experiment_two(cfg2, set2);
    } catch (const std::exception& e) {
        exp2_err = e.what();
    }

    gate.run(4, "experiment-1 worst-case regret and benchmark coincidence", [&] {
        if (!exp1_err.empty()) return std::make_pair(false, "exception: " + exp1_err);
        const double rel = std::abs(rep1.worst_regret - 7.98) / 7.98;
        return std::make_pair(rel <= 0.01 && rep1.coincidence_ok,
                              "worst_regret=" + fmt(rep1.worst_regret) + " rel_diff=" + fmt(rel) +
                                  " coincidence_err=" + fmt(rep1.coincidence_err));
    });

    gate.run(5, "cost-table orderings and the gauss-row spread", [&] {
        if (!exp1_err.empty()) return std::make_pair(false, "exception: " + exp1_err);
        const std::map<std::string, std::string> expected_best = {
            {"N(0,1)", "h2"},   {"U(0.5,1)", "ftc"}, {"U(0,1)", "ftc"},
            {"one", "ftc"},     {"sin", "ftc"},      {"sawtooth", "ftc"},
            {"step", "hinf"},   {"stairs", "ftc"},   {"worst", "hinf"}};
        std::map<std::string, std::map<std::string, double>> table;
        for (const auto& row : rep1.rows) table[row.profile][row.policy] = row.avg_cost;
        bool ok = table.size() == expected_best.size();
        std::string bad;
        for (const auto& [profile, want] : expected_best) {
            auto it = table.find(profile);
            if (it == table.end()) {
                ok = false;
                bad += " missing:" + profile;
                continue;
            }
            std::string argmin;
            double best = std::numeric_limits<double>::infinity();
            for (const char* pol : {"h2", "hinf", "ftc"}) {
                auto jt = it->second.find(pol);
                if (jt == it->second.end()) continue;
                if (jt->second < best) {
                    best = jt->second;
                    argmin = pol;
                }
            }
            if (argmin != want) {
                ok = false;
                bad += " " + profile + ":best=" + argmin + "(want " + want + ")";
            }
        }
        double ftc_vs_h2 = std::numeric_limits<double>::quiet_NaN();
        if (table.count("N(0,1)") && table["N(0,1)"].count("ftc") && table["N(0,1)"].count("h2")) {
            ftc_vs_h2 = 100.0 * (table["N(0,1)"]["ftc"] / table["N(0,1)"]["h2"] - 1.0);
            ok = ok && std::abs(ftc_vs_h2 - 52.33) <= 5.0;
        } else {
            ok = false;
        }
        return std::make_pair(ok, "gauss_ftc_vs_h2=+" + fmt(ftc_vs_h2) + "%" +
                                      (bad.empty() ? std::string(" all_orderings_match") : bad));
    });

    gate.run(6, "experiment-2 tracking and cost deltas on near-active vertices", [&] {
        if (!exp2_err.empty()) return std::make_pair(false, "exception: " + exp2_err);
        const double dE = 100.0 * rep2.dE_final, dJ = 100.0 * rep2.dJ_final;
        const bool ok = rep2.samples == cfg2.num_realizations && dE > 0.0 && dJ > 0.0 &&
                        dE >= 10.0 && dE <= 30.0 && dJ >= 3.0 && dJ <= 20.0;
        return std::make_pair(ok, "dE_final=+" + fmt(dE) + "% dJ_final=+" + fmt(dJ) +
                                      "% samples=" + std::to_string(rep2.samples));
    });

    gate.run(7, "closed-form safety certification of every synthesized policy", [&] {
        if (!exp1_err.empty() || !exp2_err.empty())
            return std::make_pair(false, "exception: " + exp1_err + exp2_err);
        double min_slack = std::numeric_limits<double>::infinity();
        int count = 0;
        for (const SynthesisSet* set : {&set1, &set2}) {
            min_slack = std::min(min_slack, certify_safety(set->bench, set->safety).minCoeff());
            ++count;
            for (const auto& res : set->results) {
                min_slack =
                    std::min(min_slack, certify_safety(res.response, set->safety).minCoeff());
                ++count;
            }
        }
        return std::make_pair(min_slack >= -1e-6, "min_slack=" + fmt(min_slack) +
                                                      " policies=" + std::to_string(count));
    });

    gate.run(8, "scalar synthesis cross-checked by bisection with alternating projections", [&] {
        Mat<double> A(1, 1), B(1, 1);
        A << 1.5;
        B << 1.0;
        auto ops = build_lifted(LtvSystem<double>::time_invariant(A, B, 5));
        auto cw = CostWeights<double>::identity(1, 1, 5);
        auto spec = SafetySpec<double>::box(1, 1, 5, 2.0, 2.0, 1.0);
        auto bench = constrained_h2(ops, cw, spec);
        auto res = synthesize_ftc(ops, cw, bench, &spec);
        const double lam_oracle = bisection_projection_lambda(ops, bench);
        const double rel = std::abs(res.objective - lam_oracle) / std::max(1e-12, res.objective);
        return std::make_pair(rel <= 1e-4, "lambda=" + fmt(res.objective) +
                                               " oracle=" + fmt(lam_oracle) +
                                               " rel_diff=" + fmt(rel));
    });

    gate.run(9, "feedback reconstruction reproduces the closed-loop maps", [&] {
        const double err = reconstruct_rollout_max_err(99, 20);
        return std::make_pair(err <= 1e-8, "max_rollout_err=" + fmt(err));
    });

    gate.run(10, "experiment reruns emit bit-identical artifacts", [&] {
        json sys = {{"n", 3},
                    {"m", 2},
                    {"T", 10},
                    {"A", json::array({json::array({0.735, 0.21, 0.0}),
                                       json::array({0.315, 0.735, -0.105}),
                                       json::array({0.0, -0.21, 0.84})})},
                    {"B", json::array({json::array({1.0, 0.2}), json::array({2.0, 0.3}),
                                       json::array({1.5, 0.5})})}};
        json j1;
        j1["schema_version"] = 1;
        j1["system"] = sys;
        j1["safety"] = {{"x_bound", 10.0}, {"u_bound", 10.0}, {"w_bound", 1.0}};
        j1["num_draws"] = 200;
        j1["seed"] = 20240501;
        j1["jobs"] = 2;

        json j2 = j1;
        j2["safety"] = {{"x_bound", 10.0}, {"u_bound", 5.0}, {"w_bound", 1.0}};
        j2["benchmark"] = {{"preview", 5}};
        j2["criteria"] = json::array({"ftc", "regret"});
        j2["num_realizations"] = 200;
        j2["threshold"] = 0.90;

        std::vector<std::string> t1(2), e1(2), e2(2);
        for (int pass = 0; pass < 2; ++pass) {
            const fs::path d1 = out_root / ("det1_" + std::to_string(pass));
            const fs::path d2 = out_root / ("det2_" + std::to_string(pass));
            j1["out_dir"] = d1.string();
            j2["out_dir"] = d2.string();
            run_experiment_one(parse_config(j1));
            run_experiment_two(parse_config(j2));
            t1[pass] = slurp(d1 / "table1.csv");
            e1[pass] = slurp(d2 / "delta_E.csv");
            e2[pass] = slurp(d2 / "delta_J.csv");
        }
        const bool ok = t1[0] == t1[1] && e1[0] == e1[1] && e2[0] == e2[1] &&
                        t1[0].find("<missing") == std::string::npos &&
                        e1[0].find("<missing") == std::string::npos;
        return std::make_pair(ok, std::string("table1=") + (t1[0] == t1[1] ? "match" : "DIFFER") +
                                      " delta_E=" + (e1[0] == e1[1] ? "match" : "DIFFER") +
                                      " delta_J=" + (e2[0] == e2[1] ? "match" : "DIFFER"));
    });

    return gate.all_ok ? 0 : 1;
}
