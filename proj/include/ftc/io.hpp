#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "evaluation.hpp"

namespace ftc {

using nlohmann::json;

struct SolverConfig {
    double feastol = 1e-8;
    double abstol = 1e-9;
    double reltol = 1e-8;
    int maxiter = 100;
    bool verbose = false;

    SolveOptions options() const {
        SolveOptions o;
        o.feastol = feastol;
        o.abstol = abstol;
        o.reltol = reltol;
        o.maxiter = maxiter;
        o.verbose = verbose;
        return o;
    }
};

struct ProfileConfig {
    DisturbanceProfile prof;
    std::string label;
    int draws = 1;
};

struct ExperimentConfig {
    LtvSystem<double> system;
    double q_diag = 1.0;
    double r_diag = 1.0;
    double x_bound = std::numeric_limits<double>::infinity();
    double u_bound = std::numeric_limits<double>::infinity();
    double w_bound = 1.0;
    int preview = kFullPreview;
    std::vector<Criterion> criteria = {Criterion::Ftc, Criterion::Regret, Criterion::H2,
                                       Criterion::Hinf};
    std::vector<ProfileConfig> profiles;
    int num_draws = 1000;
    int num_realizations = 1000;
    double threshold = 0.95;
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    SolverConfig solver;
    double prop_tol = 1e-8;
    int jobs = 1;
    bool parallel_criteria = false;

    CostWeights<double> weights(const LiftedOperators<double>& ops) const {
        Mat<double> Q = q_diag * Mat<double>::Identity(ops.nT(), ops.nT());
        Mat<double> R = r_diag * Mat<double>::Identity(ops.mT(), ops.mT());
        return CostWeights<double>::from(Q, R);
    }

    SafetySpec<double> safety() const {
        return SafetySpec<double>::box(system.n, system.m, system.T, x_bound, u_bound, w_bound);
    }
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed,
                       const std::string& ctx) {
    if (!j.is_object()) throw ConfigError(ctx + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) { ok = true; break; }
        if (!ok) throw ConfigError(ctx + ": unknown key '" + it.key() + "'");
    }
}

inline Mat<double> json_to_mat(const json& j, const std::string& ctx) {
    if (!j.is_array() || j.empty() || !j[0].is_array())
        throw ConfigError(ctx + ": expected an array of rows");
    const Index r = (Index)j.size(), c = (Index)j[0].size();
    Mat<double> M(r, c);
    for (Index i = 0; i < r; ++i) {
        if ((Index)j[i].size() != c) throw ConfigError(ctx + ": ragged rows");
        for (Index k = 0; k < c; ++k) M(i, k) = j[i][k].get<double>();
    }
    return M;
}

inline json mat_to_json(const Mat<double>& M) {
    json rows = json::array();
    for (Index i = 0; i < M.rows(); ++i) {
        json row = json::array();
        for (Index k = 0; k < M.cols(); ++k) row.push_back(M(i, k));
        rows.push_back(row);
    }
    return rows;
}

inline double bound_from(const json& j, const char* key, double fallback) {
    if (!j.contains(key) || j[key].is_null()) return fallback;
    return j[key].get<double>();
}

inline json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    json j;
    in >> j;
    return j;
}

}  // namespace detail

inline Criterion criterion_from_name(const std::string& s) {
    if (s == "ftc") return Criterion::Ftc;
    if (s == "regret") return Criterion::Regret;
    if (s == "h2") return Criterion::H2;
    if (s == "hinf") return Criterion::Hinf;
    throw ConfigError("unknown criterion '" + s + "' (expected ftc|regret|h2|hinf)");
}

inline LtvSystem<double> parse_system(const json& js) {
    detail::check_keys(js, {"n", "m", "T", "A", "B"}, "system");
    for (const char* k : {"n", "m", "T", "A", "B"})
        if (!js.contains(k)) throw ConfigError(std::string("system: missing key '") + k + "'");
    const int n = js["n"].get<int>(), m = js["m"].get<int>(), T = js["T"].get<int>();
    Mat<double> A = detail::json_to_mat(js["A"], "system.A");
    Mat<double> B = detail::json_to_mat(js["B"], "system.B");
    if (A.rows() != n || A.cols() != n) throw ConfigError("system.A must be n x n");
    if (B.rows() != n || B.cols() != m) throw ConfigError("system.B must be n x m");
    return LtvSystem<double>::time_invariant(A, B, T);
}

inline ProfileConfig parse_profile(const json& jp, int default_draws) {
    detail::check_keys(jp, {"tag", "lo", "hi", "draws", "label", "scale"}, "profile");
    if (!jp.contains("tag")) throw ConfigError("profile: missing key 'tag'");
    const std::string tag = jp["tag"].get<std::string>();
    ProfileConfig pc;
    if (tag == "gauss01") pc.prof.tag = ProfileTag::Gauss01;
    else if (tag == "uniform") pc.prof.tag = ProfileTag::Uniform;
    else if (tag == "one") pc.prof.tag = ProfileTag::ConstantOne;
    else if (tag == "sin") pc.prof.tag = ProfileTag::Sin;
    else if (tag == "sawtooth") pc.prof.tag = ProfileTag::Sawtooth;
    else if (tag == "step") pc.prof.tag = ProfileTag::Step;
    else if (tag == "stairs") pc.prof.tag = ProfileTag::Stairs;
    else if (tag == "worst") pc.prof.tag = ProfileTag::WorstCase;
    else throw ConfigError("profile: unknown tag '" + tag + "'");
    if (jp.contains("lo")) pc.prof.lo = jp["lo"].get<double>();
    if (jp.contains("hi")) pc.prof.hi = jp["hi"].get<double>();
    if (jp.contains("scale")) pc.prof.scale = jp["scale"].get<double>();
    const bool stochastic =
        pc.prof.tag == ProfileTag::Gauss01 || pc.prof.tag == ProfileTag::Uniform;
    pc.draws = stochastic ? default_draws : 1;
    if (jp.contains("draws")) pc.draws = jp["draws"].get<int>();
    if (pc.draws < 1) throw ConfigError("profile: draws must be >= 1");
    if (jp.contains("label")) {
        pc.label = jp["label"].get<std::string>();
    } else if (pc.prof.tag == ProfileTag::Uniform) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "U(%g,%g)", pc.prof.lo, pc.prof.hi);
        pc.label = buf;
    } else {
        pc.label = profile_name(pc.prof.tag);
    }
    return pc;
}

inline std::vector<ProfileConfig> default_table_profiles(int draws) {
    json rows = json::array({
        json{{"tag", "gauss01"}, {"label", "N(0,1)"}},
        json{{"tag", "uniform"}, {"lo", 0.5}, {"hi", 1.0}},
        json{{"tag", "uniform"}, {"lo", 0.0}, {"hi", 1.0}},
        json{{"tag", "one"}},
        json{{"tag", "sin"}},
        json{{"tag", "sawtooth"}},
        json{{"tag", "step"}},
        json{{"tag", "stairs"}},
        json{{"tag", "worst"}},
    });
    std::vector<ProfileConfig> out;
    for (const auto& r : rows) out.push_back(parse_profile(r, draws));
    return out;
}

inline ExperimentConfig parse_config(const json& j) {
    detail::check_keys(j,
                       {"schema_version", "system", "weights", "safety", "benchmark", "criteria",
                        "profiles", "num_draws", "num_realizations", "threshold", "seed",
                        "out_dir", "solver", "prop_tol", "jobs", "parallel_criteria"},
                       "config");
    if (!j.contains("schema_version") || j["schema_version"].get<int>() != 1)
        throw ConfigError("config: schema_version must be 1");
    if (!j.contains("system")) throw ConfigError("config: missing key 'system'");
    ExperimentConfig cfg;
    cfg.system = j["system"].is_string()
                     ? parse_system(detail::load_json_file(j["system"].get<std::string>()))
                     : parse_system(j["system"]);
    if (j.contains("weights")) {
        detail::check_keys(j["weights"], {"q_diag", "r_diag"}, "weights");
        if (j["weights"].contains("q_diag")) cfg.q_diag = j["weights"]["q_diag"].get<double>();
        if (j["weights"].contains("r_diag")) cfg.r_diag = j["weights"]["r_diag"].get<double>();
    }
    if (j.contains("safety")) {
        detail::check_keys(j["safety"], {"x_bound", "u_bound", "w_bound"}, "safety");
        const double inf = std::numeric_limits<double>::infinity();
        cfg.x_bound = detail::bound_from(j["safety"], "x_bound", inf);
        cfg.u_bound = detail::bound_from(j["safety"], "u_bound", inf);
        cfg.w_bound = detail::bound_from(j["safety"], "w_bound", 1.0);
    }
    if (j.contains("benchmark")) {
        detail::check_keys(j["benchmark"], {"preview"}, "benchmark");
        if (j["benchmark"].contains("preview")) cfg.preview = j["benchmark"]["preview"].get<int>();
    }
    if (j.contains("criteria")) {
        cfg.criteria.clear();
        for (const auto& c : j["criteria"])
            cfg.criteria.push_back(criterion_from_name(c.get<std::string>()));
        if (cfg.criteria.empty()) throw ConfigError("config: criteria list is empty");
    }
    if (j.contains("num_draws")) cfg.num_draws = j["num_draws"].get<int>();
    if (j.contains("profiles")) {
        for (const auto& p : j["profiles"]) cfg.profiles.push_back(parse_profile(p, cfg.num_draws));
    } else {
        cfg.profiles = default_table_profiles(cfg.num_draws);
    }
    if (j.contains("num_realizations")) cfg.num_realizations = j["num_realizations"].get<int>();
    if (cfg.num_realizations < 1) throw ConfigError("config: num_realizations must be >= 1");
    if (j.contains("threshold")) cfg.threshold = j["threshold"].get<double>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("solver")) {
        detail::check_keys(j["solver"], {"feastol", "abstol", "reltol", "maxiter", "verbose"},
                           "solver");
        const auto& s = j["solver"];
        if (s.contains("feastol")) cfg.solver.feastol = s["feastol"].get<double>();
        if (s.contains("abstol")) cfg.solver.abstol = s["abstol"].get<double>();
        if (s.contains("reltol")) cfg.solver.reltol = s["reltol"].get<double>();
        if (s.contains("maxiter")) cfg.solver.maxiter = s["maxiter"].get<int>();
        if (s.contains("verbose")) cfg.solver.verbose = s["verbose"].get<bool>();
    }
    if (j.contains("prop_tol")) cfg.prop_tol = j["prop_tol"].get<double>();
    if (j.contains("jobs")) cfg.jobs = std::max(1, j["jobs"].get<int>());
    if (j.contains("parallel_criteria")) cfg.parallel_criteria = j["parallel_criteria"].get<bool>();
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    return parse_config(detail::load_json_file(path));
}

inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct Table1Row {
    std::string profile;
    std::string policy;
    double avg_cost;
    double pct_vs_best;
};

inline void write_table1_csv(const std::string& path, const std::vector<Table1Row>& rows) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << "profile,policy,avg_cost,pct_vs_best\n";
    for (const auto& r : rows)
        out << r.profile << ',' << r.policy << ',' << fmt17(r.avg_cost) << ','
            << fmt17(r.pct_vs_best) << '\n';
}

inline void write_series_csv(const std::string& path, const Vec<double>& mean,
                             const Vec<double>& sd, const Vec<double>& mn,
                             const Vec<double>& mx) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << "t,mean,std,min,max\n";
    for (Index t = 0; t < mean.size(); ++t)
        out << t << ',' << fmt17(mean[t]) << ',' << fmt17(sd[t]) << ',' << fmt17(mn[t]) << ','
            << fmt17(mx[t]) << '\n';
}

inline void save_response(const std::string& path, const SynthesisResult<double>& res, int n,
                          int m, int T, const SolverConfig& solver) {
    json j;
    j["schema_version"] = 1;
    j["criterion"] = criterion_name(res.criterion);
    j["objective"] = res.objective;
    j["dims"] = {{"n", n}, {"m", m}, {"T", T}};
    j["tolerances"] = {{"feastol", solver.feastol},
                       {"abstol", solver.abstol},
                       {"reltol", solver.reltol}};
    j["Phi_x"] = detail::mat_to_json(res.response.Phi_x);
    j["Phi_u"] = detail::mat_to_json(res.response.Phi_u);
    j["Y"] = res.dual_Y.size() ? detail::mat_to_json(res.dual_Y) : json();
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

inline SynthesisResult<double> load_response(const std::string& path) {
    json j = detail::load_json_file(path);
    detail::check_keys(
        j, {"schema_version", "criterion", "objective", "dims", "tolerances", "Phi_x", "Phi_u", "Y"},
        "response");
    SynthesisResult<double> res;
    res.criterion = criterion_from_name(j["criterion"].get<std::string>());
    res.objective = j["objective"].get<double>();
    res.response.Phi_x = detail::json_to_mat(j["Phi_x"], "response.Phi_x");
    res.response.Phi_u = detail::json_to_mat(j["Phi_u"], "response.Phi_u");
    if (!j["Y"].is_null()) res.dual_Y = detail::json_to_mat(j["Y"], "response.Y");
    return res;
}

}  // namespace ftc
