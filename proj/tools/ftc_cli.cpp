#include <cstdio>
#include <exception>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <ftc/ftc.hpp>

namespace {

struct CommonOpts {
    std::string config;
    std::string out;
    std::string criteria;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int jobs = 0;
    bool parallel_criteria = false;
};

void attach_common(CLI::App* sub, CommonOpts& o, bool config_required) {
    auto* c = sub->add_option("--config", o.config, "JSON experiment config");
    if (config_required) c->required();
    sub->add_option("--out", o.out, "output directory (overrides config)");
    sub->add_option("--seed", o.seed, "base RNG seed (overrides config)")
        ->each([&](const std::string&) { o.seed_set = true; });
    sub->add_option("--criteria", o.criteria,
                    "comma-separated criteria list, e.g. ftc,regret,h2,hinf");
    sub->add_option("--jobs", o.jobs, "evaluation worker threads");
    sub->add_flag("--parallel-criteria", o.parallel_criteria,
                  "synthesize the criteria concurrently");
}

ftc::ExperimentConfig default_props_config() {
    ftc::ExperimentConfig cfg;
    ftc::Mat<double> A(2, 2), B(2, 1);
    A << 1.0, 0.2, 0.0, 0.9;
    B << 0.0, 1.0;
    cfg.system = ftc::LtvSystem<double>::time_invariant(A, B, 8);
    cfg.seed = 20240501;
    return cfg;
}

ftc::ExperimentConfig resolve_config(const CommonOpts& o, bool allow_default) {
    ftc::ExperimentConfig cfg;
    if (!o.config.empty()) {
        cfg = ftc::load_config(o.config);
    } else if (allow_default) {
        cfg = default_props_config();
    } else {
        throw ftc::ConfigError("--config is required");
    }
    if (!o.out.empty()) cfg.out_dir = o.out;
    if (o.seed_set) cfg.seed = o.seed;
    if (o.jobs > 0) cfg.jobs = o.jobs;
    if (o.parallel_criteria) cfg.parallel_criteria = true;
    if (!o.criteria.empty()) {
        cfg.criteria.clear();
        std::stringstream ss(o.criteria);
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) cfg.criteria.push_back(ftc::criterion_from_name(tok));
        if (cfg.criteria.empty()) throw ftc::ConfigError("--criteria parsed to an empty list");
    }
    return cfg;
}

int cmd_synth(const CommonOpts& o) {
    ftc::ExperimentConfig cfg = resolve_config(o, false);
    ftc::SynthesisSet set = ftc::run_synthesis(cfg);
    std::filesystem::create_directories(cfg.out_dir);
    for (size_t k = 0; k < set.criteria.size(); ++k) {
        const std::string name = ftc::criterion_name(set.criteria[k]);
        const std::string path = cfg.out_dir + "/response_" + name + ".json";
        ftc::save_response(path, set.results[k], cfg.system.n, cfg.system.m, cfg.system.T,
                           cfg.solver);
        std::printf("%-6s objective %.9g  iters %d  -> %s\n", name.c_str(),
                    set.results[k].objective, set.results[k].stats.iterations, path.c_str());
    }
    return 0;
}

int cmd_exp1(const CommonOpts& o) {
    ftc::ExperimentConfig cfg = resolve_config(o, false);
    ftc::Exp1Report rep = ftc::run_experiment_one(cfg);
    std::printf("benchmark coincidence |psi - psi*|_max = %.3e (tol 1e-4): %s\n",
                rep.coincidence_err, rep.coincidence_ok ? "ok" : "FAILED");
    for (const auto& [name, obj] : rep.objectives)
        std::printf("objective %-6s = %.9g\n", name.c_str(), obj);
    if (std::isfinite(rep.worst_regret))
        std::printf("worst-case regret (ftc) = %.6g\n", rep.worst_regret);
    std::string last;
    for (const auto& row : rep.rows) {
        if (row.profile != last) {
            std::printf("%s\n", row.profile.c_str());
            last = row.profile;
        }
        std::printf("  %-6s avg_cost %12.5f  vs_best %+8.2f%%\n", row.policy.c_str(),
                    row.avg_cost, row.pct_vs_best);
    }
    std::printf("wrote %s/table1.csv\n", cfg.out_dir.c_str());
    return rep.ok ? 0 : 1;
}

int cmd_exp2(const CommonOpts& o) {
    ftc::ExperimentConfig cfg = resolve_config(o, false);
    ftc::Exp2Report rep = ftc::run_experiment_two(cfg);
    for (const auto& [name, obj] : rep.objectives)
        std::printf("objective %-6s = %.9g\n", name.c_str(), obj);
    std::printf("near-active vertices accepted: %d\n", rep.samples);
    std::printf("final-time deltas (regret policy vs ftc): dE = %+.2f%%  dJ = %+.2f%%\n",
                100.0 * rep.dE_final, 100.0 * rep.dJ_final);
    std::printf("wrote %s/delta_E.csv and %s/delta_J.csv\n", cfg.out_dir.c_str(),
                cfg.out_dir.c_str());
    return rep.ok ? 0 : 1;
}

int cmd_props(const CommonOpts& o, double tol_override) {
    ftc::ExperimentConfig cfg = resolve_config(o, true);
    if (tol_override > 0) cfg.prop_tol = tol_override;
    ftc::PropReport rep = ftc::run_property_suite(cfg);
    for (const auto& r : rep.results)
        std::printf("[%s] %s %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    return rep.all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"follow-the-clairvoyant controller synthesis and experiments"};
    app.require_subcommand(1);

    CommonOpts synth_o, exp1_o, exp2_o, props_o;
    double props_tol = 0.0;
    auto* synth = app.add_subcommand("synth", "synthesize controllers and save responses");
    attach_common(synth, synth_o, true);
    auto* exp1 = app.add_subcommand("exp1", "worst-case regret + cost table experiment");
    attach_common(exp1, exp1_o, true);
    auto* exp2 = app.add_subcommand("exp2", "near-active vertex imitation/cost experiment");
    attach_common(exp2, exp2_o, true);
    auto* props = app.add_subcommand("props", "run the randomized property suite");
    attach_common(props, props_o, false);
    props->add_option("--tol", props_tol, "tolerance for identity-type properties");

    CLI11_PARSE(app, argc, argv);
    try {
        if (synth->parsed()) return cmd_synth(synth_o);
        if (exp1->parsed()) return cmd_exp1(exp1_o);
        if (exp2->parsed()) return cmd_exp2(exp2_o);
        if (props->parsed()) return cmd_props(props_o, props_tol);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
