// Command-line surface: `simulate` runs a replication study from a JSON
// config; `analyze` estimates survival contrasts on a user dataset. Exit
// codes: 0 success, 2 configuration/ingestion error, 3 estimation failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "proxsurv/dataset.hpp"
#include "proxsurv/estimators.hpp"
#include "proxsurv/simulation.hpp"
#include "proxsurv/svg_plot.hpp"

namespace {

using nlohmann::json;
using namespace proxsurv;

json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open config file '" + path + "'");
    }
    try {
        return json::parse(in);
    } catch (const json::exception& ex) {
        throw DataError("config '" + path + "' is not valid JSON: " + ex.what());
    }
}

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& context) {
    if (!j.is_object()) {
        throw DataError("config: " + context + " must be a JSON object");
    }
    for (const auto& item : j.items()) {
        if (!allowed.count(item.key())) {
            throw DataError("config: unknown key '" + item.key() + "' in " + context);
        }
    }
}

template <typename T>
T get_req(const json& j, const std::string& key, const std::string& context) {
    if (!j.contains(key)) {
        throw DataError("config: missing required key '" + key + "' in " + context);
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw DataError("config: key '" + key + "' in " + context + " has the wrong type");
    }
}

template <typename T>
T get_opt(const json& j, const std::string& key, const std::string& context, T fallback) {
    if (!j.contains(key)) {
        return fallback;
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw DataError("config: key '" + key + "' in " + context + " has the wrong type");
    }
}

EstimatorKind parse_estimator(const std::string& name) {
    if (name == "pipw") return EstimatorKind::pipw;
    if (name == "pdr") return EstimatorKind::pdr;
    if (name == "nuc_ipw") return EstimatorKind::nuc_ipw;
    throw DataError("config: unknown estimator '" + name +
                    "' (expected pipw, pdr, or nuc_ipw)");
}

SimScenario parse_scenario(const json& j) {
    reject_unknown_keys(j, {"n", "reps", "seed", "estimator", "q_misspec", "h_misspec",
                            "eval_times", "sup_test_draws", "dgp"},
                        "the simulate config");
    SimScenario sc;
    sc.n = get_req<int>(j, "n", "the simulate config");
    sc.reps = get_req<int>(j, "reps", "the simulate config");
    sc.seed = get_req<std::uint64_t>(j, "seed", "the simulate config");
    sc.estimator = parse_estimator(get_req<std::string>(j, "estimator", "the simulate config"));
    sc.q_misspec = get_opt<bool>(j, "q_misspec", "the simulate config", false);
    const std::string hm =
        get_opt<std::string>(j, "h_misspec", "the simulate config", "none");
    if (hm == "none") {
        sc.h_misspec = HMisspecKind::none;
    } else if (hm == "sqrt_plus_one") {
        sc.h_misspec = HMisspecKind::sqrt_plus_one;
    } else if (hm == "sqrt") {
        sc.h_misspec = HMisspecKind::sqrt;
    } else {
        throw DataError("config: h_misspec must be none, sqrt_plus_one, or sqrt");
    }
    sc.eval_times = get_opt<std::vector<double>>(j, "eval_times", "the simulate config",
                                                 {0.25, 0.5, 0.75});
    sc.sup_test_draws = get_opt<int>(j, "sup_test_draws", "the simulate config", 0);
    if (sc.sup_test_draws < 0) {
        throw DataError("config: sup_test_draws must be nonnegative");
    }
    if (j.contains("dgp")) {
        reject_unknown_keys(j.at("dgp"), {"treat_coef"}, "the dgp block");
        sc.dgp.treat_coef =
            get_opt<double>(j.at("dgp"), "treat_coef", "the dgp block", sc.dgp.treat_coef);
    }
    return sc;
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir) {
    const SimScenario sc = parse_scenario(load_config(config_path));
    const StudyReport report = run_study(sc);
    std::filesystem::create_directories(out_dir);
    write_report_csv(report, out_dir + "/study_report.csv");
    write_report_json(report, out_dir + "/study_report.json");
    std::cout << "study complete: " << report.reps - report.n_fail << "/" << report.reps
              << " replications, report in " << out_dir << "\n";
    return 0;
}

struct AnalyzeConfig {
    std::string dataset;
    RoleSpec roles;
    std::vector<EstimatorKind> estimators;
    CensoringKind censoring = CensoringKind::marginal_km;
    double grid_quantile = 0.95;
    int sup_draws = 1000;
    std::uint64_t seed = 1;
    int bootstrap = 200;
    double positivity_floor = 0.05;
};

AnalyzeConfig parse_analyze(const json& j) {
    reject_unknown_keys(j, {"dataset", "roles", "estimators", "censoring", "grid_quantile",
                            "sup_draws", "seed", "bootstrap", "positivity_floor"},
                        "the analyze config");
    AnalyzeConfig cfg;
    cfg.dataset = get_req<std::string>(j, "dataset", "the analyze config");
    if (!j.contains("roles")) {
        throw DataError("config: missing required key 'roles' in the analyze config");
    }
    const json& roles = j.at("roles");
    reject_unknown_keys(roles, {"time", "event", "treat", "x", "z", "w"}, "the roles block");
    cfg.roles.time_col = get_req<std::string>(roles, "time", "the roles block");
    cfg.roles.event_col = get_req<std::string>(roles, "event", "the roles block");
    cfg.roles.treat_col = get_req<std::string>(roles, "treat", "the roles block");
    cfg.roles.x_cols =
        get_opt<std::vector<std::string>>(roles, "x", "the roles block", {});
    cfg.roles.z_cols = get_req<std::vector<std::string>>(roles, "z", "the roles block");
    cfg.roles.w_cols = get_req<std::vector<std::string>>(roles, "w", "the roles block");

    const std::vector<std::string> names = get_opt<std::vector<std::string>>(
        j, "estimators", "the analyze config", {"pipw", "pdr"});
    if (names.empty()) {
        throw DataError("config: estimators must not be empty");
    }
    for (const std::string& e : names) {
        cfg.estimators.push_back(parse_estimator(e));
    }
    const std::string ck =
        get_opt<std::string>(j, "censoring", "the analyze config", "marginal_km");
    if (ck == "marginal_km") {
        cfg.censoring = CensoringKind::marginal_km;
    } else if (ck == "stratified_km") {
        cfg.censoring = CensoringKind::stratified_km;
    } else {
        throw DataError("config: censoring must be marginal_km or stratified_km");
    }
    cfg.grid_quantile = get_opt<double>(j, "grid_quantile", "the analyze config", 0.95);
    if (!(cfg.grid_quantile > 0.0 && cfg.grid_quantile <= 1.0)) {
        throw DataError("config: grid_quantile must lie in (0,1]");
    }
    cfg.sup_draws = get_opt<int>(j, "sup_draws", "the analyze config", 1000);
    if (cfg.sup_draws < 0) {
        throw DataError("config: sup_draws must be nonnegative");
    }
    cfg.seed = get_opt<std::uint64_t>(j, "seed", "the analyze config", 1);
    cfg.bootstrap = get_opt<int>(j, "bootstrap", "the analyze config", 200);
    if (cfg.bootstrap < 0) {
        throw DataError("config: bootstrap must be nonnegative");
    }
    cfg.positivity_floor = get_opt<double>(j, "positivity_floor", "the analyze config", 0.05);
    return cfg;
}

void write_curve_csv(const CurveEstimate& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot open '" + path + "' for writing");
    }
    out.precision(10);
    out << "t,psi,se,ci_lo,ci_hi,s1,s0\n";
    for (int g = 0; g < curve.grid.size(); ++g) {
        out << curve.grid.points[g] << ',' << curve.psi(g) << ','
            << std::sqrt(curve.var(g) / curve.n) << ',' << curve.ci_lo(g) << ','
            << curve.ci_hi(g) << ',' << curve.s1(g) << ',' << curve.s0(g) << '\n';
    }
    if (!out) {
        throw DataError("failed while writing '" + path + "'");
    }
}

int cmd_analyze(const std::string& config_path, const std::string& out_dir) {
    const AnalyzeConfig cfg = parse_analyze(load_config(config_path));
    const SurvivalDataset data = load_dataset(cfg.dataset, cfg.roles);
    const TimeGrid grid = event_time_grid(data, cfg.grid_quantile);
    const CensoringModel cens = fit_censoring(data, cfg.censoring, cfg.positivity_floor);
    const MomentChoice moments = default_moments();

    // Compute everything first; write files only after all estimators succeed.
    std::vector<std::pair<std::string, CurveEstimate>> results;
    json suptest = json::object();
    FittedBridges bridges;
    bool have_q = false;
    for (const EstimatorKind kind : cfg.estimators) {
        CurveEstimate curve;
        if (kind == EstimatorKind::nuc_ipw) {
            curve = nuc_ipw_curve(data, cens, grid, cfg.bootstrap, cfg.seed);
        } else {
            if (!have_q) {
                bridges.censoring = cens;
                bridges.q_fit = fit_q_bridge(data, bridges.q_spec, moments);
                if (!bridges.q_fit.converged) {
                    throw EstimationError("treatment-side bridge fit did not converge");
                }
                have_q = true;
            }
            if (kind == EstimatorKind::pdr && !bridges.h_fit) {
                HBridgeSpec hs;
                SolveResult hf = fit_h_bridge(data, hs, moments, cens, grid.tau);
                if (!hf.converged) {
                    throw EstimationError("outcome-side bridge fit did not converge");
                }
                bridges.h_spec = hs;
                bridges.h_fit = std::move(hf);
            }
            curve = kind == EstimatorKind::pdr ? pdr_curve(data, bridges, grid)
                                               : pipw_curve(data, bridges, grid);
        }
        pointwise_ci(curve, 0.95);
        if (kind != EstimatorKind::nuc_ipw && cfg.sup_draws > 0) {
            const auto [stat, pval] = sup_test(curve, cfg.sup_draws, cfg.seed);
            suptest[estimator_name(kind)] = {{"statistic", stat},
                                             {"p_value", pval},
                                             {"draws", cfg.sup_draws},
                                             {"seed", cfg.seed}};
        }
        results.emplace_back(estimator_name(kind), std::move(curve));
    }

    std::filesystem::create_directories(out_dir);
    for (const auto& [name, curve] : results) {
        write_curve_csv(curve, out_dir + "/curves_" + name + ".csv");
        std::ofstream svg(out_dir + "/curves_" + name + ".svg");
        if (!svg) {
            throw DataError("cannot open SVG output for writing");
        }
        svg << render_curve_svg(curve, "survival contrast (" + name + ")");
    }
    if (!suptest.empty()) {
        std::ofstream out(out_dir + "/suptest.json");
        if (!out) {
            throw DataError("cannot open suptest.json for writing");
        }
        out << suptest.dump(2) << '\n';
    }
    std::cout << "analysis complete: " << results.size() << " estimator(s), "
              << grid.size() << " grid points, outputs in " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"proximal survival-contrast estimation"};
    app.require_subcommand(1);

    std::string sim_config, sim_out, ana_config, ana_out;
    CLI::App* sim = app.add_subcommand("simulate", "run a replication study from a JSON config");
    sim->add_option("--config", sim_config, "path to the study config JSON")->required();
    sim->add_option("--out", sim_out, "output directory")->required();
    CLI::App* ana = app.add_subcommand("analyze", "estimate survival contrasts on a dataset");
    ana->add_option("--config", ana_config, "path to the analysis config JSON")->required();
    ana->add_option("--out", ana_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (sim->parsed()) {
            return cmd_simulate(sim_config, sim_out);
        }
        return cmd_analyze(ana_config, ana_out);
    } catch (const proxsurv::DataError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 2;
    } catch (const proxsurv::EstimationError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 3;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 3;
    }
}
