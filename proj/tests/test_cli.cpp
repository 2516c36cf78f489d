// End-to-end tests of the command-line binary: exit codes, error reporting,
// and the report/curve files it writes. The binary path arrives via the
// PROXSURV_CLI environment variable (set by the test harness).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#if !defined(_WIN32)
#include <sys/wait.h>
#endif

#include <json.hpp>

#include "proxsurv/dataset.hpp"
#include "proxsurv/simulation.hpp"

namespace fs = std::filesystem;
using namespace proxsurv;
using nlohmann::json;

namespace {

const fs::path& work_root() {
    static const fs::path root = [] {
        fs::path p = fs::temp_directory_path() / "proxsurv_cli_tests";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct CliResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

CliResult run_cli(const std::string& args) {
    const char* exe = std::getenv("PROXSURV_CLI");
    REQUIRE_MESSAGE(exe != nullptr, "PROXSURV_CLI must point at the binary under test");
    static int call_id = 0;
    const fs::path out_file = work_root() / ("stdout_" + std::to_string(call_id) + ".txt");
    const fs::path err_file = work_root() / ("stderr_" + std::to_string(call_id) + ".txt");
    ++call_id;
    const std::string cmd = std::string(exe) + " " + args + " > " + out_file.string() +
                            " 2> " + err_file.string();
    const int raw = std::system(cmd.c_str());
    CliResult r;
#if defined(_WIN32)
    r.exit_code = raw;
#else
    r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
#endif
    r.out = slurp(out_file);
    r.err = slurp(err_file);
    return r;
}

fs::path write_text(const std::string& name, const std::string& text) {
    const fs::path p = work_root() / name;
    std::ofstream out(p);
    out << text;
    REQUIRE(out.good());
    return p;
}

std::vector<std::string> read_lines(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            lines.push_back(line);
        }
    }
    return lines;
}

std::vector<double> parse_csv_row(const std::string& line, int skip_fields = 0) {
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string cell;
    int idx = 0;
    while (std::getline(ss, cell, ',')) {
        if (idx++ < skip_fields) {
            continue;
        }
        vals.push_back(std::stod(cell));
    }
    return vals;
}

}  // namespace

TEST_CASE("simulate writes both report files and is reproducible") {
    const fs::path cfg = write_text("sim_ok.json", R"({
        "n": 200, "reps": 20, "seed": 7, "estimator": "pipw"
    })");
    const fs::path out1 = work_root() / "sim_out1";
    CliResult r = run_cli("simulate --config " + cfg.string() + " --out " + out1.string());
    CAPTURE(r.err);
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("study complete") != std::string::npos);

    // CSV: pinned header, one row per evaluation time.
    const auto lines = read_lines(out1 / "study_report.csv");
    REQUIRE(lines.size() == 4);
    CHECK(lines[0] == "estimator,t,bias,see,sd,cp,n_fail");
    for (int g = 0; g < 3; ++g) {
        CHECK(lines[1 + g].rfind("pipw,", 0) == 0);
        const std::vector<double> row = parse_csv_row(lines[1 + g], /*skip_fields=*/1);
        REQUIRE(row.size() == 6);  // t, bias, see, sd, cp, n_fail
        CHECK(row[0] == doctest::Approx(0.25 * (g + 1)));
        CHECK(row[2] > 0.0);                      // see
        CHECK(row[3] > 0.0);                      // sd
        CHECK((row[4] >= 0.0 && row[4] <= 1.0));  // cp
    }

    // JSON: parses and mirrors the scenario.
    json j = json::parse(std::ifstream(out1 / "study_report.json"));
    CHECK(j.at("estimator").get<std::string>() == "pipw");
    CHECK(j.at("n").get<int>() == 200);
    CHECK(j.at("reps").get<int>() == 20);
    REQUIRE(j.at("rows").size() == 3);
    CHECK(j.at("rows")[1].at("t").get<double>() == doctest::Approx(0.5));
    CHECK(!j.contains("sup_test"));  // no sup pass requested

    // Same config and seed => byte-identical reports.
    const fs::path out2 = work_root() / "sim_out2";
    CliResult r2 = run_cli("simulate --config " + cfg.string() + " --out " + out2.string());
    REQUIRE(r2.exit_code == 0);
    CHECK(slurp(out1 / "study_report.csv") == slurp(out2 / "study_report.csv"));
    CHECK(slurp(out1 / "study_report.json") == slurp(out2 / "study_report.json"));
}

TEST_CASE("simulate rejects bad configs with exit code 2") {
    const fs::path out = work_root() / "sim_bad_out";

    SUBCASE("missing config file") {
        CliResult r = run_cli("simulate --config " + (work_root() / "nope.json").string() +
                              " --out " + out.string());
        CHECK(r.exit_code == 2);
        CHECK(r.err.find("cannot open config file") != std::string::npos);
    }
    SUBCASE("malformed JSON") {
        const fs::path cfg = write_text("sim_malformed.json", "{ not json ");
        CliResult r = run_cli("simulate --config " + cfg.string() + " --out " + out.string());
        CHECK(r.exit_code == 2);
        CHECK(r.err.find("not valid JSON") != std::string::npos);
    }
    SUBCASE("missing required key") {
        const fs::path cfg = write_text("sim_missing_n.json",
                                        R"({"reps": 20, "seed": 7, "estimator": "pipw"})");
        CliResult r = run_cli("simulate --config " + cfg.string() + " --out " + out.string());
        CHECK(r.exit_code == 2);
        CHECK(r.err.find("missing required key 'n'") != std::string::npos);
    }
    SUBCASE("unknown key") {
        const fs::path cfg = write_text(
            "sim_unknown_key.json",
            R"({"n": 200, "reps": 20, "seed": 7, "estimator": "pipw", "bogus": 1})");
        CliResult r = run_cli("simulate --config " + cfg.string() + " --out " + out.string());
        CHECK(r.exit_code == 2);
        CHECK(r.err.find("unknown key 'bogus'") != std::string::npos);
    }
    SUBCASE("unknown estimator") {
        const fs::path cfg = write_text(
            "sim_bad_est.json", R"({"n": 200, "reps": 20, "seed": 7, "estimator": "magic"})");
        CliResult r = run_cli("simulate --config " + cfg.string() + " --out " + out.string());
        CHECK(r.exit_code == 2);
        CHECK(r.err.find("unknown estimator 'magic'") != std::string::npos);
    }
    SUBCASE("scenario validation failure") {
        const fs::path cfg = write_text(
            "sim_zero_reps.json", R"({"n": 200, "reps": 0, "seed": 7, "estimator": "pipw"})");
        CliResult r = run_cli("simulate --config " + cfg.string() + " --out " + out.string());
        CHECK(r.exit_code == 2);
        CHECK(r.err.find("reps") != std::string::npos);
    }
    SUBCASE("missing subcommand") {
        CliResult r = run_cli("");
        CHECK(r.exit_code == 2);
    }
}

TEST_CASE("analyze writes curves, plots, and sup-test results") {
    RngStream stream(4242, 0);
    const SurvivalDataset data = sample_dgp(DgpParams{}, 400, stream);
    const fs::path csv = work_root() / "analyze_data.csv";
    write_csv(data, csv.string());

    const fs::path cfg = write_text("analyze_ok.json", R"({
        "dataset": ")" + csv.string() + R"(",
        "roles": {"time": "time", "event": "event", "treat": "treat",
                  "x": ["x"], "z": ["z"], "w": ["w"]},
        "sup_draws": 150,
        "seed": 5,
        "grid_quantile": 0.9
    })");
    const fs::path out = work_root() / "analyze_out";
    CliResult r = run_cli("analyze --config " + cfg.string() + " --out " + out.string());
    CAPTURE(r.err);
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("analysis complete") != std::string::npos);

    for (const std::string name : {"pipw", "pdr"}) {
        const fs::path curve_csv = out / ("curves_" + name + ".csv");
        const auto lines = read_lines(curve_csv);
        REQUIRE(lines.size() >= 11);  // header plus a nontrivial grid
        CHECK(lines[0] == "t,psi,se,ci_lo,ci_hi,s1,s0");
        double prev_t = 0.0;
        for (std::size_t k = 1; k < lines.size(); ++k) {
            const std::vector<double> row = parse_csv_row(lines[k]);
            REQUIRE(row.size() == 7);
            const double t = row[0], psi = row[1], se = row[2], lo = row[3], hi = row[4];
            CHECK(t > prev_t);  // grid strictly increasing
            prev_t = t;
            CHECK(se > 0.0);
            CHECK(lo < psi);
            CHECK(psi < hi);
            CHECK((row[5] >= -0.5 && row[5] <= 1.5));  // s1 near the unit interval
            CHECK((row[6] >= -0.5 && row[6] <= 1.5));  // s0
        }
        const std::string svg = slurp(out / ("curves_" + name + ".svg"));
        CHECK(svg.find("<svg") != std::string::npos);
    }

    json sup = json::parse(std::ifstream(out / "suptest.json"));
    for (const std::string name : {"pipw", "pdr"}) {
        REQUIRE(sup.contains(name));
        CHECK(sup.at(name).at("draws").get<int>() == 150);
        const double p = sup.at(name).at("p_value").get<double>();
        CHECK(p > 0.0);
        CHECK(p <= 1.0);
        CHECK(sup.at(name).at("statistic").get<double>() >= 0.0);
    }
}

TEST_CASE("analyze reports estimation failure on an all-censored dataset") {
    RngStream stream(4243, 0);
    SurvivalDataset data = sample_dgp(DgpParams{}, 150, stream);
    for (int i = 0; i < data.n(); ++i) {
        data.event[i] = 0;
    }
    const fs::path csv = work_root() / "censored_data.csv";
    write_csv(data, csv.string());
    const fs::path cfg = write_text("analyze_censored.json", R"({
        "dataset": ")" + csv.string() + R"(",
        "roles": {"time": "time", "event": "event", "treat": "treat",
                  "x": ["x"], "z": ["z"], "w": ["w"]}
    })");
    CliResult r = run_cli("analyze --config " + cfg.string() + " --out " +
                          (work_root() / "censored_out").string());
    CHECK(r.exit_code == 3);
    CHECK(r.err.find("no events") != std::string::npos);
}

TEST_CASE("analyze rejects config and ingestion errors with exit code 2") {
    RngStream stream(4244, 0);
    const SurvivalDataset data = sample_dgp(DgpParams{}, 120, stream);
    const fs::path csv = work_root() / "roles_data.csv";
    write_csv(data, csv.string());
    const fs::path out = work_root() / "roles_out";

    SUBCASE("roles block is required") {
        const fs::path cfg =
            write_text("analyze_no_roles.json", R"({"dataset": ")" + csv.string() + R"("})");
        CliResult r = run_cli("analyze --config " + cfg.string() + " --out " + out.string());
        CHECK(r.exit_code == 2);
        CHECK(r.err.find("'roles'") != std::string::npos);
    }
    SUBCASE("role names must exist in the header") {
        const fs::path cfg = write_text("analyze_bad_col.json", R"({
            "dataset": ")" + csv.string() + R"(",
            "roles": {"time": "time", "event": "event", "treat": "treat",
                      "z": ["zz_missing"], "w": ["w"]}
        })");
        CliResult r = run_cli("analyze --config " + cfg.string() + " --out " + out.string());
        CHECK(r.exit_code == 2);
        CHECK(r.err.find("zz_missing") != std::string::npos);
    }
    SUBCASE("dataset file must exist") {
        const fs::path cfg = write_text("analyze_no_data.json", R"({
            "dataset": ")" + (work_root() / "ghost.csv").string() + R"(",
            "roles": {"time": "time", "event": "event", "treat": "treat",
                      "z": ["z"], "w": ["w"]}
        })");
        CliResult r = run_cli("analyze --config " + cfg.string() + " --out " + out.string());
        CHECK(r.exit_code == 2);
    }
    SUBCASE("estimators list may not be empty") {
        const fs::path cfg = write_text("analyze_empty_est.json", R"({
            "dataset": ")" + csv.string() + R"(",
            "roles": {"time": "time", "event": "event", "treat": "treat",
                      "z": ["z"], "w": ["w"]},
            "estimators": []
        })");
        CliResult r = run_cli("analyze --config " + cfg.string() + " --out " + out.string());
        CHECK(r.exit_code == 2);
        CHECK(r.err.find("estimators") != std::string::npos);
    }
}
