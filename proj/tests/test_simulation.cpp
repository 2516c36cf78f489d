#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <proxsurv/simulation.hpp>

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace proxsurv;

TEST_CASE("dgp sampling is deterministic per stream and varies across streams") {
    DgpParams params;
    RngStream s1(55, 3), s2(55, 3), s3(55, 4);
    SurvivalDataset a = sample_dgp(params, 200, s1);
    SurvivalDataset b = sample_dgp(params, 200, s2);
    SurvivalDataset c = sample_dgp(params, 200, s3);
    CHECK(a.time == b.time);
    CHECK(a.event == b.event);
    CHECK(a.treat == b.treat);
    CHECK(a.x == b.x);
    CHECK(a.z == b.z);
    CHECK(a.w == b.w);
    CHECK(a.time != c.time);
    CHECK(a.x_names == std::vector<std::string>{"x"});

    RngStream bad(1);
    CHECK_THROWS_AS(sample_dgp(params, 0, bad), DataError);
}

TEST_CASE("dgp censoring fraction and treatment rate match the design") {
    DgpParams params;
    RngStream stream(1234, 0);
    SurvivalDataset d = sample_dgp(params, 200000, stream);

    int censored = 0, treated = 0;
    double tmax = 0.0;
    for (int i = 0; i < d.n(); ++i) {
        censored += d.event[i] ? 0 : 1;
        treated += d.treat[i];
        tmax = std::max(tmax, d.time(i));
    }
    // benchmark design sits near 22% censoring
    CHECK(double(censored) / d.n() == doctest::Approx(0.2217).epsilon(0.05));
    CHECK(tmax <= params.cens_cap);

    // treatment rate vs an independent Monte Carlo of E[expit(0.3 + 0.4X - 0.6U)]
    RngStream mc(4321);
    double acc = 0.0;
    const int m = 1000000;
    for (int k = 0; k < m; ++k) {
        const double x = std::max(mc.normal(params.base_mu, params.base_sd), 0.0);
        const double u = std::max(mc.normal(params.base_mu, params.base_sd), 0.0);
        acc += expit(params.prop0 + params.prop_x * x + params.prop_u * u);
    }
    CHECK(double(treated) / d.n() == doctest::Approx(acc / m).epsilon(0.01));
}

TEST_CASE("latent confounder drives treatment and proxies in the right directions") {
    DgpParams params;
    RngStream stream(77, 1);
    DgpSampleWithLatent s = sample_dgp_with_latent(params, 20000, stream);
    const int n = s.data.n();
    REQUIRE(s.u.size() == n);

    auto corr_with_u = [&](auto value) {
        double mu_v = 0, mu_u = s.u.mean();
        Eigen::VectorXd v(n);
        for (int i = 0; i < n; ++i) v(i) = value(i);
        mu_v = v.mean();
        double cov = 0, vv = 0, uu = 0;
        for (int i = 0; i < n; ++i) {
            cov += (v(i) - mu_v) * (s.u(i) - mu_u);
            vv += (v(i) - mu_v) * (v(i) - mu_v);
            uu += (s.u(i) - mu_u) * (s.u(i) - mu_u);
        }
        return cov / std::sqrt(vv * uu);
    };
    CHECK(corr_with_u([&](int i) { return double(s.data.treat[i]); }) < -0.1);
    CHECK(corr_with_u([&](int i) { return s.data.z(i, 0); }) > 0.3);
    CHECK(corr_with_u([&](int i) { return s.data.w(i, 0); }) > 0.3);
    // x is independent of u
    CHECK(std::abs(corr_with_u([&](int i) { return s.data.x(i, 0); })) < 0.05);
}

TEST_CASE("oracle truth reproduces the frozen reference values") {
    DgpParams params;
    std::vector<double> psi = oracle_truth(params, {0.0, 0.25, 0.5, 0.75});
    CHECK(psi[0] == 0.0);
    // The references are an independent 1e7-draw Monte Carlo of the same
    // integral (different generator), so the two estimates agree only up to
    // their combined Monte Carlo error (~2e-5 standard error at t = 0.75).
    CHECK(std::abs(psi[1] - -0.1105733449) < 1e-4);
    CHECK(std::abs(psi[2] - -0.1648729470) < 1e-4);
    CHECK(std::abs(psi[3] - -0.1864229219) < 1e-4);

    DgpParams null_params;
    null_params.treat_coef = 0.0;
    CHECK(oracle_truth(null_params, 0.5) == 0.0);
}

TEST_CASE("run_study validates its scenario") {
    SimScenario sc;
    sc.n = 50;
    CHECK_THROWS_AS(run_study(sc), DataError);
    sc.n = 2000;
    sc.reps = 0;
    CHECK_THROWS_AS(run_study(sc), DataError);
    sc.reps = 10;
    sc.eval_times = {};
    CHECK_THROWS_AS(run_study(sc), DataError);
    sc.eval_times = {0.5, 0.25};
    CHECK_THROWS_AS(run_study(sc), DataError);
    sc.eval_times = {0.25, 2.5};
    CHECK_THROWS_AS(run_study(sc), DataError);
    sc.eval_times = {0.25, 0.5};
    sc.estimator = EstimatorKind::nuc_ipw;
    sc.sup_test_draws = 500;
    CHECK_THROWS_AS(run_study(sc), DataError);
}

TEST_CASE("small replication study behaves sanely and is reproducible") {
    SimScenario sc;
    sc.n = 500;
    sc.reps = 60;
    sc.seed = 2024;
    sc.estimator = EstimatorKind::pipw;

    StudyReport rep = run_study(sc);
    CHECK(rep.estimator == "pipw");
    CHECK(rep.n == 500);
    CHECK(rep.reps == 60);
    REQUIRE(rep.t.size() == 3);
    CHECK(rep.n_fail <= 3);
    for (std::size_t g = 0; g < rep.t.size(); ++g) {
        CHECK(std::abs(rep.bias[g]) < 0.05);
        CHECK(rep.see[g] > 0.0);
        CHECK(rep.sd[g] > 0.0);
        CHECK(rep.sd[g] / rep.see[g] > 0.5);
        CHECK(rep.sd[g] / rep.see[g] < 2.0);
        CHECK(rep.cp[g] > 0.8);
        CHECK(rep.cp[g] <= 1.0);
    }
    // independent Monte Carlo references; see the oracle-truth test case
    CHECK(std::abs(rep.truth[0] - -0.1105733449) < 1e-4);
    CHECK(std::abs(rep.truth[2] - -0.1864229219) < 1e-4);
    CHECK(std::isnan(rep.sup_reject_rate));

    StudyReport again = run_study(sc);
    CHECK(again.bias == rep.bias);
    CHECK(again.see == rep.see);
    CHECK(again.sd == rep.sd);
    CHECK(again.cp == rep.cp);
    CHECK(again.n_fail == rep.n_fail);
}

TEST_CASE("empirical spread shrinks like root n") {
    SimScenario small;
    small.n = 600;
    small.reps = 150;
    small.seed = 31;
    SimScenario big = small;
    big.n = 2400;
    StudyReport rs = run_study(small);
    StudyReport rb = run_study(big);
    for (std::size_t g = 0; g < rs.t.size(); ++g) {
        const double ratio = rs.see[g] / rb.see[g];
        CHECK(ratio > 1.55);
        CHECK(ratio < 2.6);
    }
}

TEST_CASE("doubly robust study covers the truth at small scale") {
    SimScenario sc;
    sc.n = 800;
    sc.reps = 40;
    sc.seed = 99;
    sc.estimator = EstimatorKind::pdr;
    sc.h_misspec = HMisspecKind::sqrt_plus_one;  // wrong h, right q: still consistent
    StudyReport rep = run_study(sc);
    for (std::size_t g = 0; g < rep.t.size(); ++g) {
        CHECK(std::abs(rep.bias[g]) < 0.05);
        CHECK(rep.cp[g] > 0.8);
    }
    CHECK(rep.n_fail <= 2);
}

TEST_CASE("comparator study runs through the same harness") {
    SimScenario sc;
    sc.n = 300;
    sc.reps = 10;
    sc.seed = 7;
    sc.estimator = EstimatorKind::nuc_ipw;
    StudyReport rep = run_study(sc);
    CHECK(rep.estimator == "nuc_ipw");
    for (std::size_t g = 0; g < rep.t.size(); ++g) {
        CHECK(std::isfinite(rep.bias[g]));
        CHECK(std::abs(rep.bias[g]) < 0.25);
        CHECK(rep.see[g] > 0.0);
        CHECK(rep.sd[g] > 0.0);
    }
}

TEST_CASE("report serialization round trips") {
    StudyReport rep;
    rep.estimator = "pipw";
    rep.n = 2000;
    rep.reps = 200;
    rep.seed = 11;
    rep.t = {0.25, 0.5};
    rep.truth = {-0.11, -0.16};
    rep.bias = {0.001, -0.002};
    rep.see = {0.02, 0.03};
    rep.sd = {0.021, 0.029};
    rep.cp = {0.95, 0.94};
    rep.n_fail = 1;
    rep.sup_test_draws = 1000;
    rep.sup_reject_rate = 0.05;

    write_report_csv(rep, "report_test.csv");
    std::ifstream csv("report_test.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "estimator,t,bias,see,sd,cp,n_fail");
    std::string row;
    std::getline(csv, row);
    CHECK(row == "pipw,0.25,0.001,0.02,0.021,0.95,1");
    int extra = 0;
    while (std::getline(csv, row)) {
        if (!row.empty()) ++extra;
    }
    CHECK(extra == 1);
    csv.close();
    std::remove("report_test.csv");

    write_report_json(rep, "report_test.json");
    std::ifstream jf("report_test.json");
    nlohmann::json doc = nlohmann::json::parse(jf);
    jf.close();
    std::remove("report_test.json");
    CHECK(doc["estimator"] == "pipw");
    CHECK(doc["n"] == 2000);
    CHECK(doc["n_fail"] == 1);
    REQUIRE(doc["rows"].size() == 2);
    CHECK(doc["rows"][1]["t"] == 0.5);
    CHECK(doc["rows"][1]["bias"] == -0.002);
    CHECK(doc["sup_test"]["draws"] == 1000);
    CHECK(doc["sup_test"]["reject_rate"] == 0.05);
}

TEST_CASE("thread budget respects the environment override") {
    setenv("PROXSURV_THREADS", "3", 1);
    CHECK(thread_budget() == 3);
    setenv("PROXSURV_THREADS", "0", 1);
    CHECK(thread_budget() >= 1);
    unsetenv("PROXSURV_THREADS");
    CHECK(thread_budget() >= 1);
}

TEST_CASE("estimator names") {
    CHECK(estimator_name(EstimatorKind::pipw) == "pipw");
    CHECK(estimator_name(EstimatorKind::pdr) == "pdr");
    CHECK(estimator_name(EstimatorKind::nuc_ipw) == "nuc_ipw");
}
