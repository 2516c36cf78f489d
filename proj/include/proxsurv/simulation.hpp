#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "proxsurv/dataset.hpp"
#include "proxsurv/estimators.hpp"

namespace proxsurv {

// Data-generating process constants. Defaults reproduce the benchmark design:
// X, U iid max(N(1.1, 0.75^2), 0); A | X,U logistic(0.3 + 0.4X - 0.6U);
// Z ~ N(-0.2 - 0.3X + 0.65U, 0.5^2); W ~ N(-0.6 + 0.4X + 0.65U, 0.5^2);
// failure time Exponential(0.1 + treat_coef*A + 0.25X + 0.5U);
// censoring min(Exponential(0.2), 2). treat_coef = 0 gives a true null.
struct DgpParams {
    double base_mu = 1.1, base_sd = 0.75;
    double prop0 = 0.3, prop_x = 0.4, prop_u = -0.6;
    double z0 = -0.2, z_x = -0.3, z_u = 0.65, z_sd = 0.5;
    double w0 = -0.6, w_x = 0.4, w_u = 0.65, w_sd = 0.5;
    double haz0 = 0.1, treat_coef = 0.6, haz_x = 0.25, haz_u = 0.5;
    double cens_rate = 0.2, cens_cap = 2.0;
};

enum class EstimatorKind { pipw, pdr, nuc_ipw };
enum class HMisspecKind { none, sqrt_plus_one, sqrt };

std::string estimator_name(EstimatorKind kind);

struct SimScenario {
    int n = 2000;
    int reps = 200;
    std::uint64_t seed = 1;
    EstimatorKind estimator = EstimatorKind::pipw;
    bool q_misspec = false;                    // fit q on z* = sqrt(|z|)
    HMisspecKind h_misspec = HMisspecKind::none;
    std::vector<double> eval_times = {0.25, 0.5, 0.75};
    int sup_test_draws = 0;  // > 0 adds a supremum-test pass per replication
    DgpParams dgp;
};

// Per-time replication metrics. Following the benchmark's naming, `see` is
// the empirical standard deviation of the estimates across replications and
// `sd` is the mean of the estimated standard errors.
struct StudyReport {
    std::string estimator;
    int n = 0;
    int reps = 0;
    std::uint64_t seed = 0;
    std::vector<double> t, truth, bias, see, sd, cp;
    int n_fail = 0;
    double sup_reject_rate = std::numeric_limits<double>::quiet_NaN();
    int sup_test_draws = 0;
};

SurvivalDataset sample_dgp(const DgpParams& params, int n, RngStream& stream);

// Variant exposing the latent confounder for oracle checks in tests; the
// latent column never reaches reports or serialized data.
struct DgpSampleWithLatent {
    SurvivalDataset data;
    Eigen::VectorXd u;
};
DgpSampleWithLatent sample_dgp_with_latent(const DgpParams& params, int n,
                                           RngStream& stream);

// Ground-truth survival contrast psi(t) under the DGP, by a fixed-seed
// 10^7-draw Monte Carlo over (X, U); the exponential-arm factor is exact.
double oracle_truth(const DgpParams& params, double t);
std::vector<double> oracle_truth(const DgpParams& params, const std::vector<double>& ts);

// Replication study: sample, fit with the scenario's (mis)specification,
// evaluate at eval_times, aggregate bias/see/sd/coverage against the oracle.
// Failed replications are excluded and counted; more than 5% failures aborts
// the run with EstimationError.
StudyReport run_study(const SimScenario& scenario);

void write_report_csv(const StudyReport& report, const std::string& path);
void write_report_json(const StudyReport& report, const std::string& path);

// Thread budget for replication-level parallelism: PROXSURV_THREADS when set,
// otherwise the hardware concurrency.
int thread_budget();

}  // namespace proxsurv
