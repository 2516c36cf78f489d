#pragma once

#include <Eigen/Dense>
#include <vector>

#include "proxsurv/dataset.hpp"

namespace proxsurv {

enum class CensoringKind { marginal_km, stratified_km };

// Kaplan-Meier curve for the censoring distribution within one stratum.
// Ties between failures and censorings at the same time are resolved with
// failures first, so a subject failing at u is not at risk for censoring at u.
struct KmCurve {
    std::vector<double> jump_t;   // distinct censoring times, ascending
    std::vector<double> surv;     // S_C(u_k), right-continuous value at the jump
    std::vector<double> risk;     // censoring risk-set size at u_k
    std::vector<double> dcount;   // censorings at u_k
    std::vector<double> cum_dr2;  // prefix sums of d_k / R_k^2
    int n_stratum = 0;

    // Right-continuous survival lookup (no positivity check).
    double survival(double t) const;
    // Index of the last jump at or before t, -1 if none.
    int jump_index(double t) const;
};

struct CensoringModel {
    CensoringKind kind = CensoringKind::marginal_km;
    double positivity_floor = 0.05;
    int n = 0;
    std::vector<KmCurve> strata;    // one curve, or one per treatment arm
    std::vector<int> stratum_of;    // per subject
    Eigen::VectorXd time;           // follow-up times, kept for the influence map

    // Per-subject precomputes for the influence function.
    std::vector<int> inf_k;             // last usable jump index at T_i (tie-adjusted)
    std::vector<double> inf_jump_invr;  // 1/R(T_i) when subject i is censored, else 0
};

CensoringModel fit_censoring(const SurvivalDataset& data, CensoringKind kind,
                             double positivity_floor = 0.05);

// S_C(t) for the given stratum; throws EstimationError below the floor.
double censoring_survival_stratum(const CensoringModel& model, double t, int stratum);
// S_C(t | subject's own stratum).
double censoring_survival(const CensoringModel& model, double t, int subject);

// Per-subject influence of the subject's own stratum curve at t, scaled so
// that S_hat_s(t) - S_s(t) is approximated by the full-sample mean of the
// entries restricted to stratum s. Each stratum's entries sum to zero.
Eigen::VectorXd censoring_influence(const CensoringModel& model, double t);

}  // namespace proxsurv
