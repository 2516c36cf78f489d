#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <optional>

#include "proxsurv/bridge.hpp"
#include "proxsurv/censoring.hpp"
#include "proxsurv/dataset.hpp"
#include "proxsurv/zsolver.hpp"

namespace proxsurv {

// Bundle of fitted nuisances feeding curve estimation. h is present only
// when the doubly robust estimator is requested.
struct FittedBridges {
    QBridgeSpec q_spec;
    SolveResult q_fit;
    std::optional<HBridgeSpec> h_spec;
    std::optional<SolveResult> h_fit;
    CensoringModel censoring;
};

struct CurveEstimate {
    TimeGrid grid;
    Eigen::VectorXd psi;   // s1 - s0 per grid point
    Eigen::VectorXd s1, s0;
    Eigen::VectorXd var;   // asymptotic variance E_n[eps^2]; se = sqrt(var/n)
    Eigen::VectorXd ci_lo, ci_hi;
    Eigen::MatrixXd influence;  // n x grid, per-subject influence curves
    double ci_level = 0.0;
    double sup_stat = std::numeric_limits<double>::quiet_NaN();
    double sup_pvalue = std::numeric_limits<double>::quiet_NaN();
    int sup_draws = 0;
    std::uint64_t sup_seed = 0;
    int n = 0;
};

// Treatment-side bridge fit: per-subject moment
//   g_i(alpha) = q(z_i, a_i, x_i; alpha) * n_fn(w_i, a_i, x_i)
//                - n_fn(w_i, 1, x_i) - n_fn(w_i, 0, x_i).
// Censoring plays no role on this side.
SolveResult fit_q_bridge(const SurvivalDataset& data, const QBridgeSpec& spec,
                         const MomentChoice& moments,
                         const Eigen::VectorXd& theta0 = Eigen::VectorXd());

// Outcome-side bridge fit: per-subject moment
//   g_i(beta) = int_0^{min(T_i,tau)} mdot(t;i)/S_C(t|i) dt
//               - int_0^tau h(t;i,beta) mdot(t;i) dt.
// The first integral is exact piecewise (mdot polynomial, S_C a step
// function); the second uses a composite Gauss-Legendre rule on [0,tau].
SolveResult fit_h_bridge(const SurvivalDataset& data, const HBridgeSpec& spec,
                         const MomentChoice& moments, const CensoringModel& censoring,
                         double tau, const Eigen::VectorXd& theta0 = Eigen::VectorXd(),
                         int gl_nodes = 256);

// Weighted-by-q survival contrast with inverse-probability-of-censoring
// weights; influence curves account for alpha-hat and the censoring curve.
CurveEstimate pipw_curve(const SurvivalDataset& data, const FittedBridges& bridges,
                         const TimeGrid& grid);

// Doubly robust contrast combining both bridges; influence curves account for
// alpha-hat, beta-hat, and the censoring curve.
CurveEstimate pdr_curve(const SurvivalDataset& data, const FittedBridges& bridges,
                        const TimeGrid& grid);

// Wald bands: psi(t) +- z * sqrt(var(t)/n).
void pointwise_ci(CurveEstimate& curve, double level = 0.95);

// Multiplier supremum test of psi == 0 over the curve's grid. For each draw m
// the n standard-normal multipliers are generated before moving to the next
// draw; p = (1 + #{sup_t |G_m(t)| >= sup_t |psi(t)|}) / (draws + 1).
std::pair<double, double> sup_test(CurveEstimate& curve, int draws, std::uint64_t seed);

// Comparator that assumes no unmeasured confounding: logistic propensity on
// (x, z, w), Horvitz-Thompson weighting with the same censoring weights, and
// a nonparametric-bootstrap standard error (boot = 0 leaves var as NaN).
CurveEstimate nuc_ipw_curve(const SurvivalDataset& data, const CensoringModel& censoring,
                            const TimeGrid& grid, int boot = 200, std::uint64_t seed = 0);

}  // namespace proxsurv
