#pragma once

#include <Eigen/Dense>
#include <functional>

#include "proxsurv/common.hpp"

namespace proxsurv {

// A just-identified system of estimating equations: find theta with
// mean_i g_i(theta) = 0, where g_i is the p-vector moment of subject i.
struct MomentProblem {
    int n = 0;    // subjects
    int dim = 0;  // parameters = moment components

    // Fill out (n x dim, pre-sized by the solver) with per-subject moments.
    std::function<void(const Eigen::VectorXd& theta, Eigen::MatrixXd& out)> moments;

    // Optional analytic Jacobian of the mean moment (dim x dim). When absent
    // the solver uses central finite differences with step 1e-6*max(1,|theta_j|).
    std::function<void(const Eigen::VectorXd& theta, Eigen::MatrixXd& out)> jacobian;

    Eigen::VectorXd theta0;  // empty means zeros

    double tol_inf = 1e-10;    // convergence: max-norm of the mean moment
    double tol_step = 1e-12;   // stop when steps shrink below this
    int max_newton = 100;
    int max_lm = 200;
};

struct SolveResult {
    Eigen::VectorXd theta;
    bool converged = false;
    double residual_norm = 0.0;   // max-norm of the mean moment at theta
    Eigen::MatrixXd bread;        // mean moment Jacobian at theta (dim x dim)
    Eigen::MatrixXd influence;    // n x dim rows: -bread^{-1} (g_i - mean g)
    int n = 0;
};

// Damped Newton with a halving line search on the residual 2-norm; falls back
// to Levenberg-Marquardt with Marquardt diagonal scaling when Newton stalls.
// Non-convergence returns the best iterate with converged=false. A singular
// bread matrix (condition number > 1e12) at a converged solution throws
// EstimationError.
SolveResult solve(const MomentProblem& problem);

// Asymptotic covariance of theta-hat: (1/n) * mean_i eps_i eps_i'.
Eigen::MatrixXd sandwich_cov(const SolveResult& result);

}  // namespace proxsurv
