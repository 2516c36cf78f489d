#include "proxsurv/zsolver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace proxsurv {

namespace {

bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

struct Evaluator {
    const MomentProblem& prob;
    Eigen::MatrixXd g;  // n x dim scratch

    Eigen::VectorXd mean_moment(const Eigen::VectorXd& theta) {
        g.resize(prob.n, prob.dim);
        prob.moments(theta, g);
        return g.colwise().mean();
    }

    Eigen::MatrixXd mean_jacobian(const Eigen::VectorXd& theta) {
        Eigen::MatrixXd jac(prob.dim, prob.dim);
        if (prob.jacobian) {
            prob.jacobian(theta, jac);
            return jac;
        }
        Eigen::VectorXd th = theta;
        for (int j = 0; j < prob.dim; ++j) {
            const double h = 1e-6 * std::max(1.0, std::abs(theta(j)));
            th(j) = theta(j) + h;
            const Eigen::VectorXd rp = mean_moment(th);
            th(j) = theta(j) - h;
            const Eigen::VectorXd rm = mean_moment(th);
            th(j) = theta(j);
            jac.col(j) = (rp - rm) / (2.0 * h);
        }
        return jac;
    }
};

}  // namespace

SolveResult solve(const MomentProblem& problem) {
    if (problem.n <= 0 || problem.dim <= 0 || !problem.moments) {
        throw EstimationError("solve: moment problem is not fully specified");
    }
    const int p = problem.dim;
    Evaluator ev{problem, {}};

    Eigen::VectorXd theta =
        problem.theta0.size() == p ? problem.theta0 : Eigen::VectorXd::Zero(p);
    if (problem.theta0.size() != 0 && problem.theta0.size() != p) {
        throw EstimationError("solve: theta0 has the wrong dimension");
    }

    Eigen::VectorXd r = ev.mean_moment(theta);
    Eigen::VectorXd best_theta = theta;
    double best_inf = all_finite(r) ? r.lpNorm<Eigen::Infinity>()
                                    : std::numeric_limits<double>::infinity();
    auto track = [&](const Eigen::VectorXd& th, const Eigen::VectorXd& res) {
        if (!all_finite(res)) {
            return;
        }
        const double ni = res.lpNorm<Eigen::Infinity>();
        if (ni < best_inf) {
            best_inf = ni;
            best_theta = th;
        }
    };

    bool small_step = false;

    // Phase 1: damped Newton.
    if (all_finite(r)) {
        for (int iter = 0; iter < problem.max_newton; ++iter) {
            if (r.lpNorm<Eigen::Infinity>() <= problem.tol_inf) {
                break;
            }
            const Eigen::MatrixXd jac = ev.mean_jacobian(theta);
            if (!jac.allFinite()) {
                break;
            }
            Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
            const Eigen::VectorXd dir = lu.solve(r);
            if (!all_finite(dir)) {
                break;
            }
            const double rnorm2 = r.squaredNorm();
            double lambda = 1.0;
            bool accepted = false;
            for (int half = 0; half <= 30; ++half) {
                const Eigen::VectorXd cand = theta - lambda * dir;
                const Eigen::VectorXd rc = ev.mean_moment(cand);
                if (all_finite(rc) && rc.squaredNorm() < rnorm2) {
                    theta = cand;
                    r = rc;
                    track(theta, r);
                    accepted = true;
                    if (lambda * dir.norm() <= problem.tol_step) {
                        small_step = true;
                    }
                    break;
                }
                lambda *= 0.5;
            }
            if (!accepted) {
                break;
            }
            if (small_step) {
                break;
            }
        }
    }

    // Phase 2: Levenberg-Marquardt on the residual 2-norm, entered whenever
    // the Newton phase ended short of convergence.
    if (!small_step &&
        (!all_finite(r) || r.lpNorm<Eigen::Infinity>() > problem.tol_inf)) {
        double mu = 1e-3;
        for (int iter = 0; iter < problem.max_lm; ++iter) {
            if (all_finite(r) && r.lpNorm<Eigen::Infinity>() <= problem.tol_inf) {
                break;
            }
            const Eigen::MatrixXd jac = ev.mean_jacobian(theta);
            if (!jac.allFinite()) {
                break;
            }
            const Eigen::MatrixXd a = jac.transpose() * jac;
            Eigen::VectorXd dscale = a.diagonal().cwiseMax(1e-12);
            const Eigen::VectorXd grad = jac.transpose() * r;
            const double rnorm2 = all_finite(r) ? r.squaredNorm()
                                                : std::numeric_limits<double>::infinity();
            bool accepted = false;
            Eigen::VectorXd step(p);
            for (int tries = 0; tries < 40; ++tries) {
                Eigen::MatrixXd damped = a;
                damped.diagonal() += mu * dscale;
                step = damped.ldlt().solve(grad);
                if (all_finite(step)) {
                    const Eigen::VectorXd cand = theta - step;
                    const Eigen::VectorXd rc = ev.mean_moment(cand);
                    if (all_finite(rc) && rc.squaredNorm() < rnorm2) {
                        theta = cand;
                        r = rc;
                        track(theta, r);
                        mu = std::max(mu / 3.0, 1e-12);
                        accepted = true;
                        break;
                    }
                }
                mu *= 4.0;
            }
            if (!accepted) {
                break;
            }
            if (step.norm() <= problem.tol_step) {
                break;
            }
        }
    }

    track(theta, r);
    SolveResult out;
    out.theta = best_theta;
    out.n = problem.n;
    const Eigen::VectorXd r_final = ev.mean_moment(best_theta);
    out.residual_norm = all_finite(r_final) ? r_final.lpNorm<Eigen::Infinity>()
                                            : std::numeric_limits<double>::infinity();
    out.converged = out.residual_norm <= problem.tol_inf;

    out.bread = ev.mean_jacobian(best_theta);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(out.bread);
    const double smin = svd.singularValues().minCoeff();
    const double smax = svd.singularValues().maxCoeff();
    const bool singular = !(smin > 0.0) || smax / smin > 1e12;
    if (singular) {
        if (out.converged) {
            throw EstimationError("solve: bread matrix is numerically singular at the solution");
        }
        out.influence = Eigen::MatrixXd::Zero(problem.n, p);
        return out;
    }

    // influence rows: -bread^{-1} (g_i - mean g). Stacked as rows this is
    // -centered * bread^{-T}, so the solve runs against bread itself; the
    // bread of these moment systems is not symmetric, and factoring its
    // transpose here would distort every downstream nuisance correction.
    ev.g.resize(problem.n, problem.dim);
    problem.moments(best_theta, ev.g);
    Eigen::MatrixXd centered = ev.g.rowwise() - ev.g.colwise().mean();
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(out.bread);
    out.influence = -lu.solve(centered.transpose()).transpose();
    return out;
}

Eigen::MatrixXd sandwich_cov(const SolveResult& result) {
    if (result.influence.rows() != result.n || result.n <= 0) {
        throw EstimationError("sandwich_cov: result carries no influence rows");
    }
    return (result.influence.transpose() * result.influence) /
           (static_cast<double>(result.n) * result.n);
}

}  // namespace proxsurv
