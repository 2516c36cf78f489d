#include "proxsurv/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace proxsurv {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

int arm_stratum(const CensoringModel& cens, int arm) {
    return cens.kind == CensoringKind::stratified_km ? arm : 0;
}

}  // namespace

SolveResult fit_q_bridge(const SurvivalDataset& data, const QBridgeSpec& spec,
                         const MomentChoice& moments, const Eigen::VectorXd& theta0) {
    if (!moments.n_fn) {
        throw EstimationError("fit_q_bridge: moment choice lacks a treatment-side instrument");
    }
    const int n = data.n();
    const QDesign design = make_q_design(data, spec);
    const int p = design.dim();

    Eigen::MatrixXd nv(n, p), nplus(n, p);
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd wi = data.w.row(i).transpose();
        const Eigen::VectorXd xi = data.x.row(i).transpose();
        const Eigen::VectorXd v = moments.n_fn(wi, data.treat[i], xi);
        if (v.size() != p) {
            throw EstimationError(
                "fit_q_bridge: instrument dimension " + std::to_string(v.size()) +
                " does not match the bridge parameter dimension " + std::to_string(p));
        }
        nv.row(i) = v.transpose();
        nplus.row(i) = (moments.n_fn(wi, 1, xi) + moments.n_fn(wi, 0, xi)).transpose();
    }

    MomentProblem prob;
    prob.n = n;
    prob.dim = p;
    prob.theta0 = theta0;
    prob.moments = [&design, &nv, &nplus](const Eigen::VectorXd& alpha, Eigen::MatrixXd& out) {
        Eigen::VectorXd q;
        eval_q_all(design, alpha, q);
        out = (nv.array().colwise() * q.array()).matrix() - nplus;
    };
    prob.jacobian = [&design, &nv, n](const Eigen::VectorXd& alpha, Eigen::MatrixXd& out) {
        Eigen::VectorXd q;
        Eigen::MatrixXd gq;
        eval_q_all(design, alpha, q, &gq);
        out = nv.transpose() * gq / n;
    };
    return solve(prob);
}

namespace {

// Shared state for the outcome-side moment system: exact event-side integrals
// and quadrature machinery for the model-side integral.
struct HMomentWork {
    const SurvivalDataset* data = nullptr;
    Eigen::MatrixXd mcoef;   // n x p instrument coefficients
    Eigen::VectorXi mdeg;    // p instrument time-degrees
    Eigen::MatrixXd gcoef;   // n x p gradient coefficients (1, 1, a, w*, x)
    Eigen::VectorXi gdeg;    // p gradient time-degrees (1, 2, 1, ..., 1)
    Eigen::MatrixXd kint;    // n x (dmax_m+1) exact integrals of t^d / S_C on [0, min(T,tau)]
    HDesign design;          // observed-arm design
    std::vector<double> gl_t, gl_w;
    Eigen::MatrixXd twpow;   // (dmax+1) x nodes: weight * t^d rows
    int dmax_m = 0, dmax = 0;

    // Cache: per-subject quadrature integrals I(i,d) = int h_i t^d dt at the
    // most recent beta.
    Eigen::VectorXd cache_beta;
    Eigen::MatrixXd cache_int;

    const Eigen::MatrixXd& integrals(const Eigen::VectorXd& beta) {
        if (cache_beta.size() == beta.size() && cache_beta == beta) {
            return cache_int;
        }
        const int n = data->n();
        const int nodes = static_cast<int>(gl_t.size());
        const Eigen::VectorXd eta = h_eta(design, beta);
        const double b1 = beta(1);
        cache_int.resize(n, dmax + 1);
        constexpr int kBlock = 4096;
        Eigen::MatrixXd e(std::min(n, kBlock), nodes);
        for (int start = 0; start < n; start += kBlock) {
            const int len = std::min(kBlock, n - start);
            for (int k = 0; k < nodes; ++k) {
                const double tk = gl_t[k];
                const double quad = b1 * tk * tk;
                for (int i = 0; i < len; ++i) {
                    const double arg = -eta(start + i) * tk - quad;
                    e(i, k) = std::exp(std::clamp(arg, -500.0, 500.0));
                }
            }
            cache_int.middleRows(start, len).noalias() =
                e.topRows(len) * twpow.transpose();
        }
        cache_beta = beta;
        return cache_int;
    }
};

}  // namespace

SolveResult fit_h_bridge(const SurvivalDataset& data, const HBridgeSpec& spec,
                         const MomentChoice& moments, const CensoringModel& censoring,
                         double tau, const Eigen::VectorXd& theta0, int gl_nodes) {
    if (!moments.m_coef || !moments.m_deg) {
        throw EstimationError("fit_h_bridge: moment choice lacks an outcome-side instrument");
    }
    if (!(tau >= 0.0)) {
        throw EstimationError("fit_h_bridge: tau must be nonnegative");
    }
    const int n = data.n();
    auto work = std::make_shared<HMomentWork>();
    work->data = &data;
    work->design = make_h_design(data, spec);
    const int p = work->design.dim();

    work->mdeg = moments.m_deg(data.dz(), data.dx());
    if (work->mdeg.size() != p) {
        throw EstimationError(
            "fit_h_bridge: instrument dimension " + std::to_string(work->mdeg.size()) +
            " does not match the bridge parameter dimension " + std::to_string(p));
    }
    work->mcoef.resize(n, p);
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd v = moments.m_coef(data.z.row(i).transpose(), data.treat[i],
                                                 data.x.row(i).transpose());
        if (v.size() != p) {
            throw EstimationError("fit_h_bridge: instrument coefficient dimension mismatch");
        }
        work->mcoef.row(i) = v.transpose();
    }
    // Gradient of h wrt beta is -h * t * (1, t, a, w*, x): per-component time
    // degree and subject coefficient.
    work->gcoef.resize(n, p);
    work->gdeg.resize(p);
    work->gcoef.col(0).setOnes();
    work->gdeg(0) = 1;
    work->gcoef.col(1).setOnes();
    work->gdeg(1) = 2;
    for (int j = 1; j < work->design.lin.cols(); ++j) {
        work->gcoef.col(1 + j) = work->design.lin.col(j);
        work->gdeg(1 + j) = 1;
    }
    work->dmax_m = work->mdeg.maxCoeff();
    work->dmax = work->dmax_m + work->gdeg.maxCoeff();

    // Positivity over the integration range: the lowest censoring survival
    // touched is at tau within each stratum that has subjects.
    for (std::size_t s = 0; s < censoring.strata.size(); ++s) {
        censoring_survival_stratum(censoring, tau, static_cast<int>(s));
    }

    // Exact event-side integrals per subject and degree.
    work->kint = Eigen::MatrixXd::Zero(n, work->dmax_m + 1);
    for (int d = 0; d <= work->dmax_m; ++d) {
        // Prefix integrals over each stratum's censoring step function.
        std::vector<std::vector<double>> prefix(censoring.strata.size());
        for (std::size_t s = 0; s < censoring.strata.size(); ++s) {
            const KmCurve& c = censoring.strata[s];
            prefix[s].resize(c.jump_t.size());
            double acc = 0.0, prev_t = 0.0, prev_s = 1.0;
            for (std::size_t k = 0; k < c.jump_t.size(); ++k) {
                acc += (std::pow(c.jump_t[k], d + 1) - std::pow(prev_t, d + 1)) /
                       ((d + 1) * prev_s);
                prefix[s][k] = acc;
                prev_t = c.jump_t[k];
                prev_s = c.surv[k];
            }
        }
        for (int i = 0; i < n; ++i) {
            const double b = std::min(data.time(i), tau);
            const int s = censoring.stratum_of[i];
            const KmCurve& c = censoring.strata[s];
            const int k = c.jump_index(b);
            if (k < 0) {
                work->kint(i, d) = std::pow(b, d + 1) / (d + 1);
            } else {
                work->kint(i, d) =
                    prefix[s][k] +
                    (std::pow(b, d + 1) - std::pow(c.jump_t[k], d + 1)) / ((d + 1) * c.surv[k]);
            }
        }
    }

    composite_gl16(0.0, tau, gl_nodes, work->gl_t, work->gl_w);
    work->twpow.resize(work->dmax + 1, gl_nodes);
    for (int k = 0; k < gl_nodes; ++k) {
        double tp = 1.0;
        for (int d = 0; d <= work->dmax; ++d) {
            work->twpow(d, k) = work->gl_w[k] * tp;
            tp *= work->gl_t[k];
        }
    }

    MomentProblem prob;
    prob.n = n;
    prob.dim = p;
    prob.theta0 = theta0;
    prob.moments = [work](const Eigen::VectorXd& beta, Eigen::MatrixXd& out) {
        const Eigen::MatrixXd& ints = work->integrals(beta);
        const Eigen::Index p_ = work->mcoef.cols();
        out.resize(work->mcoef.rows(), p_);
        for (Eigen::Index c = 0; c < p_; ++c) {
            const int d = work->mdeg(c);
            out.col(c) = work->mcoef.col(c).cwiseProduct(work->kint.col(d) - ints.col(d));
        }
    };
    prob.jacobian = [work](const Eigen::VectorXd& beta, Eigen::MatrixXd& out) {
        const Eigen::MatrixXd& ints = work->integrals(beta);
        const Eigen::Index p_ = work->mcoef.cols();
        out.resize(p_, p_);
        for (Eigen::Index c = 0; c < p_; ++c) {
            for (Eigen::Index b = 0; b < p_; ++b) {
                const int d = work->mdeg(c) + work->gdeg(b);
                out(c, b) = work->mcoef.col(c)
                                .cwiseProduct(work->gcoef.col(b))
                                .cwiseProduct(ints.col(d))
                                .mean();
            }
        }
    };
    return solve(prob);
}

namespace {

// Shared assembly for the weighted and doubly robust curves.
CurveEstimate assemble_curve(const SurvivalDataset& data, const FittedBridges& bridges,
                             const TimeGrid& grid, bool doubly_robust) {
    if (!bridges.q_fit.converged) {
        throw EstimationError("curve estimation requires a converged treatment-side bridge fit");
    }
    if (doubly_robust &&
        (!bridges.h_spec || !bridges.h_fit || !bridges.h_fit->converged)) {
        throw EstimationError("doubly robust curve requires a converged outcome-side bridge fit");
    }
    const int n = data.n();
    const int m = grid.size();
    const CensoringModel& cens = bridges.censoring;

    const QDesign qdes = make_q_design(data, bridges.q_spec);
    Eigen::VectorXd q;
    Eigen::MatrixXd gq;
    eval_q_all(qdes, bridges.q_fit.theta, q, &gq);
    const int pq = qdes.dim();

    // Treated/control masks and arm-signed indicator.
    Eigen::VectorXd is1(n), is0(n);
    for (int i = 0; i < n; ++i) {
        is1(i) = data.treat[i] == 1 ? 1.0 : 0.0;
        is0(i) = 1.0 - is1(i);
    }

    HDesign hdes1, hdes0;
    Eigen::VectorXd eta1, eta0, beta;
    int ph = 0;
    if (doubly_robust) {
        hdes1 = make_h_design(data, *bridges.h_spec, 1);
        hdes0 = make_h_design(data, *bridges.h_spec, 0);
        beta = bridges.h_fit->theta;
        eta1 = h_eta(hdes1, beta);
        eta0 = h_eta(hdes0, beta);
        ph = static_cast<int>(beta.size());
    }

    CurveEstimate curve;
    curve.grid = grid;
    curve.n = n;
    curve.psi.resize(m);
    curve.s1.resize(m);
    curve.s0.resize(m);
    curve.var.resize(m);
    curve.ci_lo = Eigen::VectorXd::Constant(m, kNan);
    curve.ci_hi = Eigen::VectorXd::Constant(m, kNan);
    curve.influence.resize(n, m);

    Eigen::VectorXd h1(n), h0(n), d1(n), d0(n), eps(n);
    Eigen::VectorXd abar(pq), bbar;

    for (int g = 0; g < m; ++g) {
        const double t = grid.points[g];
        const double sc1 = censoring_survival_stratum(cens, t, arm_stratum(cens, 1));
        const double sc0 = censoring_survival_stratum(cens, t, arm_stratum(cens, 0));

        double s1_ipw = 0.0, s0_ipw = 0.0;
        abar.setZero();
        if (doubly_robust) {
            const double b1 = beta(1);
            const double quad = b1 * t * t;
            for (int i = 0; i < n; ++i) {
                h1(i) = std::exp(std::clamp(-eta1(i) * t - quad, -500.0, 500.0));
                h0(i) = std::exp(std::clamp(-eta0(i) * t - quad, -500.0, 500.0));
            }
        }
        for (int i = 0; i < n; ++i) {
            const bool treated = data.treat[i] == 1;
            const double sc_own = treated ? sc1 : sc0;
            const double ind = data.time(i) > t ? 1.0 : 0.0;
            const double ipw = q(i) * ind / sc_own;
            if (treated) {
                s1_ipw += ipw;
            } else {
                s0_ipw += ipw;
            }
            if (doubly_robust) {
                const double h_own = treated ? h1(i) : h0(i);
                d1(i) = is1(i) * q(i) * (ind / sc1 - h1(i)) + h1(i);
                d0(i) = is0(i) * q(i) * (ind / sc0 - h0(i)) + h0(i);
                abar.noalias() += qdes.sign(i) * (ind / sc_own - h_own) * gq.row(i).transpose();
            } else {
                d1(i) = is1(i) * ipw;
                d0(i) = is0(i) * ipw;
                abar.noalias() += qdes.sign(i) * (ind / sc_own) * gq.row(i).transpose();
            }
        }
        s1_ipw /= n;
        s0_ipw /= n;
        abar /= n;

        const double s1 = d1.mean();
        const double s0 = d0.mean();
        const double psi = s1 - s0;

        // Sensitivity to the estimated censoring curves: only the weighted
        // indicator part depends on S_C.
        const double c1 = -s1_ipw / sc1;
        const double c0 = s0_ipw / sc0;

        eps = d1 - d0 - Eigen::VectorXd::Constant(n, psi);
        eps.noalias() += bridges.q_fit.influence * abar;
        if (doubly_robust) {
            bbar.resize(ph);
            // mean over i of dD/dbeta: (1 - 1(A=1)q) grad_h1 - (1 - 1(A=0)q) grad_h0,
            // grad_h(a) = -h_a * t * (1, t, a, w*, x).
            for (int b = 0; b < ph; ++b) {
                double acc = 0.0;
                for (int i = 0; i < n; ++i) {
                    const double coef1 = b == 0 ? 1.0 : (b == 1 ? t : hdes1.lin(i, b - 1));
                    const double coef0 = b == 0 ? 1.0 : (b == 1 ? t : hdes0.lin(i, b - 1));
                    const double g1 = -h1(i) * t * coef1;
                    const double g0 = -h0(i) * t * coef0;
                    acc += (1.0 - is1(i) * q(i)) * g1 - (1.0 - is0(i) * q(i)) * g0;
                }
                bbar(b) = acc / n;
            }
            eps.noalias() += bridges.h_fit->influence * bbar;
        }

        const Eigen::VectorXd phi = censoring_influence(cens, t);
        if (cens.kind == CensoringKind::stratified_km) {
            for (int i = 0; i < n; ++i) {
                eps(i) += (data.treat[i] == 1 ? c1 : c0) * phi(i);
            }
        } else {
            eps.noalias() += (c1 + c0) * phi;
        }

        curve.s1(g) = s1;
        curve.s0(g) = s0;
        curve.psi(g) = psi;
        curve.var(g) = eps.squaredNorm() / n;
        curve.influence.col(g) = eps;
    }
    return curve;
}

}  // namespace

CurveEstimate pipw_curve(const SurvivalDataset& data, const FittedBridges& bridges,
                         const TimeGrid& grid) {
    return assemble_curve(data, bridges, grid, false);
}

CurveEstimate pdr_curve(const SurvivalDataset& data, const FittedBridges& bridges,
                        const TimeGrid& grid) {
    return assemble_curve(data, bridges, grid, true);
}

void pointwise_ci(CurveEstimate& curve, double level) {
    if (!(level > 0.0 && level < 1.0)) {
        throw EstimationError("pointwise_ci: level must lie in (0,1)");
    }
    const double z = normal_quantile(1.0 - (1.0 - level) / 2.0);
    curve.ci_level = level;
    const int m = curve.grid.size();
    curve.ci_lo.resize(m);
    curve.ci_hi.resize(m);
    for (int g = 0; g < m; ++g) {
        const double se = std::sqrt(curve.var(g) / curve.n);
        curve.ci_lo(g) = curve.psi(g) - z * se;
        curve.ci_hi(g) = curve.psi(g) + z * se;
    }
}

std::pair<double, double> sup_test(CurveEstimate& curve, int draws, std::uint64_t seed) {
    if (draws < 100) {
        throw EstimationError("sup_test: at least 100 multiplier draws are required");
    }
    if (curve.influence.rows() != curve.n || curve.influence.cols() != curve.grid.size()) {
        throw EstimationError("sup_test: curve carries no influence matrix");
    }
    const int n = curve.n;
    const double stat = curve.psi.cwiseAbs().maxCoeff();

    RngStream stream(seed);
    Eigen::MatrixXd mult(n, draws);
    for (int m = 0; m < draws; ++m) {
        for (int i = 0; i < n; ++i) {
            mult(i, m) = stream.normal();
        }
    }
    const Eigen::MatrixXd g = curve.influence.transpose() * mult / n;  // grid x draws
    int count = 0;
    for (int m = 0; m < draws; ++m) {
        if (g.col(m).cwiseAbs().maxCoeff() >= stat) {
            ++count;
        }
    }
    const double p = (1.0 + count) / (draws + 1.0);
    curve.sup_stat = stat;
    curve.sup_pvalue = p;
    curve.sup_draws = draws;
    curve.sup_seed = seed;
    return {stat, p};
}

namespace {

SolveResult fit_propensity(const Eigen::MatrixXd& feats, const Eigen::VectorXd& a,
                           const Eigen::VectorXd& theta0) {
    const int n = static_cast<int>(feats.rows());
    const int p = static_cast<int>(feats.cols());
    MomentProblem prob;
    prob.n = n;
    prob.dim = p;
    prob.theta0 = theta0;
    prob.moments = [&feats, &a](const Eigen::VectorXd& gamma, Eigen::MatrixXd& out) {
        const Eigen::VectorXd lin = feats * gamma;
        out.resize(feats.rows(), feats.cols());
        for (int i = 0; i < feats.rows(); ++i) {
            out.row(i) = (a(i) - expit(lin(i))) * feats.row(i);
        }
    };
    prob.jacobian = [&feats](const Eigen::VectorXd& gamma, Eigen::MatrixXd& out) {
        const Eigen::VectorXd lin = feats * gamma;
        out = Eigen::MatrixXd::Zero(feats.cols(), feats.cols());
        for (int i = 0; i < feats.rows(); ++i) {
            const double pi = expit(lin(i));
            out.noalias() -= pi * (1.0 - pi) * feats.row(i).transpose() * feats.row(i);
        }
        out /= static_cast<double>(feats.rows());
    };
    SolveResult fit = solve(prob);
    if (!fit.converged) {
        throw EstimationError("propensity score fit did not converge (possible separation)");
    }
    return fit;
}

Eigen::MatrixXd nuc_features(const SurvivalDataset& data) {
    const int n = data.n();
    Eigen::MatrixXd f(n, 1 + data.dx() + data.dz() + data.dw());
    f.col(0).setOnes();
    int at = 1;
    if (data.dx() > 0) {
        f.middleCols(at, data.dx()) = data.x;
        at += data.dx();
    }
    f.middleCols(at, data.dz()) = data.z;
    at += data.dz();
    f.middleCols(at, data.dw()) = data.w;
    return f;
}

// Point estimate only, shared by the full-sample pass and bootstrap passes.
void nuc_point_estimate(const SurvivalDataset& data, const CensoringModel& cens,
                        const TimeGrid& grid, const Eigen::VectorXd& gamma,
                        const Eigen::MatrixXd& feats, Eigen::VectorXd& psi,
                        Eigen::VectorXd& s1, Eigen::VectorXd& s0) {
    const int n = data.n();
    const int m = grid.size();
    const Eigen::VectorXd p1 = (feats * gamma).unaryExpr([](double v) { return expit(v); });
    psi.resize(m);
    s1.resize(m);
    s0.resize(m);
    for (int g = 0; g < m; ++g) {
        const double t = grid.points[g];
        const double sc1 = censoring_survival_stratum(cens, t, arm_stratum(cens, 1));
        const double sc0 = censoring_survival_stratum(cens, t, arm_stratum(cens, 0));
        double acc1 = 0.0, acc0 = 0.0;
        for (int i = 0; i < n; ++i) {
            if (data.time(i) <= t) {
                continue;
            }
            if (data.treat[i] == 1) {
                acc1 += 1.0 / (p1(i) * sc1);
            } else {
                acc0 += 1.0 / ((1.0 - p1(i)) * sc0);
            }
        }
        s1(g) = acc1 / n;
        s0(g) = acc0 / n;
        psi(g) = s1(g) - s0(g);
    }
}

}  // namespace

CurveEstimate nuc_ipw_curve(const SurvivalDataset& data, const CensoringModel& censoring,
                            const TimeGrid& grid, int boot, std::uint64_t seed) {
    const int n = data.n();
    const int m = grid.size();
    const Eigen::MatrixXd feats = nuc_features(data);
    Eigen::VectorXd a(n);
    for (int i = 0; i < n; ++i) {
        a(i) = data.treat[i];
    }
    const SolveResult pfit = fit_propensity(feats, a, Eigen::VectorXd());

    CurveEstimate curve;
    curve.grid = grid;
    curve.n = n;
    nuc_point_estimate(data, censoring, grid, pfit.theta, feats, curve.psi, curve.s1,
                       curve.s0);
    curve.var = Eigen::VectorXd::Constant(m, kNan);
    curve.ci_lo = Eigen::VectorXd::Constant(m, kNan);
    curve.ci_hi = Eigen::VectorXd::Constant(m, kNan);

    if (boot > 0) {
        RngStream stream(seed);
        Eigen::MatrixXd draws(boot, m);
        int ok = 0;
        std::vector<int> idx(n);
        for (int b = 0; b < boot; ++b) {
            for (int i = 0; i < n; ++i) {
                idx[i] = static_cast<int>(stream.uniform01() * n);
            }
            try {
                const SurvivalDataset res = take_rows(data, idx);
                const CensoringModel cres =
                    fit_censoring(res, censoring.kind, censoring.positivity_floor);
                const Eigen::MatrixXd bf = nuc_features(res);
                Eigen::VectorXd ba(n);
                for (int i = 0; i < n; ++i) {
                    ba(i) = res.treat[i];
                }
                const SolveResult bp = fit_propensity(bf, ba, pfit.theta);
                Eigen::VectorXd bpsi, bs1, bs0;
                nuc_point_estimate(res, cres, grid, bp.theta, bf, bpsi, bs1, bs0);
                draws.row(ok++) = bpsi;
            } catch (const EstimationError&) {
                // Resample failed (separation or positivity); skip it.
            }
        }
        if (ok < (boot + 1) / 2) {
            throw EstimationError("nuc_ipw_curve: more than half of the bootstrap resamples failed");
        }
        for (int g = 0; g < m; ++g) {
            const auto col = draws.col(g).head(ok);
            const double mean = col.mean();
            const double ss = (col.array() - mean).square().sum();
            curve.var(g) = n * ss / (ok - 1);
        }
    }
    return curve;
}

}  // namespace proxsurv
