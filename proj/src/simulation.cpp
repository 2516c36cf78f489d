#include "proxsurv/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <thread>

#include <json.hpp>

namespace proxsurv {

namespace {

constexpr std::uint64_t kOracleSeed = 0x0badc0ffee;
constexpr int kOracleDraws = 10'000'000;
constexpr int kNucBootstrap = 200;

CovTransform h_transform(HMisspecKind kind) {
    switch (kind) {
        case HMisspecKind::none:
            return CovTransform::identity;
        case HMisspecKind::sqrt_plus_one:
            return CovTransform::sqrt_abs_plus_one;
        case HMisspecKind::sqrt:
            return CovTransform::sqrt_abs;
    }
    return CovTransform::identity;
}

}  // namespace

std::string estimator_name(EstimatorKind kind) {
    switch (kind) {
        case EstimatorKind::pipw:
            return "pipw";
        case EstimatorKind::pdr:
            return "pdr";
        case EstimatorKind::nuc_ipw:
            return "nuc_ipw";
    }
    return "?";
}

DgpSampleWithLatent sample_dgp_with_latent(const DgpParams& p, int n, RngStream& stream) {
    if (n < 1) {
        throw DataError("sample_dgp: n must be positive");
    }
    DgpSampleWithLatent out;
    SurvivalDataset& d = out.data;
    d.time.resize(n);
    d.event.resize(n);
    d.treat.resize(n);
    d.x.resize(n, 1);
    d.z.resize(n, 1);
    d.w.resize(n, 1);
    d.x_names = {"x"};
    d.z_names = {"z"};
    d.w_names = {"w"};
    out.u.resize(n);
    for (int i = 0; i < n; ++i) {
        const double x = std::max(stream.normal(p.base_mu, p.base_sd), 0.0);
        const double u = std::max(stream.normal(p.base_mu, p.base_sd), 0.0);
        const int a = stream.bernoulli(expit(p.prop0 + p.prop_x * x + p.prop_u * u)) ? 1 : 0;
        const double z = stream.normal(p.z0 + p.z_x * x + p.z_u * u, p.z_sd);
        const double w = stream.normal(p.w0 + p.w_x * x + p.w_u * u, p.w_sd);
        const double rate = p.haz0 + p.treat_coef * a + p.haz_x * x + p.haz_u * u;
        if (!(rate > 0.0)) {
            throw EstimationError("sample_dgp: nonpositive failure hazard realized");
        }
        const double failure = stream.exponential(rate);
        const double censor = std::min(stream.exponential(p.cens_rate), p.cens_cap);
        d.time(i) = std::min(failure, censor);
        d.event[i] = failure < censor ? 1 : 0;
        d.treat[i] = static_cast<std::uint8_t>(a);
        d.x(i, 0) = x;
        d.z(i, 0) = z;
        d.w(i, 0) = w;
        out.u(i) = u;
    }
    return out;
}

SurvivalDataset sample_dgp(const DgpParams& params, int n, RngStream& stream) {
    return sample_dgp_with_latent(params, n, stream).data;
}

std::vector<double> oracle_truth(const DgpParams& p, const std::vector<double>& ts) {
    RngStream stream(kOracleSeed);
    std::vector<double> fx(ts.size(), 0.0), fu(ts.size(), 0.0);
    for (int k = 0; k < kOracleDraws; ++k) {
        const double x = std::max(stream.normal(p.base_mu, p.base_sd), 0.0);
        const double u = std::max(stream.normal(p.base_mu, p.base_sd), 0.0);
        for (std::size_t j = 0; j < ts.size(); ++j) {
            fx[j] += std::exp(-p.haz_x * x * ts[j]);
            fu[j] += std::exp(-p.haz_u * u * ts[j]);
        }
    }
    std::vector<double> psi(ts.size());
    for (std::size_t j = 0; j < ts.size(); ++j) {
        const double t = ts[j];
        psi[j] = (fx[j] / kOracleDraws) * (fu[j] / kOracleDraws) *
                 (std::exp(-(p.haz0 + p.treat_coef) * t) - std::exp(-p.haz0 * t));
    }
    return psi;
}

double oracle_truth(const DgpParams& params, double t) {
    return oracle_truth(params, std::vector<double>{t})[0];
}

int thread_budget() {
    if (const char* env = std::getenv("PROXSURV_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) {
            return v;
        }
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

namespace {

struct RepOutcome {
    bool ok = false;
    Eigen::VectorXd psi, se;
    std::vector<bool> covered;
    bool sup_rejected = false;
    std::string fatal;  // non-estimation error text; aborts the study
};

// Fit the treatment-side bridge with up to five random restarts drawn from
// the replication's own stream.
SolveResult fit_q_with_restarts(const SurvivalDataset& data, const QBridgeSpec& spec,
                                const MomentChoice& moments, RngStream& stream) {
    SolveResult fit = fit_q_bridge(data, spec, moments);
    for (int attempt = 0; attempt < 5 && !fit.converged; ++attempt) {
        Eigen::VectorXd th0(2 + data.dz() + data.dx());
        for (int j = 0; j < th0.size(); ++j) {
            th0(j) = stream.normal(0.0, 0.5);
        }
        SolveResult retry = fit_q_bridge(data, spec, moments, th0);
        if (retry.converged || retry.residual_norm < fit.residual_norm) {
            fit = std::move(retry);
        }
    }
    return fit;
}

SolveResult fit_h_with_restarts(const SurvivalDataset& data, const HBridgeSpec& spec,
                                const MomentChoice& moments, const CensoringModel& cens,
                                double tau, RngStream& stream) {
    SolveResult fit = fit_h_bridge(data, spec, moments, cens, tau);
    for (int attempt = 0; attempt < 5 && !fit.converged; ++attempt) {
        Eigen::VectorXd th0(3 + data.dw() + data.dx());
        for (int j = 0; j < th0.size(); ++j) {
            th0(j) = stream.normal(0.0, 0.5);
        }
        SolveResult retry = fit_h_bridge(data, spec, moments, cens, tau, th0);
        if (retry.converged || retry.residual_norm < fit.residual_norm) {
            fit = std::move(retry);
        }
    }
    return fit;
}

RepOutcome run_one_rep(const SimScenario& sc, int rep, const std::vector<double>& truth) {
    RepOutcome out;
    RngStream stream(sc.seed, static_cast<std::uint64_t>(rep));
    try {
        const SurvivalDataset data = sample_dgp(sc.dgp, sc.n, stream);
        const CensoringModel cens = fit_censoring(data, CensoringKind::marginal_km);
        TimeGrid eval;
        eval.points = sc.eval_times;
        eval.tau = sc.eval_times.back();

        CurveEstimate curve;
        FittedBridges bridges;
        const MomentChoice moments = default_moments();
        if (sc.estimator == EstimatorKind::nuc_ipw) {
            const std::uint64_t boot_seed = stream.raw();
            curve = nuc_ipw_curve(data, cens, eval, kNucBootstrap, boot_seed);
        } else {
            bridges.censoring = cens;
            bridges.q_spec.z_transform =
                sc.q_misspec ? CovTransform::sqrt_abs : CovTransform::identity;
            bridges.q_fit = fit_q_with_restarts(data, bridges.q_spec, moments, stream);
            if (!bridges.q_fit.converged) {
                throw EstimationError("treatment-side bridge fit failed");
            }
            if (sc.estimator == EstimatorKind::pdr) {
                const double tau = event_time_grid(data, 0.95).tau;
                HBridgeSpec hs;
                hs.w_transform = h_transform(sc.h_misspec);
                SolveResult hf = fit_h_with_restarts(data, hs, moments, cens, tau, stream);
                if (!hf.converged) {
                    throw EstimationError("outcome-side bridge fit failed");
                }
                bridges.h_spec = hs;
                bridges.h_fit = std::move(hf);
                curve = pdr_curve(data, bridges, eval);
            } else {
                curve = pipw_curve(data, bridges, eval);
            }
        }
        pointwise_ci(curve, 0.95);

        out.psi = curve.psi;
        out.se.resize(curve.grid.size());
        out.covered.resize(curve.grid.size());
        for (int g = 0; g < curve.grid.size(); ++g) {
            out.se(g) = std::sqrt(curve.var(g) / curve.n);
            out.covered[g] = curve.ci_lo(g) <= truth[g] && truth[g] <= curve.ci_hi(g);
        }

        if (sc.sup_test_draws > 0) {
            const TimeGrid full = event_time_grid(data, 0.95);
            CurveEstimate wide = sc.estimator == EstimatorKind::pdr
                                     ? pdr_curve(data, bridges, full)
                                     : pipw_curve(data, bridges, full);
            const std::uint64_t sup_seed = stream.raw();
            const auto [stat, pval] = sup_test(wide, sc.sup_test_draws, sup_seed);
            (void)stat;
            out.sup_rejected = pval < 0.05;
        }
        out.ok = true;
    } catch (const EstimationError&) {
        out.ok = false;
    } catch (const std::exception& ex) {
        out.ok = false;
        out.fatal = ex.what();
    }
    return out;
}

}  // namespace

StudyReport run_study(const SimScenario& sc) {
    if (sc.n < 100) {
        throw DataError("run_study: n must be at least 100");
    }
    if (sc.reps < 1) {
        throw DataError("run_study: reps must be at least 1");
    }
    if (sc.eval_times.empty()) {
        throw DataError("run_study: eval_times must not be empty");
    }
    for (double t : sc.eval_times) {
        if (!(t > 0.0 && t < sc.dgp.cens_cap)) {
            throw DataError("run_study: eval_times must lie strictly inside (0, " +
                            std::to_string(sc.dgp.cens_cap) + ")");
        }
    }
    if (!std::is_sorted(sc.eval_times.begin(), sc.eval_times.end())) {
        throw DataError("run_study: eval_times must be sorted ascending");
    }
    if (sc.sup_test_draws > 0 && sc.estimator == EstimatorKind::nuc_ipw) {
        throw DataError("run_study: the supremum test needs influence curves; "
                        "use the pipw or pdr estimator");
    }

    const std::vector<double> truth = oracle_truth(sc.dgp, sc.eval_times);
    std::vector<RepOutcome> outcomes(sc.reps);

    const int workers = std::min(thread_budget(), sc.reps);
    if (workers <= 1) {
        for (int rep = 0; rep < sc.reps; ++rep) {
            outcomes[rep] = run_one_rep(sc, rep, truth);
        }
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (int wkr = 0; wkr < workers; ++wkr) {
            pool.emplace_back([&] {
                for (int rep = next.fetch_add(1); rep < sc.reps; rep = next.fetch_add(1)) {
                    outcomes[rep] = run_one_rep(sc, rep, truth);
                }
            });
        }
        for (auto& th : pool) {
            th.join();
        }
    }

    for (const RepOutcome& rep : outcomes) {
        if (!rep.fatal.empty()) {
            throw EstimationError("run_study: replication aborted: " + rep.fatal);
        }
    }

    StudyReport report;
    report.estimator = estimator_name(sc.estimator);
    report.n = sc.n;
    report.reps = sc.reps;
    report.seed = sc.seed;
    report.t = sc.eval_times;
    report.truth = truth;
    report.sup_test_draws = sc.sup_test_draws;

    int ok = 0;
    for (const RepOutcome& rep : outcomes) {
        if (rep.ok) {
            ++ok;
        }
    }
    report.n_fail = sc.reps - ok;
    if (report.n_fail > 0.05 * sc.reps) {
        throw EstimationError("run_study: " + std::to_string(report.n_fail) + " of " +
                              std::to_string(sc.reps) +
                              " replications failed (more than 5%)");
    }
    if (ok == 0) {
        throw EstimationError("run_study: every replication failed");
    }

    const int m = static_cast<int>(sc.eval_times.size());
    report.bias.assign(m, 0.0);
    report.see.assign(m, 0.0);
    report.sd.assign(m, 0.0);
    report.cp.assign(m, 0.0);
    for (int g = 0; g < m; ++g) {
        double mean = 0.0, mean_se = 0.0, cover = 0.0;
        for (const RepOutcome& rep : outcomes) {
            if (!rep.ok) {
                continue;
            }
            mean += rep.psi(g);
            mean_se += rep.se(g);
            cover += rep.covered[g] ? 1.0 : 0.0;
        }
        mean /= ok;
        double ss = 0.0;
        for (const RepOutcome& rep : outcomes) {
            if (rep.ok) {
                ss += (rep.psi(g) - mean) * (rep.psi(g) - mean);
            }
        }
        report.bias[g] = mean - truth[g];
        report.see[g] = ok > 1 ? std::sqrt(ss / (ok - 1)) : 0.0;
        report.sd[g] = mean_se / ok;
        report.cp[g] = cover / ok;
    }
    if (sc.sup_test_draws > 0) {
        double rej = 0.0;
        for (const RepOutcome& rep : outcomes) {
            if (rep.ok && rep.sup_rejected) {
                rej += 1.0;
            }
        }
        report.sup_reject_rate = rej / ok;
    }
    return report;
}

void write_report_csv(const StudyReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot open '" + path + "' for writing");
    }
    out.precision(10);
    out << "estimator,t,bias,see,sd,cp,n_fail\n";
    for (std::size_t g = 0; g < report.t.size(); ++g) {
        out << report.estimator << ',' << report.t[g] << ',' << report.bias[g] << ','
            << report.see[g] << ',' << report.sd[g] << ',' << report.cp[g] << ','
            << report.n_fail << '\n';
    }
    if (!out) {
        throw DataError("failed while writing '" + path + "'");
    }
}

void write_report_json(const StudyReport& report, const std::string& path) {
    nlohmann::json doc;
    doc["estimator"] = report.estimator;
    doc["n"] = report.n;
    doc["reps"] = report.reps;
    doc["seed"] = report.seed;
    doc["n_fail"] = report.n_fail;
    doc["rows"] = nlohmann::json::array();
    for (std::size_t g = 0; g < report.t.size(); ++g) {
        doc["rows"].push_back({{"t", report.t[g]},
                               {"truth", report.truth[g]},
                               {"bias", report.bias[g]},
                               {"see", report.see[g]},
                               {"sd", report.sd[g]},
                               {"cp", report.cp[g]}});
    }
    if (report.sup_test_draws > 0) {
        doc["sup_test"] = {{"draws", report.sup_test_draws},
                           {"reject_rate", report.sup_reject_rate},
                           {"level", 0.05}};
    }
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot open '" + path + "' for writing");
    }
    out << doc.dump(2) << '\n';
    if (!out) {
        throw DataError("failed while writing '" + path + "'");
    }
}

}  // namespace proxsurv
