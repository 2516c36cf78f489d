#include "proxsurv/censoring.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace proxsurv {

double KmCurve::survival(double t) const {
    const int k = jump_index(t);
    return k < 0 ? 1.0 : surv[k];
}

int KmCurve::jump_index(double t) const {
    auto it = std::upper_bound(jump_t.begin(), jump_t.end(), t);
    return static_cast<int>(it - jump_t.begin()) - 1;
}

namespace {

KmCurve fit_stratum(const SurvivalDataset& data, const std::vector<int>& members) {
    KmCurve curve;
    curve.n_stratum = static_cast<int>(members.size());

    // Counts per distinct time within the stratum.
    std::map<double, std::pair<int, int>> counts;  // time -> (censorings, failures)
    for (int i : members) {
        auto& c = counts[data.time(i)];
        if (data.event[i]) {
            ++c.second;
        } else {
            ++c.first;
        }
    }

    // Walk times in decreasing order accumulating the at-risk count. At time
    // u the censoring risk set excludes subjects failing at u.
    int later = 0;  // subjects with T > u
    std::vector<std::pair<double, std::pair<int, int>>> rows(counts.begin(), counts.end());
    std::vector<double> risk_at(rows.size());
    for (int k = static_cast<int>(rows.size()) - 1; k >= 0; --k) {
        risk_at[k] = later + rows[k].second.first;
        later += rows[k].second.first + rows[k].second.second;
    }

    double s = 1.0, cum = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const int d = rows[k].second.first;
        if (d == 0) {
            continue;
        }
        const double r = risk_at[k];
        s *= 1.0 - d / r;
        cum += d / (r * r);
        curve.jump_t.push_back(rows[k].first);
        curve.surv.push_back(s);
        curve.risk.push_back(r);
        curve.dcount.push_back(static_cast<double>(d));
        curve.cum_dr2.push_back(cum);
    }
    return curve;
}

}  // namespace

CensoringModel fit_censoring(const SurvivalDataset& data, CensoringKind kind,
                             double positivity_floor) {
    if (!(positivity_floor >= 0.0 && positivity_floor < 1.0)) {
        throw DataError("fit_censoring: positivity floor must lie in [0,1)");
    }
    CensoringModel model;
    model.kind = kind;
    model.positivity_floor = positivity_floor;
    model.n = data.n();
    model.stratum_of.resize(data.n());
    model.time = data.time;

    std::vector<std::vector<int>> members;
    if (kind == CensoringKind::marginal_km) {
        members.resize(1);
        for (int i = 0; i < data.n(); ++i) {
            model.stratum_of[i] = 0;
            members[0].push_back(i);
        }
    } else {
        members.resize(2);
        for (int i = 0; i < data.n(); ++i) {
            model.stratum_of[i] = data.treat[i];
            members[data.treat[i]].push_back(i);
        }
        if (members[0].empty() || members[1].empty()) {
            throw EstimationError("fit_censoring: a treatment arm is empty, cannot stratify");
        }
    }
    for (const auto& m : members) {
        model.strata.push_back(fit_stratum(data, m));
    }

    model.inf_k.resize(data.n());
    model.inf_jump_invr.resize(data.n());
    for (int i = 0; i < data.n(); ++i) {
        const KmCurve& c = model.strata[model.stratum_of[i]];
        int k = c.jump_index(data.time(i));
        double jump = 0.0;
        if (k >= 0 && c.jump_t[k] == data.time(i)) {
            if (data.event[i]) {
                --k;  // failure at a censoring time: left the risk set first
            } else {
                jump = 1.0 / c.risk[k];
            }
        }
        model.inf_k[i] = k;
        model.inf_jump_invr[i] = jump;
    }
    return model;
}

double censoring_survival_stratum(const CensoringModel& model, double t, int stratum) {
    const double s = model.strata[stratum].survival(t);
    if (s < model.positivity_floor) {
        throw EstimationError("censoring survival " + std::to_string(s) + " at t=" +
                              std::to_string(t) + " is below the positivity floor " +
                              std::to_string(model.positivity_floor));
    }
    return s;
}

double censoring_survival(const CensoringModel& model, double t, int subject) {
    return censoring_survival_stratum(model, t, model.stratum_of[subject]);
}

Eigen::VectorXd censoring_influence(const CensoringModel& model, double t) {
    const int n = model.n;
    Eigen::VectorXd phi(n);
    std::vector<double> s_at(model.strata.size());
    std::vector<int> k_at(model.strata.size());
    for (std::size_t s = 0; s < model.strata.size(); ++s) {
        s_at[s] = model.strata[s].survival(t);
        k_at[s] = model.strata[s].jump_index(t);
    }
    for (int i = 0; i < n; ++i) {
        const int s = model.stratum_of[i];
        const KmCurve& c = model.strata[s];
        const int k = std::min(model.inf_k[i], k_at[s]);
        const double comp = k < 0 ? 0.0 : c.cum_dr2[k];
        const double jump = model.time(i) <= t ? model.inf_jump_invr[i] : 0.0;
        phi(i) = -s_at[s] * n * (jump - comp);
    }
    return phi;
}

}  // namespace proxsurv
