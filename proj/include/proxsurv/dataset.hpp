#pragma once

#include <Eigen/Dense>
#include <istream>
#include <string>
#include <vector>

#include "proxsurv/common.hpp"

namespace proxsurv {

// Column-role assignment for a CSV source.
struct RoleSpec {
    std::string time_col;
    std::string event_col;
    std::string treat_col;
    std::vector<std::string> x_cols;  // measured confounders (may be empty)
    std::vector<std::string> z_cols;  // treatment-side proxies
    std::vector<std::string> w_cols;  // outcome-side proxies
};

// Right-censored survival data with proxy blocks. Matrices are n x d; d may
// be zero for x.
struct SurvivalDataset {
    Eigen::VectorXd time;          // observed follow-up T = min(T~, C)
    std::vector<std::uint8_t> event;  // 1 = failure observed, 0 = censored
    std::vector<std::uint8_t> treat;  // binary treatment
    Eigen::MatrixXd x, z, w;
    std::vector<std::string> x_names, z_names, w_names;

    int n() const { return static_cast<int>(time.size()); }
    int dx() const { return static_cast<int>(x.cols()); }
    int dz() const { return static_cast<int>(z.cols()); }
    int dw() const { return static_cast<int>(w.cols()); }
};

// Evaluation grid; tau is the largest grid point.
struct TimeGrid {
    std::vector<double> points;
    double tau = 0.0;

    int size() const { return static_cast<int>(points.size()); }
};

// Parse a CSV with a header row. Throws DataError naming the physical line
// and column of the first offending cell (header is line 1).
SurvivalDataset load_dataset(std::istream& in, const RoleSpec& roles,
                             const std::string& source_name = "<stream>");
SurvivalDataset load_dataset(const std::string& path, const RoleSpec& roles);

// Write columns in role order (time, event, treat, x, z, w) with enough
// digits that load_dataset(write_csv(d)) reproduces d exactly.
void write_csv(const SurvivalDataset& data, const std::string& path);
RoleSpec roles_of(const SurvivalDataset& data);

// Sorted distinct failure times no larger than the given quantile of all
// observed follow-up times. Throws EstimationError when no failures exist.
TimeGrid event_time_grid(const SurvivalDataset& data, double restrict_quantile = 0.95);

// Row subset (with repetition allowed), e.g. for bootstrap resampling.
SurvivalDataset take_rows(const SurvivalDataset& data, const std::vector<int>& rows);

}  // namespace proxsurv
