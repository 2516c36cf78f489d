#include "proxsurv/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <charconv>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

namespace proxsurv {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cell);
            cell.clear();
        } else if (ch != '\r') {
            cell += ch;
        }
    }
    out.push_back(cell);
    return out;
}

std::string trimmed(const std::string& s) {
    auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) {
        return "";
    }
    auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

double parse_double_cell(const std::string& raw, const std::string& source, int line,
                         const std::string& col) {
    const std::string s = trimmed(raw);
    if (s.empty()) {
        throw DataError(source + ":" + std::to_string(line) + ": column '" + col +
                        "' is empty");
    }
    double value = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) {
        throw DataError(source + ":" + std::to_string(line) + ": column '" + col +
                        "' has non-numeric value '" + s + "'");
    }
    if (!std::isfinite(value)) {
        throw DataError(source + ":" + std::to_string(line) + ": column '" + col +
                        "' has non-finite value '" + s + "'");
    }
    return value;
}

std::uint8_t parse_binary_cell(const std::string& raw, const std::string& source, int line,
                               const std::string& col) {
    const double v = parse_double_cell(raw, source, line, col);
    if (v == 0.0) {
        return 0;
    }
    if (v == 1.0) {
        return 1;
    }
    throw DataError(source + ":" + std::to_string(line) + ": column '" + col +
                    "' must be 0 or 1, got '" + trimmed(raw) + "'");
}

int find_column(const std::vector<std::string>& header, const std::string& name,
                const std::string& source) {
    for (int j = 0; j < static_cast<int>(header.size()); ++j) {
        if (header[j] == name) {
            return j;
        }
    }
    throw DataError(source + ":1: required column '" + name + "' not found in header");
}

}  // namespace

SurvivalDataset load_dataset(std::istream& in, const RoleSpec& roles,
                             const std::string& source_name) {
    std::string line;
    if (!std::getline(in, line)) {
        throw DataError(source_name + ":1: empty input, expected a header row");
    }
    std::vector<std::string> header = split_csv_line(line);
    for (auto& cell : header) {
        cell = trimmed(cell);
    }
    {
        std::set<std::string> seen;
        for (const auto& cell : header) {
            if (!seen.insert(cell).second) {
                throw DataError(source_name + ":1: duplicate column name '" + cell + "'");
            }
        }
    }

    const int jt = find_column(header, roles.time_col, source_name);
    const int je = find_column(header, roles.event_col, source_name);
    const int ja = find_column(header, roles.treat_col, source_name);
    std::vector<int> jx, jz, jw;
    for (const auto& c : roles.x_cols) jx.push_back(find_column(header, c, source_name));
    for (const auto& c : roles.z_cols) jz.push_back(find_column(header, c, source_name));
    for (const auto& c : roles.w_cols) jw.push_back(find_column(header, c, source_name));
    if (jz.empty()) {
        throw DataError(source_name + ": role mapping assigns no treatment-side proxy column");
    }
    if (jw.empty()) {
        throw DataError(source_name + ": role mapping assigns no outcome-side proxy column");
    }
    {
        std::set<int> used{jt, je, ja};
        auto check = [&](int j) {
            if (!used.insert(j).second) {
                throw DataError(source_name + ": column '" + header[j] +
                                "' assigned to more than one role");
            }
        };
        for (int j : jx) check(j);
        for (int j : jz) check(j);
        for (int j : jw) check(j);
    }

    std::vector<double> tv;
    std::vector<std::uint8_t> ev, av;
    std::vector<double> xv, zv, wv;
    const int ncol = static_cast<int>(header.size());
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || (line.size() == 1 && line[0] == '\r')) {
            continue;
        }
        const std::vector<std::string> cells = split_csv_line(line);
        if (static_cast<int>(cells.size()) != ncol) {
            throw DataError(source_name + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(ncol) + " fields, got " +
                            std::to_string(cells.size()));
        }
        const double t = parse_double_cell(cells[jt], source_name, lineno, header[jt]);
        if (t < 0.0) {
            throw DataError(source_name + ":" + std::to_string(lineno) + ": column '" +
                            header[jt] + "' has negative time " + std::to_string(t));
        }
        tv.push_back(t);
        ev.push_back(parse_binary_cell(cells[je], source_name, lineno, header[je]));
        av.push_back(parse_binary_cell(cells[ja], source_name, lineno, header[ja]));
        for (int j : jx) xv.push_back(parse_double_cell(cells[j], source_name, lineno, header[j]));
        for (int j : jz) zv.push_back(parse_double_cell(cells[j], source_name, lineno, header[j]));
        for (int j : jw) wv.push_back(parse_double_cell(cells[j], source_name, lineno, header[j]));
    }
    const int n = static_cast<int>(tv.size());
    if (n == 0) {
        throw DataError(source_name + ": no data rows");
    }

    SurvivalDataset data;
    data.time = Eigen::Map<Eigen::VectorXd>(tv.data(), n);
    data.event = std::move(ev);
    data.treat = std::move(av);
    auto fill = [n](std::vector<double>& buf, int d) {
        Eigen::MatrixXd m(n, d);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < d; ++j) {
                m(i, j) = buf[static_cast<std::size_t>(i) * d + j];
            }
        }
        return m;
    };
    data.x = fill(xv, static_cast<int>(jx.size()));
    data.z = fill(zv, static_cast<int>(jz.size()));
    data.w = fill(wv, static_cast<int>(jw.size()));
    for (int j : jx) data.x_names.push_back(header[j]);
    for (int j : jz) data.z_names.push_back(header[j]);
    for (int j : jw) data.w_names.push_back(header[j]);
    return data;
}

SurvivalDataset load_dataset(const std::string& path, const RoleSpec& roles) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open dataset file '" + path + "'");
    }
    return load_dataset(in, roles, path);
}

void write_csv(const SurvivalDataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot open '" + path + "' for writing");
    }
    out.precision(std::numeric_limits<double>::max_digits10);
    out << "time,event,treat";
    for (const auto& c : data.x_names) out << ',' << c;
    for (const auto& c : data.z_names) out << ',' << c;
    for (const auto& c : data.w_names) out << ',' << c;
    out << '\n';
    for (int i = 0; i < data.n(); ++i) {
        out << data.time(i) << ',' << int(data.event[i]) << ',' << int(data.treat[i]);
        for (int j = 0; j < data.dx(); ++j) out << ',' << data.x(i, j);
        for (int j = 0; j < data.dz(); ++j) out << ',' << data.z(i, j);
        for (int j = 0; j < data.dw(); ++j) out << ',' << data.w(i, j);
        out << '\n';
    }
    if (!out) {
        throw DataError("failed while writing '" + path + "'");
    }
}

RoleSpec roles_of(const SurvivalDataset& data) {
    RoleSpec roles;
    roles.time_col = "time";
    roles.event_col = "event";
    roles.treat_col = "treat";
    roles.x_cols = data.x_names;
    roles.z_cols = data.z_names;
    roles.w_cols = data.w_names;
    return roles;
}

SurvivalDataset take_rows(const SurvivalDataset& data, const std::vector<int>& rows) {
    const int m = static_cast<int>(rows.size());
    SurvivalDataset out;
    out.time.resize(m);
    out.event.resize(m);
    out.treat.resize(m);
    out.x.resize(m, data.dx());
    out.z.resize(m, data.dz());
    out.w.resize(m, data.dw());
    for (int i = 0; i < m; ++i) {
        const int r = rows[i];
        if (r < 0 || r >= data.n()) {
            throw DataError("take_rows: row index out of range");
        }
        out.time(i) = data.time(r);
        out.event[i] = data.event[r];
        out.treat[i] = data.treat[r];
        out.x.row(i) = data.x.row(r);
        out.z.row(i) = data.z.row(r);
        out.w.row(i) = data.w.row(r);
    }
    out.x_names = data.x_names;
    out.z_names = data.z_names;
    out.w_names = data.w_names;
    return out;
}

TimeGrid event_time_grid(const SurvivalDataset& data, double restrict_quantile) {
    if (!(restrict_quantile > 0.0 && restrict_quantile <= 1.0)) {
        throw DataError("event_time_grid: quantile must lie in (0,1]");
    }
    const int n = data.n();
    std::vector<double> obs(data.time.data(), data.time.data() + n);
    std::sort(obs.begin(), obs.end());
    const int k = std::min<int>(n - 1, static_cast<int>(std::ceil(restrict_quantile * n)) - 1);
    const double cutoff = obs[std::max(k, 0)];

    std::set<double> grid;
    for (int i = 0; i < n; ++i) {
        if (data.event[i] && data.time(i) <= cutoff) {
            grid.insert(data.time(i));
        }
    }
    if (grid.empty()) {
        throw EstimationError("event_time_grid: no events at or below the grid cutoff");
    }
    TimeGrid out;
    out.points.assign(grid.begin(), grid.end());
    out.tau = out.points.back();
    return out;
}

}  // namespace proxsurv
