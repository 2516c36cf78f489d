#include "proxsurv/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace proxsurv {

namespace {

constexpr double kWidth = 800, kHeight = 500;
constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 55;

std::string escape_xml(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

}  // namespace

std::string render_curve_svg(const CurveEstimate& curve, const std::string& title) {
    const int m = curve.grid.size();
    if (m == 0) {
        throw EstimationError("render_curve_svg: empty grid");
    }
    const bool has_band = curve.ci_lo.size() == m && std::isfinite(curve.ci_lo(0));

    double x_lo = curve.grid.points.front(), x_hi = curve.grid.points.back();
    if (x_hi <= x_lo) {
        x_hi = x_lo + 1.0;
    }
    double y_lo = 0.0, y_hi = 0.0;
    for (int g = 0; g < m; ++g) {
        y_lo = std::min(y_lo, has_band ? curve.ci_lo(g) : curve.psi(g));
        y_hi = std::max(y_hi, has_band ? curve.ci_hi(g) : curve.psi(g));
    }
    const double pad = std::max(1e-3, 0.08 * (y_hi - y_lo));
    y_lo -= pad;
    y_hi += pad;

    const double pw = kWidth - kLeft - kRight;
    const double ph = kHeight - kTop - kBottom;
    auto px = [&](double t) { return kLeft + pw * (t - x_lo) / (x_hi - x_lo); };
    auto py = [&](double v) { return kTop + ph * (y_hi - v) / (y_hi - y_lo); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << kWidth << ' '
        << kHeight << "\" font-family=\"sans-serif\">\n";
    svg << "<rect width=\"" << kWidth << "\" height=\"" << kHeight
        << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" "
        << "font-size=\"16\">" << escape_xml(title) << "</text>\n";

    // Axes and ticks.
    svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw
        << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int k = 0; k <= 5; ++k) {
        const double t = x_lo + (x_hi - x_lo) * k / 5;
        const double v = y_lo + (y_hi - y_lo) * k / 5;
        svg << "<line x1=\"" << px(t) << "\" y1=\"" << kTop + ph << "\" x2=\"" << px(t)
            << "\" y2=\"" << kTop + ph + 5 << "\" stroke=\"#333\"/>\n";
        svg << "<text x=\"" << px(t) << "\" y=\"" << kTop + ph + 20
            << "\" text-anchor=\"middle\" font-size=\"12\">" << fmt(t) << "</text>\n";
        svg << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << py(v) << "\" x2=\"" << kLeft
            << "\" y2=\"" << py(v) << "\" stroke=\"#333\"/>\n";
        svg << "<text x=\"" << kLeft - 8 << "\" y=\"" << py(v) + 4
            << "\" text-anchor=\"end\" font-size=\"12\">" << fmt(v) << "</text>\n";
    }
    svg << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 12
        << "\" text-anchor=\"middle\" font-size=\"13\">time</text>\n";
    svg << "<text x=\"18\" y=\"" << kTop + ph / 2
        << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
        << kTop + ph / 2 << ")\">survival difference</text>\n";

    if (y_lo < 0.0 && y_hi > 0.0) {
        svg << "<line x1=\"" << kLeft << "\" y1=\"" << py(0.0) << "\" x2=\"" << kLeft + pw
            << "\" y2=\"" << py(0.0)
            << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
    }

    if (has_band) {
        svg << "<polygon fill=\"#9ecae1\" fill-opacity=\"0.45\" stroke=\"none\" points=\"";
        for (int g = 0; g < m; ++g) {
            svg << px(curve.grid.points[g]) << ',' << py(curve.ci_hi(g)) << ' ';
        }
        for (int g = m - 1; g >= 0; --g) {
            svg << px(curve.grid.points[g]) << ',' << py(curve.ci_lo(g)) << ' ';
        }
        svg << "\"/>\n";
    }

    svg << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (int g = 0; g < m; ++g) {
        svg << px(curve.grid.points[g]) << ',' << py(curve.psi(g)) << ' ';
    }
    svg << "\"/>\n</svg>\n";
    return svg.str();
}

}  // namespace proxsurv
