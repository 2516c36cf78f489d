#include "proxsurv/common.hpp"

#include <algorithm>

namespace proxsurv {

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw EstimationError("normal_quantile: p must lie strictly in (0,1)");
    }

    // Acklam coefficients.
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};

    const double plow = 0.02425;
    double x;
    if (p < plow) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }

    // One Halley step against the exact CDF.
    const double inv_sqrt2 = 0.70710678118654752440;
    const double inv_sqrt2pi = 0.39894228040143267794;
    const double cdf = 0.5 * std::erfc(-x * inv_sqrt2);
    const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
    const double u = (cdf - p) / pdf;
    x -= u / (1.0 + 0.5 * x * u);
    return x;
}

void gauss_legendre(int m, std::vector<double>& nodes, std::vector<double>& weights) {
    if (m < 1) {
        throw EstimationError("gauss_legendre: order must be positive");
    }
    nodes.assign(m, 0.0);
    weights.assign(m, 0.0);
    const int half = (m + 1) / 2;
    for (int i = 0; i < half; ++i) {
        // Tricomi-style initial guess, then Newton on P_m.
        double x = std::cos(3.14159265358979323846 * (i + 0.75) / (m + 0.5));
        double pp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= m; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            pp = m * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / pp;
            x -= dx;
            if (std::abs(dx) < 1e-15) {
                break;
            }
        }
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        const double w = 2.0 / ((1.0 - x * x) * pp * pp);
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    if (m % 2 == 1) {
        nodes[m / 2] = 0.0;
    }
}

void composite_gl16(double a, double b, int total_nodes,
                    std::vector<double>& nodes, std::vector<double>& weights) {
    if (total_nodes < 16 || total_nodes % 16 != 0) {
        throw EstimationError("composite_gl16: node count must be a positive multiple of 16");
    }
    static std::vector<double> base_x, base_w;
    if (base_x.empty()) {
        gauss_legendre(16, base_x, base_w);
    }
    const int panels = total_nodes / 16;
    nodes.clear();
    weights.clear();
    nodes.reserve(total_nodes);
    weights.reserve(total_nodes);
    const double width = (b - a) / panels;
    for (int p = 0; p < panels; ++p) {
        const double lo = a + p * width;
        const double mid = lo + 0.5 * width;
        const double scale = 0.5 * width;
        for (int k = 0; k < 16; ++k) {
            nodes.push_back(mid + scale * base_x[k]);
            weights.push_back(scale * base_w[k]);
        }
    }
}

}  // namespace proxsurv
