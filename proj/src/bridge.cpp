#include "proxsurv/bridge.hpp"

#include <cmath>

namespace proxsurv {

namespace {

constexpr double kExpClamp = 500.0;

double clamp_exp_arg(double v, bool* clamped) {
    if (v > kExpClamp) {
        if (clamped) *clamped = true;
        return kExpClamp;
    }
    if (v < -kExpClamp) {
        if (clamped) *clamped = true;
        return -kExpClamp;
    }
    return v;
}

}  // namespace

double apply_transform(double v, CovTransform tr) {
    switch (tr) {
        case CovTransform::identity:
            return v;
        case CovTransform::sqrt_abs:
            return std::sqrt(std::abs(v));
        case CovTransform::sqrt_abs_plus_one:
            return std::sqrt(std::abs(v)) + 1.0;
    }
    return v;
}

Eigen::MatrixXd apply_transform(const Eigen::MatrixXd& m, CovTransform tr) {
    if (tr == CovTransform::identity) {
        return m;
    }
    Eigen::MatrixXd out = m;
    for (int i = 0; i < out.rows(); ++i) {
        for (int j = 0; j < out.cols(); ++j) {
            out(i, j) = apply_transform(out(i, j), tr);
        }
    }
    return out;
}

double eval_q(const QBridgeSpec& spec, const Eigen::VectorXd& z, int a,
              const Eigen::VectorXd& x, const Eigen::VectorXd& alpha, bool* clamped) {
    const int dz = static_cast<int>(z.size());
    const int dx = static_cast<int>(x.size());
    if (alpha.size() != 2 + dz + dx) {
        throw EstimationError("eval_q: alpha has the wrong dimension");
    }
    double lin = alpha(0) + alpha(1) * a;
    for (int j = 0; j < dz; ++j) {
        lin += alpha(2 + j) * apply_transform(z(j), spec.z_transform);
    }
    for (int j = 0; j < dx; ++j) {
        lin += alpha(2 + dz + j) * x(j);
    }
    const double s = a == 1 ? 1.0 : -1.0;
    return 1.0 + std::exp(clamp_exp_arg(s * lin, clamped));
}

Eigen::VectorXd grad_q(const QBridgeSpec& spec, const Eigen::VectorXd& z, int a,
                       const Eigen::VectorXd& x, const Eigen::VectorXd& alpha) {
    const int dz = static_cast<int>(z.size());
    const int dx = static_cast<int>(x.size());
    Eigen::VectorXd f(2 + dz + dx);
    f(0) = 1.0;
    f(1) = a;
    for (int j = 0; j < dz; ++j) {
        f(2 + j) = apply_transform(z(j), spec.z_transform);
    }
    for (int j = 0; j < dx; ++j) {
        f(2 + dz + j) = x(j);
    }
    const double s = a == 1 ? 1.0 : -1.0;
    const double e = std::exp(clamp_exp_arg(s * f.dot(alpha), nullptr));
    return s * e * f;
}

double eval_h(const HBridgeSpec& spec, double t, const Eigen::VectorXd& w, int a,
              const Eigen::VectorXd& x, const Eigen::VectorXd& beta, bool* clamped) {
    const int dw = static_cast<int>(w.size());
    const int dx = static_cast<int>(x.size());
    if (beta.size() != 3 + dw + dx) {
        throw EstimationError("eval_h: beta has the wrong dimension");
    }
    double eta = beta(0) + beta(2) * a;
    for (int j = 0; j < dw; ++j) {
        eta += beta(3 + j) * apply_transform(w(j), spec.w_transform);
    }
    for (int j = 0; j < dx; ++j) {
        eta += beta(3 + dw + j) * x(j);
    }
    return std::exp(clamp_exp_arg(-eta * t - beta(1) * t * t, clamped));
}

Eigen::VectorXd grad_h(const HBridgeSpec& spec, double t, const Eigen::VectorXd& w, int a,
                       const Eigen::VectorXd& x, const Eigen::VectorXd& beta) {
    const int dw = static_cast<int>(w.size());
    const int dx = static_cast<int>(x.size());
    const double h = eval_h(spec, t, w, a, x, beta, nullptr);
    Eigen::VectorXd g(3 + dw + dx);
    g(0) = -t * h;
    g(1) = -t * t * h;
    g(2) = -a * t * h;
    for (int j = 0; j < dw; ++j) {
        g(3 + j) = -apply_transform(w(j), spec.w_transform) * t * h;
    }
    for (int j = 0; j < dx; ++j) {
        g(3 + dw + j) = -x(j) * t * h;
    }
    return g;
}

QDesign make_q_design(const SurvivalDataset& data, const QBridgeSpec& spec) {
    const int n = data.n();
    QDesign d;
    d.feats.resize(n, 2 + data.dz() + data.dx());
    d.sign.resize(n);
    const Eigen::MatrixXd zt = apply_transform(data.z, spec.z_transform);
    for (int i = 0; i < n; ++i) {
        d.feats(i, 0) = 1.0;
        d.feats(i, 1) = data.treat[i];
        d.sign(i) = data.treat[i] == 1 ? 1.0 : -1.0;
    }
    d.feats.middleCols(2, data.dz()) = zt;
    if (data.dx() > 0) {
        d.feats.rightCols(data.dx()) = data.x;
    }
    return d;
}

void eval_q_all(const QDesign& design, const Eigen::VectorXd& alpha, Eigen::VectorXd& q,
                Eigen::MatrixXd* grad, bool* clamped) {
    if (alpha.size() != design.dim()) {
        throw EstimationError("eval_q_all: alpha has the wrong dimension");
    }
    const int n = static_cast<int>(design.feats.rows());
    Eigen::VectorXd arg = design.sign.cwiseProduct(design.feats * alpha);
    bool hit = false;
    for (int i = 0; i < n; ++i) {
        arg(i) = clamp_exp_arg(arg(i), &hit);
    }
    const Eigen::VectorXd e = arg.array().exp().matrix();
    q = Eigen::VectorXd::Ones(n) + e;
    if (grad) {
        *grad = design.feats.array().colwise() *
                (design.sign.cwiseProduct(e)).array();
    }
    if (clamped) {
        *clamped = hit;
    }
}

namespace {

HDesign h_design_impl(const SurvivalDataset& data, const HBridgeSpec& spec, int force_arm) {
    const int n = data.n();
    HDesign d;
    d.lin.resize(n, 2 + data.dw() + data.dx());
    for (int i = 0; i < n; ++i) {
        d.lin(i, 0) = 1.0;
        d.lin(i, 1) = force_arm < 0 ? data.treat[i] : force_arm;
    }
    d.lin.middleCols(2, data.dw()) = apply_transform(data.w, spec.w_transform);
    if (data.dx() > 0) {
        d.lin.rightCols(data.dx()) = data.x;
    }
    return d;
}

}  // namespace

HDesign make_h_design(const SurvivalDataset& data, const HBridgeSpec& spec) {
    return h_design_impl(data, spec, -1);
}

HDesign make_h_design(const SurvivalDataset& data, const HBridgeSpec& spec, int force_arm) {
    return h_design_impl(data, spec, force_arm);
}

Eigen::VectorXd h_eta(const HDesign& design, const Eigen::VectorXd& beta) {
    if (beta.size() != design.dim()) {
        throw EstimationError("h_eta: beta has the wrong dimension");
    }
    // beta = (b0, b1, b_a, b_w..., b_x...); lin columns are (1, a, w*, x).
    Eigen::VectorXd coef(design.lin.cols());
    coef(0) = beta(0);
    coef(1) = beta(2);
    for (int j = 3; j < beta.size(); ++j) {
        coef(j - 1) = beta(j);
    }
    return design.lin * coef;
}

MomentChoice default_moments() {
    MomentChoice mc;
    mc.n_fn = [](const Eigen::VectorXd& w, int a, const Eigen::VectorXd& x) {
        const double s = a == 1 ? 1.0 : -1.0;
        Eigen::VectorXd v(2 + w.size() + x.size());
        v(0) = 1.0;
        v.segment(1, w.size()) = w;
        v(1 + w.size()) = a;
        if (x.size() > 0) {
            v.tail(x.size()) = x;
        }
        return Eigen::VectorXd(s * v);
    };
    mc.m_coef = [](const Eigen::VectorXd& z, int a, const Eigen::VectorXd& x) {
        Eigen::VectorXd v(3 + z.size() + x.size());
        v(0) = 1.0;
        v.segment(1, z.size()) = z;
        v(1 + z.size()) = a;
        if (x.size() > 0) {
            v.segment(2 + z.size(), x.size()) = x;
        }
        v(v.size() - 1) = 1.0;
        return v;
    };
    mc.m_deg = [](int dz, int dx) {
        Eigen::VectorXi deg = Eigen::VectorXi::Zero(3 + dz + dx);
        deg(deg.size() - 1) = 1;
        return deg;
    };
    return mc;
}

}  // namespace proxsurv
