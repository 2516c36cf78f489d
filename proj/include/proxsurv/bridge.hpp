#pragma once

#include <Eigen/Dense>
#include <functional>

#include "proxsurv/dataset.hpp"

namespace proxsurv {

// Elementwise covariate transforms used to induce working-model misspecification.
enum class CovTransform { identity, sqrt_abs, sqrt_abs_plus_one };

double apply_transform(double v, CovTransform tr);
Eigen::MatrixXd apply_transform(const Eigen::MatrixXd& m, CovTransform tr);

// Treatment-side bridge: q(z,a,x; alpha) = 1 + exp(s * (alpha . f)) with
// s = +1 for a=1, -1 for a=0 and features f = (1, a, z*, x). The exponent is
// clamped to [-500, 500]; the flag reports whether clamping engaged.
struct QBridgeSpec {
    CovTransform z_transform = CovTransform::identity;
};

// Outcome-side bridge: h(t, w, a, x; beta) =
// exp(-(b0 + b_a a + b_w . w* + b_x . x) t - b1 t^2), exponent clamped likewise.
// beta layout: (b0, b1, b_a, b_w..., b_x...).
struct HBridgeSpec {
    CovTransform w_transform = CovTransform::identity;
};

double eval_q(const QBridgeSpec& spec, const Eigen::VectorXd& z, int a,
              const Eigen::VectorXd& x, const Eigen::VectorXd& alpha,
              bool* clamped = nullptr);
Eigen::VectorXd grad_q(const QBridgeSpec& spec, const Eigen::VectorXd& z, int a,
                       const Eigen::VectorXd& x, const Eigen::VectorXd& alpha);

double eval_h(const HBridgeSpec& spec, double t, const Eigen::VectorXd& w, int a,
              const Eigen::VectorXd& x, const Eigen::VectorXd& beta,
              bool* clamped = nullptr);
Eigen::VectorXd grad_h(const HBridgeSpec& spec, double t, const Eigen::VectorXd& w, int a,
                       const Eigen::VectorXd& x, const Eigen::VectorXd& beta);

// Vectorized q evaluation over a dataset.
struct QDesign {
    Eigen::MatrixXd feats;  // n x (2+dz+dx): (1, a, z*, x)
    Eigen::VectorXd sign;   // +1 treated, -1 control
    int dim() const { return static_cast<int>(feats.cols()); }
};
QDesign make_q_design(const SurvivalDataset& data, const QBridgeSpec& spec);
// q_i and optionally the n x p gradient dq_i/dalpha; clamped set if any exponent hit the clamp.
void eval_q_all(const QDesign& design, const Eigen::VectorXd& alpha, Eigen::VectorXd& q,
                Eigen::MatrixXd* grad = nullptr, bool* clamped = nullptr);

// Vectorized h pieces: the exponent is -(eta_i t + b1 t^2) with
// eta_i = b0 + b_a a_i + b_w . w*_i + b_x . x_i.
struct HDesign {
    Eigen::MatrixXd lin;  // n x (2+dw+dx): (1, a, w*, x)
    int dim() const { return static_cast<int>(lin.cols()) + 1; }
};
HDesign make_h_design(const SurvivalDataset& data, const HBridgeSpec& spec);
// Counterfactual variant: the treatment column is forced to the given arm.
HDesign make_h_design(const SurvivalDataset& data, const HBridgeSpec& spec, int force_arm);
Eigen::VectorXd h_eta(const HDesign& design, const Eigen::VectorXd& beta);

// Instrument choice for the two moment systems. The treatment side pairs the
// bridge with s(a) * (1, w, a, x); the outcome side uses time polynomials
// mdot_c(t) = m_coef_c * t^m_deg_c with coefficients (1, z, a, x, 1) and
// degrees (0, 0..., 0, 0..., 1). Identification requires dim(w) == dim(z).
struct MomentChoice {
    std::function<Eigen::VectorXd(const Eigen::VectorXd& w, int a, const Eigen::VectorXd& x)>
        n_fn;
    std::function<Eigen::VectorXd(const Eigen::VectorXd& z, int a, const Eigen::VectorXd& x)>
        m_coef;
    std::function<Eigen::VectorXi(int dz, int dx)> m_deg;
};
MomentChoice default_moments();

}  // namespace proxsurv
