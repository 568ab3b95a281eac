#pragma once

#include "freemcg/models.hpp"

#include <Eigen/Core>

namespace freemcg {

/// K particles with their cached logits, one row each. Particles may be
/// denoised estimates or raw points; the statistics below do not care.
struct ParticleEnsemble {
    Matrix particles;  // K x d
    Matrix logits;     // K x n

    int count() const { return static_cast<int>(particles.rows()); }
    int dim() const { return static_cast<int>(particles.cols()); }
    int classes() const { return static_cast<int>(logits.cols()); }
    void validate() const;
};

/// Ensemble means and covariances with 1/K normalization:
///   C_xx = (1/K) sum_k (x_k - xbar)(x_k - xbar)^T     (d x d)
///   C_xf = (1/K) sum_k (x_k - xbar)(f_k - fbar)^T     (d x n)
struct EnsembleStats {
    Vector mean_x;
    Vector mean_f;
    Matrix cov_xx;
    Matrix cov_xf;
};

/// Materializes the d x d covariance, so this is a verification-scale op:
/// it refuses d > 64. Pipeline code uses the sum-of-outer-products forms
/// below, which never build the d x d matrix.
EnsembleStats ensemble_stats(const ParticleEnsemble& e);

/// e_c - p: the logit-space weight vector; entries sum to zero.
Vector direction_weight(int c, const Vector& p);

/// Derivative-free gradient estimate
///   g = (1/K) sum_k (x_k - xbar) (f_k - fbar)^T (e_c - p),
/// algebraically equal to C_xf (e_c - p), computed in O(K(d + n)) memory.
/// The result lies in the span of the particle deviations.
Vector freemcg_gradient(const ParticleEnsemble& e, int c, const Vector& p);

/// Frobenius norm of C_xf - C_xx J(xbar)^T, the error of the covariance
/// surrogate for the Jacobian action. Third order in the ensemble radius
/// for twice-differentiable classifiers; exactly zero for linear ones.
double thm2_residual(const OracleClassifier& m, const ParticleEnsemble& e);

/// Relative norm of the component of C_xx b orthogonal to
/// span{x_k - xbar}, computed via modified Gram-Schmidt with
/// re-orthogonalization. Exact span membership gives 0; a zero-deviation
/// ensemble returns 0 by convention.
double cov_action_span_check(const ParticleEnsemble& e, const Vector& b);

/// C_xx b in the sum-of-outer-products form, O(Kd).
Vector cov_xx_apply(const ParticleEnsemble& e, const Vector& b);

/// Orthonormal basis of span{x_k - xbar} (modified Gram-Schmidt with
/// re-orthogonalization, drop tolerance 1e-12 relative).
Matrix deviation_basis(const ParticleEnsemble& e);

}  // namespace freemcg
