#include "freemcg/enkf.hpp"

#include "freemcg/errors.hpp"

#include <cmath>

namespace freemcg {

void ParticleEnsemble::validate() const {
    if (particles.rows() < 1) throw NumericError("ParticleEnsemble: empty ensemble");
    if (logits.rows() != particles.rows())
        throw NumericError("ParticleEnsemble: particle and logit counts differ");
    if (!particles.allFinite() || !logits.allFinite())
        throw NumericError("ParticleEnsemble: non-finite entries");
}

EnsembleStats ensemble_stats(const ParticleEnsemble& e) {
    e.validate();
    if (e.dim() > 64)
        throw NumericError("ensemble_stats materializes a d x d covariance; refusing d > 64");
    const double inv_k = 1.0 / e.count();
    EnsembleStats s;
    s.mean_x = e.particles.colwise().mean().transpose();
    s.mean_f = e.logits.colwise().mean().transpose();
    Matrix dx = e.particles.rowwise() - s.mean_x.transpose();
    Matrix df = e.logits.rowwise() - s.mean_f.transpose();
    s.cov_xx = inv_k * dx.transpose() * dx;
    s.cov_xf = inv_k * dx.transpose() * df;
    return s;
}

Vector direction_weight(int c, const Vector& p) {
    if (c < 0 || c >= p.size()) throw NumericError("direction_weight: class index out of range");
    Vector w = -p;
    w[c] += 1.0;
    return w;
}

Vector freemcg_gradient(const ParticleEnsemble& e, int c, const Vector& p) {
    e.validate();
    if (p.size() != e.classes()) throw NumericError("freemcg_gradient: probability length mismatch");
    const Vector w = direction_weight(c, p);
    const Vector mean_x = e.particles.colwise().mean().transpose();
    const Vector mean_f = e.logits.colwise().mean().transpose();

    // Fixed index-order reduction keeps results bit-stable.
    Vector g = Vector::Zero(e.dim());
    for (int k = 0; k < e.count(); ++k) {
        const double scale = (e.logits.row(k).transpose() - mean_f).dot(w);
        g += scale * (e.particles.row(k).transpose() - mean_x);
    }
    return g / e.count();
}

double thm2_residual(const OracleClassifier& m, const ParticleEnsemble& e) {
    e.validate();
    const Vector mean_x = e.particles.colwise().mean().transpose();
    const Vector mean_f = e.logits.colwise().mean().transpose();
    const Matrix jac = m.jacobian(mean_x);  // n x d

    // Both C_xf and C_xx J^T assembled as d x n sums, never d x d.
    Matrix residual = Matrix::Zero(e.dim(), e.classes());
    for (int k = 0; k < e.count(); ++k) {
        const Vector dx = e.particles.row(k).transpose() - mean_x;
        const Vector df = e.logits.row(k).transpose() - mean_f;
        residual += dx * (df - jac * dx).transpose();
    }
    return residual.norm() / e.count();
}

Vector cov_xx_apply(const ParticleEnsemble& e, const Vector& b) {
    e.validate();
    if (b.size() != e.dim()) throw NumericError("cov_xx_apply: vector length mismatch");
    const Vector mean_x = e.particles.colwise().mean().transpose();
    Vector out = Vector::Zero(e.dim());
    for (int k = 0; k < e.count(); ++k) {
        const Vector dx = e.particles.row(k).transpose() - mean_x;
        out += dx.dot(b) * dx;
    }
    return out / e.count();
}

Matrix deviation_basis(const ParticleEnsemble& e) {
    e.validate();
    const Vector mean_x = e.particles.colwise().mean().transpose();
    const double scale = (e.particles.rowwise() - mean_x.transpose()).norm();
    const double drop = 1e-12 * std::max(scale, 1e-300);

    Matrix q(e.dim(), std::min(e.count(), e.dim()));
    int rank = 0;
    for (int k = 0; k < e.count() && rank < q.cols(); ++k) {
        Vector v = e.particles.row(k).transpose() - mean_x;
        for (int pass = 0; pass < 2; ++pass)
            for (int i = 0; i < rank; ++i) v -= q.col(i).dot(v) * q.col(i);
        const double norm = v.norm();
        if (norm > drop) q.col(rank++) = v / norm;
    }
    return q.leftCols(rank);
}

double cov_action_span_check(const ParticleEnsemble& e, const Vector& b) {
    const Vector v = cov_xx_apply(e, b);
    const double vnorm = v.norm();
    if (vnorm == 0.0) return 0.0;
    const Matrix q = deviation_basis(e);
    if (q.cols() == 0) return 0.0;  // zero-deviation ensemble
    const Vector residual = v - q * (q.transpose() * v);
    return residual.norm() / vnorm;
}

}  // namespace freemcg
