// Shared fixtures and independent oracles used across test suites.
#pragma once

#include "freemcg/diffusion.hpp"
#include "freemcg/enkf.hpp"
#include "freemcg/models.hpp"
#include "freemcg/rng.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace freemcg::testing {

// Central finite-difference Jacobian, the reference every analytic Jacobian
// is checked against.
inline Matrix fd_jacobian(const BlackBoxClassifier& m, const Vector& x, double h = 1e-4) {
    Matrix j(m.dim_out(), m.dim_in());
    for (int i = 0; i < m.dim_in(); ++i) {
        Vector hi = x;
        Vector lo = x;
        hi[i] += h;
        lo[i] -= h;
        j.col(i) = (m.eval(hi) - m.eval(lo)) / (2.0 * h);
    }
    return j;
}

// Central finite differences of log softmax(f(x))_c.
inline Vector fd_log_prob_gradient(const BlackBoxClassifier& m, const Vector& x, int c,
                                   double h = 1e-4) {
    const auto log_prob = [&m, c](const Vector& p) {
        const Vector f = m.eval(p);
        const double mx = f.maxCoeff();
        return f[c] - mx - std::log((f.array() - mx).exp().sum());
    };
    Vector g(x.size());
    for (int i = 0; i < x.size(); ++i) {
        Vector hi = x;
        Vector lo = x;
        hi[i] += h;
        lo[i] -= h;
        g[i] = (log_prob(hi) - log_prob(lo)) / (2.0 * h);
    }
    return g;
}

// Textbook two-pass covariance with 1/K normalization, independent of the
// streaming implementation under test.
inline Matrix two_pass_cov(const Matrix& a, const Matrix& b) {
    const Vector ma = a.colwise().mean();
    const Vector mb = b.colwise().mean();
    Matrix c = Matrix::Zero(a.cols(), b.cols());
    for (Eigen::Index k = 0; k < a.rows(); ++k)
        c += (a.row(k).transpose() - ma) * (b.row(k) - mb.transpose());
    return c / static_cast<double>(a.rows());
}

inline LinearSoftmax random_linear(int n, int d, RngStream& rng) {
    Matrix w(n, d);
    Vector b(n);
    for (int i = 0; i < n; ++i) {
        b[i] = rng.gaussian();
        for (int j = 0; j < d; ++j) w(i, j) = rng.gaussian();
    }
    return LinearSoftmax(w, b);
}

// Gaussian particles with unrelated gaussian logits; for statistics tests
// that do not involve a classifier.
inline ParticleEnsemble random_ensemble(int K, int d, int n, RngStream& rng,
                                        double scale = 1.0) {
    ParticleEnsemble e;
    e.particles.resize(K, d);
    e.logits.resize(K, n);
    for (int k = 0; k < K; ++k) {
        e.particles.row(k) = (scale * rng.gaussian_vector(d)).transpose();
        e.logits.row(k) = rng.gaussian_vector(n).transpose();
    }
    return e;
}

inline ParticleEnsemble random_ensemble(const BlackBoxClassifier& m, int K, RngStream& rng,
                                        double scale = 1.0) {
    ParticleEnsemble e;
    e.particles.resize(K, m.dim_in());
    e.logits.resize(K, m.dim_out());
    for (int k = 0; k < K; ++k) {
        e.particles.row(k) = (scale * rng.gaussian_vector(m.dim_in())).transpose();
        e.logits.row(k) = m.eval(e.particles.row(k).transpose()).transpose();
    }
    return e;
}

// Brute-force posterior mean E[x0 | u] over a tensor grid covering the prior
// support (2-D only). Independent of the closed-form code under test.
inline Vector quadrature_posterior_mean(const Vector& u, double sigma2,
                                        const GaussianMixturePrior& prior,
                                        double spacing = 0.01) {
    double lo[2], hi[2];
    for (int i = 0; i < 2; ++i) {
        lo[i] = 1e300;
        hi[i] = -1e300;
        for (size_t j = 0; j < prior.means.size(); ++j) {
            const double std6 = 6.0 * std::sqrt(prior.covs[j](i, i));
            lo[i] = std::min(lo[i], prior.means[j][i] - std6);
            hi[i] = std::max(hi[i], prior.means[j][i] + std6);
        }
    }
    double wsum = 0.0;
    Vector acc = Vector::Zero(2);
    Vector x(2);
    for (double a = lo[0]; a <= hi[0]; a += spacing) {
        for (double b = lo[1]; b <= hi[1]; b += spacing) {
            x << a, b;
            const double w =
                std::exp(prior.log_density(x) - (u - x).squaredNorm() / (2.0 * sigma2));
            wsum += w;
            acc += w * x;
        }
    }
    return acc / wsum;
}

// 16x16 blob-position task: class 0 puts a gaussian blob in the upper left,
// class 1 in the lower right, and the linear model matches the templates.
// The input carries the class-0 blob over zero-mean background noise, so
// removing blob pixels genuinely destroys the class evidence.
struct BlobTask {
    static constexpr int kSide = 16;
    Matrix templates;  // 2 x 256
    LinearSoftmax model;
    Vector input;

    explicit BlobTask(uint64_t seed = 1234)
        : templates(make_templates()),
          model(templates, Vector::Zero(2)),
          input(make_input(templates, seed)) {}

    static Matrix make_templates() {
        Matrix w = Matrix::Zero(2, kSide * kSide);
        const double centers[2][2] = {{4.0, 4.0}, {11.0, 11.0}};
        for (int cls = 0; cls < 2; ++cls)
            for (int r = 0; r < kSide; ++r)
                for (int c = 0; c < kSide; ++c) {
                    const double dr = r - centers[cls][0];
                    const double dc = c - centers[cls][1];
                    w(cls, r * kSide + c) = std::exp(-(dr * dr + dc * dc) / 8.0);
                }
        return w;
    }

    static Vector make_input(const Matrix& templates, uint64_t seed) {
        RngStream rng(seed);
        Vector x = 0.6 * templates.row(0).transpose();
        for (int i = 0; i < x.size(); ++i) x[i] += 0.1 * rng.gaussian();
        return x;
    }
};

// Black-box wrapper hiding the analytic Jacobian of an oracle classifier.
class OpaqueModel final : public BlackBoxClassifier {
   public:
    explicit OpaqueModel(const BlackBoxClassifier& inner) : inner_(inner) {}
    int dim_in() const override { return inner_.dim_in(); }
    int dim_out() const override { return inner_.dim_out(); }
    Vector eval(const Vector& x) const override { return inner_.eval(x); }

   private:
    const BlackBoxClassifier& inner_;
};

}  // namespace freemcg::testing
