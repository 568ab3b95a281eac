#include "freemcg/counterfactual.hpp"

#include "freemcg/enkf.hpp"
#include "freemcg/errors.hpp"

#include <cmath>

namespace freemcg {

namespace {

double divergence_limit(const Vector& x) { return 1e3 * std::max(x.norm(), 1.0); }

void check_divergence(const Vector& iterate, double limit) {
    if (!iterate.allFinite() || iterate.norm() > limit)
        throw DivergenceError("counterfactual iterate left the trust region");
}

}  // namespace

void CfConfig::validate(int dim_out, int schedule_steps) const {
    if (target_class < 0 || target_class >= dim_out)
        throw NumericError("CfConfig: target class out of range");
    if (alpha < 0.0 || beta < 0.0) throw NumericError("CfConfig: alpha and beta must be >= 0");
    if (t_start <= 0 || t_start >= schedule_steps)
        throw NumericError("CfConfig: t_start must lie in (0, T)");
    if (particles < 2) throw NumericError("CfConfig: need at least 2 particles");
    if (n_ddim_steps < 1) throw NumericError("CfConfig: need at least 1 DDIM step");
    if (iters < 0) throw NumericError("CfConfig: iters must be >= 0");
}

Vector normalize_gradient(const Vector& g) {
    const double norm = g.norm();
    if (norm <= 1e-12) return Vector::Zero(g.size());
    return g / norm;
}

CounterfactualResult ascent_cf(const BlackBoxClassifier& m, const Denoiser& den,
                               const NoiseSchedule& s, const Vector& x, const CfConfig& cfg) {
    cfg.validate(m.dim_out(), s.steps());
    if (x.size() != m.dim_in()) throw NumericError("ascent_cf: input dimension mismatch");
    const bool normalize = cfg.grad_norm.value_or(false);
    const double limit = divergence_limit(x);

    CounterfactualResult result;
    Vector xi = cfg.init_point.value_or(x);
    if (xi.size() != x.size()) throw NumericError("ascent_cf: init point dimension mismatch");
    result.trajectory.push_back(xi);

    for (int iter = 0; iter < cfg.iters; ++iter) {
        const Vector logits = m.eval(xi);
        const Vector p = softmax(logits);
        result.logit_history.push_back(logits);
        result.prob_history.push_back(p);
        result.weight_history.push_back(direction_weight(cfg.target_class, p));

        ParticleEnsemble e;
        e.particles.resize(cfg.particles, x.size());
        e.logits.resize(cfg.particles, m.dim_out());
        for (int k = 0; k < cfg.particles; ++k) {
            RngStream rng = RngStream::derive(cfg.seed, "ascent/forward", iter, k);
            const Vector denoised = den.denoise(forward_diffuse(xi, cfg.t_start, s, rng),
                                                cfg.t_start, s);
            e.particles.row(k) = denoised.transpose();
            e.logits.row(k) = m.eval(denoised).transpose();
        }

        Vector g = freemcg_gradient(e, cfg.target_class, p);
        if (normalize) g = normalize_gradient(g);
        xi = xi + cfg.alpha * g + cfg.beta * (x - xi);
        check_divergence(xi, limit);
        result.trajectory.push_back(xi);
    }

    result.x_cf = xi;
    result.l2 = (xi - x).norm();
    result.flipped = predict(m, xi) == cfg.target_class;
    return result;
}

CounterfactualResult reverse_diffusion_cf(const BlackBoxClassifier& m, const Denoiser& den,
                                          const NoiseSchedule& s, const Vector& x,
                                          const CfConfig& cfg) {
    cfg.validate(m.dim_out(), s.steps());
    if (x.size() != m.dim_in()) throw NumericError("reverse_diffusion_cf: input dimension mismatch");
    const bool normalize = cfg.grad_norm.value_or(true);
    const double limit = divergence_limit(x);
    const int K = cfg.particles;
    const Eigen::Index d = x.size();

    Matrix states(K, d);
    for (int k = 0; k < K; ++k) {
        RngStream rng = RngStream::derive(cfg.seed, "cf/forward", k);
        states.row(k) = forward_diffuse(x, cfg.t_start, s, rng).transpose();
    }

    CounterfactualResult result;
    result.trajectory.push_back(states.colwise().mean().transpose());

    const std::vector<int> targets = ddim_subgrid(cfg.t_start, cfg.n_ddim_steps);
    int t = cfg.t_start;
    int step_index = 0;
    for (int t_next : targets) {
        // Denoise all particles at the current level and cache logits.
        ParticleEnsemble e;
        e.particles.resize(K, d);
        e.logits.resize(K, m.dim_out());
        Matrix eps_hat(K, d);
        const double ab = s.alpha_bar[t];
        for (int k = 0; k < K; ++k) {
            const Vector x0_hat = den.denoise(states.row(k).transpose(), t, s);
            e.particles.row(k) = x0_hat.transpose();
            e.logits.row(k) = m.eval(x0_hat).transpose();
            eps_hat.row(k) =
                (states.row(k).transpose() - std::sqrt(ab) * x0_hat).transpose() /
                std::sqrt(1.0 - ab);
        }

        // One shared ensemble gradient; the ensemble-mean probability pairs
        // with it in the direction weight.
        Vector p_bar = Vector::Zero(m.dim_out());
        for (int k = 0; k < K; ++k) p_bar += softmax(e.logits.row(k).transpose());
        p_bar /= K;

        Vector g_free = freemcg_gradient(e, cfg.target_class, p_bar);
        if (normalize) g_free = normalize_gradient(g_free);

        result.logit_history.push_back(e.logits.colwise().mean().transpose());
        result.prob_history.push_back(p_bar);
        result.weight_history.push_back(direction_weight(cfg.target_class, p_bar));

        for (int k = 0; k < K; ++k) {
            const Vector guidance =
                cfg.alpha * g_free + cfg.beta * (x - e.particles.row(k).transpose());
            RngStream rng = RngStream::derive(cfg.seed, "cf/ddim", k, step_index);
            const Vector advanced =
                ddim_step(states.row(k).transpose(), e.particles.row(k).transpose(),
                          eps_hat.row(k).transpose(), t, t_next, s, cfg.ddim, guidance, rng);
            check_divergence(advanced, limit);
            states.row(k) = advanced.transpose();
        }

        result.trajectory.push_back(states.colwise().mean().transpose());
        t = t_next;
        ++step_index;
    }

    result.x_cf = states.colwise().mean().transpose();
    result.l2 = (result.x_cf - x).norm();
    result.flipped = predict(m, result.x_cf) == cfg.target_class;
    return result;
}

}  // namespace freemcg
