#include "freemcg/attribution.hpp"

#include "freemcg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace freemcg {

namespace {

std::vector<int> resolve_layout(const std::vector<int>& layout, Eigen::Index dim) {
    std::vector<int> shape = layout.empty() ? std::vector<int>{static_cast<int>(dim)} : layout;
    if (shape.size() > 3) throw NumericError("layout rank must be 1, 2, or 3");
    long long prod = 1;
    for (int s : shape) {
        if (s < 1) throw NumericError("layout dimensions must be positive");
        prod *= s;
    }
    if (prod != static_cast<long long>(dim))
        throw NumericError("layout does not match vector length " + std::to_string(dim));
    return shape;
}

// Gradient of the attribution target at y, via Jacobian or central FD.
Vector target_gradient(const BlackBoxClassifier& m, const Vector& y, int c, IgTarget target) {
    const auto* oracle = dynamic_cast<const OracleClassifier*>(&m);
    if (oracle) {
        if (target == IgTarget::kLogit) return oracle->jacobian(y).row(c).transpose();
        return oracle_log_prob_gradient(oracle->jacobian(y), softmax(m.eval(y)), c);
    }
    const double h = 1e-4;
    auto value = [&](const Vector& z) {
        if (target == IgTarget::kLogit) return m.eval(z)[c];
        return std::log(softmax(m.eval(z))[c]);
    };
    Vector g(y.size());
    Vector z = y;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        z[i] = y[i] + h;
        const double up = value(z);
        z[i] = y[i] - h;
        const double down = value(z);
        z[i] = y[i];
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

ParticleEnsemble make_ensemble(const BlackBoxClassifier& m, const Denoiser& den,
                               const NoiseSchedule& s, const Vector& x,
                               const std::vector<int>& particle_t, std::uint64_t seed) {
    const int k_total = static_cast<int>(particle_t.size());
    ParticleEnsemble e;
    e.particles.resize(k_total, x.size());
    e.logits.resize(k_total, m.dim_out());
    for (int k = 0; k < k_total; ++k) {
        const int t = particle_t[k];
        RngStream rng = RngStream::derive(seed, "attr/forward", k, t);
        const Vector noisy = forward_diffuse(x, t, s, rng);
        const Vector denoised = den.denoise(noisy, t, s);
        e.particles.row(k) = denoised.transpose();
        e.logits.row(k) = m.eval(denoised).transpose();
    }
    return e;
}

bool ensemble_degenerate(const ParticleEnsemble& e) {
    const Vector mean_x = e.particles.colwise().mean().transpose();
    const double spread = (e.particles.rowwise() - mean_x.transpose()).cwiseAbs().maxCoeff();
    return spread <= 1e-14 * std::max(1.0, mean_x.cwiseAbs().maxCoeff());
}

}  // namespace

AttributionMap postprocess(const Vector& raw, const std::vector<int>& layout) {
    std::vector<int> shape = resolve_layout(layout, raw.size());
    AttributionMap map;
    map.raw_gradient = raw;
    if (shape.size() == 3) {
        const int channels = shape[0];
        const int pixels = shape[1] * shape[2];
        Eigen::ArrayXd mean = Eigen::ArrayXd::Zero(pixels);
        for (int c = 0; c < channels; ++c)
            mean += raw.segment(static_cast<Eigen::Index>(c) * pixels, pixels).array();
        map.values = (mean / channels).abs();
        map.shape = {shape[1], shape[2]};
    } else {
        map.values = raw.array().abs();
        map.shape = shape;
    }
    return map;
}

AttributionMap attribute(const BlackBoxClassifier& m, const Denoiser& den, const NoiseSchedule& s,
                         const Vector& x, const AttributionConfig& cfg) {
    if (!x.allFinite()) throw NumericError("attribute: non-finite input");
    if (x.size() != m.dim_in()) throw NumericError("attribute: input dimension mismatch");
    if (cfg.timesteps.empty()) throw NumericError("attribute: no timesteps configured");
    if (cfg.particles_per_t < 2) throw NumericError("attribute: need at least 2 particles");
    for (int t : cfg.timesteps) s.check_timestep(t);

    const Vector p = softmax(m.eval(x));
    const int target = cfg.target_class.value_or(predict(m, x));
    if (target < 0 || target >= m.dim_out())
        throw NumericError("attribute: target class out of range");

    // Sanity on the weight's sign structure when explaining the prediction.
    const Vector w = direction_weight(target, p);
    if (!cfg.target_class.has_value() || target == predict(m, x)) {
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            const bool ok = (i == target) ? (w[i] > 0.0) : (w[i] <= 0.0);
            if (!ok) throw NumericError("attribute: direction weight lost its sign structure");
        }
    }

    Vector raw = Vector::Zero(x.size());
    bool all_degenerate = true;

    if (cfg.random_t) {
        const auto [lo_it, hi_it] = std::minmax_element(cfg.timesteps.begin(), cfg.timesteps.end());
        const int k_total = cfg.particles_per_t * static_cast<int>(cfg.timesteps.size());
        RngStream t_rng = RngStream::derive(cfg.seed, "attr/timesteps");
        std::vector<int> particle_t(k_total);
        for (int& t : particle_t)
            t = static_cast<int>(t_rng.uniform_int(*lo_it, *hi_it));
        ParticleEnsemble e = make_ensemble(m, den, s, x, particle_t, cfg.seed);
        if (!ensemble_degenerate(e)) {
            raw = freemcg_gradient(e, target, p);
            all_degenerate = false;
        }
    } else {
        for (std::size_t i = 0; i < cfg.timesteps.size(); ++i) {
            std::vector<int> particle_t(cfg.particles_per_t, cfg.timesteps[i]);
            ParticleEnsemble e = make_ensemble(m, den, s, x, particle_t, cfg.seed);
            if (ensemble_degenerate(e)) continue;
            raw += freemcg_gradient(e, target, p);
            all_degenerate = false;
        }
        raw /= static_cast<double>(cfg.timesteps.size());
    }

    AttributionMap map = postprocess(all_degenerate ? Vector::Zero(x.size()).eval() : raw,
                                     cfg.layout);
    map.degenerate = all_degenerate;
    return map;
}

AttributionMap baseline_vanilla_gradient(const OracleClassifier& m, const Vector& x, int c,
                                         const std::vector<int>& layout) {
    const Vector g = oracle_log_prob_gradient(m.jacobian(x), softmax(m.eval(x)), c);
    return postprocess(g, layout);
}

AttributionMap baseline_input_x_gradient(const OracleClassifier& m, const Vector& x, int c,
                                         const std::vector<int>& layout) {
    const Vector g = oracle_log_prob_gradient(m.jacobian(x), softmax(m.eval(x)), c);
    return postprocess(x.cwiseProduct(g), layout);
}

AttributionMap baseline_integrated_gradients(const BlackBoxClassifier& m, const Vector& x, int c,
                                             int steps, const Vector& baseline,
                                             const std::vector<int>& layout, IgTarget target) {
    if (steps < 8) throw NumericError("integrated gradients: need at least 8 steps");
    if (baseline.size() != x.size())
        throw NumericError("integrated gradients: baseline length mismatch");
    Vector avg = Vector::Zero(x.size());
    for (int i = 0; i < steps; ++i) {
        const double frac = (i + 0.5) / steps;
        avg += target_gradient(m, baseline + frac * (x - baseline), c, target);
    }
    avg /= steps;
    return postprocess((x - baseline).cwiseProduct(avg), layout);
}

}  // namespace freemcg
