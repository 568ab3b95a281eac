#pragma once

#include "freemcg/diffusion.hpp"
#include "freemcg/models.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace freemcg {

/// Counterfactual generation settings. alpha scales the ensemble gradient,
/// beta the proximal pull back to the input; t_start is the forward
/// diffusion depth. grad_norm defaults to on for reverse diffusion and off
/// for direct ascent when unset.
struct CfConfig {
    int target_class = 0;
    double alpha = 0.2;
    double beta = 0.01;
    int t_start = 400;
    int particles = 100;
    DdimParams ddim;
    int n_ddim_steps = 100;
    int iters = 18;                     // ascent mode
    std::optional<bool> grad_norm;
    std::uint64_t seed = 0;
    std::optional<Vector> init_point;   // ascent mode; defaults to the input

    void validate(int dim_out, int schedule_steps) const;
};

struct CounterfactualResult {
    Vector x_cf;
    std::vector<Vector> trajectory;      // snapshots, first entry = start
    bool flipped = false;                // predict(x_cf) == target class
    double l2 = 0.0;                     // ||x_cf - x||
    std::vector<Vector> logit_history;   // per step
    std::vector<Vector> prob_history;    // p entering the direction weight
    std::vector<Vector> weight_history;  // e_target - p
};

/// g / ||g||_2, or zero when ||g||_2 <= 1e-12.
Vector normalize_gradient(const Vector& g);

/// Iterative ascent x_{i+1} = x_i + alpha g + beta (x - x_i), where g is the
/// ensemble gradient from K forward-diffused, denoised particles at t_start
/// with p = softmax(f(x_i)) and c the target class. Throws DivergenceError
/// when the iterate norm exceeds 1000x the input scale.
CounterfactualResult ascent_cf(const BlackBoxClassifier& m, const Denoiser& den,
                               const NoiseSchedule& s, const Vector& x, const CfConfig& cfg);

/// Reverse-diffusion counterfactual: forward-diffuse K particles to t_start,
/// then walk a uniform DDIM sub-grid down to clean data. Each step denoises
/// the particles, evaluates per-particle probabilities on the denoised
/// estimates, forms one shared ensemble gradient (weighted by the
/// ensemble-mean probability), and advances each particle with guidance
/// alpha g + beta (x - x0_hat_k). Returns the particle average.
CounterfactualResult reverse_diffusion_cf(const BlackBoxClassifier& m, const Denoiser& den,
                                          const NoiseSchedule& s, const Vector& x,
                                          const CfConfig& cfg);

}  // namespace freemcg
