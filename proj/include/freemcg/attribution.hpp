#pragma once

#include "freemcg/diffusion.hpp"
#include "freemcg/enkf.hpp"
#include "freemcg/models.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace freemcg {

/// Defaults follow the standard recipe: seven timesteps 100..700 with 100
/// particles each. `layout` describes the input's spatial shape for channel
/// reduction; {C, H, W} averages over dim 0, rank-1/rank-2 shapes are kept
/// as-is. An empty layout means flat: {d}.
struct AttributionConfig {
    std::vector<int> timesteps = {100, 200, 300, 400, 500, 600, 700};
    int particles_per_t = 100;
    std::uint64_t seed = 0;
    std::optional<int> target_class;  // default: predicted class
    bool random_t = false;            // one ensemble, t drawn uniformly per particle
    std::vector<int> layout;
};

struct AttributionMap {
    Eigen::ArrayXd values;    // nonnegative, channel-reduced
    std::vector<int> shape;   // spatial layout of values
    Vector raw_gradient;      // signed per-coordinate gradient, full input dim
    bool degenerate = false;  // every ensemble collapsed to identical particles
};

/// Channel-mean then absolute value. Rank-3 layouts are {C, H, W}; lower
/// ranks take the absolute value element-wise.
AttributionMap postprocess(const Vector& raw, const std::vector<int>& layout);

/// Feature attribution: per timestep, forward-diffuse K particles, denoise
/// to posterior-mean estimates, evaluate logits, and form the ensemble
/// gradient with p = softmax(f(x)) and c the target class; the per-timestep
/// gradients are averaged uniformly. With random_t, a single ensemble is
/// used and each particle draws its timestep uniformly from the configured
/// range.
AttributionMap attribute(const BlackBoxClassifier& m, const Denoiser& den,
                         const NoiseSchedule& s, const Vector& x, const AttributionConfig& cfg);

/// |d/dx log softmax(f(x))_c| from the analytic Jacobian, postprocessed.
AttributionMap baseline_vanilla_gradient(const OracleClassifier& m, const Vector& x, int c,
                                         const std::vector<int>& layout);

/// |x * grad| element-wise, postprocessed.
AttributionMap baseline_input_x_gradient(const OracleClassifier& m, const Vector& x, int c,
                                         const std::vector<int>& layout);

enum class IgTarget { kLogit, kLogProb };

/// Integrated gradients along the straight path from `baseline` (default: a
/// zero vector), midpoint rule with `steps` panels. Uses the analytic
/// Jacobian when the classifier exposes one, central finite differences
/// otherwise. The signed values satisfy completeness against the target
/// function; raw_gradient holds them before postprocessing.
AttributionMap baseline_integrated_gradients(const BlackBoxClassifier& m, const Vector& x, int c,
                                             int steps, const Vector& baseline,
                                             const std::vector<int>& layout,
                                             IgTarget target = IgTarget::kLogit);

}  // namespace freemcg
