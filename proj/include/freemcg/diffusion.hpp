#pragma once

#include "freemcg/models.hpp"
#include "freemcg/rng.hpp"

#include <Eigen/Core>

#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

namespace freemcg {

/// Discrete variance-preserving diffusion timeline. Timesteps index the
/// arrays directly: t in [0, T), with alpha_bar[t] = prod_{s<=t} (1 - beta_s).
/// sigma[t] = sqrt((1 - alpha_bar[t]) / alpha_bar[t]) is the noise scale of
/// the rescaled observation x_t / sqrt(alpha_bar[t]), and tilde_beta[t] is
/// the posterior std between adjacent levels (tilde_beta[0] = 0).
struct NoiseSchedule {
    Eigen::ArrayXd beta;
    Eigen::ArrayXd alpha_bar;
    Eigen::ArrayXd sigma;
    Eigen::ArrayXd tilde_beta;

    int steps() const { return static_cast<int>(beta.size()); }
    void check_timestep(int t) const;
};

/// Linear beta schedule. Defaults: T=1000, beta in [1e-4, 0.02].
NoiseSchedule make_schedule(int T = 1000, double beta_min = 1e-4, double beta_max = 0.02);

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, eps ~ N(0, I).
Vector forward_diffuse(const Vector& x0, int t, const NoiseSchedule& s, RngStream& rng);

/// Posterior-mean map (x_t, t) -> E[x0 | x_t]. Calls are pure and may run in
/// parallel across particles.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual Vector denoise(const Vector& x_t, int t, const NoiseSchedule& s) const = 0;

    /// eps_hat = (x_t - sqrt(alpha_bar_t) x0_hat) / sqrt(1 - alpha_bar_t).
    Vector implied_eps(const Vector& x_t, int t, const NoiseSchedule& s) const;
};

struct GaussianMixturePrior {
    std::vector<double> weights;   // nonnegative, sum 1
    std::vector<Vector> means;     // J vectors in R^d
    std::vector<Matrix> covs;      // J symmetric PSD d x d matrices

    int dim() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }
    int components() const { return static_cast<int>(weights.size()); }
    void validate() const;

    double log_density(const Vector& x) const;
    Vector sample(RngStream& rng) const;
};

/// Exact posterior mean under a Gaussian mixture prior: with the rescaled
/// observation u = x_t / sqrt(alpha_bar_t) and noise sigma_t^2, returns
/// sum_j r_j(u) [mu_j + Sigma_j (Sigma_j + sigma_t^2 I)^{-1} (u - mu_j)]
/// with posterior responsibilities r_j under N(u; mu_j, Sigma_j + sigma^2 I).
Vector gmm_denoise(const Vector& x_t, int t, const GaussianMixturePrior& prior,
                   const NoiseSchedule& s);

/// Affine subspace x = origin + basis z with z ~ N(0, latent_cov); the
/// orthonormal basis columns span the tangent space used by span tests.
struct AffineSubspacePrior {
    Vector origin;      // d
    Matrix basis;       // d x m, orthonormal columns
    Matrix latent_cov;  // m x m PSD

    int dim() const { return static_cast<int>(origin.size()); }
    int latent_dim() const { return static_cast<int>(basis.cols()); }
    void validate() const;
};

/// Posterior mean under the subspace prior:
/// origin + B Lambda (Lambda + sigma^2 I)^{-1} B^T (u - origin).
/// The output always lies in the affine subspace; as latent_cov grows it
/// tends to the orthogonal projection origin + B B^T (u - origin).
Vector subspace_denoise(const Vector& x_t, int t, const AffineSubspacePrior& prior,
                        const NoiseSchedule& s);

class GmmDenoiser final : public Denoiser {
public:
    explicit GmmDenoiser(GaussianMixturePrior prior);
    Vector denoise(const Vector& x_t, int t, const NoiseSchedule& s) const override;
    const GaussianMixturePrior& prior() const { return prior_; }

private:
    struct Level;  // per-timestep factorizations, built lazily
    const Level& level_for(int t, const NoiseSchedule& s) const;

    GaussianMixturePrior prior_;
    mutable std::unordered_map<int, std::shared_ptr<const Level>> cache_;
    mutable std::mutex cache_mutex_;
};

class SubspaceDenoiser final : public Denoiser {
public:
    explicit SubspaceDenoiser(AffineSubspacePrior prior);
    Vector denoise(const Vector& x_t, int t, const NoiseSchedule& s) const override;
    const AffineSubspacePrior& prior() const { return prior_; }

private:
    AffineSubspacePrior prior_;
};

/// Guided DDIM parameters. gamma defaults to sqrt(alpha_bar_t *
/// alpha_bar_prev) per step; a per-timestep override array (length T) may be
/// supplied instead.
struct DdimParams {
    double eta = 0.0;
    Eigen::ArrayXd gamma;  // empty = derived default

    double gamma_at(int t, int t_prev, const NoiseSchedule& s) const;
};

/// Sentinel target level for ddim_step: the clean-data terminus with
/// alpha_bar = 1 (and hence tilde_beta = 0).
inline constexpr int kCleanLevel = -1;

/// One guided DDIM update from level t to level t_prev (t_prev < t, or
/// kCleanLevel):
///   x_prev = sqrt(abar_prev) x0_hat
///          + sqrt(1 - abar_prev - eta^2 tb^2) eps_hat
///          + eta tb eps + gamma_t g,
/// with tb the posterior std between the two levels. Deterministic given the
/// stream state.
Vector ddim_step(const Vector& x_t, const Vector& x0_hat, const Vector& eps_hat, int t,
                 int t_prev, const NoiseSchedule& s, const DdimParams& p, const Vector& guidance,
                 RngStream& rng);

/// Uniformly spaced reverse-diffusion grid: n_steps state updates from level
/// t_start down through level 0 and a final hop to kCleanLevel. Returns the
/// n_steps target levels in order.
std::vector<int> ddim_subgrid(int t_start, int n_steps);

/// Prior parameter file (JSON; see docs/file_formats.md).
struct PriorFile {
    std::variant<GaussianMixturePrior, AffineSubspacePrior> prior;

    std::unique_ptr<Denoiser> make_denoiser() const;
    const GaussianMixturePrior* as_gmm() const {
        return std::get_if<GaussianMixturePrior>(&prior);
    }
    const AffineSubspacePrior* as_subspace() const {
        return std::get_if<AffineSubspacePrior>(&prior);
    }
};

PriorFile load_prior(const std::string& path);
void save_prior(const PriorFile& prior, const std::string& path);

/// Hook for file-backed tabulated denoisers. No implementations ship;
/// loading always fails with IoError for now.
std::unique_ptr<Denoiser> load_tabulated_denoiser(const std::string& path);

}  // namespace freemcg
