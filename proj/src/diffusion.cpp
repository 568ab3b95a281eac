#include "freemcg/diffusion.hpp"

#include "freemcg/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <utility>

namespace freemcg {

namespace {

constexpr double kPi = 3.14159265358979323846;

Vector json_flat_vector(const nlohmann::json& arr, int expected, const char* what) {
    if (!arr.is_array() || static_cast<int>(arr.size()) != expected)
        throw IoError(std::string(what) + ": expected array of length " + std::to_string(expected));
    Vector v(expected);
    for (int i = 0; i < expected; ++i) v[i] = arr[i].get<double>();
    return v;
}

Matrix json_flat_matrix(const nlohmann::json& arr, int rows, int cols, const char* what) {
    Vector flat = json_flat_vector(arr, rows * cols, what);
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = flat[r * cols + c];
    return m;
}

nlohmann::json flat_json(const Matrix& m) {
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) arr.push_back(m(r, c));
    return arr;
}

double alpha_bar_at(const NoiseSchedule& s, int level) {
    if (level == kCleanLevel) return 1.0;
    s.check_timestep(level);
    return s.alpha_bar[level];
}

// Posterior std between levels t and t_prev (t_prev may be kCleanLevel).
double tilde_beta_between(const NoiseSchedule& s, int t, int t_prev) {
    const double at = alpha_bar_at(s, t);
    const double ap = alpha_bar_at(s, t_prev);
    const double v = (1.0 - ap) / (1.0 - at) * (1.0 - at / ap);
    return std::sqrt(std::max(v, 0.0));
}

}  // namespace

void NoiseSchedule::check_timestep(int t) const {
    if (t < 0 || t >= steps())
        throw NumericError("timestep " + std::to_string(t) + " outside [0, " +
                           std::to_string(steps()) + ")");
}

NoiseSchedule make_schedule(int T, double beta_min, double beta_max) {
    if (T < 2) throw NumericError("make_schedule: T must be >= 2");
    if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0))
        throw NumericError("make_schedule: need 0 < beta_min <= beta_max < 1");

    NoiseSchedule s;
    s.beta.resize(T);
    s.alpha_bar.resize(T);
    s.sigma.resize(T);
    s.tilde_beta.resize(T);

    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        s.beta[t] = beta_min + (beta_max - beta_min) * static_cast<double>(t) / (T - 1);
        prod *= 1.0 - s.beta[t];
        s.alpha_bar[t] = prod;
        s.sigma[t] = std::sqrt((1.0 - prod) / prod);
    }
    s.tilde_beta[0] = 0.0;
    for (int t = 1; t < T; ++t) s.tilde_beta[t] = tilde_beta_between(s, t, t - 1);
    return s;
}

Vector forward_diffuse(const Vector& x0, int t, const NoiseSchedule& s, RngStream& rng) {
    s.check_timestep(t);
    const double ab = s.alpha_bar[t];
    return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * rng.gaussian_vector(static_cast<int>(x0.size()));
}

Vector Denoiser::implied_eps(const Vector& x_t, int t, const NoiseSchedule& s) const {
    const double ab = s.alpha_bar[t];
    return (x_t - std::sqrt(ab) * denoise(x_t, t, s)) / std::sqrt(1.0 - ab);
}

void GaussianMixturePrior::validate() const {
    if (weights.empty() || means.size() != weights.size() || covs.size() != weights.size())
        throw NumericError("GaussianMixturePrior: component counts disagree");
    double sum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw NumericError("GaussianMixturePrior: negative weight");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw NumericError("GaussianMixturePrior: weights must sum to 1");
    const int d = dim();
    for (const auto& mu : means)
        if (mu.size() != d) throw NumericError("GaussianMixturePrior: mean dimension mismatch");
    for (const auto& c : covs) {
        if (c.rows() != d || c.cols() != d)
            throw NumericError("GaussianMixturePrior: covariance shape mismatch");
        if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-12)
            throw NumericError("GaussianMixturePrior: covariance not symmetric");
    }
}

double GaussianMixturePrior::log_density(const Vector& x) const {
    const int d = dim();
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> logs(components());
    for (int j = 0; j < components(); ++j) {
        Eigen::LLT<Matrix> llt(covs[j]);
        if (llt.info() != Eigen::Success)
            throw NumericError("GaussianMixturePrior::log_density: singular component covariance");
        const Vector diff = x - means[j];
        const Vector y = llt.matrixL().solve(diff);
        double logdet = 0.0;
        for (int i = 0; i < d; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
        logs[j] = std::log(weights[j]) - 0.5 * (y.squaredNorm() + logdet + d * std::log(2.0 * kPi));
        best = std::max(best, logs[j]);
    }
    double acc = 0.0;
    for (double l : logs) acc += std::exp(l - best);
    return best + std::log(acc);
}

Vector GaussianMixturePrior::sample(RngStream& rng) const {
    const double u = rng.uniform();
    double cum = 0.0;
    int j = components() - 1;
    for (int i = 0; i < components(); ++i) {
        cum += weights[i];
        if (u < cum) {
            j = i;
            break;
        }
    }
    Eigen::LLT<Matrix> llt(covs[j]);
    return means[j] + llt.matrixL() * rng.gaussian_vector(dim());
}

namespace {

struct GmmPosteriorTerm {
    Matrix shrink;          // Sigma (Sigma + s2 I)^{-1}
    Eigen::LLT<Matrix> llt; // of Sigma + s2 I
    double log_norm;        // log w_j - (logdet + d log 2pi)/2
};

std::vector<GmmPosteriorTerm> build_terms(const GaussianMixturePrior& prior, double sigma2) {
    const int d = prior.dim();
    std::vector<GmmPosteriorTerm> terms;
    terms.reserve(prior.components());
    for (int j = 0; j < prior.components(); ++j) {
        GmmPosteriorTerm term;
        Matrix a = prior.covs[j] + sigma2 * Matrix::Identity(d, d);
        term.llt.compute(a);
        if (term.llt.info() != Eigen::Success)
            throw NumericError("gmm_denoise: marginal covariance not positive definite");
        term.shrink = term.llt.solve(prior.covs[j]).transpose();  // Sigma A^{-1}, symmetric product
        double logdet = 0.0;
        for (int i = 0; i < d; ++i) logdet += 2.0 * std::log(term.llt.matrixL()(i, i));
        term.log_norm = std::log(std::max(prior.weights[j], 1e-300)) -
                        0.5 * (logdet + d * std::log(2.0 * kPi));
        terms.push_back(std::move(term));
    }
    return terms;
}

Vector gmm_posterior_mean(const Vector& u, const GaussianMixturePrior& prior,
                          const std::vector<GmmPosteriorTerm>& terms) {
    const int J = prior.components();
    std::vector<double> logr(J);
    double best = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < J; ++j) {
        const Vector diff = u - prior.means[j];
        const Vector y = terms[j].llt.matrixL().solve(diff);
        logr[j] = terms[j].log_norm - 0.5 * y.squaredNorm();
        best = std::max(best, logr[j]);
    }
    double z = 0.0;
    for (int j = 0; j < J; ++j) {
        logr[j] = std::exp(logr[j] - best);
        z += logr[j];
    }
    Vector out = Vector::Zero(u.size());
    for (int j = 0; j < J; ++j) {
        const double r = logr[j] / z;
        out += r * (prior.means[j] + terms[j].shrink * (u - prior.means[j]));
    }
    return out;
}

}  // namespace

Vector gmm_denoise(const Vector& x_t, int t, const GaussianMixturePrior& prior,
                   const NoiseSchedule& s) {
    s.check_timestep(t);
    prior.validate();
    if (!x_t.allFinite()) throw NumericError("gmm_denoise: non-finite input");
    if (x_t.size() != prior.dim()) throw NumericError("gmm_denoise: dimension mismatch");
    const Vector u = x_t / std::sqrt(s.alpha_bar[t]);
    const double sigma2 = s.sigma[t] * s.sigma[t];
    return gmm_posterior_mean(u, prior, build_terms(prior, sigma2));
}

void AffineSubspacePrior::validate() const {
    const int m = latent_dim();
    if (m < 1 || m >= dim()) throw NumericError("AffineSubspacePrior: need 0 < m < d");
    if (basis.rows() != dim()) throw NumericError("AffineSubspacePrior: basis rows must equal dim");
    if (latent_cov.rows() != m || latent_cov.cols() != m)
        throw NumericError("AffineSubspacePrior: latent covariance must be m x m");
    Matrix gram = basis.transpose() * basis;
    if ((gram - Matrix::Identity(m, m)).cwiseAbs().maxCoeff() > 1e-10)
        throw NumericError("AffineSubspacePrior: basis columns must be orthonormal");
}

Vector subspace_denoise(const Vector& x_t, int t, const AffineSubspacePrior& prior,
                        const NoiseSchedule& s) {
    s.check_timestep(t);
    prior.validate();
    if (x_t.size() != prior.dim()) throw NumericError("subspace_denoise: dimension mismatch");
    const Vector u = x_t / std::sqrt(s.alpha_bar[t]);
    const double sigma2 = s.sigma[t] * s.sigma[t];
    const int m = prior.latent_dim();
    Matrix a = prior.latent_cov + sigma2 * Matrix::Identity(m, m);
    const Vector z = prior.basis.transpose() * (u - prior.origin);
    const Vector shrunk = a.ldlt().solve(prior.latent_cov.transpose() * z);
    return prior.origin + prior.basis * shrunk;
}

struct GmmDenoiser::Level {
    std::vector<GmmPosteriorTerm> terms;
};

GmmDenoiser::GmmDenoiser(GaussianMixturePrior prior) : prior_(std::move(prior)) {
    prior_.validate();
}

const GmmDenoiser::Level& GmmDenoiser::level_for(int t, const NoiseSchedule& s) const {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    auto it = cache_.find(t);
    if (it == cache_.end()) {
        auto level = std::make_shared<Level>();
        level->terms = build_terms(prior_, s.sigma[t] * s.sigma[t]);
        it = cache_.emplace(t, std::move(level)).first;
    }
    return *it->second;
}

Vector GmmDenoiser::denoise(const Vector& x_t, int t, const NoiseSchedule& s) const {
    s.check_timestep(t);
    if (!x_t.allFinite()) throw NumericError("GmmDenoiser: non-finite input");
    const Vector u = x_t / std::sqrt(s.alpha_bar[t]);
    return gmm_posterior_mean(u, prior_, level_for(t, s).terms);
}

SubspaceDenoiser::SubspaceDenoiser(AffineSubspacePrior prior) : prior_(std::move(prior)) {
    prior_.validate();
}

Vector SubspaceDenoiser::denoise(const Vector& x_t, int t, const NoiseSchedule& s) const {
    return subspace_denoise(x_t, t, prior_, s);
}

double DdimParams::gamma_at(int t, int t_prev, const NoiseSchedule& s) const {
    if (gamma.size() > 0) {
        s.check_timestep(t);
        if (gamma.size() != s.alpha_bar.size())
            throw NumericError("DdimParams: gamma override must have length T");
        return gamma[t];
    }
    return std::sqrt(alpha_bar_at(s, t) * alpha_bar_at(s, t_prev));
}

Vector ddim_step(const Vector& x_t, const Vector& x0_hat, const Vector& eps_hat, int t,
                 int t_prev, const NoiseSchedule& s, const DdimParams& p, const Vector& guidance,
                 RngStream& rng) {
    s.check_timestep(t);
    if (t_prev != kCleanLevel && (t_prev < 0 || t_prev >= t))
        throw NumericError("ddim_step: t_prev must be in [0, t) or kCleanLevel");
    if (p.eta < 0.0 || p.eta > 1.0) throw NumericError("ddim_step: eta must lie in [0, 1]");

    const double ap = alpha_bar_at(s, t_prev);
    const double tb = tilde_beta_between(s, t, t_prev);
    const double radicand = 1.0 - ap - p.eta * p.eta * tb * tb;
    if (radicand < -1e-12)
        throw NumericError("ddim_step: eta^2 tilde_beta^2 exceeds 1 - alpha_bar_prev");

    Vector out = std::sqrt(ap) * x0_hat + std::sqrt(std::max(radicand, 0.0)) * eps_hat;
    if (p.eta > 0.0 && tb > 0.0)
        out += p.eta * tb * rng.gaussian_vector(static_cast<int>(x_t.size()));
    out += p.gamma_at(t, t_prev, s) * guidance;
    return out;
}

std::vector<int> ddim_subgrid(int t_start, int n_steps) {
    if (t_start < 0) throw NumericError("ddim_subgrid: t_start must be >= 0");
    if (n_steps < 1) throw NumericError("ddim_subgrid: need at least one step");
    std::vector<int> targets;
    targets.reserve(n_steps);
    // n_steps - 1 targets spaced down to level 0, then the clean terminus.
    // Rounding collisions on short ranges are dropped, keeping the grid
    // strictly decreasing.
    for (int i = 1; i < n_steps; ++i) {
        double pos = t_start * (1.0 - static_cast<double>(i) / (n_steps - 1));
        int level = static_cast<int>(std::lround(pos));
        int prev = targets.empty() ? t_start : targets.back();
        if (level < prev) targets.push_back(level);
    }
    targets.push_back(kCleanLevel);
    return targets;
}

std::unique_ptr<Denoiser> PriorFile::make_denoiser() const {
    if (const auto* gmm = as_gmm()) return std::make_unique<GmmDenoiser>(*gmm);
    return std::make_unique<SubspaceDenoiser>(*as_subspace());
}

PriorFile load_prior(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open prior file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed prior JSON in " + path + ": " + e.what());
    }
    const std::string kind = j.value("kind", "");
    try {
        if (kind == "gmm") {
            const int d = j.at("dim").get<int>();
            const auto& w = j.at("weights");
            const int J = static_cast<int>(w.size());
            GaussianMixturePrior prior;
            for (int i = 0; i < J; ++i) prior.weights.push_back(w[i].get<double>());
            Matrix means = json_flat_matrix(j.at("means"), J, d, "means");
            Matrix covs = json_flat_matrix(j.at("covariances"), J * d, d, "covariances");
            for (int i = 0; i < J; ++i) {
                prior.means.push_back(means.row(i).transpose());
                prior.covs.push_back(covs.block(i * d, 0, d, d));
            }
            prior.validate();
            return PriorFile{std::move(prior)};
        }
        if (kind == "subspace") {
            const int d = j.at("dim").get<int>();
            const int m = j.at("latent_dim").get<int>();
            AffineSubspacePrior prior;
            prior.origin = json_flat_vector(j.at("origin"), d, "origin");
            prior.basis = json_flat_matrix(j.at("basis"), d, m, "basis");
            prior.latent_cov = json_flat_matrix(j.at("latent_cov"), m, m, "latent_cov");
            prior.validate();
            return PriorFile{std::move(prior)};
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad prior file " + path + ": " + e.what());
    }
    throw IoError("unknown prior kind: '" + kind + "'");
}

void save_prior(const PriorFile& file, const std::string& path) {
    nlohmann::json j;
    if (const auto* gmm = file.as_gmm()) {
        const int d = gmm->dim();
        j["kind"] = "gmm";
        j["dim"] = d;
        j["weights"] = gmm->weights;
        Matrix means(gmm->components(), d);
        Matrix covs(gmm->components() * d, d);
        for (int i = 0; i < gmm->components(); ++i) {
            means.row(i) = gmm->means[i].transpose();
            covs.block(i * d, 0, d, d) = gmm->covs[i];
        }
        j["means"] = flat_json(means);
        j["covariances"] = flat_json(covs);
    } else {
        const auto* sub = file.as_subspace();
        j["kind"] = "subspace";
        j["dim"] = sub->dim();
        j["latent_dim"] = sub->latent_dim();
        j["origin"] = flat_json(sub->origin);
        j["basis"] = flat_json(sub->basis);
        j["latent_cov"] = flat_json(sub->latent_cov);
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write prior file: " + path);
    out << j.dump(2) << "\n";
}

std::unique_ptr<Denoiser> load_tabulated_denoiser(const std::string& path) {
    throw IoError("tabulated denoiser files are not supported yet: " + path);
}

}  // namespace freemcg
