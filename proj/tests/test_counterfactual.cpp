#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "freemcg/counterfactual.hpp"
#include "freemcg/errors.hpp"
#include "freemcg/rng.hpp"
#include "helpers.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

using namespace freemcg;

namespace {

// Two well-separated classes on the x-axis; an RBF head classifies by
// proximity to the component means.
struct TwoClassWorld {
    GaussianMixturePrior prior;
    RbfSoftmax model;
    NoiseSchedule schedule;

    TwoClassWorld()
        : prior(make_prior()),
          model(make_model()),
          schedule(make_schedule()) {}

    static GaussianMixturePrior make_prior() {
        GaussianMixturePrior p;
        p.weights = {0.5, 0.5};
        p.means = {Vector{{-2.0, 0.0}}, Vector{{2.0, 0.0}}};
        p.covs = {0.35 * Matrix::Identity(2, 2), 0.35 * Matrix::Identity(2, 2)};
        return p;
    }

    static RbfSoftmax make_model() {
        return RbfSoftmax(Matrix{{-2.0, 0.0}, {2.0, 0.0}}, 2.0);
    }
};

// Median prior log-density of samples that the model assigns to `cls`.
double class_log_density_median(const TwoClassWorld& w, int cls, uint64_t seed) {
    RngStream rng(seed);
    std::vector<double> vals;
    while (vals.size() < 200) {
        const Vector z = w.prior.sample(rng);
        if (predict(w.model, z) == cls) vals.push_back(w.prior.log_density(z));
    }
    std::nth_element(vals.begin(), vals.begin() + vals.size() / 2, vals.end());
    return vals[vals.size() / 2];
}

}  // namespace

TEST_CASE("gradient normalization") {
    Vector g(3);
    g << 3.0, 0.0, 4.0;
    CHECK((normalize_gradient(g) - Vector{{0.6, 0.0, 0.8}}).norm() <= 1e-15);
    CHECK(normalize_gradient(Vector::Zero(3)).norm() == 0.0);
    Vector tiny = Vector::Constant(3, 1e-14);
    CHECK(normalize_gradient(tiny).norm() == 0.0);
}

TEST_CASE("configuration validation catches bad settings") {
    CfConfig cfg;
    cfg.validate(2, 1000);  // the defaults are fine

    CfConfig bad = cfg;
    bad.target_class = 2;
    CHECK_THROWS_AS(bad.validate(2, 1000), NumericError);
    bad = cfg;
    bad.alpha = -0.1;
    CHECK_THROWS_AS(bad.validate(2, 1000), NumericError);
    bad = cfg;
    bad.beta = -1.0;
    CHECK_THROWS_AS(bad.validate(2, 1000), NumericError);
    bad = cfg;
    bad.t_start = 1000;
    CHECK_THROWS_AS(bad.validate(2, 1000), NumericError);
    bad = cfg;
    bad.t_start = 0;
    CHECK_THROWS_AS(bad.validate(2, 1000), NumericError);
    bad = cfg;
    bad.particles = 1;
    CHECK_THROWS_AS(bad.validate(2, 1000), NumericError);
    bad = cfg;
    bad.n_ddim_steps = 0;
    CHECK_THROWS_AS(bad.validate(2, 1000), NumericError);
    bad = cfg;
    bad.iters = -1;
    CHECK_THROWS_AS(bad.validate(2, 1000), NumericError);
}

TEST_CASE("ascent with zero step sizes stays put") {
    const TwoClassWorld w;
    const GmmDenoiser den(w.prior);
    CfConfig cfg;
    cfg.target_class = 1;
    cfg.alpha = 0.0;
    cfg.beta = 0.0;
    cfg.iters = 5;
    cfg.particles = 8;
    const Vector x{{-2.0, 0.1}};
    const CounterfactualResult r = ascent_cf(w.model, den, w.schedule, x, cfg);
    CHECK((r.x_cf - x).norm() == 0.0);
    CHECK(r.trajectory.size() == 6);
    CHECK(r.l2 == 0.0);
    CHECK_FALSE(r.flipped);
    CHECK(r.logit_history.size() == 5);
    CHECK(r.prob_history.size() == 5);
    CHECK(r.weight_history.size() == 5);
}

TEST_CASE("pure proximal pull contracts toward the anchor at rate beta") {
    const TwoClassWorld w;
    const GmmDenoiser den(w.prior);
    CfConfig cfg;
    cfg.target_class = 1;
    cfg.alpha = 0.0;
    cfg.beta = 0.5;
    cfg.iters = 4;
    cfg.particles = 8;
    const Vector x{{-2.0, 0.0}};
    cfg.init_point = Vector{{-1.0, 1.0}};
    const CounterfactualResult r = ascent_cf(w.model, den, w.schedule, x, cfg);
    // x_{i+1} - x = (1 - beta)(x_i - x): exact geometric decay
    Vector gap = *cfg.init_point - x;
    for (std::size_t i = 1; i < r.trajectory.size(); ++i) {
        gap *= 0.5;
        CHECK((r.trajectory[i] - (x + gap)).norm() <= 1e-12);
    }
}

TEST_CASE("ascent flips the class and lands on the data distribution") {
    const TwoClassWorld w;
    const GmmDenoiser den(w.prior);
    CfConfig cfg;
    cfg.target_class = 1;
    cfg.alpha = 0.2;
    cfg.beta = 0.01;
    cfg.t_start = 400;
    cfg.particles = 100;
    cfg.iters = 30;
    cfg.seed = 5;
    const Vector x{{-2.0, 0.2}};
    REQUIRE(predict(w.model, x) == 0);
    const CounterfactualResult r = ascent_cf(w.model, den, w.schedule, x, cfg);
    CHECK(r.flipped);
    CHECK(r.l2 == doctest::Approx((r.x_cf - x).norm()).epsilon(1e-12));
    const double median = class_log_density_median(w, 1, 99);
    CHECK(w.prior.log_density(r.x_cf) >= median - 2.0);
}

TEST_CASE("runaway iterates raise a divergence error") {
    const TwoClassWorld w;
    const GmmDenoiser den(w.prior);
    CfConfig cfg;
    cfg.target_class = 1;
    cfg.alpha = 1e6;
    cfg.grad_norm = false;
    cfg.iters = 50;
    cfg.particles = 10;
    const Vector x{{-2.0, 0.0}};
    CHECK_THROWS_AS((void)ascent_cf(w.model, den, w.schedule, x, cfg), DivergenceError);
}

TEST_CASE("reverse diffusion returns the last trajectory snapshot") {
    const TwoClassWorld w;
    const GmmDenoiser den(w.prior);
    CfConfig cfg;
    cfg.target_class = 1;
    cfg.particles = 20;
    cfg.n_ddim_steps = 25;
    cfg.t_start = 300;
    cfg.seed = 2;
    const Vector x{{-2.0, -0.1}};
    const CounterfactualResult r = reverse_diffusion_cf(w.model, den, w.schedule, x, cfg);
    REQUIRE(!r.trajectory.empty());
    CHECK((r.x_cf - r.trajectory.back()).norm() <= 1e-12);
    CHECK(r.trajectory.size() <= static_cast<std::size_t>(cfg.n_ddim_steps) + 1);
}

TEST_CASE("unguided reverse diffusion respects a subspace prior") {
    RngStream rng(11);
    Matrix raw(7, 2);
    for (int j = 0; j < 2; ++j) raw.col(j) = rng.gaussian_vector(7);
    AffineSubspacePrior prior;
    prior.origin = rng.gaussian_vector(7);
    prior.basis = Eigen::HouseholderQR<Matrix>(raw).householderQ() * Matrix::Identity(7, 2);
    prior.latent_cov = Matrix::Identity(2, 2);
    const SubspaceDenoiser den(prior);
    const NoiseSchedule s = make_schedule();
    const LinearSoftmax m = freemcg::testing::random_linear(2, 7, rng);

    CfConfig cfg;
    cfg.target_class = 0;
    cfg.alpha = 0.0;
    cfg.beta = 0.0;
    cfg.particles = 12;
    cfg.n_ddim_steps = 20;
    cfg.t_start = 500;
    const Vector x = prior.origin + prior.basis * rng.gaussian_vector(2);
    const CounterfactualResult r = reverse_diffusion_cf(m, den, s, x, cfg);
    const Vector rel = r.x_cf - prior.origin;
    const Vector off = rel - prior.basis * (prior.basis.transpose() * rel);
    CHECK(off.norm() <= 1e-6 * std::max(1.0, rel.norm()));
}

TEST_CASE("reverse diffusion flips the class onto the target mode") {
    const TwoClassWorld w;
    const GmmDenoiser den(w.prior);
    CfConfig cfg;
    cfg.target_class = 1;
    cfg.alpha = 0.2;
    cfg.beta = 0.01;
    cfg.t_start = 400;
    cfg.particles = 100;
    cfg.n_ddim_steps = 100;
    cfg.seed = 17;
    const Vector x{{-2.0, 0.0}};
    const CounterfactualResult r = reverse_diffusion_cf(w.model, den, w.schedule, x, cfg);
    CHECK(r.flipped);
    CHECK(r.x_cf[0] > 0.0);

    // first recorded direction weight: positive on the target class,
    // nonpositive on the source, zero sum
    REQUIRE(!r.weight_history.empty());
    const Vector w0 = r.weight_history.front();
    CHECK(w0[1] > 0.0);
    CHECK(w0[0] <= 0.0);
    CHECK(std::abs(w0.sum()) <= 1e-12);
}

TEST_CASE("stronger proximal weight keeps counterfactuals closer") {
    const TwoClassWorld w;
    const GmmDenoiser den(w.prior);
    const Vector x{{-2.0, 0.0}};
    double prev = std::numeric_limits<double>::infinity();
    for (const double beta : {0.0, 0.05, 0.2}) {
        double total = 0.0;
        for (uint64_t seed = 0; seed < 8; ++seed) {
            CfConfig cfg;
            cfg.target_class = 1;
            cfg.alpha = 0.2;
            cfg.beta = beta;
            cfg.t_start = 400;
            cfg.particles = 40;
            cfg.n_ddim_steps = 50;
            cfg.seed = seed;
            total += reverse_diffusion_cf(w.model, den, w.schedule, x, cfg).l2;
        }
        CHECK(total < prev);
        prev = total;
    }
}

TEST_CASE("counterfactual search is bitwise deterministic per seed") {
    const TwoClassWorld w;
    const GmmDenoiser den(w.prior);
    CfConfig cfg;
    cfg.target_class = 1;
    cfg.particles = 25;
    cfg.n_ddim_steps = 30;
    cfg.seed = 8;
    const Vector x{{-1.8, 0.3}};
    const CounterfactualResult a = reverse_diffusion_cf(w.model, den, w.schedule, x, cfg);
    const CounterfactualResult b = reverse_diffusion_cf(w.model, den, w.schedule, x, cfg);
    CHECK((a.x_cf - b.x_cf).norm() == 0.0);
    REQUIRE(a.trajectory.size() == b.trajectory.size());
    for (std::size_t i = 0; i < a.trajectory.size(); ++i)
        CHECK((a.trajectory[i] - b.trajectory[i]).norm() == 0.0);

    cfg.iters = 6;
    const CounterfactualResult c = ascent_cf(w.model, den, w.schedule, x, cfg);
    const CounterfactualResult d = ascent_cf(w.model, den, w.schedule, x, cfg);
    CHECK((c.x_cf - d.x_cf).norm() == 0.0);
}

TEST_CASE("stochastic reverse steps stay within eta's contract") {
    const TwoClassWorld w;
    const GmmDenoiser den(w.prior);
    CfConfig cfg;
    cfg.target_class = 1;
    cfg.particles = 15;
    cfg.n_ddim_steps = 20;
    cfg.ddim.eta = 1.0;  // full posterior noise is still valid
    cfg.seed = 4;
    const Vector x{{-2.0, 0.0}};
    const CounterfactualResult r = reverse_diffusion_cf(w.model, den, w.schedule, x, cfg);
    CHECK(r.x_cf.allFinite());

    cfg.ddim.eta = 1.2;
    CHECK_THROWS_AS((void)reverse_diffusion_cf(w.model, den, w.schedule, x, cfg),
                    NumericError);
}
