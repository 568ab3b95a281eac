// Quantitative metrics and verification reports: removal curves with noisy
// linear imputation, counterfactual summary stats, tangent alignment, and the
// order scan that measures how fast the cross-covariance identity converges.
#pragma once

#include "freemcg/attribution.hpp"
#include "freemcg/diffusion.hpp"
#include "freemcg/models.hpp"
#include "freemcg/rng.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace freemcg {

struct CounterfactualResult;

// Replaces the listed spatial pixels by the harmonic extension of their known
// 4-neighbors (sparse SPD solve), then adds N(0, noise_std^2) to each imputed
// entry. `shape` is {W}, {H,W} or {C,H,W}; channels share the spatial mask.
// A fully masked image degenerates to global mean + noise. An empty mask
// returns the input untouched.
Eigen::ArrayXd noisy_linear_impute(const Eigen::ArrayXd& values, const std::vector<int>& shape,
                                   const std::vector<Eigen::Index>& removed_pixels,
                                   double noise_std, RngStream& rng);

struct RoadCurve {
    Eigen::ArrayXd fractions;  // strictly increasing, in [0,1)
    Eigen::ArrayXd scores;     // predicted-class probability after removal
    double auc = 0.0;          // trapezoid area; lower = better attribution
};

// Removes the top-fraction pixels ranked by the attribution map (ties broken
// by pixel index), imputes them, and scores the probability of the original
// prediction. One RNG substream per fraction, derived from `seed`.
RoadCurve road_curve(const BlackBoxClassifier& m, const Vector& x, const AttributionMap& map,
                     const Eigen::ArrayXd& fractions, double noise_std, uint64_t seed);

double flip_rate(const std::vector<CounterfactualResult>& results);
double mean_l2(const std::vector<CounterfactualResult>& results);

struct TangentReport {
    double off_manifold_ratio = 0.0;  // ||(I - BB^T) g|| / ||g||, in [0,1]
    double angle_deg = 0.0;           // angle between g and its tangent projection
};

TangentReport tangent_report(const Vector& g, const AffineSubspacePrior& prior);

// Angle in degrees between the line spanned by `v` and the line spanned by
// `axis` (sign-insensitive, in [0, 90]). Zero vectors report 0.
double line_angle_deg(const Vector& v, const Vector& axis);

struct OrderScanReport {
    Eigen::ArrayXd deltas;     // strictly decreasing, positive
    Eigen::ArrayXd residuals;  // cross-covariance identity residual per delta
    double fitted_slope = 0.0; // log-log least-squares slope; NaN when flat
    bool slope_defined = false;
};

// Scales a fixed ensemble-offset pattern by each delta around `center` and
// fits the log-log slope of the identity residual. Exactly linear models
// leave residuals at zero; the slope is then reported as NaN with
// slope_defined=false.
OrderScanReport order_scan(const OracleClassifier& m, const Matrix& base_offsets,
                           const Vector& center, const Eigen::ArrayXd& deltas);

// Deterministic offset pattern with nonzero third moments (a symmetric
// pattern would cancel the leading residual term and overstate the order).
Matrix asymmetric_offsets(int count, int dim, uint64_t seed);

struct Fig3Point {
    double s = 0.0;        // arc parameter
    Vector point;          // (x, y) on the arc
    Vector tangent;        // unit tangent of the arc at the point
    Vector g_free;         // ensemble gradient from on-arc particles
    Vector raw_gradient;   // analytic field gradient at the point
    double angle_gfree_deg = 0.0;
    double angle_raw_deg = 0.0;
    double off_tangent_ratio = 0.0;  // off-tangent mass fraction of g_free
};

struct Fig3Report {
    std::vector<Fig3Point> points;
    bool gfree_closer_everywhere = false;
};

// The f = -x + y^2 toy: particles sampled on a shallow arc show the ensemble
// gradient hugging the arc's tangent while the raw gradient (-1, 2y) points
// well off it.
Fig3Report fig3_toy(uint64_t seed = 0);

}  // namespace freemcg
