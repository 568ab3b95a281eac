#include "freemcg/evaluation.hpp"

#include "freemcg/counterfactual.hpp"
#include "freemcg/enkf.hpp"
#include "freemcg/errors.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace freemcg {

namespace {

struct SpatialLayout {
    int channels = 1;
    int height = 1;
    int width = 1;
    int pixels() const { return height * width; }
};

SpatialLayout parse_layout(const std::vector<int>& shape, Eigen::Index total) {
    SpatialLayout lay;
    switch (shape.size()) {
        case 1: lay.width = shape[0]; break;
        case 2: lay.height = shape[0]; lay.width = shape[1]; break;
        case 3: lay.channels = shape[0]; lay.height = shape[1]; lay.width = shape[2]; break;
        default: throw NumericError("spatial shape must have rank 1, 2 or 3");
    }
    for (int s : shape)
        if (s <= 0) throw NumericError("spatial shape entries must be positive");
    if (static_cast<Eigen::Index>(lay.channels) * lay.pixels() != total)
        throw NumericError("spatial shape does not match array length");
    return lay;
}

}  // namespace

Eigen::ArrayXd noisy_linear_impute(const Eigen::ArrayXd& values, const std::vector<int>& shape,
                                   const std::vector<Eigen::Index>& removed_pixels,
                                   double noise_std, RngStream& rng) {
    if (noise_std < 0.0) throw NumericError("noise_std must be >= 0");
    const SpatialLayout lay = parse_layout(shape, values.size());
    const int P = lay.pixels();

    if (removed_pixels.empty()) return values;

    std::vector<Eigen::Index> removed = removed_pixels;
    std::sort(removed.begin(), removed.end());
    removed.erase(std::unique(removed.begin(), removed.end()), removed.end());
    if (removed.front() < 0 || removed.back() >= P)
        throw NumericError("removed pixel index out of bounds");

    Eigen::ArrayXd out = values;
    const int n = static_cast<int>(removed.size());

    if (n == P) {
        const double mean = values.mean();
        for (int c = 0; c < lay.channels; ++c)
            for (int i = 0; i < P; ++i)
                out[static_cast<Eigen::Index>(c) * P + i] = mean + noise_std * rng.gaussian();
        return out;
    }

    // Map removed pixels to unknowns; each unknown equals the mean of its
    // in-bounds 4-neighbors, with known neighbors moved to the right side.
    std::vector<int> unknown_of(P, -1);
    for (int i = 0; i < n; ++i) unknown_of[removed[i]] = i;

    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<size_t>(n) * 5);
    Matrix rhs = Matrix::Zero(n, lay.channels);
    for (int i = 0; i < n; ++i) {
        const int pix = static_cast<int>(removed[i]);
        const int r = pix / lay.width;
        const int cidx = pix % lay.width;
        const int nbr[4][2] = {{r - 1, cidx}, {r + 1, cidx}, {r, cidx - 1}, {r, cidx + 1}};
        int deg = 0;
        for (auto& rc : nbr) {
            if (rc[0] < 0 || rc[0] >= lay.height || rc[1] < 0 || rc[1] >= lay.width) continue;
            ++deg;
            const int j = rc[0] * lay.width + rc[1];
            if (unknown_of[j] >= 0) {
                trips.emplace_back(i, unknown_of[j], -1.0);
            } else {
                for (int ch = 0; ch < lay.channels; ++ch)
                    rhs(i, ch) += values[static_cast<Eigen::Index>(ch) * P + j];
            }
        }
        trips.emplace_back(i, i, static_cast<double>(deg));
    }

    Eigen::SparseMatrix<double> A(n, n);
    A.setFromTriplets(trips.begin(), trips.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(A);
    if (solver.info() != Eigen::Success)
        throw NumericError("imputation system factorization failed");
    const Matrix sol = solver.solve(rhs);
    if (solver.info() != Eigen::Success) throw NumericError("imputation solve failed");

    for (int ch = 0; ch < lay.channels; ++ch)
        for (int i = 0; i < n; ++i)
            out[static_cast<Eigen::Index>(ch) * P + removed[i]] =
                sol(i, ch) + noise_std * rng.gaussian();
    return out;
}

RoadCurve road_curve(const BlackBoxClassifier& m, const Vector& x, const AttributionMap& map,
                     const Eigen::ArrayXd& fractions, double noise_std, uint64_t seed) {
    if (fractions.size() == 0) throw NumericError("road_curve: empty fraction grid");
    for (Eigen::Index i = 0; i < fractions.size(); ++i) {
        if (fractions[i] < 0.0 || fractions[i] >= 1.0)
            throw NumericError("road_curve: fractions must lie in [0,1)");
        if (i > 0 && fractions[i] <= fractions[i - 1])
            throw NumericError("road_curve: fractions must be strictly increasing");
    }
    const Eigen::Index P = map.values.size();
    if (P == 0 || x.size() % P != 0)
        throw NumericError("road_curve: attribution map does not tile the input");
    const Eigen::Index channels = x.size() / P;

    std::vector<int> shape;
    if (channels > 1) {
        if (map.shape.size() != 2)
            throw NumericError("road_curve: multi-channel input needs a 2-d map");
        shape = {static_cast<int>(channels), map.shape[0], map.shape[1]};
    } else {
        shape = map.shape;
    }

    // Rank pixels by attributed importance, most important first; equal
    // scores keep index order so runs are reproducible.
    std::vector<Eigen::Index> order(P);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return map.values[a] > map.values[b];
    });

    const int original = predict(m, x);
    RoadCurve curve;
    curve.fractions = fractions;
    curve.scores.resize(fractions.size());
    for (Eigen::Index fi = 0; fi < fractions.size(); ++fi) {
        const auto k = static_cast<Eigen::Index>(std::lround(fractions[fi] * P));
        const std::vector<Eigen::Index> removed(order.begin(), order.begin() + k);
        RngStream rng = RngStream::derive(seed, "road", static_cast<uint64_t>(fi));
        const Eigen::ArrayXd imputed =
            noisy_linear_impute(x.array(), shape, removed, noise_std, rng);
        curve.scores[fi] = softmax(m.eval(imputed.matrix()))[original];
    }

    curve.auc = 0.0;
    for (Eigen::Index i = 0; i + 1 < fractions.size(); ++i)
        curve.auc += 0.5 * (curve.scores[i] + curve.scores[i + 1]) *
                     (curve.fractions[i + 1] - curve.fractions[i]);
    return curve;
}

double flip_rate(const std::vector<CounterfactualResult>& results) {
    if (results.empty()) throw NumericError("flip_rate: no results");
    const auto flipped = std::count_if(results.begin(), results.end(),
                                       [](const CounterfactualResult& r) { return r.flipped; });
    return static_cast<double>(flipped) / static_cast<double>(results.size());
}

double mean_l2(const std::vector<CounterfactualResult>& results) {
    if (results.empty()) throw NumericError("mean_l2: no results");
    double sum = 0.0;
    for (const auto& r : results) sum += r.l2;
    return sum / static_cast<double>(results.size());
}

TangentReport tangent_report(const Vector& g, const AffineSubspacePrior& prior) {
    prior.validate();
    if (g.size() != prior.origin.size())
        throw NumericError("tangent_report: dimension mismatch");
    TangentReport rep;
    const double gnorm = g.norm();
    if (gnorm == 0.0) return rep;
    const Vector on = prior.basis * (prior.basis.transpose() * g);
    const Vector off = g - on;
    rep.off_manifold_ratio = off.norm() / gnorm;
    rep.angle_deg = std::atan2(off.norm(), on.norm()) * 180.0 / std::numbers::pi;
    return rep;
}

double line_angle_deg(const Vector& v, const Vector& axis) {
    const double vn = v.norm();
    const double an = axis.norm();
    if (vn == 0.0 || an == 0.0) return 0.0;
    const Vector u = axis / an;
    const double along = v.dot(u);
    const double off = (v - along * u).norm();
    return std::atan2(off, std::abs(along)) * 180.0 / std::numbers::pi;
}

OrderScanReport order_scan(const OracleClassifier& m, const Matrix& base_offsets,
                           const Vector& center, const Eigen::ArrayXd& deltas) {
    if (base_offsets.rows() < 2) throw NumericError("order_scan: need at least 2 offsets");
    if (base_offsets.cols() != center.size() || center.size() != m.dim_in())
        throw NumericError("order_scan: dimension mismatch");
    if (deltas.size() < 2) throw NumericError("order_scan: need at least 2 deltas");
    for (Eigen::Index i = 0; i < deltas.size(); ++i) {
        if (deltas[i] <= 0.0) throw NumericError("order_scan: deltas must be positive");
        if (i > 0 && deltas[i] >= deltas[i - 1])
            throw NumericError("order_scan: deltas must be strictly decreasing");
    }

    OrderScanReport rep;
    rep.deltas = deltas;
    rep.residuals.resize(deltas.size());
    const auto K = base_offsets.rows();
    for (Eigen::Index di = 0; di < deltas.size(); ++di) {
        ParticleEnsemble e;
        e.particles = (deltas[di] * base_offsets).rowwise() + center.transpose();
        e.logits.resize(K, m.dim_out());
        for (Eigen::Index k = 0; k < K; ++k)
            e.logits.row(k) = m.eval(e.particles.row(k).transpose()).transpose();
        rep.residuals[di] = thm2_residual(m, e);
    }

    // Least-squares slope of log(residual) vs log(delta). A flat scan (exact
    // identity, e.g. linear models) has no meaningful slope.
    rep.fitted_slope = std::numeric_limits<double>::quiet_NaN();
    if (rep.residuals.maxCoeff() <= 1e-12) return rep;
    std::vector<double> lx, ly;
    for (Eigen::Index i = 0; i < deltas.size(); ++i) {
        if (rep.residuals[i] <= 1e-300) continue;
        lx.push_back(std::log(deltas[i]));
        ly.push_back(std::log(rep.residuals[i]));
    }
    if (lx.size() < 2) return rep;
    const double n = static_cast<double>(lx.size());
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / n;
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / n;
    double sxx = 0.0;
    double sxy = 0.0;
    for (size_t i = 0; i < lx.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    if (sxx == 0.0) return rep;
    rep.fitted_slope = sxy / sxx;
    rep.slope_defined = true;
    return rep;
}

Matrix asymmetric_offsets(int count, int dim, uint64_t seed) {
    if (count < 2 || dim < 1) throw NumericError("asymmetric_offsets: bad shape");
    RngStream rng = RngStream::derive(seed, "order/offsets");
    Matrix u(count, dim);
    for (int k = 0; k < count; ++k)
        for (int j = 0; j < dim; ++j) {
            const double z = rng.gaussian();
            u(k, j) = z + 0.5 * z * z;  // skew guarantees nonzero third moments
        }
    return u;
}

Fig3Report fig3_toy(uint64_t seed) {
    const ScalarToyWrapper toy = ScalarToyWrapper::neg_x_plus_y_squared();
    constexpr double kCurvature = 0.5;  // arc y = 1 + kCurvature * s^2
    constexpr double kDelta = 0.05;
    constexpr int kParticles = 16;
    constexpr int kPoints = 10;

    Fig3Report rep;
    rep.gfree_closer_everywhere = true;
    for (int i = 0; i < kPoints; ++i) {
        const double s = -0.45 + 0.9 * i / (kPoints - 1);
        Fig3Point pt;
        pt.s = s;
        pt.point = Vector{{s, 1.0 + kCurvature * s * s}};
        Vector tangent{{1.0, 2.0 * kCurvature * s}};
        pt.tangent = tangent / tangent.norm();

        RngStream rng = RngStream::derive(seed, "fig3", static_cast<uint64_t>(i));
        ParticleEnsemble e;
        e.particles.resize(kParticles, 2);
        e.logits.resize(kParticles, toy.dim_out());
        for (int k = 0; k < kParticles; ++k) {
            const double sk = s + kDelta * (2.5 * rng.uniform() - 1.0);
            e.particles(k, 0) = sk;
            e.particles(k, 1) = 1.0 + kCurvature * sk * sk;
            e.logits.row(k) = toy.eval(e.particles.row(k).transpose()).transpose();
        }

        const Vector p = softmax(toy.eval(pt.point));
        pt.g_free = freemcg_gradient(e, 0, p);
        pt.raw_gradient = toy.jacobian(pt.point).row(0).transpose();
        pt.angle_gfree_deg = line_angle_deg(pt.g_free, pt.tangent);
        pt.angle_raw_deg = line_angle_deg(pt.raw_gradient, pt.tangent);
        const double gnorm = pt.g_free.norm();
        pt.off_tangent_ratio =
            gnorm == 0.0
                ? 0.0
                : (pt.g_free - pt.g_free.dot(pt.tangent) * pt.tangent).norm() / gnorm;
        if (!(pt.angle_gfree_deg < pt.angle_raw_deg)) rep.gfree_closer_everywhere = false;
        rep.points.push_back(std::move(pt));
    }
    return rep;
}

}  // namespace freemcg
