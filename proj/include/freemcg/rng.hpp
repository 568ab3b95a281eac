#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <string_view>

namespace freemcg {

// Seeded random stream. All randomness in the library flows through streams
// derived from one master seed, keyed by (purpose, index, index), so that
// e.g. changing the particle count of one ensemble never perturbs the draws
// of another.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : engine_(seed) {}

    static RngStream derive(std::uint64_t master, std::string_view purpose,
                            std::uint64_t a = 0, std::uint64_t b = 0);

    double gaussian() { return normal_(engine_); }

    Eigen::VectorXd gaussian_vector(int dim) {
        Eigen::VectorXd v(dim);
        for (int i = 0; i < dim; ++i) v[i] = gaussian();
        return v;
    }

    // Uniform on [0, 1).
    double uniform() { return uniform_(engine_); }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// splitmix64 finalizer, used to mix seed components.
std::uint64_t mix64(std::uint64_t x);

// FNV-1a over bytes; also used for artifact content hashes in manifests.
std::uint64_t fnv1a64(const void* data, std::size_t len);

}  // namespace freemcg
