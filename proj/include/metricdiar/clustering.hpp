#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <vector>

namespace metricdiar {

struct ClusterResult {
    std::vector<std::size_t> labels; // one per row of Z, in [0, k)
    Eigen::MatrixXd centroids;       // k x e
    double inertia = 0.0;            // sum of squared distances to assigned centroids
    std::size_t k = 0;
    std::vector<double> inertia_trace; // inertia after each Lloyd update
};

// k-means++ seeding followed by Lloyd iterations until the assignment stops
// changing or max_iter is reached. Requires 2 <= k <= n.
ClusterResult kmeans(const Eigen::MatrixXd &points, std::size_t k, std::uint64_t seed,
                     std::size_t max_iter = 100);

// Lloyd iterations from the given k x e centroids (any k >= 1).
ClusterResult kmeans_from(const Eigen::MatrixXd &points, const Eigen::MatrixXd &initial_centroids,
                          std::size_t max_iter = 100);

// Identical-spherical-variance Gaussian BIC (larger is better). Returns
// +infinity when the pooled variance estimate is zero.
double bic_score(const Eigen::MatrixXd &points, const ClusterResult &result);

// x-means: start from kmeans(k_min) and split clusters while the local BIC of
// two children beats that of the parent, never going past k_max.
ClusterResult xmeans(const Eigen::MatrixXd &points, std::size_t k_min, std::size_t k_max, std::uint64_t seed,
                     std::size_t max_iter = 100);

inline std::size_t default_k_max(std::size_t n) { return n < 10 ? n : 10; }

} // namespace metricdiar
