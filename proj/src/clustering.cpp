#include "metricdiar/clustering.hpp"

#include "metricdiar/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace metricdiar {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

double sq_dist_row(const MatrixXd &points, Index i, const MatrixXd &centroids, Index j) {
    return (points.row(i) - centroids.row(j)).squaredNorm();
}

std::size_t nearest(const MatrixXd &points, Index i, const MatrixXd &centroids, std::size_t current) {
    std::size_t best = current;
    double best_d = current < static_cast<std::size_t>(centroids.rows())
                        ? sq_dist_row(points, i, centroids, static_cast<Index>(current))
                        : std::numeric_limits<double>::infinity();
    for (Index j = 0; j < centroids.rows(); ++j) {
        const double d = sq_dist_row(points, i, centroids, j);
        if (d < best_d) {
            best_d = d;
            best = static_cast<std::size_t>(j);
        }
    }
    return best;
}

// Moves the point farthest from its centroid into each empty cluster.
void repair_empty(const MatrixXd &points, const MatrixXd &centroids, std::vector<std::size_t> &labels) {
    const auto k = static_cast<std::size_t>(centroids.rows());
    std::vector<std::size_t> counts(k, 0);
    for (auto l : labels) ++counts[l];
    for (std::size_t j = 0; j < k; ++j) {
        if (counts[j] > 0) continue;
        std::size_t far = labels.size();
        double far_d = -1.0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (counts[labels[i]] < 2) continue;
            const double d = sq_dist_row(points, static_cast<Index>(i), centroids, static_cast<Index>(labels[i]));
            if (d > far_d) {
                far_d = d;
                far = i;
            }
        }
        if (far == labels.size()) throw ArgumentError("cannot fill empty cluster: too few points");
        --counts[labels[far]];
        labels[far] = j;
        ++counts[j];
    }
}

MatrixXd means(const MatrixXd &points, const std::vector<std::size_t> &labels, std::size_t k) {
    MatrixXd c = MatrixXd::Zero(static_cast<Index>(k), points.cols());
    std::vector<double> counts(k, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        c.row(static_cast<Index>(labels[i])) += points.row(static_cast<Index>(i));
        counts[labels[i]] += 1.0;
    }
    for (std::size_t j = 0; j < k; ++j) c.row(static_cast<Index>(j)) /= counts[j];
    return c;
}

double inertia_of(const MatrixXd &points, const MatrixXd &centroids, const std::vector<std::size_t> &labels) {
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        total += sq_dist_row(points, static_cast<Index>(i), centroids, static_cast<Index>(labels[i]));
    }
    return total;
}

MatrixXd kmeans_pp(const MatrixXd &points, std::size_t k, std::mt19937_64 &rng) {
    const auto n = static_cast<std::size_t>(points.rows());
    MatrixXd centroids(static_cast<Index>(k), points.cols());
    std::vector<bool> chosen(n, false);
    std::uniform_int_distribution<std::size_t> first(0, n - 1);
    std::size_t pick = first(rng);
    chosen[pick] = true;
    centroids.row(0) = points.row(static_cast<Index>(pick));
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], sq_dist_row(points, static_cast<Index>(i), centroids, static_cast<Index>(c - 1)));
            total += d2[i];
        }
        if (total > 0.0) {
            std::discrete_distribution<std::size_t> draw(d2.begin(), d2.end());
            pick = draw(rng);
        } else {
            // All remaining mass sits on existing centroids: take any unused point.
            std::vector<std::size_t> unused;
            for (std::size_t i = 0; i < n; ++i) {
                if (!chosen[i]) unused.push_back(i);
            }
            std::uniform_int_distribution<std::size_t> any(0, unused.size() - 1);
            pick = unused[any(rng)];
        }
        chosen[pick] = true;
        centroids.row(static_cast<Index>(c)) = points.row(static_cast<Index>(pick));
    }
    return centroids;
}

ClusterResult single_cluster(const MatrixXd &points) {
    ClusterResult r;
    r.k = 1;
    r.labels.assign(static_cast<std::size_t>(points.rows()), 0);
    r.centroids = points.colwise().mean();
    r.inertia = inertia_of(points, r.centroids, r.labels);
    r.inertia_trace = {r.inertia};
    return r;
}

MatrixXd rows_of(const MatrixXd &points, const std::vector<std::size_t> &idx) {
    MatrixXd out(static_cast<Index>(idx.size()), points.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = points.row(static_cast<Index>(idx[i]));
    return out;
}

struct SplitProposal {
    std::size_t cluster;
    double gain;
    MatrixXd children;
};

} // namespace

ClusterResult kmeans_from(const MatrixXd &points, const MatrixXd &initial_centroids, std::size_t max_iter) {
    const auto n = static_cast<std::size_t>(points.rows());
    const auto k = static_cast<std::size_t>(initial_centroids.rows());
    if (k < 1 || k > n) throw ArgumentError("kmeans needs 1 <= k <= n");
    if (initial_centroids.cols() != points.cols()) throw ArgumentError("centroid dimension mismatch");
    if (max_iter < 1) throw ArgumentError("max_iter must be positive");

    MatrixXd centroids = initial_centroids;
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = nearest(points, static_cast<Index>(i), centroids, k);

    ClusterResult r;
    for (std::size_t iter = 0;; ++iter) {
        repair_empty(points, centroids, labels);
        centroids = means(points, labels, k);
        r.inertia_trace.push_back(inertia_of(points, centroids, labels));
        if (iter + 1 >= max_iter) break;
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            const auto next = nearest(points, static_cast<Index>(i), centroids, labels[i]);
            changed |= next != labels[i];
            labels[i] = next;
        }
        if (!changed) break;
    }
    r.labels = std::move(labels);
    r.centroids = std::move(centroids);
    r.inertia = r.inertia_trace.back();
    r.k = k;
    return r;
}

ClusterResult kmeans(const MatrixXd &points, std::size_t k, std::uint64_t seed, std::size_t max_iter) {
    const auto n = static_cast<std::size_t>(points.rows());
    if (k < 2 || k > n) {
        throw ArgumentError("kmeans needs 2 <= k <= n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
    }
    std::mt19937_64 rng(seed);
    return kmeans_from(points, kmeans_pp(points, k, rng), max_iter);
}

double bic_score(const MatrixXd &points, const ClusterResult &result) {
    const auto n = static_cast<double>(points.rows());
    const auto k = static_cast<double>(result.k);
    const auto dim = static_cast<double>(points.cols());
    if (result.k < 1 || points.rows() <= static_cast<Index>(result.k)) {
        throw ArgumentError("BIC needs more points than clusters");
    }
    const double variance = result.inertia / ((n - k) * dim);
    if (!(variance > 0.0)) return std::numeric_limits<double>::infinity();

    std::vector<double> counts(result.k, 0.0);
    for (auto l : result.labels) counts[l] += 1.0;
    double log_likelihood = 0.0;
    for (double nj : counts) {
        if (nj > 0.0) log_likelihood += nj * std::log(nj / n);
    }
    log_likelihood -= 0.5 * n * dim * std::log(2.0 * std::numbers::pi * variance);
    log_likelihood -= 0.5 * (n - k) * dim;
    const double free_params = (k - 1.0) + k * dim + 1.0;
    return log_likelihood - 0.5 * free_params * std::log(n);
}

ClusterResult xmeans(const MatrixXd &points, std::size_t k_min, std::size_t k_max, std::uint64_t seed,
                     std::size_t max_iter) {
    const auto n = static_cast<std::size_t>(points.rows());
    if (k_min < 2 || k_min > k_max || k_max > n) {
        throw ArgumentError("xmeans needs 2 <= k_min <= k_max <= n");
    }
    ClusterResult current = kmeans(points, k_min, seed, max_iter);

    while (current.k < k_max) {
        std::vector<std::vector<std::size_t>> members(current.k);
        for (std::size_t i = 0; i < n; ++i) members[current.labels[i]].push_back(i);

        std::vector<SplitProposal> proposals;
        for (std::size_t c = 0; c < current.k; ++c) {
            if (members[c].size() < 3) continue;
            const MatrixXd local = rows_of(points, members[c]);
            const ClusterResult parent = single_cluster(local);
            if (!(parent.inertia > 0.0)) continue;

            const MatrixXd centered = local.rowwise() - parent.centroids.row(0);
            const MatrixXd cov = centered.transpose() * centered / static_cast<double>(local.rows());
            Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
            const VectorXd direction = eig.eigenvectors().col(cov.cols() - 1);
            const double offset = std::sqrt(2.0 * std::max(eig.eigenvalues()(cov.cols() - 1), 0.0));
            MatrixXd init(2, points.cols());
            init.row(0) = parent.centroids.row(0) + offset * direction.transpose();
            init.row(1) = parent.centroids.row(0) - offset * direction.transpose();

            const ClusterResult children = kmeans_from(local, init, max_iter);
            const double gain = bic_score(local, children) - bic_score(local, parent);
            if (gain > 0.0) proposals.push_back({c, gain, children.centroids});
        }
        if (proposals.empty()) break;

        std::stable_sort(proposals.begin(), proposals.end(),
                         [](const SplitProposal &a, const SplitProposal &b) { return a.gain > b.gain; });
        proposals.resize(std::min(proposals.size(), k_max - current.k));
        std::vector<bool> split(current.k, false);
        for (const auto &p : proposals) split[p.cluster] = true;

        MatrixXd next(static_cast<Index>(current.k + proposals.size()), points.cols());
        Index row = 0;
        for (std::size_t c = 0; c < current.k; ++c) {
            if (!split[c]) next.row(row++) = current.centroids.row(static_cast<Index>(c));
        }
        for (const auto &p : proposals) {
            next.row(row++) = p.children.row(0);
            next.row(row++) = p.children.row(1);
        }
        current = kmeans_from(points, next, max_iter);
    }
    return current;
}

} // namespace metricdiar
