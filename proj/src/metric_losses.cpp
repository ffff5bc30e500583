#include "metricdiar/metric_losses.hpp"

#include "metricdiar/errors.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace metricdiar {

namespace {

void check_dims(std::initializer_list<const Eigen::VectorXd *> zs) {
    const auto dim = (*zs.begin())->size();
    for (const auto *z : zs) {
        if (z->size() != dim) throw ArgumentError("embedding dimension mismatch");
    }
}

Eigen::VectorXd zeros_like(const Eigen::VectorXd &z) { return Eigen::VectorXd::Zero(z.size()); }

double mean_of(std::span<const double> xs) {
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

} // namespace

std::string_view to_string(MarginMode mode) noexcept {
    return mode == MarginMode::Adaptive ? "adaptive" : "fixed";
}

MarginMode parse_margin_mode(std::string_view name) {
    if (name == "fixed") return MarginMode::Fixed;
    if (name == "adaptive") return MarginMode::Adaptive;
    throw ArgumentError("unknown margin mode '" + std::string(name) + "'");
}

void validate(const MarginSpec &spec) {
    if (!(spec.alpha1 > 0.0) || !(spec.alpha2 > 0.0)) throw ArgumentError("margins must be positive");
    if (!(spec.floor1 > 0.0) || !(spec.floor2 > 0.0)) throw ArgumentError("margin floors must be positive");
}

double sq_dist(const Eigen::VectorXd &zi, const Eigen::VectorXd &zj) {
    check_dims({&zi, &zj});
    return (zi - zj).squaredNorm();
}

LossOutput triplet_loss(const Eigen::VectorXd &za, const Eigen::VectorXd &zp, const Eigen::VectorXd &zn,
                        double alpha) {
    check_dims({&za, &zp, &zn});
    const double hinge = sq_dist(za, zp) - sq_dist(za, zn) + alpha;
    LossOutput out{0.0, {zeros_like(za), zeros_like(za), zeros_like(za)}};
    if (hinge > 0.0) {
        out.value = hinge;
        out.grads[0] = 2.0 * (zn - zp);
        out.grads[1] = 2.0 * (zp - za);
        out.grads[2] = 2.0 * (za - zn);
    }
    return out;
}

LossOutput quadruplet_loss(const Eigen::VectorXd &za, const Eigen::VectorXd &zp, const Eigen::VectorXd &zn,
                           const Eigen::VectorXd &zq, double alpha1, double alpha2) {
    check_dims({&za, &zp, &zn, &zq});
    LossOutput out = triplet_loss(za, zp, zn, alpha1);
    out.grads.push_back(zeros_like(za));
    const double hinge = sq_dist(za, zp) - sq_dist(zq, zn) + alpha2;
    if (hinge > 0.0) {
        out.value += hinge;
        out.grads[0] += 2.0 * (za - zp);
        out.grads[1] += 2.0 * (zp - za);
        out.grads[2] += 2.0 * (zq - zn);
        out.grads[3] += 2.0 * (zn - zq);
    }
    return out;
}

double adaptive_margin(std::span<const double> anchor_negative_sqdists,
                       std::span<const double> anchor_positive_sqdists, double floor) {
    if (anchor_negative_sqdists.empty() || anchor_positive_sqdists.empty()) {
        throw ArgumentError("adaptive margin needs non-empty distance lists");
    }
    if (!(floor > 0.0)) throw ArgumentError("adaptive margin floor must be positive");
    return std::max(floor, mean_of(anchor_negative_sqdists) - mean_of(anchor_positive_sqdists));
}

} // namespace metricdiar
