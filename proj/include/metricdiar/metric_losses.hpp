#pragma once

#include "metricdiar/embedder.hpp"

#include <span>
#include <string_view>
#include <vector>

namespace metricdiar {

enum class MarginMode { Fixed, Adaptive };

std::string_view to_string(MarginMode mode) noexcept;
MarginMode parse_margin_mode(std::string_view name);

struct MarginSpec {
    MarginMode mode = MarginMode::Fixed;
    double alpha1 = 0.8;
    double alpha2 = 0.4; // quadruplet second hinge
    double floor1 = 0.8; // adaptive floors
    double floor2 = 0.4;
};

void validate(const MarginSpec &spec);

struct LossOutput {
    double value = 0.0;
    // One gradient per participating embedding: (a, p, n) or (a, p, n, q).
    std::vector<Eigen::VectorXd> grads;
};

// ||zi - zj||^2
double sq_dist(const Eigen::VectorXd &zi, const Eigen::VectorXd &zj);

// max(0, D_ap^2 - D_an^2 + alpha). A hinge exactly at zero is inactive.
LossOutput triplet_loss(const Eigen::VectorXd &za, const Eigen::VectorXd &zp, const Eigen::VectorXd &zn,
                        double alpha);

// max(0, D_ap^2 - D_an^2 + alpha1) + max(0, D_ap^2 - D_qn^2 + alpha2).
LossOutput quadruplet_loss(const Eigen::VectorXd &za, const Eigen::VectorXd &zp, const Eigen::VectorXd &zn,
                           const Eigen::VectorXd &zq, double alpha1, double alpha2);

// max(floor, mean(negative) - mean(positive)), over squared distances.
double adaptive_margin(std::span<const double> anchor_negative_sqdists,
                       std::span<const double> anchor_positive_sqdists, double floor);

} // namespace metricdiar
