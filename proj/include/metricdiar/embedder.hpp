#pragma once

#include "metricdiar/features.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace metricdiar {

enum class Arch { MeanPoolMlp, Attn1 };

std::string_view to_string(Arch arch) noexcept;
Arch parse_arch(std::string_view name);

struct EmbedderConfig {
    Arch arch = Arch::MeanPoolMlp;
    std::size_t input_dim = kDefaultFeatureDim;
    std::vector<std::size_t> hidden{64}; // meanpool_mlp only
    std::size_t embed_dim = 32;
    std::size_t key_dim = 16; // attn1 only; also the value width
    bool positional_encoding = true; // attn1 only
    std::uint64_t seed = 0;
};

// Throws ArgumentError on inconsistent dimensions.
void validate(const EmbedderConfig &cfg);

void to_json(nlohmann::json &j, const EmbedderConfig &cfg);
void from_json(const nlohmann::json &j, EmbedderConfig &cfg);

using Embedding = Eigen::VectorXd;

struct Parameter {
    std::string name;
    Eigen::MatrixXd value; // bias vectors are stored as n x 1
};

// One gradient tensor per model parameter, in parameter order.
using ParamGrads = std::vector<Eigen::MatrixXd>;

struct EmbedderModel {
    EmbedderConfig config;
    std::vector<Parameter> params;

    std::size_t parameter_count() const;
};

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)) for weights and the
// biases of the same layer. Nonzero biases keep a fully inactive ReLU layer
// from producing a zero (unnormalizable) output.
EmbedderModel init_model(const EmbedderConfig &cfg);

// PE[t, 2i] = sin(t / 10000^(2i/d)), PE[t, 2i+1] = cos(t / 10000^(2i/d)).
Eigen::MatrixXd positional_encoding(std::size_t frames, std::size_t dim);

Eigen::MatrixXd to_eigen(const FeatureMatrix &x);

// Unit-norm embedding of one segment.
Embedding forward(const EmbedderModel &model, const FeatureMatrix &x);

// Row-stochastic T x T attention matrix (attn1 only).
Eigen::MatrixXd attention_weights(const EmbedderModel &model, const FeatureMatrix &x);

// Gradient of upstream . forward(model, x) with respect to every parameter.
ParamGrads backward(const EmbedderModel &model, const FeatureMatrix &x, const Eigen::VectorXd &upstream);

// Same as backward but adds into `grads` (sized by zero_grads).
void accumulate_backward(const EmbedderModel &model, const FeatureMatrix &x,
                         const Eigen::VectorXd &upstream, ParamGrads &grads);

ParamGrads zero_grads(const EmbedderModel &model);

using GradFn = std::function<ParamGrads(const EmbedderModel &, const FeatureMatrix &, const Eigen::VectorXd &)>;

// Max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8),
// with the numeric side from a five-point central difference of probe . forward.
// The step is halved (up to 8 times) while the stencil straddles a ReLU kink;
// coordinates still straddling one are skipped.
double grad_check(const EmbedderModel &model, const FeatureMatrix &x, const Eigen::VectorXd &probe,
                  const GradFn &analytic = backward, double step = 1e-3);

// Rounds every parameter to float precision, matching what a checkpoint stores.
void quantize_to_float(EmbedderModel &model);

// Checkpoint: one JSON header line, then an FMAT block per parameter in order.
void save_checkpoint(const EmbedderModel &model, const std::filesystem::path &path);
EmbedderModel load_checkpoint(const std::filesystem::path &path);

} // namespace metricdiar
