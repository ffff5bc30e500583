#include "metricdiar/embedder.hpp"

#include "metricdiar/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>

namespace metricdiar {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void require_finite(const MatrixXd &m, const char *what) {
    if (!m.allFinite()) throw NumericError(std::string("non-finite activation in ") + what);
}

Eigen::MatrixXd glorot(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out,
                       std::mt19937_64 &rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
    }
    return m;
}

// Unit normalization and its Jacobian-vector product.
VectorXd normalize(const VectorXd &y) {
    const double norm = y.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) throw NumericError("embedding has zero or non-finite norm");
    return y / norm;
}

VectorXd normalize_backward(const VectorXd &y, const VectorXd &upstream) {
    const double norm = y.norm();
    const VectorXd z = y / norm;
    return (upstream - z * z.dot(upstream)) / norm;
}

// ─── meanpool_mlp ───────────────────────────────────────────────────────────

struct MlpCache {
    std::vector<VectorXd> inputs;      // input to each linear layer
    std::vector<VectorXd> preacts;     // pre-activation of each linear layer
    VectorXd output;                   // pre-normalization embedding
};

MlpCache mlp_forward(const EmbedderModel &model, const MatrixXd &x) {
    MlpCache cache;
    VectorXd h = x.colwise().mean().transpose();
    const std::size_t layers = model.params.size() / 2;
    for (std::size_t l = 0; l < layers; ++l) {
        const auto &w = model.params[2 * l].value;
        const auto &b = model.params[2 * l + 1].value;
        cache.inputs.push_back(h);
        VectorXd a = w * h + b.col(0);
        cache.preacts.push_back(a);
        h = (l + 1 < layers) ? VectorXd(a.cwiseMax(0.0)) : a;
    }
    require_finite(h, "meanpool_mlp");
    cache.output = h;
    return cache;
}

void mlp_backward(const EmbedderModel &model, const MatrixXd &x, const VectorXd &upstream, ParamGrads &grads) {
    const MlpCache cache = mlp_forward(model, x);
    VectorXd g = normalize_backward(cache.output, upstream);
    const std::size_t layers = model.params.size() / 2;
    for (std::size_t l = layers; l-- > 0;) {
        if (l + 1 < layers) g = g.cwiseProduct((cache.preacts[l].array() > 0.0).cast<double>().matrix());
        grads[2 * l].noalias() += g * cache.inputs[l].transpose();
        grads[2 * l + 1].col(0) += g;
        g = model.params[2 * l].value.transpose() * g;
    }
}

// ─── attn1 ──────────────────────────────────────────────────────────────────

enum AttnParam { kQuery = 0, kKey, kValue, kOutput, kOutputBias };

struct AttnCache {
    MatrixXd h, q, k, v, attn, mixed;
    VectorXd output;
};

MatrixXd softmax_rows(const MatrixXd &s) {
    MatrixXd out(s.rows(), s.cols());
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double m = s.row(r).maxCoeff();
        out.row(r) = (s.row(r).array() - m).exp();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

AttnCache attn_forward(const EmbedderModel &model, const MatrixXd &x) {
    const auto &p = model.params;
    AttnCache c;
    c.h = x;
    if (model.config.positional_encoding) c.h += positional_encoding(x.rows(), x.cols());
    c.q = c.h * p[kQuery].value;
    c.k = c.h * p[kKey].value;
    c.v = c.h * p[kValue].value;
    const double scale = 1.0 / std::sqrt(static_cast<double>(model.config.key_dim));
    c.attn = softmax_rows(c.q * c.k.transpose() * scale);
    c.mixed = c.attn * c.v;
    const MatrixXd projected = c.mixed * p[kOutput].value;
    c.output = projected.colwise().mean().transpose() + p[kOutputBias].value.col(0);
    require_finite(c.output, "attn1");
    return c;
}

void attn_backward(const EmbedderModel &model, const MatrixXd &x, const VectorXd &upstream, ParamGrads &grads) {
    const auto &p = model.params;
    const AttnCache c = attn_forward(model, x);
    const VectorXd gy = normalize_backward(c.output, upstream);
    const auto frames = static_cast<double>(x.rows());
    const double scale = 1.0 / std::sqrt(static_cast<double>(model.config.key_dim));

    // Every row of the projected sequence receives gy / T through the mean.
    const VectorXd mixed_mean = c.mixed.colwise().mean().transpose();
    grads[kOutput].noalias() += mixed_mean * gy.transpose();
    grads[kOutputBias].col(0) += gy;
    const Eigen::RowVectorXd d_mixed_row = (p[kOutput].value * gy).transpose() / frames;
    const MatrixXd d_mixed = d_mixed_row.replicate(x.rows(), 1);

    const MatrixXd d_attn = d_mixed * c.v.transpose();
    const MatrixXd d_v = c.attn.transpose() * d_mixed;
    const Eigen::VectorXd row_dot = (d_attn.cwiseProduct(c.attn)).rowwise().sum();
    const MatrixXd d_scores = c.attn.cwiseProduct(d_attn.colwise() - row_dot);
    const MatrixXd d_q = d_scores * c.k * scale;
    const MatrixXd d_k = d_scores.transpose() * c.q * scale;

    grads[kQuery].noalias() += c.h.transpose() * d_q;
    grads[kKey].noalias() += c.h.transpose() * d_k;
    grads[kValue].noalias() += c.h.transpose() * d_v;
}

// Sign of every hidden ReLU pre-activation (empty for attn1).
std::vector<bool> relu_pattern(const EmbedderModel &model, const MatrixXd &x) {
    std::vector<bool> out;
    if (model.config.arch != Arch::MeanPoolMlp) return out;
    const MlpCache cache = mlp_forward(model, x);
    for (std::size_t l = 0; l + 1 < cache.preacts.size(); ++l) {
        for (Eigen::Index i = 0; i < cache.preacts[l].size(); ++i) out.push_back(cache.preacts[l](i) > 0.0);
    }
    return out;
}

void check_input(const EmbedderModel &model, const FeatureMatrix &x) {
    if (x.cols() != model.config.input_dim) {
        throw ArgumentError("input has " + std::to_string(x.cols()) + " feature dims, model expects " +
                            std::to_string(model.config.input_dim));
    }
}

} // namespace

// ─── Config ─────────────────────────────────────────────────────────────────

std::string_view to_string(Arch arch) noexcept {
    return arch == Arch::Attn1 ? "attn1" : "meanpool_mlp";
}

Arch parse_arch(std::string_view name) {
    if (name == "meanpool_mlp") return Arch::MeanPoolMlp;
    if (name == "attn1") return Arch::Attn1;
    throw ArgumentError("unknown embedder architecture '" + std::string(name) + "'");
}

void validate(const EmbedderConfig &cfg) {
    if (cfg.embed_dim < 2) throw ArgumentError("embed_dim must be >= 2");
    if (cfg.input_dim < 1) throw ArgumentError("input_dim must be >= 1");
    if (cfg.arch == Arch::MeanPoolMlp) {
        if (cfg.hidden.empty()) throw ArgumentError("meanpool_mlp needs at least one hidden layer");
        if (std::find(cfg.hidden.begin(), cfg.hidden.end(), 0u) != cfg.hidden.end()) {
            throw ArgumentError("hidden sizes must be positive");
        }
    } else {
        if (cfg.key_dim < 1) throw ArgumentError("key_dim must be >= 1");
        if (cfg.positional_encoding && cfg.input_dim % 2 != 0) {
            throw ArgumentError("attn1 with positional encoding needs an even input_dim");
        }
    }
}

void to_json(nlohmann::json &j, const EmbedderConfig &cfg) {
    j = nlohmann::json{{"arch", std::string(to_string(cfg.arch))},
                       {"input_dim", cfg.input_dim},
                       {"hidden", cfg.hidden},
                       {"embed_dim", cfg.embed_dim},
                       {"key_dim", cfg.key_dim},
                       {"positional_encoding", cfg.positional_encoding},
                       {"seed", cfg.seed}};
}

void from_json(const nlohmann::json &j, EmbedderConfig &cfg) {
    if (j.contains("arch")) cfg.arch = parse_arch(j.at("arch").get<std::string>());
    if (j.contains("input_dim")) cfg.input_dim = j.at("input_dim").get<std::size_t>();
    if (j.contains("hidden")) cfg.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    if (j.contains("embed_dim")) cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
    if (j.contains("key_dim")) cfg.key_dim = j.at("key_dim").get<std::size_t>();
    if (j.contains("positional_encoding")) cfg.positional_encoding = j.at("positional_encoding").get<bool>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
}

std::size_t EmbedderModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto &p : params) n += static_cast<std::size_t>(p.value.size());
    return n;
}

// ─── Construction ───────────────────────────────────────────────────────────

EmbedderModel init_model(const EmbedderConfig &cfg) {
    validate(cfg);
    std::mt19937_64 rng(cfg.seed);
    EmbedderModel model{cfg, {}};
    if (cfg.arch == Arch::MeanPoolMlp) {
        std::vector<std::size_t> widths{cfg.input_dim};
        widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
        widths.push_back(cfg.embed_dim);
        for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
            const std::string prefix = "mlp." + std::to_string(l);
            model.params.push_back({prefix + ".weight", glorot(widths[l + 1], widths[l], widths[l], widths[l + 1], rng)});
            model.params.push_back({prefix + ".bias", glorot(widths[l + 1], 1, widths[l], widths[l + 1], rng)});
        }
    } else {
        const auto d = cfg.input_dim, dk = cfg.key_dim, e = cfg.embed_dim;
        model.params.push_back({"attn.query", glorot(d, dk, d, dk, rng)});
        model.params.push_back({"attn.key", glorot(d, dk, d, dk, rng)});
        model.params.push_back({"attn.value", glorot(d, dk, d, dk, rng)});
        model.params.push_back({"attn.output", glorot(dk, e, dk, e, rng)});
        model.params.push_back({"attn.output_bias", glorot(e, 1, dk, e, rng)});
    }
    return model;
}

Eigen::MatrixXd positional_encoding(std::size_t frames, std::size_t dim) {
    if (frames < 1) throw ArgumentError("positional encoding needs at least one frame");
    if (dim < 2 || dim % 2 != 0) throw ArgumentError("positional encoding needs an even dim >= 2");
    MatrixXd pe(frames, dim);
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t i = 0; i < dim / 2; ++i) {
            const double angle =
                static_cast<double>(t) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
            pe(t, 2 * i) = std::sin(angle);
            pe(t, 2 * i + 1) = std::cos(angle);
        }
    }
    return pe;
}

Eigen::MatrixXd to_eigen(const FeatureMatrix &x) {
    using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    return Eigen::Map<const RowMajorF>(x.data().data(), static_cast<Eigen::Index>(x.rows()),
                                       static_cast<Eigen::Index>(x.cols()))
        .cast<double>();
}

// ─── Forward / backward ─────────────────────────────────────────────────────

Embedding forward(const EmbedderModel &model, const FeatureMatrix &x) {
    check_input(model, x);
    const MatrixXd input = to_eigen(x);
    if (model.config.arch == Arch::MeanPoolMlp) return normalize(mlp_forward(model, input).output);
    return normalize(attn_forward(model, input).output);
}

Eigen::MatrixXd attention_weights(const EmbedderModel &model, const FeatureMatrix &x) {
    if (model.config.arch != Arch::Attn1) throw ArgumentError("attention weights exist only for attn1");
    check_input(model, x);
    return attn_forward(model, to_eigen(x)).attn;
}

ParamGrads zero_grads(const EmbedderModel &model) {
    ParamGrads grads;
    grads.reserve(model.params.size());
    for (const auto &p : model.params) grads.push_back(MatrixXd::Zero(p.value.rows(), p.value.cols()));
    return grads;
}

void accumulate_backward(const EmbedderModel &model, const FeatureMatrix &x, const Eigen::VectorXd &upstream,
                         ParamGrads &grads) {
    check_input(model, x);
    if (static_cast<std::size_t>(upstream.size()) != model.config.embed_dim) {
        throw ArgumentError("upstream gradient has " + std::to_string(upstream.size()) + " entries, expected " +
                            std::to_string(model.config.embed_dim));
    }
    if (grads.size() != model.params.size()) throw ArgumentError("gradient buffer does not match model");
    const MatrixXd input = to_eigen(x);
    if (model.config.arch == Arch::MeanPoolMlp) {
        mlp_backward(model, input, upstream, grads);
    } else {
        attn_backward(model, input, upstream, grads);
    }
}

ParamGrads backward(const EmbedderModel &model, const FeatureMatrix &x, const Eigen::VectorXd &upstream) {
    ParamGrads grads = zero_grads(model);
    accumulate_backward(model, x, upstream, grads);
    return grads;
}

double grad_check(const EmbedderModel &model, const FeatureMatrix &x, const Eigen::VectorXd &probe,
                  const GradFn &analytic, double step) {
    const ParamGrads grads = analytic(model, x, probe);
    EmbedderModel work = model;
    const MatrixXd input = to_eigen(x);
    const auto base_pattern = relu_pattern(work, input);
    double worst = 0.0;
    for (std::size_t p = 0; p < work.params.size(); ++p) {
        auto &value = work.params[p].value;
        for (Eigen::Index i = 0; i < value.size(); ++i) {
            const double original = value(i);
            // Shrink the stencil until it stays inside one linear piece of
            // every ReLU; the derivative is not defined across a kink.
            double h = step;
            bool smooth = false;
            for (int attempt = 0; attempt < 8 && !smooth; ++attempt, h *= 0.5) {
                smooth = true;
                for (double offset : {-2 * h, 2 * h}) {
                    value(i) = original + offset;
                    smooth = smooth && relu_pattern(work, input) == base_pattern;
                }
                if (smooth) break;
            }
            value(i) = original;
            if (!smooth) continue;
            auto at = [&](double offset) {
                value(i) = original + offset;
                return probe.dot(forward(work, x));
            };
            const double numeric = (-at(2 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2 * h)) / (12.0 * h);
            value(i) = original;
            const double exact = grads[p](i);
            const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(exact - numeric) / denom);
        }
    }
    return worst;
}

// ─── Checkpoints ────────────────────────────────────────────────────────────

void quantize_to_float(EmbedderModel &model) {
    for (auto &p : model.params) p.value = p.value.cast<float>().cast<double>();
}

void save_checkpoint(const EmbedderModel &model, const std::filesystem::path &path) {
    nlohmann::json header;
    header["format"] = "metricdiar-checkpoint";
    header["version"] = 1;
    header["config"] = model.config;
    header["seed"] = model.config.seed;
    header["params"] = nlohmann::json::array();
    for (const auto &p : model.params) {
        header["params"].push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    const std::string line = header.dump() + "\n";
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    for (const auto &p : model.params) {
        std::vector<float> values;
        values.reserve(static_cast<std::size_t>(p.value.size()));
        for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
            for (Eigen::Index c = 0; c < p.value.cols(); ++c) values.push_back(static_cast<float>(p.value(r, c)));
        }
        const auto block = encode_fmat(FeatureMatrix(p.value.rows(), p.value.cols(), std::move(values)));
        out.write(reinterpret_cast<const char *>(block.data()), static_cast<std::streamsize>(block.size()));
    }
    if (!out) throw IoError("write failed for " + path.string());
}

EmbedderModel load_checkpoint(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto newline = std::find(bytes.begin(), bytes.end(), static_cast<unsigned char>('\n'));
    if (newline == bytes.end()) throw FormatError(path.string() + ": missing checkpoint header line");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin(), newline);
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    EmbedderConfig cfg;
    try {
        cfg = header.at("config").get<EmbedderConfig>();
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    EmbedderModel model = init_model(cfg);
    std::size_t offset = static_cast<std::size_t>(newline - bytes.begin()) + 1;
    for (auto &p : model.params) {
        const FeatureMatrix block = decode_fmat(bytes, offset, path.string() + " [" + p.name + "]");
        if (static_cast<Eigen::Index>(block.rows()) != p.value.rows() ||
            static_cast<Eigen::Index>(block.cols()) != p.value.cols()) {
            throw FormatError(path.string() + ": parameter " + p.name + " has the wrong shape");
        }
        p.value = to_eigen(block);
    }
    if (offset != bytes.size()) throw FormatError(path.string() + ": trailing bytes after parameters");
    return model;
}

} // namespace metricdiar
