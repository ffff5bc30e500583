#include "metricdiar/synth.hpp"

#include "metricdiar/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace metricdiar {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string numbered(const std::string &prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%03zu", i);
    return prefix + buf;
}

MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, Rng &rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
    }
    return m;
}

// Rows are the speaker means. With n <= d the directions are orthonormal,
// so every pairwise distance equals `separation` exactly.
MatrixXd speaker_means(std::size_t n, std::size_t d, double separation, Rng &rng) {
    const auto rows = static_cast<Eigen::Index>(n), cols = static_cast<Eigen::Index>(d);
    MatrixXd directions(rows, cols);
    if (n <= d) {
        Eigen::HouseholderQR<MatrixXd> qr(gaussian(cols, rows, rng));
        directions = (qr.householderQ() * MatrixXd::Identity(cols, rows)).transpose();
    } else {
        directions = gaussian(rows, cols, rng);
        directions.rowwise().normalize();
    }
    return directions * (separation / std::sqrt(2.0));
}

// Lower-triangular T x T map with unit-norm rows: entry (t, j) is a Gaussian
// draw damped by rho^(t - j).
MatrixXd coloring(std::size_t frames, Rng &rng) {
    std::uniform_real_distribution<double> decay(0.3, 0.9);
    const double rho = decay(rng);
    const auto t_max = static_cast<Eigen::Index>(frames);
    MatrixXd l = MatrixXd::Zero(t_max, t_max);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index t = 0; t < t_max; ++t) {
        for (Eigen::Index j = 0; j <= t; ++j) l(t, j) = normal(rng) * std::pow(rho, static_cast<double>(t - j));
        const double norm = l.row(t).norm();
        if (norm > 0.0) {
            l.row(t) /= norm;
        } else {
            l(t, t) = 1.0;
        }
    }
    return l;
}

FeatureMatrix draw_segment(const VectorXd &mean, const MatrixXd &color, std::size_t frames, std::size_t dim,
                           Rng &rng) {
    const MatrixXd noise = gaussian(static_cast<Eigen::Index>(frames), static_cast<Eigen::Index>(dim), rng);
    const MatrixXd x = (color * noise).rowwise() + mean.transpose();
    std::vector<float> values(frames * dim);
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t c = 0; c < dim; ++c) {
            values[t * dim + c] = static_cast<float>(x(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)));
        }
    }
    return FeatureMatrix(frames, dim, std::move(values));
}

} // namespace

void validate(const SynthSpec &spec) {
    if (spec.n_speakers < 1 || spec.segments_per_speaker < 1 || spec.frames_per_segment < 1 || spec.dim < 1 ||
        spec.speakers_per_conversation < 1) {
        throw ValidationError("synthetic corpus counts must be >= 1");
    }
    if (!(spec.separation >= 0.0)) throw ValidationError("separation must be >= 0");
    if (!(spec.segment_seconds > 0.0)) throw ValidationError("segment_seconds must be positive");
}

Corpus generate_corpus(const SynthSpec &spec) {
    validate(spec);
    Rng rng(spec.seed);
    const MatrixXd means = speaker_means(spec.n_speakers, spec.dim, spec.separation, rng);
    std::vector<MatrixXd> colors;
    for (std::size_t s = 0; s < spec.n_speakers; ++s) {
        colors.push_back(spec.colored_noise
                             ? coloring(spec.frames_per_segment, rng)
                             : MatrixXd::Identity(static_cast<Eigen::Index>(spec.frames_per_segment),
                                                  static_cast<Eigen::Index>(spec.frames_per_segment)));
    }

    std::vector<Conversation> conversations;
    for (std::size_t first = 0, c = 0; first < spec.n_speakers; first += spec.speakers_per_conversation, ++c) {
        const std::size_t last = std::min(spec.n_speakers, first + spec.speakers_per_conversation);
        std::vector<std::size_t> order;
        for (std::size_t s = first; s < last; ++s) order.insert(order.end(), spec.segments_per_speaker, s);
        std::shuffle(order.begin(), order.end(), rng);

        Conversation conv;
        conv.id = numbered(spec.prefix + "conv", c);
        if (!spec.languages.empty()) conv.tags["language"] = spec.languages[c % spec.languages.size()];
        for (std::size_t slot = 0; slot < order.size(); ++slot) {
            const auto s = order[slot];
            conv.segments.push_back({conv.id, numbered(spec.prefix, s), static_cast<double>(slot) * spec.segment_seconds,
                                     spec.segment_seconds,
                                     draw_segment(means.row(static_cast<Eigen::Index>(s)).transpose(), colors[s],
                                                  spec.frames_per_segment, spec.dim, rng)});
        }
        conversations.push_back(std::move(conv));
    }
    return Corpus({spec.frames_per_segment, spec.dim}, std::move(conversations));
}

Corpus concatenate_conversations(const Corpus &corpus, std::size_t group_size, Rng &rng) {
    if (group_size < 1) throw ArgumentError("group_size must be >= 1");
    const auto &source = corpus.conversations();
    if (source.size() < group_size) {
        throw CapacityError("cannot group " + std::to_string(source.size()) + " conversations by " +
                            std::to_string(group_size));
    }
    std::vector<std::size_t> order(source.size());
    std::iota(order.begin(), order.end(), 0);
    if (group_size > 1) std::shuffle(order.begin(), order.end(), rng);

    std::vector<Conversation> out;
    for (std::size_t first = 0; first < order.size(); first += group_size) {
        const std::size_t last = std::min(order.size(), first + group_size);
        Conversation merged;
        double clock = 0.0;
        for (std::size_t g = first; g < last; ++g) {
            const auto &conv = source[order[g]];
            merged.id += (g == first ? "" : "+") + conv.id;
            if (g == first) {
                merged.tags = conv.tags;
            } else {
                std::erase_if(merged.tags, [&](const auto &kv) {
                    auto it = conv.tags.find(kv.first);
                    return it == conv.tags.end() || it->second != kv.second;
                });
            }
            if (conv.segments.empty()) continue;
            const double shift = (g == first) ? 0.0 : clock - conv.segments.front().onset;
            for (const auto &s : conv.segments) {
                SegmentRecord moved = s;
                moved.onset = s.onset + shift;
                if (group_size > 1 && moved.speaker) moved.speaker = conv.id + ":" + *moved.speaker;
                clock = std::max(clock, moved.onset + moved.duration);
                merged.segments.push_back(std::move(moved));
            }
        }
        for (auto &s : merged.segments) s.conversation_id = merged.id;
        out.push_back(std::move(merged));
    }
    return Corpus(corpus.geometry(), std::move(out));
}

} // namespace metricdiar
