#pragma once

#include "metricdiar/features.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace metricdiar {

using Rng = std::mt19937_64;

enum class StrategyKind { Random, SemiHard, DistanceWeighted };

// Plain inverse distance, or the hypersphere-density correction
// p ∝ 1 / q(d) with q(d) ∝ d^(e-2) (1 - d^2/4)^((e-3)/2).
enum class DwWeighting { InverseDistance, HypersphereDensity };

struct SamplingStrategy {
    StrategyKind kind = StrategyKind::Random;
    double d_min = 0.1;
    DwWeighting weighting = DwWeighting::InverseDistance;
};

std::string_view to_string(StrategyKind kind) noexcept;
StrategyKind parse_strategy(std::string_view name);
void validate(const SamplingStrategy &strategy);

enum class LossKind { Triplet, Quadruplet };

std::string_view to_string(LossKind kind) noexcept;
LossKind parse_loss_kind(std::string_view name);

struct SegmentRef {
    std::size_t conversation = 0;
    std::size_t segment = 0;
    friend bool operator==(const SegmentRef &, const SegmentRef &) = default;
};

// Labeled segments grouped by speaker, in first-appearance order.
struct SpeakerIndex {
    std::vector<std::string> speakers;
    std::vector<std::vector<SegmentRef>> segments;

    explicit SpeakerIndex(const Corpus &corpus);
};

// P speakers x K segments. labels[i] is the in-batch speaker index of item i;
// embeddings are filled in by the caller from the current model.
struct PkBatch {
    std::size_t P = 0;
    std::size_t K = 0;
    std::vector<SegmentRef> items;
    std::vector<std::size_t> labels;
    std::vector<std::string> speaker_names;
    std::vector<Eigen::VectorXd> embeddings;

    std::size_t size() const noexcept { return items.size(); }
};

PkBatch make_pk_batch(const SpeakerIndex &index, std::size_t P, std::size_t K, Rng &rng);
PkBatch make_pk_batch(const Corpus &corpus, std::size_t P, std::size_t K, Rng &rng);

// Uniform over items whose label differs from the anchor's.
std::size_t random_negative(const PkBatch &batch, std::size_t anchor, Rng &rng);

// Uniform over negatives with D_ap^2 <= D_an^2 <= D_ap^2 + alpha. If none,
// the closest negative beyond the margin; if none of those either, a random one.
std::size_t semi_hard_negative(const PkBatch &batch, std::size_t anchor, std::size_t positive, double alpha,
                               Rng &rng);

// p_j = w_j / sum(w), w_j = 1 / max(D_j, d_min), over raw (unsquared) distances.
std::vector<double> dw_probs(std::span<const double> anchor_negative_dists, double d_min);

// Inverse hypersphere-density weights for embedding dimension `embed_dim`.
// Distances are clamped to [d_min, 2 - d_min].
std::vector<double> dw_density_probs(std::span<const double> anchor_negative_dists, std::size_t embed_dim,
                                     double d_min);

std::size_t distance_weighted_negative(const PkBatch &batch, std::size_t anchor, const SamplingStrategy &strategy,
                                       Rng &rng);

inline constexpr std::size_t kNoIndex = std::numeric_limits<std::size_t>::max();

struct Tuple {
    std::size_t a = 0, p = 0, n = 0;
    std::size_t q = kNoIndex; // quadruplets only
    friend bool operator==(const Tuple &, const Tuple &) = default;
};

struct TupleSet {
    LossKind kind = LossKind::Triplet;
    std::vector<Tuple> tuples;
};

// Margins used by semi-hard selection: alpha1 for n, alpha2 for q.
struct SelectionMargins {
    double alpha1 = 0.8;
    double alpha2 = 0.4;
};

// One negative (and for quadruplets one q, chosen relative to n) for every
// ordered anchor-positive pair in the batch.
TupleSet build_tuples(const PkBatch &batch, LossKind kind, const SamplingStrategy &strategy,
                      SelectionMargins margins, Rng &rng);

} // namespace metricdiar
