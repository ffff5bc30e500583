#include "metricdiar/sampling.hpp"

#include "metricdiar/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace metricdiar {

namespace {

void require_embeddings(const PkBatch &batch) {
    if (batch.embeddings.size() != batch.items.size()) {
        throw ArgumentError("batch embeddings are missing or incomplete");
    }
}

double batch_sq_dist(const PkBatch &batch, std::size_t i, std::size_t j) {
    return (batch.embeddings[i] - batch.embeddings[j]).squaredNorm();
}

std::size_t uniform_pick(std::span<const std::size_t> candidates, Rng &rng) {
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    return candidates[pick(rng)];
}

std::size_t weighted_pick(std::span<const std::size_t> candidates, std::span<const double> probs, Rng &rng) {
    std::discrete_distribution<std::size_t> pick(probs.begin(), probs.end());
    return candidates[pick(rng)];
}

// Shared selection rule for n (reference = anchor) and q (reference = n).
// `sqdists[j]` is the squared distance from the reference to candidates[j];
// `target` is D_ap^2.
std::size_t select(std::span<const std::size_t> candidates, std::span<const double> sqdists, double target,
                   double alpha, const SamplingStrategy &strategy, std::size_t embed_dim, Rng &rng) {
    switch (strategy.kind) {
    case StrategyKind::Random:
        return uniform_pick(candidates, rng);
    case StrategyKind::SemiHard: {
        std::vector<std::size_t> semi_hard;
        std::size_t beyond = kNoIndex;
        double beyond_dist = 0.0;
        for (std::size_t j = 0; j < candidates.size(); ++j) {
            const double d = sqdists[j];
            if (d >= target && d <= target + alpha) {
                semi_hard.push_back(candidates[j]);
            } else if (d > target + alpha && (beyond == kNoIndex || d < beyond_dist)) {
                beyond = candidates[j];
                beyond_dist = d;
            }
        }
        if (!semi_hard.empty()) return uniform_pick(semi_hard, rng);
        if (beyond != kNoIndex) return beyond;
        return uniform_pick(candidates, rng);
    }
    case StrategyKind::DistanceWeighted: {
        std::vector<double> raw(sqdists.size());
        std::transform(sqdists.begin(), sqdists.end(), raw.begin(), [](double d) { return std::sqrt(d); });
        const auto probs = strategy.weighting == DwWeighting::InverseDistance
                               ? dw_probs(raw, strategy.d_min)
                               : dw_density_probs(raw, embed_dim, strategy.d_min);
        return weighted_pick(candidates, probs, rng);
    }
    }
    throw ArgumentError("unknown sampling strategy");
}

std::vector<std::size_t> negatives_of(const PkBatch &batch, std::size_t anchor) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < batch.size(); ++j) {
        if (batch.labels[j] != batch.labels[anchor]) out.push_back(j);
    }
    if (out.empty()) throw CapacityError("batch has no item from another speaker");
    return out;
}

std::vector<double> sqdists_from(const PkBatch &batch, std::size_t ref, std::span<const std::size_t> candidates) {
    std::vector<double> out;
    out.reserve(candidates.size());
    for (auto j : candidates) out.push_back(batch_sq_dist(batch, ref, j));
    return out;
}

} // namespace

// ─── Names ──────────────────────────────────────────────────────────────────

std::string_view to_string(StrategyKind kind) noexcept {
    switch (kind) {
    case StrategyKind::SemiHard: return "semihard";
    case StrategyKind::DistanceWeighted: return "dw";
    case StrategyKind::Random: break;
    }
    return "random";
}

StrategyKind parse_strategy(std::string_view name) {
    if (name == "random") return StrategyKind::Random;
    if (name == "semihard" || name == "semi-hard" || name == "sh") return StrategyKind::SemiHard;
    if (name == "dw" || name == "distance-weighted" || name == "dws") return StrategyKind::DistanceWeighted;
    throw ArgumentError("unknown sampling strategy '" + std::string(name) + "'");
}

void validate(const SamplingStrategy &strategy) {
    if (!(strategy.d_min > 0.0)) throw ArgumentError("d_min must be positive");
}

std::string_view to_string(LossKind kind) noexcept {
    return kind == LossKind::Quadruplet ? "quadruplet" : "triplet";
}

LossKind parse_loss_kind(std::string_view name) {
    if (name == "triplet") return LossKind::Triplet;
    if (name == "quadruplet") return LossKind::Quadruplet;
    throw ArgumentError("unknown loss '" + std::string(name) + "'");
}

// ─── Batches ────────────────────────────────────────────────────────────────

SpeakerIndex::SpeakerIndex(const Corpus &corpus) {
    std::map<std::string, std::size_t> slot;
    const auto &convs = corpus.conversations();
    for (std::size_t c = 0; c < convs.size(); ++c) {
        for (std::size_t s = 0; s < convs[c].segments.size(); ++s) {
            const auto &label = convs[c].segments[s].speaker;
            if (!label) continue;
            auto [it, inserted] = slot.emplace(*label, speakers.size());
            if (inserted) {
                speakers.push_back(*label);
                segments.emplace_back();
            }
            segments[it->second].push_back({c, s});
        }
    }
}

PkBatch make_pk_batch(const SpeakerIndex &index, std::size_t P, std::size_t K, Rng &rng) {
    if (P < 1 || K < 1) throw ArgumentError("P and K must be positive");
    std::vector<std::size_t> eligible;
    for (std::size_t s = 0; s < index.speakers.size(); ++s) {
        if (index.segments[s].size() >= K) eligible.push_back(s);
    }
    if (eligible.size() < P) {
        throw CapacityError("need " + std::to_string(P) + " speakers with >= " + std::to_string(K) +
                            " segments, corpus has " + std::to_string(eligible.size()));
    }
    std::shuffle(eligible.begin(), eligible.end(), rng);

    PkBatch batch;
    batch.P = P;
    batch.K = K;
    for (std::size_t i = 0; i < P; ++i) {
        const auto speaker = eligible[i];
        batch.speaker_names.push_back(index.speakers[speaker]);
        std::vector<SegmentRef> pool = index.segments[speaker];
        std::shuffle(pool.begin(), pool.end(), rng);
        for (std::size_t k = 0; k < K; ++k) {
            batch.items.push_back(pool[k]);
            batch.labels.push_back(i);
        }
    }
    return batch;
}

PkBatch make_pk_batch(const Corpus &corpus, std::size_t P, std::size_t K, Rng &rng) {
    return make_pk_batch(SpeakerIndex(corpus), P, K, rng);
}

// ─── Negative selection ─────────────────────────────────────────────────────

std::size_t random_negative(const PkBatch &batch, std::size_t anchor, Rng &rng) {
    return uniform_pick(negatives_of(batch, anchor), rng);
}

std::size_t semi_hard_negative(const PkBatch &batch, std::size_t anchor, std::size_t positive, double alpha,
                               Rng &rng) {
    require_embeddings(batch);
    if (batch.labels[anchor] != batch.labels[positive]) {
        throw ArgumentError("anchor and positive must share a speaker");
    }
    const auto candidates = negatives_of(batch, anchor);
    const auto sqdists = sqdists_from(batch, anchor, candidates);
    return select(candidates, sqdists, batch_sq_dist(batch, anchor, positive), alpha,
                  {StrategyKind::SemiHard}, 0, rng);
}

std::vector<double> dw_probs(std::span<const double> anchor_negative_dists, double d_min) {
    if (anchor_negative_dists.empty()) throw ArgumentError("distance-weighted sampling needs candidates");
    if (!(d_min > 0.0)) throw ArgumentError("d_min must be positive");
    std::vector<double> w(anchor_negative_dists.size());
    for (std::size_t j = 0; j < w.size(); ++j) {
        const double d = anchor_negative_dists[j];
        if (!(d >= 0.0)) throw ArgumentError("distances must be non-negative");
        w[j] = 1.0 / std::max(d, d_min);
    }
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (auto &x : w) x /= total;
    return w;
}

std::vector<double> dw_density_probs(std::span<const double> anchor_negative_dists, std::size_t embed_dim,
                                     double d_min) {
    if (anchor_negative_dists.empty()) throw ArgumentError("distance-weighted sampling needs candidates");
    if (!(d_min > 0.0) || d_min >= 1.0) throw ArgumentError("d_min must lie in (0, 1)");
    const double e = static_cast<double>(embed_dim);
    std::vector<double> log_w(anchor_negative_dists.size());
    for (std::size_t j = 0; j < log_w.size(); ++j) {
        const double d = std::clamp(anchor_negative_dists[j], d_min, 2.0 - d_min);
        const double log_q = (e - 2.0) * std::log(d) + 0.5 * (e - 3.0) * std::log(1.0 - 0.25 * d * d);
        log_w[j] = -log_q;
    }
    const double top = *std::max_element(log_w.begin(), log_w.end());
    std::vector<double> w(log_w.size());
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = std::exp(log_w[j] - top);
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (auto &x : w) x /= total;
    return w;
}

std::size_t distance_weighted_negative(const PkBatch &batch, std::size_t anchor, const SamplingStrategy &strategy,
                                       Rng &rng) {
    require_embeddings(batch);
    const auto candidates = negatives_of(batch, anchor);
    const auto sqdists = sqdists_from(batch, anchor, candidates);
    SamplingStrategy dw = strategy;
    dw.kind = StrategyKind::DistanceWeighted;
    return select(candidates, sqdists, 0.0, 0.0, dw, static_cast<std::size_t>(batch.embeddings[anchor].size()), rng);
}

// ─── Tuples ─────────────────────────────────────────────────────────────────

TupleSet build_tuples(const PkBatch &batch, LossKind kind, const SamplingStrategy &strategy,
                      SelectionMargins margins, Rng &rng) {
    validate(strategy);
    if (strategy.kind != StrategyKind::Random) require_embeddings(batch);
    if (kind == LossKind::Quadruplet && batch.P < 3) {
        throw CapacityError("quadruplets need at least 3 speakers per batch");
    }
    const std::size_t embed_dim = batch.embeddings.empty() ? 0 : static_cast<std::size_t>(batch.embeddings[0].size());
    auto sqdists_or_empty = [&](std::size_t ref, std::span<const std::size_t> candidates) {
        return strategy.kind == StrategyKind::Random ? std::vector<double>(candidates.size(), 0.0)
                                                     : sqdists_from(batch, ref, candidates);
    };

    TupleSet out{kind, {}};
    for (std::size_t a = 0; a < batch.size(); ++a) {
        const auto negatives = negatives_of(batch, a);
        const auto an = sqdists_or_empty(a, negatives);
        for (std::size_t p = 0; p < batch.size(); ++p) {
            if (p == a || batch.labels[p] != batch.labels[a]) continue;
            const double ap = strategy.kind == StrategyKind::Random ? 0.0 : batch_sq_dist(batch, a, p);
            Tuple t{a, p, select(negatives, an, ap, margins.alpha1, strategy, embed_dim, rng), kNoIndex};
            if (kind == LossKind::Quadruplet) {
                std::vector<std::size_t> third;
                for (std::size_t j = 0; j < batch.size(); ++j) {
                    if (batch.labels[j] != batch.labels[a] && batch.labels[j] != batch.labels[t.n]) third.push_back(j);
                }
                if (third.empty()) throw CapacityError("no item from a third speaker for the quadruplet");
                t.q = select(third, sqdists_or_empty(t.n, third), ap, margins.alpha2, strategy, embed_dim, rng);
            }
            out.tuples.push_back(t);
        }
    }
    return out;
}

} // namespace metricdiar
