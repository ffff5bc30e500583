#include "metricdiar/errors.hpp"
#include "metricdiar/sampling.hpp"
#include "metricdiar/synth.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

using namespace metricdiar;

namespace {

// Batch with explicit labels and embeddings; items are placeholders.
PkBatch hand_batch(std::vector<std::size_t> labels, std::vector<Eigen::VectorXd> embeddings) {
    PkBatch b;
    std::set<std::size_t> distinct(labels.begin(), labels.end());
    b.P = distinct.size();
    b.K = labels.size() / std::max<std::size_t>(b.P, 1);
    for (std::size_t i = 0; i < labels.size(); ++i) b.items.push_back({0, i});
    b.labels = std::move(labels);
    b.embeddings = std::move(embeddings);
    return b;
}

Eigen::VectorXd scalar(double x) { return Eigen::VectorXd::Constant(1, x); }

PkBatch random_batch(std::size_t P, std::size_t K, Eigen::Index dim, Rng &rng) {
    std::vector<std::size_t> labels;
    std::vector<Eigen::VectorXd> z;
    std::normal_distribution<double> normal;
    for (std::size_t p = 0; p < P; ++p) {
        for (std::size_t k = 0; k < K; ++k) {
            labels.push_back(p);
            Eigen::VectorXd v(dim);
            for (Eigen::Index i = 0; i < dim; ++i) v(i) = normal(rng);
            z.push_back(v.normalized());
        }
    }
    return hand_batch(labels, z);
}

double sq(const PkBatch &b, std::size_t i, std::size_t j) { return (b.embeddings[i] - b.embeddings[j]).squaredNorm(); }

Corpus small_corpus(std::size_t speakers, std::size_t segments) {
    SynthSpec spec;
    spec.n_speakers = speakers;
    spec.segments_per_speaker = segments;
    spec.frames_per_segment = 4;
    spec.dim = 3;
    spec.speakers_per_conversation = 1;
    spec.seed = 5;
    return generate_corpus(spec);
}

// |observed - expected| within 3 multinomial standard errors.
void check_frequencies(const std::vector<std::size_t> &counts, const std::vector<double> &probs, std::size_t draws) {
    for (std::size_t j = 0; j < counts.size(); ++j) {
        const double expected = static_cast<double>(draws) * probs[j];
        const double sigma = std::sqrt(static_cast<double>(draws) * probs[j] * (1.0 - probs[j]));
        CHECK(std::abs(static_cast<double>(counts[j]) - expected) <= 3.0 * sigma);
    }
}

} // namespace

TEST_CASE("pk batch from a corpus") {
    const Corpus corpus = small_corpus(5, 10);
    Rng rng(11);
    const PkBatch batch = make_pk_batch(corpus, 3, 4, rng);
    REQUIRE(batch.size() == 12);
    std::map<std::size_t, std::size_t> per_label;
    for (auto l : batch.labels) ++per_label[l];
    CHECK(per_label.size() == 3);
    for (const auto &[label, count] : per_label) CHECK(count == 4);

    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto &ref = batch.items[i];
        const auto &segment = corpus.conversations()[ref.conversation].segments[ref.segment];
        CHECK(*segment.speaker == batch.speaker_names[batch.labels[i]]);
        seen.insert({ref.conversation, ref.segment});
    }
    CHECK(seen.size() == 12); // without replacement

    Rng again(11);
    const PkBatch twin = make_pk_batch(corpus, 3, 4, again);
    CHECK(twin.items == batch.items);
    CHECK(twin.labels == batch.labels);

    Rng r(1);
    CHECK_THROWS_AS(make_pk_batch(corpus, 6, 4, r), CapacityError);
    CHECK_THROWS_AS(make_pk_batch(corpus, 2, 11, r), CapacityError);
    CHECK_THROWS_AS(make_pk_batch(corpus, 0, 4, r), ArgumentError);
}

TEST_CASE("pk batch picks speakers uniformly") {
    const Corpus corpus = small_corpus(5, 4);
    const SpeakerIndex index(corpus);
    Rng rng(2);
    std::map<std::string, std::size_t> picked;
    const std::size_t draws = 6000;
    for (std::size_t i = 0; i < draws; ++i) {
        for (const auto &name : make_pk_batch(index, 3, 2, rng).speaker_names) ++picked[name];
    }
    REQUIRE(picked.size() == 5);
    for (const auto &[name, count] : picked) {
        const double sigma = std::sqrt(draws * 0.6 * 0.4);
        CHECK(std::abs(static_cast<double>(count) - draws * 0.6) <= 3.0 * sigma);
    }
}

TEST_CASE("random negative") {
    const PkBatch batch = hand_batch({0, 0, 1, 1}, {});
    Rng rng(4);
    std::vector<std::size_t> counts(2, 0);
    const std::size_t draws = 10000;
    for (std::size_t i = 0; i < draws; ++i) {
        const auto n = random_negative(batch, 0, rng);
        REQUIRE((n == 2 || n == 3));
        ++counts[n - 2];
    }
    check_frequencies(counts, {0.5, 0.5}, draws);

    Rng a(9), b(9);
    for (int i = 0; i < 50; ++i) CHECK(random_negative(batch, 1, a) == random_negative(batch, 1, b));

    const PkBatch lonely = hand_batch({0, 0, 0}, {});
    CHECK_THROWS_AS(random_negative(lonely, 0, rng), CapacityError);
}

TEST_CASE("semi-hard negative examples") {
    // Anchor at 0, positive with D_ap^2 = 0.5, negatives with D_an^2 = 0.4, 0.9, 1.5.
    const PkBatch batch = hand_batch({0, 0, 1, 1, 1}, {scalar(0), scalar(std::sqrt(0.5)), scalar(std::sqrt(0.4)),
                                                       scalar(std::sqrt(0.9)), scalar(std::sqrt(1.5))});
    Rng rng(1);
    for (int i = 0; i < 20; ++i) CHECK(semi_hard_negative(batch, 0, 1, 0.8, rng) == 3);

    SUBCASE("nothing semi-hard or beyond falls back to random") {
        const PkBatch close = hand_batch({0, 0, 1, 1}, {scalar(0), scalar(1), scalar(0.1), scalar(0.2)});
        std::set<std::size_t> seen;
        for (int i = 0; i < 200; ++i) seen.insert(semi_hard_negative(close, 0, 1, 0.8, rng));
        CHECK(seen == std::set<std::size_t>{2, 3});
    }
    SUBCASE("nothing semi-hard takes the closest beyond the margin") {
        const PkBatch far = hand_batch({0, 0, 1, 1, 1}, {scalar(0), scalar(0.1), scalar(3), scalar(2), scalar(0.05)});
        for (int i = 0; i < 20; ++i) CHECK(semi_hard_negative(far, 0, 1, 0.8, rng) == 3);
    }
    SUBCASE("closed lower bound") {
        const PkBatch tie = hand_batch({0, 0, 1, 1}, {scalar(0), scalar(0.5), scalar(-0.5), scalar(5)});
        for (int i = 0; i < 20; ++i) CHECK(semi_hard_negative(tie, 0, 1, 0.8, rng) == 2);
    }
    CHECK_THROWS_AS(semi_hard_negative(batch, 0, 2, 0.8, rng), ArgumentError);
}

TEST_CASE("semi-hard selection agrees with a brute-force set") {
    Rng rng(31);
    for (int trial = 0; trial < 300; ++trial) {
        const PkBatch batch = random_batch(4, 3, 4, rng);
        for (std::size_t a = 0; a < batch.size(); ++a) {
            for (std::size_t p = 0; p < batch.size(); ++p) {
                if (p == a || batch.labels[p] != batch.labels[a]) continue;
                const double ap = sq(batch, a, p);
                const double alpha = 0.3;
                std::set<std::size_t> semi;
                std::size_t closest_beyond = kNoIndex;
                for (std::size_t n = 0; n < batch.size(); ++n) {
                    if (batch.labels[n] == batch.labels[a]) continue;
                    const double an = sq(batch, a, n);
                    if (an >= ap && an <= ap + alpha) semi.insert(n);
                    if (an > ap + alpha && (closest_beyond == kNoIndex || an < sq(batch, a, closest_beyond)))
                        closest_beyond = n;
                }
                const auto got = semi_hard_negative(batch, a, p, alpha, rng);
                CHECK(batch.labels[got] != batch.labels[a]);
                if (!semi.empty()) {
                    CHECK(semi.count(got) == 1);
                } else if (closest_beyond != kNoIndex) {
                    CHECK(got == closest_beyond);
                    CHECK(sq(batch, a, got) >= ap);
                }
            }
        }
    }
}

TEST_CASE("dw probabilities") {
    const std::vector<double> dists{1, 2, 4};
    const auto p = dw_probs(dists, 0.1);
    REQUIRE(p.size() == 3);
    CHECK(p[0] == doctest::Approx(4.0 / 7.0).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(2.0 / 7.0).epsilon(1e-12));
    CHECK(p[2] == doctest::Approx(1.0 / 7.0).epsilon(1e-12));

    const std::vector<double> flat{0.7, 0.7, 0.7, 0.7};
    for (double x : dw_probs(flat, 0.1)) CHECK(x == doctest::Approx(0.25).epsilon(1e-12));

    const std::vector<double> with_zero{0.0, 1.0};
    const auto pz = dw_probs(with_zero, 0.1);
    CHECK(pz[0] == doctest::Approx(10.0 / 11.0).epsilon(1e-12));

    const std::vector<double> none;
    CHECK_THROWS_AS(dw_probs(none, 0.1), ArgumentError);
    const std::vector<double> negative{-1.0};
    CHECK_THROWS_AS(dw_probs(negative, 0.1), ArgumentError);
}

TEST_CASE("dw probabilities always normalize") {
    Rng rng(8);
    std::uniform_real_distribution<double> d(0.0, 2.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> dists(1 + trial % 13);
        for (auto &x : dists) x = d(rng);
        const auto p = dw_probs(dists, 0.1);
        double total = 0;
        for (double x : p) {
            CHECK(x > 0.0);
            total += x;
        }
        CHECK(std::abs(total - 1.0) <= 1e-9);
    }
}

TEST_CASE("hypersphere density weighting") {
    const std::vector<double> dists{0.5, 1.0};
    const auto p = dw_density_probs(dists, 4, 0.1);
    // q(d) = d^2 (1 - d^2/4)^(1/2) for e = 4; p ∝ 1/q.
    auto q = [](double d) { return d * d * std::sqrt(1.0 - d * d / 4.0); };
    const double w0 = 1.0 / q(0.5), w1 = 1.0 / q(1.0);
    CHECK(p[0] == doctest::Approx(w0 / (w0 + w1)).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(w1 / (w0 + w1)).epsilon(1e-12));

    // Antipodal and coincident points stay finite through the clamp.
    const std::vector<double> extremes{0.0, 2.0, 1.4};
    const auto pe = dw_density_probs(extremes, 32, 0.1);
    double total = 0;
    for (double x : pe) {
        CHECK(std::isfinite(x));
        total += x;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("distance weighted negative follows dw_probs") {
    // Anchor at 0; negatives at distances 1, 2, 4.
    const PkBatch batch = hand_batch({0, 0, 1, 1, 1}, {scalar(0), scalar(0.2), scalar(1), scalar(-2), scalar(4)});
    const std::vector<double> dists{1, 2, 4};
    const auto probs = dw_probs(dists, 0.1);
    Rng rng(12);
    const std::size_t draws = 20000;
    std::vector<std::size_t> counts(3, 0);
    SamplingStrategy dw{StrategyKind::DistanceWeighted};
    for (std::size_t i = 0; i < draws; ++i) ++counts[distance_weighted_negative(batch, 0, dw, rng) - 2];
    check_frequencies(counts, probs, draws);
}

TEST_CASE("tuple construction") {
    SUBCASE("counts for P=2, K=2") {
        const PkBatch batch = hand_batch({0, 0, 1, 1}, {scalar(0), scalar(0.1), scalar(1), scalar(1.1)});
        Rng rng(3);
        const auto tuples = build_tuples(batch, LossKind::Triplet, {StrategyKind::Random}, {}, rng);
        CHECK(tuples.tuples.size() == 4);
        CHECK_THROWS_AS(build_tuples(batch, LossKind::Quadruplet, {StrategyKind::Random}, {}, rng), CapacityError);
    }
    SUBCASE("label constraints hold for every strategy and loss") {
        Rng rng(77);
        const std::vector<SamplingStrategy> strategies{
            {StrategyKind::Random}, {StrategyKind::SemiHard}, {StrategyKind::DistanceWeighted},
            {StrategyKind::DistanceWeighted, 0.1, DwWeighting::HypersphereDensity}};
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t P = 3 + trial % 4, K = 2 + trial % 3;
            const PkBatch batch = random_batch(P, K, 6, rng);
            for (const auto &strategy : strategies) {
                for (auto kind : {LossKind::Triplet, LossKind::Quadruplet}) {
                    const auto set = build_tuples(batch, kind, strategy, {0.8, 0.4}, rng);
                    CHECK(set.tuples.size() == P * K * (K - 1));
                    for (const auto &t : set.tuples) {
                        CHECK(t.a != t.p);
                        CHECK(batch.labels[t.a] == batch.labels[t.p]);
                        CHECK(batch.labels[t.n] != batch.labels[t.a]);
                        if (kind == LossKind::Quadruplet) {
                            REQUIRE(t.q != kNoIndex);
                            CHECK(batch.labels[t.q] != batch.labels[t.a]);
                            CHECK(batch.labels[t.q] != batch.labels[t.n]);
                        } else {
                            CHECK(t.q == kNoIndex);
                        }
                    }
                }
            }
        }
    }
    SUBCASE("deterministic for a seed") {
        Rng make(5);
        const PkBatch batch = random_batch(4, 3, 5, make);
        for (auto kind : {StrategyKind::Random, StrategyKind::SemiHard, StrategyKind::DistanceWeighted}) {
            Rng a(40), b(40);
            const auto x = build_tuples(batch, LossKind::Quadruplet, {kind}, {}, a);
            const auto y = build_tuples(batch, LossKind::Quadruplet, {kind}, {}, b);
            CHECK(x.tuples == y.tuples);
        }
    }
}

TEST_CASE("strategy names") {
    CHECK(parse_strategy("semihard") == StrategyKind::SemiHard);
    CHECK(parse_strategy("dw") == StrategyKind::DistanceWeighted);
    CHECK(to_string(StrategyKind::Random) == "random");
    CHECK(parse_loss_kind("quadruplet") == LossKind::Quadruplet);
    CHECK_THROWS_AS(parse_strategy("hardest"), ArgumentError);
    CHECK_THROWS_AS(validate(SamplingStrategy{StrategyKind::DistanceWeighted, 0.0}), ArgumentError);
}
