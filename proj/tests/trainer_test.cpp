#include "metricdiar/errors.hpp"
#include "metricdiar/synth.hpp"
#include "metricdiar/trainer.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace metricdiar;

namespace {

Corpus corpus_of(std::size_t speakers, double separation, std::uint64_t seed, const std::string &prefix = "spk") {
    SynthSpec spec;
    spec.n_speakers = speakers;
    spec.segments_per_speaker = 12;
    spec.frames_per_segment = 20;
    spec.dim = 8;
    spec.separation = separation;
    spec.seed = seed;
    spec.prefix = prefix;
    return generate_corpus(spec);
}

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.embedder.input_dim = 8;
    cfg.embedder.hidden = {16};
    cfg.embedder.embed_dim = 8;
    cfg.optimizer.learning_rate = 0.01;
    cfg.optimizer.steps = 100;
    cfg.optimizer.P = 3;
    cfg.optimizer.K = 3;
    return cfg;
}

double mean_tail(const std::vector<double> &xs, std::size_t n) {
    double s = 0;
    for (std::size_t i = xs.size() - n; i < xs.size(); ++i) s += xs[i];
    return s / static_cast<double>(n);
}

} // namespace

TEST_CASE("two separable speakers train to near-zero loss") {
    SynthSpec spec;
    spec.n_speakers = 2;
    spec.separation = 1.0; // low enough that a fresh model does not already satisfy the margin
    spec.seed = 3;
    const Corpus corpus = generate_corpus(spec);
    TrainConfig cfg;
    cfg.embedder.input_dim = spec.dim;
    cfg.optimizer.steps = 200;
    cfg.optimizer.P = 2;
    cfg.optimizer.K = 4;
    cfg.optimizer.learning_rate = 0.01;
    const RunRecord run = train(cfg, corpus);
    REQUIRE(run.loss_curve.size() == 200);
    CHECK(run.loss_curve.front() > 0.1);
    CHECK(run.loss_curve.back() < 0.05);
}

TEST_CASE("config validation") {
    const Corpus corpus = corpus_of(4, 3, 1);
    TrainConfig cfg = small_config();
    cfg.optimizer.steps = 0;
    CHECK_THROWS_AS(train(cfg, corpus), ArgumentError);
    cfg = small_config();
    cfg.optimizer.learning_rate = 0.0;
    CHECK_THROWS_AS(train(cfg, corpus), ArgumentError);
    cfg = small_config();
    cfg.loss = LossKind::Quadruplet;
    cfg.optimizer.P = 2;
    CHECK_THROWS_AS(train(cfg, corpus), ArgumentError);
    cfg = small_config();
    cfg.embedder.input_dim = 9;
    CHECK_THROWS_AS(train(cfg, corpus), ArgumentError);
    cfg = small_config();
    cfg.optimizer.P = 5;
    CHECK_THROWS_AS(train(cfg, corpus), CapacityError);
}

TEST_CASE("unlabeled corpora are rejected") {
    Corpus corpus = corpus_of(4, 3, 1);
    auto convs = corpus.conversations();
    convs[0].segments[0].speaker.reset();
    const Corpus partial(corpus.geometry(), convs);
    CHECK_THROWS_AS(train(small_config(), partial), ValidationError);
}

TEST_CASE("training is deterministic") {
    const Corpus corpus = corpus_of(4, 2, 2);
    for (auto kind : {StrategyKind::Random, StrategyKind::SemiHard, StrategyKind::DistanceWeighted}) {
        TrainConfig cfg = small_config();
        cfg.optimizer.steps = 30;
        cfg.sampling.kind = kind;
        cfg.margin.mode = MarginMode::Adaptive;
        const auto a = train(cfg, corpus);
        const auto b = train(cfg, corpus);
        CHECK(a.loss_curve == b.loss_curve);
        CHECK(a.margin_curve == b.margin_curve);
        for (std::size_t p = 0; p < a.model.params.size(); ++p) CHECK(a.model.params[p].value == b.model.params[p].value);
        cfg.seed = 99;
        CHECK(train(cfg, corpus).loss_curve != a.loss_curve);
    }
}

TEST_CASE("every grid configuration stays finite and clears the margin") {
    const Corpus corpus = corpus_of(6, 2, 4);
    TrainConfig base = small_config();
    base.optimizer.steps = 150;
    for (const auto &cfg : grid_preset("full", base)) {
        CAPTURE(config_key(cfg));
        const auto run = train(cfg, corpus);
        REQUIRE(run.loss_curve.size() == cfg.optimizer.steps);
        for (double v : run.loss_curve) CHECK(std::isfinite(v));
        CHECK(mean_tail(run.loss_curve, 10) < cfg.margin.alpha1);
        for (double m : run.margin_curve) {
            if (cfg.margin.mode == MarginMode::Fixed) {
                CHECK(m == cfg.margin.alpha1);
            } else {
                CHECK(m >= cfg.margin.floor1);
            }
        }
    }
}

TEST_CASE("momentum option") {
    const Corpus corpus = corpus_of(4, 2, 6);
    TrainConfig cfg = small_config();
    cfg.optimizer.steps = 40;
    cfg.optimizer.momentum = 0.9;
    const auto run = train(cfg, corpus);
    CHECK(run.loss_curve != train(small_config(), corpus).loss_curve);
    cfg.optimizer.momentum = 1.0;
    CHECK_THROWS_AS(train(cfg, corpus), ArgumentError);
}

TEST_CASE("diverging updates surface as a numeric error") {
    const Corpus corpus = corpus_of(4, 2, 6);
    TrainConfig cfg = small_config();
    cfg.optimizer.learning_rate = 1e300;
    cfg.optimizer.steps = 20;
    CHECK_THROWS_AS(train(cfg, corpus), NumericError);
}

TEST_CASE("config json") {
    TrainConfig cfg = small_config();
    cfg.loss = LossKind::Quadruplet;
    cfg.sampling.kind = StrategyKind::SemiHard;
    cfg.sampling.weighting = DwWeighting::HypersphereDensity;
    cfg.margin.mode = MarginMode::Adaptive;
    cfg.seed = 42;
    const nlohmann::json j = cfg;
    TrainConfig back;
    from_json(j, back);
    CHECK(nlohmann::json(back) == j);
    CHECK(config_key(back) == "semihard/quadruplet/adaptive");

    TrainConfig partial = small_config();
    from_json(nlohmann::json::parse(R"({"optimizer": {"steps": 7}, "sampling": {"strategy": "dw"}})"), partial);
    CHECK(partial.optimizer.steps == 7);
    CHECK(partial.sampling.kind == StrategyKind::DistanceWeighted);
    CHECK(partial.optimizer.learning_rate == 0.01);
    CHECK(partial.embedder.hidden == std::vector<std::size_t>{16});

    CHECK_THROWS_AS(from_json(nlohmann::json::parse(R"({"loss": "contrastive"})"), partial), ArgumentError);
}

TEST_CASE("grid presets") {
    const TrainConfig base = small_config();
    const auto full = grid_preset("full", base);
    CHECK(full.size() == 12);
    std::set<std::string> keys;
    for (const auto &c : full) keys.insert(config_key(c));
    CHECK(keys.size() == 12);

    const auto table1 = grid_preset("table1", base);
    REQUIRE(table1.size() == 11);
    const std::vector<std::string> expected{
        "random/triplet/fixed",   "random/triplet/adaptive", "random/quadruplet/fixed", "random/quadruplet/adaptive",
        "semihard/triplet/fixed", "semihard/triplet/adaptive", "semihard/quadruplet/adaptive", "dw/triplet/fixed",
        "dw/triplet/adaptive",    "dw/quadruplet/fixed",     "dw/quadruplet/adaptive"};
    for (std::size_t i = 0; i < expected.size(); ++i) CHECK(config_key(table1[i]) == expected[i]);
    for (const auto &c : table1) CHECK(c.optimizer.steps == base.optimizer.steps);

    CHECK_THROWS_AS(grid_preset("table2", base), ArgumentError);
}

TEST_CASE("stress group size") {
    const Corpus eval = corpus_of(12, 3, 1); // 6 conversations of 2 speakers
    CHECK(stress_group_size(eval, 4) == 2);
    CHECK(stress_group_size(eval, 6) == 3);
    CHECK(stress_group_size(eval, 1) == 1);
    CHECK(stress_group_size(eval, 100) == 6);
    CHECK_THROWS_AS(stress_group_size(eval, 0), ArgumentError);
}

TEST_CASE("running a grid") {
    const Corpus train_corpus = corpus_of(6, 4, 10);
    const Corpus eval_corpus = corpus_of(6, 4, 11, "eval");
    TrainConfig base = small_config();
    base.optimizer.steps = 40;
    std::vector<TrainConfig> grid = grid_preset("full", base);
    grid.resize(4);
    std::reverse(grid.begin(), grid.end());

    SUBCASE("without an eval corpus") {
        const auto result = run_grid(grid, train_corpus, nullptr);
        REQUIRE(result.rows.size() == 4);
        for (const auto &row : result.rows) {
            CHECK(row.error.empty());
            CHECK(row.run.has_value());
            CHECK_FALSE(row.der.has_value());
        }
        CHECK(config_key(result.rows.front().config) == "random/triplet/fixed");
        const auto j = result.to_json();
        CHECK(j["rows"][0]["der"].is_null());
        CHECK(result.render_table().find(" -\n") != std::string::npos);
    }
    SUBCASE("with eval, stress variants and threads") {
        GridOptions options;
        options.speaker_stress = {4};
        options.parallelism = 1;
        const auto serial = run_grid(grid, train_corpus, &eval_corpus, options);
        options.parallelism = 3;
        const auto threaded = run_grid(grid, train_corpus, &eval_corpus, options);
        REQUIRE(serial.rows.size() == 4);
        for (std::size_t i = 0; i < 4; ++i) {
            REQUIRE(serial.rows[i].der.has_value());
            CHECK(serial.rows[i].der->der() >= 0.0);
            REQUIRE(serial.rows[i].stress.size() == 1);
            CHECK(serial.rows[i].stress[0].group_size == 2);
            CHECK(serial.rows[i].stress[0].der.has_value());
            CHECK(config_key(serial.rows[i].config) == config_key(threaded.rows[i].config));
            CHECK(serial.rows[i].run->loss_curve == threaded.rows[i].run->loss_curve);
            CHECK(serial.rows[i].der->confusion == threaded.rows[i].der->confusion);
        }
        const std::string table = serial.render_table();
        CHECK(table.find("Sampling") != std::string::npos);
        CHECK(table.find("DER%@4spk") != std::string::npos);
    }
    SUBCASE("a failing row does not stop the others") {
        grid[1].optimizer.P = 7; // more speakers than the training corpus has
        const auto result = run_grid(grid, train_corpus, &eval_corpus);
        std::size_t failed = 0;
        for (const auto &row : result.rows) {
            if (!row.error.empty()) {
                ++failed;
                CHECK_FALSE(row.der.has_value());
            } else {
                CHECK(row.der.has_value());
            }
        }
        CHECK(failed == 1);
        CHECK(result.render_table().find("FAILED") != std::string::npos);
        CHECK(result.to_json()["rows"].size() == 4);
    }
}
