#pragma once

#include "metricdiar/embedder.hpp"
#include "metricdiar/metric_losses.hpp"
#include "metricdiar/pipeline.hpp"
#include "metricdiar/sampling.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace metricdiar {

struct OptimizerConfig {
    double learning_rate = 1e-3;
    double momentum = 0.0; // plain gradient descent when zero
    std::size_t steps = 1000;
    std::size_t P = 8;
    std::size_t K = 4;
};

struct TrainConfig {
    LossKind loss = LossKind::Triplet;
    SamplingStrategy sampling;
    MarginSpec margin;
    EmbedderConfig embedder;
    OptimizerConfig optimizer;
    std::uint64_t seed = 1;
};

void validate(const TrainConfig &cfg);
// "<sampling>/<loss>/<margin>", e.g. "dw/triplet/fixed".
std::string config_key(const TrainConfig &cfg);

void to_json(nlohmann::json &j, const TrainConfig &cfg);
// Missing keys keep their current values, so a partial document acts as overrides.
void from_json(const nlohmann::json &j, TrainConfig &cfg);

struct RunRecord {
    TrainConfig config;
    std::vector<double> loss_curve;   // mean tuple loss per step
    std::vector<double> margin_curve; // alpha (alpha1 for quadruplets) per step
    double wall_seconds = 0.0;
    EmbedderModel model;
};

// Per step: PK batch -> embeddings -> tuples -> (adaptive) batch margins ->
// mean tuple loss -> backward -> gradient step. Deterministic given the seed.
RunRecord train(const TrainConfig &cfg, const Corpus &corpus);

// ─── Grid ───────────────────────────────────────────────────────────────────

// "full": all 12 sampling x loss x margin combinations. "table1": 11 rows,
// omitting semi-hard/quadruplet/fixed. Other fields come from `base`.
std::vector<TrainConfig> grid_preset(std::string_view name, const TrainConfig &base);

struct GridOptions {
    DiarizeOptions diarize;
    ScoreOptions score;
    // Target mean speakers per conversation for concatenated eval variants.
    std::vector<double> speaker_stress;
    std::uint64_t stress_seed = 7;
    std::size_t parallelism = 1;
};

struct StressResult {
    double target_speakers = 0.0;
    std::size_t group_size = 1;
    std::optional<DerBreakdown> der;
};

struct GridRow {
    TrainConfig config;
    std::optional<RunRecord> run;
    std::optional<DerBreakdown> der;
    std::vector<StressResult> stress;
    std::string error; // non-empty when the run failed
};

struct GridResult {
    std::vector<GridRow> rows; // sampling, then loss, then margin order
    std::string render_table() const;
    nlohmann::json to_json() const;
};

// group_size achieving roughly `target` speakers per concatenated conversation.
std::size_t stress_group_size(const Corpus &eval, double target);

GridResult run_grid(const std::vector<TrainConfig> &grid, const Corpus &train_corpus, const Corpus *eval_corpus,
                    const GridOptions &options = {});

} // namespace metricdiar
