#include "metricdiar/trainer.hpp"

#include "metricdiar/errors.hpp"
#include "metricdiar/synth.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <thread>

namespace metricdiar {

namespace {

// Margins used while mining, before tuples exist: the adaptive rule over
// every same-speaker and cross-speaker pair in the batch.
SelectionMargins mining_margins(const TrainConfig &cfg, const PkBatch &batch) {
    if (cfg.margin.mode == MarginMode::Fixed) return {cfg.margin.alpha1, cfg.margin.alpha2};
    std::vector<double> same, cross;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        for (std::size_t j = 0; j < batch.size(); ++j) {
            if (i == j) continue;
            const double d = (batch.embeddings[i] - batch.embeddings[j]).squaredNorm();
            (batch.labels[i] == batch.labels[j] ? same : cross).push_back(d);
        }
    }
    return {adaptive_margin(cross, same, cfg.margin.floor1), adaptive_margin(cross, same, cfg.margin.floor2)};
}

// Margins applied to the loss: fixed values, or the adaptive rule over the
// tuples built for this step.
SelectionMargins loss_margins(const TrainConfig &cfg, const PkBatch &batch, const TupleSet &tuples) {
    if (cfg.margin.mode == MarginMode::Fixed) return {cfg.margin.alpha1, cfg.margin.alpha2};
    std::vector<double> ap, an, qn;
    for (const auto &t : tuples.tuples) {
        ap.push_back(sq_dist(batch.embeddings[t.a], batch.embeddings[t.p]));
        an.push_back(sq_dist(batch.embeddings[t.a], batch.embeddings[t.n]));
        if (t.q != kNoIndex) qn.push_back(sq_dist(batch.embeddings[t.q], batch.embeddings[t.n]));
    }
    SelectionMargins m{adaptive_margin(an, ap, cfg.margin.floor1), cfg.margin.alpha2};
    if (!qn.empty()) m.alpha2 = adaptive_margin(qn, ap, cfg.margin.floor2);
    return m;
}

int strategy_rank(StrategyKind k) {
    switch (k) {
    case StrategyKind::Random: return 0;
    case StrategyKind::SemiHard: return 1;
    case StrategyKind::DistanceWeighted: return 2;
    }
    return 3;
}

auto row_order(const TrainConfig &c) {
    return std::tuple(strategy_rank(c.sampling.kind), c.loss == LossKind::Quadruplet ? 1 : 0,
                      c.margin.mode == MarginMode::Adaptive ? 1 : 0);
}

std::string strategy_title(StrategyKind k) {
    switch (k) {
    case StrategyKind::SemiHard: return "Semi-hard";
    case StrategyKind::DistanceWeighted: return "DWS";
    case StrategyKind::Random: break;
    }
    return "Random";
}

nlohmann::json breakdown_json(const DerBreakdown &b) {
    return {{"missed", b.missed}, {"false_alarm", b.false_alarm}, {"confusion", b.confusion},
            {"total", b.total}, {"der", b.der()}};
}

std::string percent(const std::optional<DerBreakdown> &b) {
    if (!b) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * b->der());
    return buf;
}

} // namespace

// ─── Config ─────────────────────────────────────────────────────────────────

void validate(const TrainConfig &cfg) {
    if (cfg.optimizer.steps < 1) throw ArgumentError("steps must be >= 1");
    if (!(cfg.optimizer.learning_rate > 0.0)) throw ArgumentError("learning rate must be positive");
    if (!(cfg.optimizer.momentum >= 0.0) || cfg.optimizer.momentum >= 1.0) {
        throw ArgumentError("momentum must lie in [0, 1)");
    }
    if (cfg.optimizer.P < 2) throw ArgumentError("P must be >= 2");
    if (cfg.optimizer.K < 2) throw ArgumentError("K must be >= 2 to form anchor-positive pairs");
    if (cfg.loss == LossKind::Quadruplet && cfg.optimizer.P < 3) throw ArgumentError("quadruplet loss needs P >= 3");
    validate(cfg.sampling);
    validate(cfg.margin);
    validate(cfg.embedder);
}

std::string config_key(const TrainConfig &cfg) {
    return std::string(to_string(cfg.sampling.kind)) + "/" + std::string(to_string(cfg.loss)) + "/" +
           std::string(to_string(cfg.margin.mode));
}

void to_json(nlohmann::json &j, const TrainConfig &cfg) {
    j = nlohmann::json{
        {"loss", std::string(to_string(cfg.loss))},
        {"sampling",
         {{"strategy", std::string(to_string(cfg.sampling.kind))},
          {"d_min", cfg.sampling.d_min},
          {"weighting", cfg.sampling.weighting == DwWeighting::InverseDistance ? "inverse" : "density"}}},
        {"margin",
         {{"mode", std::string(to_string(cfg.margin.mode))},
          {"alpha1", cfg.margin.alpha1},
          {"alpha2", cfg.margin.alpha2},
          {"floor1", cfg.margin.floor1},
          {"floor2", cfg.margin.floor2}}},
        {"embedder", cfg.embedder},
        {"optimizer",
         {{"learning_rate", cfg.optimizer.learning_rate},
          {"momentum", cfg.optimizer.momentum},
          {"steps", cfg.optimizer.steps},
          {"P", cfg.optimizer.P},
          {"K", cfg.optimizer.K}}},
        {"seed", cfg.seed}};
}

void from_json(const nlohmann::json &j, TrainConfig &cfg) {
    if (j.contains("loss")) cfg.loss = parse_loss_kind(j.at("loss").get<std::string>());
    if (j.contains("sampling")) {
        const auto &s = j.at("sampling");
        if (s.contains("strategy")) cfg.sampling.kind = parse_strategy(s.at("strategy").get<std::string>());
        if (s.contains("d_min")) cfg.sampling.d_min = s.at("d_min").get<double>();
        if (s.contains("weighting")) {
            const auto w = s.at("weighting").get<std::string>();
            if (w == "inverse") {
                cfg.sampling.weighting = DwWeighting::InverseDistance;
            } else if (w == "density") {
                cfg.sampling.weighting = DwWeighting::HypersphereDensity;
            } else {
                throw ArgumentError("unknown DW weighting '" + w + "'");
            }
        }
    }
    if (j.contains("margin")) {
        const auto &m = j.at("margin");
        if (m.contains("mode")) cfg.margin.mode = parse_margin_mode(m.at("mode").get<std::string>());
        if (m.contains("alpha1")) cfg.margin.alpha1 = m.at("alpha1").get<double>();
        if (m.contains("alpha2")) cfg.margin.alpha2 = m.at("alpha2").get<double>();
        if (m.contains("floor1")) cfg.margin.floor1 = m.at("floor1").get<double>();
        if (m.contains("floor2")) cfg.margin.floor2 = m.at("floor2").get<double>();
    }
    if (j.contains("embedder")) from_json(j.at("embedder"), cfg.embedder);
    if (j.contains("optimizer")) {
        const auto &o = j.at("optimizer");
        if (o.contains("learning_rate")) cfg.optimizer.learning_rate = o.at("learning_rate").get<double>();
        if (o.contains("momentum")) cfg.optimizer.momentum = o.at("momentum").get<double>();
        if (o.contains("steps")) cfg.optimizer.steps = o.at("steps").get<std::size_t>();
        if (o.contains("P")) cfg.optimizer.P = o.at("P").get<std::size_t>();
        if (o.contains("K")) cfg.optimizer.K = o.at("K").get<std::size_t>();
    }
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
}

// ─── Training ───────────────────────────────────────────────────────────────

RunRecord train(const TrainConfig &cfg, const Corpus &corpus) {
    validate(cfg);
    corpus.require_labels();
    if (corpus.geometry().dim != cfg.embedder.input_dim) {
        throw ArgumentError("corpus dim " + std::to_string(corpus.geometry().dim) + " does not match embedder input_dim " +
                            std::to_string(cfg.embedder.input_dim));
    }
    const auto started = std::chrono::steady_clock::now();
    const SpeakerIndex index(corpus);
    Rng rng(cfg.seed);

    RunRecord record{cfg, {}, {}, 0.0, init_model(cfg.embedder)};
    EmbedderModel &model = record.model;
    ParamGrads velocity = zero_grads(model);
    const auto &convs = corpus.conversations();
    auto features_of = [&](const SegmentRef &ref) -> const FeatureMatrix & {
        return convs[ref.conversation].segments[ref.segment].features;
    };

    for (std::size_t step = 0; step < cfg.optimizer.steps; ++step) {
        PkBatch batch = make_pk_batch(index, cfg.optimizer.P, cfg.optimizer.K, rng);
        for (const auto &item : batch.items) batch.embeddings.push_back(forward(model, features_of(item)));

        const TupleSet tuples = build_tuples(batch, cfg.loss, cfg.sampling, mining_margins(cfg, batch), rng);
        const SelectionMargins margins = loss_margins(cfg, batch, tuples);

        std::vector<Eigen::VectorXd> upstream(batch.size(), Eigen::VectorXd::Zero(batch.embeddings[0].size()));
        double total = 0.0;
        const double weight = 1.0 / static_cast<double>(tuples.tuples.size());
        for (const auto &t : tuples.tuples) {
            const auto &e = batch.embeddings;
            const LossOutput out = cfg.loss == LossKind::Triplet
                                       ? triplet_loss(e[t.a], e[t.p], e[t.n], margins.alpha1)
                                       : quadruplet_loss(e[t.a], e[t.p], e[t.n], e[t.q], margins.alpha1, margins.alpha2);
            total += out.value;
            upstream[t.a] += weight * out.grads[0];
            upstream[t.p] += weight * out.grads[1];
            upstream[t.n] += weight * out.grads[2];
            if (t.q != kNoIndex) upstream[t.q] += weight * out.grads[3];
        }
        const double mean_loss = total * weight;
        if (!std::isfinite(mean_loss)) {
            throw NumericError("non-finite loss at step " + std::to_string(step) + " for " + config_key(cfg));
        }
        record.loss_curve.push_back(mean_loss);
        record.margin_curve.push_back(margins.alpha1);

        ParamGrads grads = zero_grads(model);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            if (upstream[i].isZero(0.0)) continue;
            accumulate_backward(model, features_of(batch.items[i]), upstream[i], grads);
        }
        for (std::size_t p = 0; p < model.params.size(); ++p) {
            velocity[p] = cfg.optimizer.momentum * velocity[p] + grads[p];
            model.params[p].value -= cfg.optimizer.learning_rate * velocity[p];
        }
    }
    record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return record;
}

// ─── Grid ───────────────────────────────────────────────────────────────────

std::vector<TrainConfig> grid_preset(std::string_view name, const TrainConfig &base) {
    const bool table1 = name == "table1";
    if (!table1 && name != "full") throw ArgumentError("unknown grid preset '" + std::string(name) + "'");
    std::vector<TrainConfig> out;
    for (auto s : {StrategyKind::Random, StrategyKind::SemiHard, StrategyKind::DistanceWeighted}) {
        for (auto l : {LossKind::Triplet, LossKind::Quadruplet}) {
            for (auto m : {MarginMode::Fixed, MarginMode::Adaptive}) {
                if (table1 && s == StrategyKind::SemiHard && l == LossKind::Quadruplet && m == MarginMode::Fixed) {
                    continue;
                }
                TrainConfig c = base;
                c.sampling.kind = s;
                c.loss = l;
                c.margin.mode = m;
                out.push_back(c);
            }
        }
    }
    return out;
}

std::size_t stress_group_size(const Corpus &eval, double target) {
    if (!(target > 0.0)) throw ArgumentError("speaker-stress target must be positive");
    double speakers = 0.0;
    for (const auto &c : eval.conversations()) {
        std::vector<std::string> seen;
        for (const auto &s : c.segments) {
            if (s.speaker && std::find(seen.begin(), seen.end(), *s.speaker) == seen.end()) seen.push_back(*s.speaker);
        }
        speakers += static_cast<double>(seen.size());
    }
    const double per_conversation = speakers / static_cast<double>(std::max<std::size_t>(1, eval.conversations().size()));
    const auto size = static_cast<std::size_t>(std::llround(target / std::max(per_conversation, 1.0)));
    return std::clamp<std::size_t>(size, 1, std::max<std::size_t>(1, eval.conversations().size()));
}

GridResult run_grid(const std::vector<TrainConfig> &grid, const Corpus &train_corpus, const Corpus *eval_corpus,
                    const GridOptions &options) {
    for (const auto &c : grid) validate(c);

    std::vector<std::pair<StressResult, Corpus>> variants;
    if (eval_corpus != nullptr) {
        for (double target : options.speaker_stress) {
            const auto g = stress_group_size(*eval_corpus, target);
            Rng rng(options.stress_seed);
            variants.push_back({{target, g, std::nullopt}, concatenate_conversations(*eval_corpus, g, rng)});
        }
    }

    GridResult result;
    result.rows.resize(grid.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < grid.size(); i = next++) {
            GridRow &row = result.rows[i];
            row.config = grid[i];
            try {
                row.run = train(grid[i], train_corpus);
                if (eval_corpus != nullptr) {
                    row.der = evaluate(row.run->model, *eval_corpus, options.diarize, options.score).overall;
                    for (const auto &[stress, corpus] : variants) {
                        StressResult s = stress;
                        s.der = evaluate(row.run->model, corpus, options.diarize, options.score).overall;
                        row.stress.push_back(s);
                    }
                }
            } catch (const std::exception &e) {
                row.error = e.what();
            }
        }
    };
    const std::size_t threads = std::clamp<std::size_t>(options.parallelism, 1, std::max<std::size_t>(1, grid.size()));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto &t : pool) t.join();

    std::stable_sort(result.rows.begin(), result.rows.end(),
                     [](const GridRow &a, const GridRow &b) { return row_order(a.config) < row_order(b.config); });
    return result;
}

std::string GridResult::render_table() const {
    std::vector<std::string> stress_headers;
    if (!rows.empty()) {
        for (const auto &s : rows.front().stress) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "DER%%@%gspk", s.target_speakers);
            stress_headers.push_back(buf);
        }
    }
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-10s %-11s %-9s %8s", "Sampling", "Loss", "Margin", "DER%");
    os << line;
    for (const auto &h : stress_headers) {
        std::snprintf(line, sizeof line, " %12s", h.c_str());
        os << line;
    }
    os << '\n';
    for (const auto &r : rows) {
        const std::string loss = r.config.loss == LossKind::Triplet ? "Triplet" : "Quadruplet";
        const std::string margin = r.config.margin.mode == MarginMode::Fixed ? "Fixed" : "Adaptive";
        std::snprintf(line, sizeof line, "%-10s %-11s %-9s %8s", strategy_title(r.config.sampling.kind).c_str(),
                      loss.c_str(), margin.c_str(), r.error.empty() ? percent(r.der).c_str() : "FAILED");
        os << line;
        for (std::size_t s = 0; s < stress_headers.size(); ++s) {
            const auto v = s < r.stress.size() ? percent(r.stress[s].der) : std::string("-");
            std::snprintf(line, sizeof line, " %12s", v.c_str());
            os << line;
        }
        os << '\n';
    }
    return os.str();
}

nlohmann::json GridResult::to_json() const {
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto &r : rows) {
        nlohmann::json j;
        j["key"] = config_key(r.config);
        j["config"] = r.config;
        j["der"] = r.der ? breakdown_json(*r.der) : nlohmann::json(nullptr);
        if (r.run) {
            j["final_loss"] = r.run->loss_curve.back();
            j["wall_seconds"] = r.run->wall_seconds;
        }
        j["stress"] = nlohmann::json::array();
        for (const auto &s : r.stress) {
            j["stress"].push_back({{"target_speakers", s.target_speakers},
                                   {"group_size", s.group_size},
                                   {"der", s.der ? breakdown_json(*s.der) : nlohmann::json(nullptr)}});
        }
        if (!r.error.empty()) j["error"] = r.error;
        rows_json.push_back(std::move(j));
    }
    return {{"aggregation", "time-weighted over conversations"}, {"rows", rows_json}};
}

} // namespace metricdiar
