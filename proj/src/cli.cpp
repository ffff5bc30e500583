#include "metricdiar/cli.hpp"

#include "metricdiar/errors.hpp"
#include "metricdiar/pipeline.hpp"
#include "metricdiar/synth.hpp"
#include "metricdiar/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

namespace metricdiar {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json read_json(const fs::path &path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error &e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void write_text(const fs::path &path, const std::string &text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

std::string pct(double der) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * der);
    return buf;
}

json breakdown_json(const DerBreakdown &b) {
    return {{"missed", b.missed}, {"false_alarm", b.false_alarm}, {"confusion", b.confusion},
            {"total", b.total}, {"der", b.der()}};
}

// ─── synth ──────────────────────────────────────────────────────────────────

json synth_json(const SynthSpec &s) {
    return {{"speakers", s.n_speakers},
            {"segments_per_speaker", s.segments_per_speaker},
            {"frames_per_segment", s.frames_per_segment},
            {"dim", s.dim},
            {"separation", s.separation},
            {"seed", s.seed},
            {"speakers_per_conversation", s.speakers_per_conversation},
            {"colored_noise", s.colored_noise},
            {"segment_seconds", s.segment_seconds},
            {"prefix", s.prefix},
            {"languages", s.languages}};
}

void apply_synth_json(const json &j, SynthSpec &s) {
    auto take = [&](const char *key, auto &field) {
        if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    take("speakers", s.n_speakers);
    take("segments_per_speaker", s.segments_per_speaker);
    take("frames_per_segment", s.frames_per_segment);
    take("dim", s.dim);
    take("separation", s.separation);
    take("seed", s.seed);
    take("speakers_per_conversation", s.speakers_per_conversation);
    take("colored_noise", s.colored_noise);
    take("segment_seconds", s.segment_seconds);
    take("prefix", s.prefix);
    take("languages", s.languages);
}

struct SynthFlags {
    std::optional<std::string> config, out;
    std::optional<std::size_t> speakers, segs, frames, dim, per_conv;
    std::optional<double> sep;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> prefix;
    std::vector<std::string> languages;
    bool white = false, print_config = false;

    void add(CLI::App *app) {
        app->add_option("--config", config, "JSON synth spec")->check(CLI::ExistingFile);
        app->add_option("--out", out, "output directory");
        app->add_option("--speakers", speakers, "number of speakers");
        app->add_option("--segs", segs, "segments per speaker");
        app->add_option("--frames", frames, "frames per segment");
        app->add_option("--dim", dim, "feature dimension");
        app->add_option("--sep", sep, "speaker separation in noise sigmas");
        app->add_option("--seed", seed);
        app->add_option("--speakers-per-conv", per_conv, "speakers per conversation");
        app->add_option("--prefix", prefix, "speaker/conversation id prefix");
        app->add_option("--languages", languages, "language tags cycled over conversations")->delimiter(',');
        app->add_flag("--white-noise", white, "disable temporal coloring");
        app->add_flag("--print-config", print_config, "print the effective spec and exit");
    }

    SynthSpec spec() const {
        SynthSpec s;
        if (config) apply_synth_json(read_json(*config), s);
        if (speakers) s.n_speakers = *speakers;
        if (segs) s.segments_per_speaker = *segs;
        if (frames) s.frames_per_segment = *frames;
        if (dim) s.dim = *dim;
        if (sep) s.separation = *sep;
        if (seed) s.seed = *seed;
        if (per_conv) s.speakers_per_conversation = *per_conv;
        if (prefix) s.prefix = *prefix;
        if (!languages.empty()) s.languages = languages;
        if (white) s.colored_noise = false;
        return s;
    }
};

int cmd_synth(const SynthFlags &f, std::ostream &out) {
    const SynthSpec spec = f.spec();
    if (f.print_config) {
        out << synth_json(spec).dump(2) << '\n';
        return 0;
    }
    if (!f.out) throw ArgumentError("synth: --out is required");
    const Corpus corpus = generate_corpus(spec);
    const fs::path dir(*f.out);
    const auto manifest = write_corpus(corpus, dir);
    write_rttm(dir / "reference.rttm", reference_annotations(corpus));
    out << "wrote " << corpus.conversations().size() << " conversations, " << corpus.segment_count()
        << " segments to " << manifest.string() << '\n';
    return 0;
}

// ─── train / grid shared config ─────────────────────────────────────────────

struct TrainFlags {
    std::optional<std::string> config;
    std::optional<std::string> loss, sampling, margin, weighting, arch;
    std::optional<double> d_min, alpha1, alpha2, lr, momentum;
    std::optional<std::size_t> steps, P, K, embed_dim, key_dim, input_dim;
    std::vector<std::size_t> hidden;
    std::optional<std::uint64_t> seed;
    bool print_config = false;

    void add(CLI::App *app) {
        app->add_option("--config", config, "JSON training config (flags override it)")->check(CLI::ExistingFile);
        app->add_option("--loss", loss, "triplet | quadruplet");
        app->add_option("--sampling", sampling, "random | semihard | dw");
        app->add_option("--margin", margin, "fixed | adaptive");
        app->add_option("--weighting", weighting, "DW weighting: inverse | density");
        app->add_option("--d-min", d_min, "DW distance clamp");
        app->add_option("--alpha1", alpha1);
        app->add_option("--alpha2", alpha2);
        app->add_option("--lr", lr, "learning rate");
        app->add_option("--momentum", momentum);
        app->add_option("--steps", steps);
        app->add_option("--P", P, "speakers per batch");
        app->add_option("--K", K, "segments per speaker in a batch");
        app->add_option("--arch", arch, "meanpool_mlp | attn1");
        app->add_option("--hidden", hidden, "hidden widths, comma separated")->delimiter(',');
        app->add_option("--embed-dim", embed_dim);
        app->add_option("--key-dim", key_dim);
        app->add_option("--input-dim", input_dim, "defaults to the corpus feature dimension");
        app->add_option("--seed", seed);
        app->add_flag("--print-config", print_config, "print the effective config and exit");
    }

    // Config file, then flags. input_dim follows `corpus_dim` unless set explicitly.
    TrainConfig resolve(std::optional<std::size_t> corpus_dim) const {
        TrainConfig cfg;
        bool dim_given = false;
        if (config) {
            const json j = read_json(*config);
            from_json(j, cfg);
            dim_given = j.contains("embedder") && j.at("embedder").contains("input_dim");
        }
        json patch = json::object();
        if (loss) patch["loss"] = *loss;
        if (sampling) patch["sampling"]["strategy"] = *sampling;
        if (weighting) patch["sampling"]["weighting"] = *weighting;
        if (d_min) patch["sampling"]["d_min"] = *d_min;
        if (margin) patch["margin"]["mode"] = *margin;
        if (alpha1) patch["margin"]["alpha1"] = *alpha1;
        if (alpha2) patch["margin"]["alpha2"] = *alpha2;
        if (lr) patch["optimizer"]["learning_rate"] = *lr;
        if (momentum) patch["optimizer"]["momentum"] = *momentum;
        if (steps) patch["optimizer"]["steps"] = *steps;
        if (P) patch["optimizer"]["P"] = *P;
        if (K) patch["optimizer"]["K"] = *K;
        if (arch) patch["embedder"]["arch"] = *arch;
        if (!hidden.empty()) patch["embedder"]["hidden"] = hidden;
        if (embed_dim) patch["embedder"]["embed_dim"] = *embed_dim;
        if (key_dim) patch["embedder"]["key_dim"] = *key_dim;
        if (input_dim) patch["embedder"]["input_dim"] = *input_dim;
        if (seed) patch["seed"] = *seed;
        from_json(patch, cfg);
        if (!dim_given && !input_dim && corpus_dim) cfg.embedder.input_dim = *corpus_dim;
        return cfg;
    }
};

// ─── train ──────────────────────────────────────────────────────────────────

struct TrainCmd {
    TrainFlags flags;
    std::optional<std::string> corpus, eval, out;
    std::size_t hash_segments = 8;
};

int cmd_train(const TrainCmd &c, std::ostream &out) {
    if (c.flags.print_config) {
        out << json(c.flags.resolve(std::nullopt)).dump(2) << '\n';
        return 0;
    }
    if (!c.corpus) throw ArgumentError("train: --corpus is required");
    if (!c.out) throw ArgumentError("train: --out is required");
    const Corpus corpus = parse_manifest(*c.corpus);
    std::optional<Corpus> eval;
    if (c.eval) eval = parse_manifest(*c.eval);
    const TrainConfig cfg = c.flags.resolve(corpus.geometry().dim);

    RunRecord run = train(cfg, corpus);
    // The hash is taken on the stored (float) parameters so a reloaded
    // checkpoint reproduces it exactly.
    quantize_to_float(run.model);
    const fs::path dir(*c.out);
    fs::create_directories(dir);
    save_checkpoint(run.model, dir / "model.ckpt");

    const Corpus &hash_corpus = eval ? *eval : corpus;
    json record{{"key", config_key(cfg)},
                {"config", cfg},
                {"steps", run.loss_curve.size()},
                {"loss_curve", run.loss_curve},
                {"margin_curve", run.margin_curve},
                {"wall_seconds", run.wall_seconds},
                {"checkpoint", "model.ckpt"},
                {"embedding_hash", embedding_hash(run.model, hash_corpus, c.hash_segments)},
                {"hash_corpus", eval ? "eval" : "train"},
                {"hash_segments", c.hash_segments},
                {"eval", nullptr}};
    if (eval) {
        const auto score = evaluate(run.model, *eval, DiarizeOptions{});
        record["eval"] = breakdown_json(score.overall);
        record["eval"]["aggregation"] = "time-weighted over conversations";
    }
    write_text(dir / "run.json", record.dump(2) + "\n");
    out << config_key(cfg) << ": final loss " << run.loss_curve.back() << " after " << run.loss_curve.size()
        << " steps";
    if (eval) out << ", eval DER " << pct(record["eval"]["der"].get<double>());
    out << "\nwrote " << (dir / "model.ckpt").string() << " and " << (dir / "run.json").string() << '\n';
    return 0;
}

// ─── diarize ────────────────────────────────────────────────────────────────

struct DiarizeCmd {
    std::optional<std::string> checkpoint, corpus, out;
    std::size_t k_min = 2;
    std::optional<std::size_t> k_max;
    std::uint64_t seed = 0;
    bool print_config = false;
};

DiarizeOptions diarize_options(const DiarizeCmd &c) {
    DiarizeOptions o;
    o.k_min = c.k_min;
    o.k_max = c.k_max;
    o.seed = c.seed;
    return o;
}

int cmd_diarize(const DiarizeCmd &c, std::ostream &out) {
    if (c.print_config) {
        out << json{{"k_min", c.k_min}, {"k_max", c.k_max ? json(*c.k_max) : json("min(n, 10)")}, {"seed", c.seed}}
                   .dump(2)
            << '\n';
        return 0;
    }
    if (!c.checkpoint || !c.corpus || !c.out) throw ArgumentError("diarize: --checkpoint, --corpus and --out are required");
    const EmbedderModel model = load_checkpoint(*c.checkpoint);
    const Corpus corpus = parse_manifest(*c.corpus);
    const auto hyp = diarize_corpus(model, corpus, diarize_options(c));
    std::ostringstream rttm;
    write_rttm(rttm, hyp);
    write_text(*c.out, rttm.str());
    out << "diarized " << hyp.size() << " conversations into " << *c.out << '\n';
    return 0;
}

// ─── score ──────────────────────────────────────────────────────────────────

struct ScoreCmd {
    std::optional<std::string> ref, hyp, group_by, manifest, out;
    double collar = 0.25;
    bool skip_overlap = true;
    bool print_config = false;
};

int cmd_score(const ScoreCmd &c, std::ostream &out) {
    if (c.print_config) {
        out << json{{"collar", c.collar}, {"skip_overlap", c.skip_overlap}}.dump(2) << '\n';
        return 0;
    }
    if (!c.ref || !c.hyp) throw ArgumentError("score: --ref and --hyp are required");
    if (c.group_by && !c.manifest) throw ArgumentError("score: --group-by needs --manifest for the tags");
    if (!(c.collar >= 0.0)) throw ArgumentError("score: --collar must be >= 0");

    const auto ref = read_rttm(*c.ref);
    const auto hyp = read_rttm(*c.hyp);
    const CorpusScore score = score_corpus(ref, hyp, {c.collar, c.skip_overlap});

    json report{{"aggregation", "time-weighted over conversations"},
                {"collar", c.collar},
                {"skip_overlap", c.skip_overlap},
                {"overall", breakdown_json(score.overall)},
                {"files", json::array()}};
    out << "# corpus DER is time-weighted across conversations (collar " << c.collar << " s, overlap "
        << (c.skip_overlap ? "skipped" : "scored") << ")\n";
    char line[256];
    std::snprintf(line, sizeof line, "%-24s %9s %9s %9s %9s %8s\n", "file", "missed", "falarm", "confusion", "total",
                  "DER");
    out << line;
    for (const auto &[file, b] : score.per_file) {
        std::snprintf(line, sizeof line, "%-24s %9.3f %9.3f %9.3f %9.3f %8s\n", file.c_str(), b.missed, b.false_alarm,
                      b.confusion, b.total, pct(b.der()).c_str());
        out << line;
        json row = breakdown_json(b);
        row["file"] = file;
        report["files"].push_back(row);
    }
    const auto &o = score.overall;
    std::snprintf(line, sizeof line, "%-24s %9.3f %9.3f %9.3f %9.3f %8s\n", "OVERALL", o.missed, o.false_alarm,
                  o.confusion, o.total, pct(o.der()).c_str());
    out << line;

    if (c.group_by) {
        const Corpus corpus = parse_manifest(*c.manifest);
        std::map<std::string, std::map<std::string, std::string>> tags;
        for (const auto &conv : corpus.conversations()) tags[conv.id] = conv.tags;
        const auto groups = score_by_tag(score, tags, *c.group_by);
        out << "\n" << *c.group_by << ":\n";
        report["group_by"] = *c.group_by;
        report["groups"] = json::object();
        for (const auto &[value, b] : groups) {
            std::snprintf(line, sizeof line, "  %-22s %8s\n", value.c_str(), pct(b.der()).c_str());
            out << line;
            report["groups"][value] = breakdown_json(b);
        }
    }
    if (c.out) write_text(*c.out, report.dump(2) + "\n");
    return 0;
}

// ─── grid ───────────────────────────────────────────────────────────────────

struct GridCmd {
    TrainFlags flags;
    std::optional<std::string> train, eval, out;
    std::string preset = "full";
    std::vector<double> speaker_stress;
    std::size_t jobs = 1;
    double collar = 0.25;
    bool skip_overlap = true;
};

int cmd_grid(const GridCmd &c, std::ostream &out) {
    if (c.flags.print_config) {
        out << json{{"preset", c.preset},
                    {"base", json(c.flags.resolve(std::nullopt))},
                    {"speaker_stress", c.speaker_stress},
                    {"jobs", c.jobs},
                    {"collar", c.collar},
                    {"skip_overlap", c.skip_overlap}}
                   .dump(2)
            << '\n';
        return 0;
    }
    if (!c.train) throw ArgumentError("grid: --train is required");
    if (!c.speaker_stress.empty() && !c.eval) throw ArgumentError("grid: --speaker-stress needs --eval");
    const Corpus train_corpus = parse_manifest(*c.train);
    std::optional<Corpus> eval;
    if (c.eval) eval = parse_manifest(*c.eval);

    const auto grid = grid_preset(c.preset, c.flags.resolve(train_corpus.geometry().dim));
    GridOptions options;
    options.speaker_stress = c.speaker_stress;
    options.parallelism = c.jobs;
    options.score = {c.collar, c.skip_overlap};
    const GridResult result = run_grid(grid, train_corpus, eval ? &*eval : nullptr, options);

    out << result.render_table();
    if (!eval) out << "(no --eval corpus: DER not computed)\n";
    if (c.out) {
        json j = result.to_json();
        j["preset"] = c.preset;
        write_text(*c.out, j.dump(2) + "\n");
    }
    for (const auto &row : result.rows) {
        if (!row.error.empty()) return 3;
    }
    return 0;
}

} // namespace

int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
    CLI::App app{"metric-learning speaker diarization toolkit", "metricdiar"};
    app.require_subcommand(1);

    SynthFlags synth;
    auto *synth_cmd = app.add_subcommand("synth", "generate a synthetic labelled corpus");
    synth.add(synth_cmd);

    TrainCmd train_args;
    auto *train_cmd = app.add_subcommand("train", "train an embedder on a labelled corpus");
    train_args.flags.add(train_cmd);
    train_cmd->add_option("--corpus", train_args.corpus, "training manifest")->check(CLI::ExistingFile);
    train_cmd->add_option("--eval", train_args.eval, "optional evaluation manifest")->check(CLI::ExistingFile);
    train_cmd->add_option("--out", train_args.out, "output directory for model.ckpt and run.json");
    train_cmd->add_option("--hash-segments", train_args.hash_segments, "segments covered by the embedding hash");

    DiarizeCmd diarize;
    auto *diarize_cmd = app.add_subcommand("diarize", "cluster each conversation and write RTTM");
    diarize_cmd->add_option("--checkpoint", diarize.checkpoint)->check(CLI::ExistingFile);
    diarize_cmd->add_option("--corpus", diarize.corpus, "manifest to diarize")->check(CLI::ExistingFile);
    diarize_cmd->add_option("--out", diarize.out, "output RTTM path");
    diarize_cmd->add_option("--k-min", diarize.k_min, "minimum number of speakers (>= 2)");
    diarize_cmd->add_option("--k-max", diarize.k_max, "maximum number of speakers (default min(n, 10))");
    diarize_cmd->add_option("--seed", diarize.seed, "clustering seed");
    diarize_cmd->add_flag("--print-config", diarize.print_config);

    ScoreCmd score;
    auto *score_cmd = app.add_subcommand("score", "diarization error rate of a hypothesis RTTM");
    score_cmd->add_option("--ref", score.ref, "reference RTTM")->check(CLI::ExistingFile);
    score_cmd->add_option("--hyp", score.hyp, "hypothesis RTTM")->check(CLI::ExistingFile);
    score_cmd->add_option("--collar", score.collar, "seconds removed around reference boundaries");
    score_cmd->add_flag("--skip-overlap,!--no-skip-overlap", score.skip_overlap, "exclude overlapped speech");
    score_cmd->add_option("--group-by", score.group_by, "report DER per value of this manifest tag");
    score_cmd->add_option("--manifest", score.manifest, "manifest carrying conversation tags")->check(CLI::ExistingFile);
    score_cmd->add_option("--out", score.out, "JSON report path");
    score_cmd->add_flag("--print-config", score.print_config);

    GridCmd grid;
    auto *grid_cmd = app.add_subcommand("grid", "train and evaluate every sampling x loss x margin configuration");
    grid.flags.add(grid_cmd);
    grid_cmd->add_option("--train", grid.train, "training manifest")->check(CLI::ExistingFile);
    grid_cmd->add_option("--eval", grid.eval, "evaluation manifest")->check(CLI::ExistingFile);
    grid_cmd->add_option("--preset", grid.preset, "full (12 rows) | table1 (11 rows)")
        ->check(CLI::IsMember({"full", "table1"}));
    grid_cmd->add_option("--speaker-stress", grid.speaker_stress, "target speakers per concatenated conversation")
        ->delimiter(',');
    grid_cmd->add_option("--jobs", grid.jobs, "configurations trained concurrently");
    grid_cmd->add_option("--collar", grid.collar);
    grid_cmd->add_flag("--skip-overlap,!--no-skip-overlap", grid.skip_overlap);
    grid_cmd->add_option("--out", grid.out, "JSON results path");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError &e) {
        return app.exit(e, out, err) == 0 ? 0 : 2;
    }

    try {
        if (*synth_cmd) return cmd_synth(synth, out);
        if (*train_cmd) return cmd_train(train_args, out);
        if (*diarize_cmd) return cmd_diarize(diarize, out);
        if (*score_cmd) return cmd_score(score, out);
        if (*grid_cmd) return cmd_grid(grid, out);
    } catch (const Error &e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const json::exception &e) {
        err << "error: invalid configuration: " << e.what() << '\n';
        return 2;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << '\n';
        return 3;
    }
    return 2;
}

} // namespace metricdiar
