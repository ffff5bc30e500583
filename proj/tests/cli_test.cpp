#include "metricdiar/cli.hpp"
#include "metricdiar/embedder.hpp"
#include "metricdiar/errors.hpp"
#include "metricdiar/pipeline.hpp"
#include "metricdiar/synth.hpp"

#include "test_util.hpp"

#include <doctest.h>
#include <json.hpp>

#include <fstream>
#include <regex>
#include <set>
#include <sstream>

using namespace metricdiar;
using metricdiar::test::TempDir;
using nlohmann::json;

namespace {

struct Outcome {
    int code;
    std::string out, err;
};

Outcome cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

json load(const std::filesystem::path &p) { return json::parse(slurp(p)); }

std::string str(const std::filesystem::path &p) { return p.string(); }

// A small labelled corpus written through the CLI.
std::filesystem::path synth_into(const TempDir &dir, const std::string &name, const std::string &speakers,
                                 const std::string &seed, const std::string &prefix = "spk") {
    const auto out = dir / name;
    const auto r = cli({"synth", "--out", str(out), "--speakers", speakers, "--segs", "8", "--frames", "10", "--dim", "6",
                        "--sep", "6", "--seed", seed, "--prefix", prefix, "--languages", "eng,spa"});
    REQUIRE(r.code == 0);
    return out;
}

void write(const std::filesystem::path &p, const std::string &text) {
    std::ofstream(p) << text;
}

} // namespace

TEST_CASE("synth writes a parseable corpus and reference") {
    TempDir dir("cli_synth");
    const auto out = synth_into(dir, "c", "4", "3");
    const Corpus corpus = parse_manifest(out / "manifest.json");
    CHECK(corpus.conversations().size() == 2);
    CHECK(corpus.segment_count() == 32);
    CHECK(corpus.geometry().dim == 6);
    CHECK(corpus.geometry().frames_per_segment == 10);
    CHECK(corpus.fully_labeled());
    CHECK(corpus.tags(corpus.conversations()[1].id).at("language") == "spa");
    CHECK(read_rttm(out / "reference.rttm").size() == 2);

    SUBCASE("reruns are byte identical") {
        const auto again = synth_into(dir, "d", "4", "3");
        CHECK(slurp(out / "manifest.json") == slurp(again / "manifest.json"));
        CHECK(slurp(out / "reference.rttm") == slurp(again / "reference.rttm"));
        for (const auto &entry : std::filesystem::directory_iterator(out / "features")) {
            CHECK(slurp(entry.path()) == slurp(again / "features" / entry.path().filename()));
        }
    }
    SUBCASE("a config file sets defaults and flags override it") {
        write(dir / "spec.json", R"({"speakers": 6, "dim": 5, "seed": 11})");
        const auto r = cli({"synth", "--config", str(dir / "spec.json"), "--dim", "7", "--print-config"});
        REQUIRE(r.code == 0);
        const json j = json::parse(r.out);
        CHECK(j["speakers"] == 6);
        CHECK(j["dim"] == 7);
        CHECK(j["seed"] == 11);
    }
}

TEST_CASE("argument and input errors map to exit codes") {
    TempDir dir("cli_errors");
    CHECK(cli({}).code == 2);
    CHECK(cli({"bogus"}).code == 2);
    CHECK(cli({"synth"}).code == 2); // missing --out
    CHECK(cli({"synth", "--out", str(dir / "x"), "--speakers", "0"}).code == 2);
    CHECK(cli({"synth", "--out", str(dir / "x"), "--speakers", "two"}).code == 2);
    CHECK(cli({"train", "--corpus", str(dir / "missing.json"), "--out", str(dir / "r")}).code == 2);
    CHECK(cli({"synth", "--help"}).code == 0);

    write(dir / "bad.json", "{ not json");
    const auto malformed = cli({"train", "--config", str(dir / "bad.json"), "--print-config"});
    CHECK(malformed.code == 2);
    CHECK(malformed.err.find("bad.json") != std::string::npos);
    write(dir / "wrong.json", R"({"loss": "contrastive"})");
    CHECK(cli({"train", "--config", str(dir / "wrong.json"), "--print-config"}).code == 2);
    CHECK(cli({"train", "--sampling", "hardest", "--print-config"}).code == 2);

    // A manifest that points at missing feature files is an I/O failure.
    const auto corpus = synth_into(dir, "c", "4", "1");
    std::filesystem::remove_all(corpus / "features");
    CHECK(cli({"train", "--corpus", str(corpus / "manifest.json"), "--out", str(dir / "r")}).code == 3);
}

TEST_CASE("train writes a checkpoint whose reload reproduces the embedding hash") {
    TempDir dir("cli_train");
    const auto train_dir = synth_into(dir, "train", "6", "1");
    const auto eval_dir = synth_into(dir, "eval", "4", "2", "eval");
    const auto run_dir = dir / "run";
    const auto r = cli({"train", "--corpus", str(train_dir / "manifest.json"), "--eval", str(eval_dir / "manifest.json"),
                        "--out", str(run_dir), "--steps", "25", "--P", "3", "--K", "2", "--sampling", "dw",
                        "--hidden", "12", "--embed-dim", "4", "--lr", "0.01"});
    REQUIRE(r.code == 0);
    const json run = load(run_dir / "run.json");
    CHECK(run["loss_curve"].size() == 25);
    CHECK(run["margin_curve"].size() == 25);
    CHECK(run["key"] == "dw/triplet/fixed");
    CHECK(run["config"]["embedder"]["input_dim"] == 6);
    CHECK(run["config"]["embedder"]["embed_dim"] == 4);
    CHECK(run["eval"]["der"].get<double>() >= 0.0);
    CHECK(run["hash_corpus"] == "eval");

    const EmbedderModel model = load_checkpoint(run_dir / "model.ckpt");
    CHECK(embedding_hash(model, parse_manifest(eval_dir / "manifest.json"), 8) == run["embedding_hash"]);

    const auto again = cli({"train", "--corpus", str(train_dir / "manifest.json"), "--eval",
                            str(eval_dir / "manifest.json"), "--out", str(dir / "run2"), "--steps", "25", "--P", "3",
                            "--K", "2", "--sampling", "dw", "--hidden", "12", "--embed-dim", "4", "--lr", "0.01"});
    REQUIRE(again.code == 0);
    CHECK(slurp(run_dir / "model.ckpt") == slurp(dir / "run2" / "model.ckpt"));
    CHECK(load(dir / "run2" / "run.json")["embedding_hash"] == run["embedding_hash"]);

    SUBCASE("config file values are overridden by flags") {
        write(dir / "cfg.json", R"({"optimizer": {"steps": 5, "learning_rate": 0.2}, "embedder": {"hidden": [8]}})");
        const auto p = cli({"train", "--config", str(dir / "cfg.json"), "--steps", "9", "--print-config"});
        REQUIRE(p.code == 0);
        const json cfg = json::parse(p.out);
        CHECK(cfg["optimizer"]["steps"] == 9);
        CHECK(cfg["optimizer"]["learning_rate"] == 0.2);
        CHECK(cfg["embedder"]["hidden"] == json::array({8}));
    }
    SUBCASE("too many speakers per batch is a usage error") {
        CHECK(cli({"train", "--corpus", str(train_dir / "manifest.json"), "--out", str(dir / "r3"), "--P", "9"}).code ==
              2);
    }
}

TEST_CASE("diarize and score") {
    TempDir dir("cli_diarize");
    const auto train_dir = synth_into(dir, "train", "6", "4");
    const auto eval_dir = synth_into(dir, "eval", "4", "5", "eval");
    REQUIRE(cli({"train", "--corpus", str(train_dir / "manifest.json"), "--out", str(dir / "run"), "--steps", "20",
                 "--P", "3", "--K", "2", "--hidden", "12", "--embed-dim", "4"})
                .code == 0);
    const auto hyp = dir / "hyp.rttm";
    REQUIRE(cli({"diarize", "--checkpoint", str(dir / "run" / "model.ckpt"), "--corpus",
                 str(eval_dir / "manifest.json"), "--out", str(hyp)})
                .code == 0);

    const std::regex line_re(R"(SPEAKER \S+ 1 \d+\.\d{3} \d+\.\d{3} <NA> <NA> \S+ <NA> <NA>)");
    std::istringstream lines(slurp(hyp));
    std::size_t count = 0;
    for (std::string line; std::getline(lines, line); ++count) CHECK(std::regex_match(line, line_re));
    CHECK(count == 32);

    const auto annotations = read_rttm(hyp);
    REQUIRE(annotations.size() == 2);
    for (const auto &a : annotations) {
        CHECK(a.turns.size() == 16);
        CHECK(a.labels().size() >= 2); // forced floor, even for two-speaker conversations
    }

    const auto ref = eval_dir / "reference.rttm";
    SUBCASE("scoring a reference against itself") {
        const auto r = cli({"score", "--ref", str(ref), "--hyp", str(ref), "--out", str(dir / "s.json")});
        REQUIRE(r.code == 0);
        CHECK(r.out.find("time-weighted") != std::string::npos);
        CHECK(r.out.find("OVERALL") != std::string::npos);
        CHECK(r.out.find("0.00%") != std::string::npos);
        const json s = load(dir / "s.json");
        CHECK(s["overall"]["der"] == 0.0);
        CHECK(s["files"].size() == 2);
    }
    SUBCASE("the diarized output scores within [0, 1]") {
        const auto r = cli({"score", "--ref", str(ref), "--hyp", str(hyp), "--out", str(dir / "s.json")});
        REQUIRE(r.code == 0);
        const double der = load(dir / "s.json")["overall"]["der"];
        CHECK(der >= 0.0);
        CHECK(der <= 1.0);
    }
    SUBCASE("grouping by a manifest tag") {
        const auto r = cli({"score", "--ref", str(ref), "--hyp", str(hyp), "--group-by", "language", "--manifest",
                            str(eval_dir / "manifest.json"), "--out", str(dir / "g.json")});
        REQUIRE(r.code == 0);
        const json g = load(dir / "g.json");
        CHECK(g["groups"].size() == 2);
        CHECK(g["groups"].contains("eng"));
        CHECK(g["groups"].contains("spa"));
        CHECK(cli({"score", "--ref", str(ref), "--hyp", str(hyp), "--group-by", "language"}).code == 2);
    }
    SUBCASE("diarizing one conversation") {
        SynthSpec spec;
        spec.n_speakers = 2;
        spec.segments_per_speaker = 6;
        spec.frames_per_segment = 10;
        spec.dim = 6;
        spec.seed = 8;
        write_corpus(generate_corpus(spec), dir / "one");
        REQUIRE(cli({"diarize", "--checkpoint", str(dir / "run" / "model.ckpt"), "--corpus",
                     str(dir / "one" / "manifest.json"), "--out", str(dir / "one.rttm"), "--k-max", "3"})
                    .code == 0);
        const auto one = read_rttm(dir / "one.rttm");
        REQUIRE(one.size() == 1);
        CHECK(one[0].labels().size() >= 2);
        CHECK(one[0].labels().size() <= 3);
    }
    SUBCASE("a checkpoint of the wrong input width is rejected") {
        SynthSpec spec;
        spec.n_speakers = 2;
        spec.segments_per_speaker = 4;
        spec.frames_per_segment = 10;
        spec.dim = 9;
        write_corpus(generate_corpus(spec), dir / "wide");
        const auto r = cli({"diarize", "--checkpoint", str(dir / "run" / "model.ckpt"), "--corpus",
                            str(dir / "wide" / "manifest.json"), "--out", str(dir / "w.rttm")});
        CHECK(r.code != 0);
        CHECK_FALSE(r.err.empty());
    }
}

TEST_CASE("score on a hand-built case") {
    TempDir dir("cli_score");
    write(dir / "ref.rttm", "SPEAKER f 1 0.000 5.000 <NA> <NA> A <NA> <NA>\n"
                            "SPEAKER f 1 5.000 5.000 <NA> <NA> B <NA> <NA>\n");
    write(dir / "hyp.rttm", "SPEAKER f 1 0.000 6.000 <NA> <NA> x <NA> <NA>\n"
                            "SPEAKER f 1 6.000 4.000 <NA> <NA> y <NA> <NA>\n");
    const auto r = cli({"score", "--ref", str(dir / "ref.rttm"), "--hyp", str(dir / "hyp.rttm"), "--collar", "0"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("10.00%") != std::string::npos);
    CHECK(cli({"score", "--ref", str(dir / "ref.rttm"), "--hyp", str(dir / "hyp.rttm"), "--collar", "-1"}).code == 2);
    write(dir / "broken.rttm", "SPEAKER f 1 zero 5.000 <NA> <NA> A <NA> <NA>\n");
    CHECK(cli({"score", "--ref", str(dir / "broken.rttm"), "--hyp", str(dir / "hyp.rttm")}).code != 0);
}

TEST_CASE("grid presets through the command line") {
    TempDir dir("cli_grid");
    const auto train_dir = synth_into(dir, "train", "6", "6");
    const auto eval_dir = synth_into(dir, "eval", "8", "7", "eval");
    const std::vector<std::string> common{"--steps", "5", "--P", "3", "--K", "2", "--hidden", "8", "--embed-dim", "4"};
    auto grid = [&](std::vector<std::string> extra) {
        std::vector<std::string> args{"grid", "--train", str(train_dir / "manifest.json")};
        args.insert(args.end(), common.begin(), common.end());
        args.insert(args.end(), extra.begin(), extra.end());
        return cli(args);
    };

    const auto table1 = grid({"--preset", "table1", "--eval", str(eval_dir / "manifest.json"), "--out",
                              str(dir / "t1.json"), "--jobs", "2"});
    REQUIRE(table1.code == 0);
    const json t1 = load(dir / "t1.json");
    REQUIRE(t1["rows"].size() == 11);
    const std::vector<std::string> expected{
        "random/triplet/fixed",   "random/triplet/adaptive", "random/quadruplet/fixed", "random/quadruplet/adaptive",
        "semihard/triplet/fixed", "semihard/triplet/adaptive", "semihard/quadruplet/adaptive", "dw/triplet/fixed",
        "dw/triplet/adaptive",    "dw/quadruplet/fixed",     "dw/quadruplet/adaptive"};
    for (std::size_t i = 0; i < expected.size(); ++i) {
        CHECK(t1["rows"][i]["key"] == expected[i]);
        CHECK(t1["rows"][i]["der"].is_object());
    }
    CHECK(t1["preset"] == "table1");
    CHECK(table1.out.find("Sampling") != std::string::npos);

    const auto full = grid({"--out", str(dir / "full.json")});
    REQUIRE(full.code == 0);
    const json f = load(dir / "full.json");
    CHECK(f["rows"].size() == 12);
    CHECK(f["rows"][0]["der"].is_null());
    CHECK(full.out.find("DER not computed") != std::string::npos);

    const auto stress = grid({"--preset", "table1", "--eval", str(eval_dir / "manifest.json"), "--speaker-stress",
                              "4,6"});
    REQUIRE(stress.code == 0);
    CHECK(stress.out.find("DER%@4spk") != std::string::npos);
    CHECK(stress.out.find("DER%@6spk") != std::string::npos);

    CHECK(grid({"--preset", "table9"}).code == 2);
    CHECK(grid({"--speaker-stress", "4"}).code == 2); // needs --eval
}
