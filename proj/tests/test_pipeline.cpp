#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <unistd.h>

#include "doctest.h"
#include "dpe/dp.hpp"
#include "dpe/pipeline.hpp"

using namespace dpe;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name)
        : path(fs::temp_directory_path() / ("dpe_" + name + "_" + std::to_string(::getpid()))) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::io;
}

const std::vector<std::string> source_lines{
    "le chat noir",  "les chats noirs", "un chat",  "des chats", "le rat",       "les rats",
    "un rat  gris", "des rats gris",   "le chien", "les chiens", "un chien noir", "des chiens noirs",
};
const std::vector<std::string> target_lines{
    "the black cat", "the black cats", "a cat",   "some cats", "the rat",       "the rats",
    "a grey rat",    "some grey rats", "the dog", "the dogs",  "a black dog",   "some black dogs",
};

// Corpus, BPE model and a briefly trained checkpoint in `dir`.
PipelineConfig prepared(const fs::path& dir, ScorerMode mode = ScorerMode::conditional) {
    write_lines(dir / "train.src", source_lines);
    write_lines(dir / "train.tgt", target_lines);
    PipelineConfig cfg;
    cfg.source = dir / "train.src";
    cfg.target = dir / "train.tgt";
    cfg.vocab = dir / "vocab.txt";
    cfg.merges = dir / "merges.txt";
    cfg.checkpoint = dir / "scorer.ckpt";
    cfg.vocab_size = 45;
    cfg.seed = 7;
    cfg.dropout_p = 0.3;
    cfg.train.epochs = 2;
    cfg.train.dim = 4;
    cfg.train.grad_accumulation = 4;
    cfg.train.features.hash_bits = 10;
    cfg.train.mode = mode;
    run_train_bpe(cfg);
    run_stage_train_scorer(cfg);
    return cfg;
}

}  // namespace

TEST_CASE("mode names") {
    for (auto m : {TargetMode::bpe, TargetMode::bpe_dropout, TargetMode::dpe_fixed, TargetMode::dpe_on_the_fly}) {
        CHECK(parse_target_mode(to_string(m)) == m);
    }
    CHECK(parse_source_mode("bpe-dropout") == SourceMode::bpe_dropout);
    CHECK(code_of([] { parse_target_mode("dpe"); }) == ErrorCode::config);
}

TEST_CASE("configuration errors are raised before any work") {
    TempDir tmp("cfg");
    write_lines(tmp.path / "a.src", source_lines);
    write_lines(tmp.path / "a.tgt", target_lines);
    PipelineConfig cfg;
    cfg.source = tmp.path / "a.src";
    cfg.target = tmp.path / "a.tgt";
    cfg.vocab = tmp.path / "missing.vocab";
    cfg.merges = tmp.path / "missing.merges";
    cfg.checkpoint = tmp.path / "out.ckpt";
    cfg.output_dir = tmp.path / "out";

    CHECK(code_of([&] { run_stage_train_scorer(cfg); }) == ErrorCode::config);
    CHECK_FALSE(fs::exists(cfg.checkpoint));
    CHECK(code_of([&] { run_stage_segment(cfg); }) == ErrorCode::config);
    CHECK_FALSE(fs::exists(cfg.output_dir));

    cfg.vocab_size = 40;
    run_train_bpe(cfg);
    cfg.target_mode = TargetMode::dpe_fixed;
    CHECK(code_of([&] { validate(cfg, Stage::segment); }) == ErrorCode::config);  // checkpoint missing
    cfg.target_mode = TargetMode::dpe_on_the_fly;
    cfg.source_mode = SourceMode::bpe;
    CHECK(code_of([&] { validate(cfg, Stage::segment); }) == ErrorCode::config);
    cfg.target_mode = TargetMode::bpe;
    CHECK_NOTHROW(validate(cfg, Stage::segment));
    cfg.dropout_p = 1.5;
    CHECK(code_of([&] { validate(cfg, Stage::segment); }) == ErrorCode::config);
    cfg.dropout_p = 0.1;
    cfg.joiner = "";
    CHECK(code_of([&] { validate(cfg, Stage::segment); }) == ErrorCode::config);
}

TEST_CASE("train-scorer writes a checkpoint readable by the segment stage") {
    TempDir tmp("train");
    auto cfg = prepared(tmp.path);
    auto ckpt = load_checkpoint(cfg.checkpoint);
    CHECK(ckpt.mode == ScorerMode::conditional);
    CHECK(ckpt.vocab_fingerprint == load_vocab(cfg.vocab).fingerprint());
    auto log = slurp(fs::path(cfg.checkpoint.string() + ".log"));
    CHECK(log.rfind("epoch=1 nats_per_char=", 0) == 0);
    CHECK(log.find("epoch=2 ") != std::string::npos);

    TempDir lm_tmp("train_lm");
    auto lm = prepared(lm_tmp.path, ScorerMode::language_model);
    auto lm_ckpt = load_checkpoint(lm.checkpoint);
    CHECK(lm_ckpt.mode == ScorerMode::language_model);
    CHECK_FALSE(lm_ckpt.features.use_source);
}

TEST_CASE("segment: baseline BPE on both sides") {
    TempDir tmp("seg_bpe");
    auto cfg = prepared(tmp.path);
    cfg.output_dir = tmp.path / "seg";
    cfg.source_mode = SourceMode::bpe;
    cfg.target_mode = TargetMode::bpe;
    auto summary = run_stage_segment(cfg);
    CHECK(summary.lines == source_lines.size());
    CHECK(summary.unsegmentable.empty());

    BpeModel bpe{load_merges(cfg.merges), load_vocab(cfg.vocab)};
    auto src = read_lines(segmented_file(cfg.output_dir, 0, "src"));
    auto tgt = read_lines(segmented_file(cfg.output_dir, 0, "tgt"));
    REQUIRE(src.size() == source_lines.size());
    REQUIRE(tgt.size() == target_lines.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
        CHECK(src[i] == join_segmented(segment_line_bpe(utf8_decode(normalize_whitespace(source_lines[i])),
                                                        bpe.merges, bpe.vocab)));
        CHECK(tgt[i] == join_segmented(segment_line_bpe(utf8_decode(target_lines[i]), bpe.merges, bpe.vocab)));
        CHECK(strip_joiners(src[i]) == normalize_whitespace(source_lines[i]));
    }
}

TEST_CASE("segment: dpe-fixed is the Viterbi segmentation given greedy source BPE") {
    TempDir tmp("seg_fixed");
    auto cfg = prepared(tmp.path);
    cfg.output_dir = tmp.path / "a";
    cfg.target_mode = TargetMode::dpe_fixed;
    cfg.source_mode = SourceMode::bpe;
    run_stage_segment(cfg);

    BpeModel bpe{load_merges(cfg.merges), load_vocab(cfg.vocab)};
    auto ckpt = load_checkpoint(cfg.checkpoint);
    LogLinearScorer scorer(ckpt.params, ckpt.features);
    auto tgt = read_lines(segmented_file(cfg.output_dir, 0, "tgt"));
    for (std::size_t i = 0; i < target_lines.size(); ++i) {
        auto y = utf8_decode(target_lines[i]);
        std::vector<std::string> src;
        for (auto& w : segment_line_bpe(utf8_decode(source_lines[i]), bpe.merges, bpe.vocab)) {
            src.insert(src.end(), w.begin(), w.end());
        }
        auto segs = sentence_viterbi(y, bpe.vocab, scorer, src);
        auto words = split_words(CharView(y));
        std::vector<SegmentedWord> expected;
        for (std::size_t k = 0; k < words.size(); ++k) {
            SegmentedWord pieces;
            for (auto& s : segs[k].spans(words[k])) pieces.push_back(utf8_encode(s));
            expected.push_back(pieces);
        }
        CHECK(tgt[i] == join_segmented(expected));
    }

    SUBCASE("idempotent") {
        auto again = cfg;
        again.output_dir = tmp.path / "b";
        again.workers = 3;
        run_stage_segment(again);
        for (auto name : {"seg.0.src", "seg.0.tgt", "unsegmentable.tsv", "segment.json"}) {
            CHECK(slurp(cfg.output_dir / name) == slurp(again.output_dir / name));
        }
    }
}

TEST_CASE("segment: on-the-fly passes re-draw the source and re-condition the target") {
    TempDir tmp("seg_otf");
    auto cfg = prepared(tmp.path);
    cfg.output_dir = tmp.path / "seg";
    cfg.target_mode = TargetMode::dpe_on_the_fly;
    cfg.source_mode = SourceMode::bpe_dropout;
    cfg.dropout_p = 0.5;
    cfg.passes = 3;
    auto summary = run_stage_segment(cfg);
    CHECK(summary.files.size() == 6);
    std::set<std::string> distinct;
    for (std::size_t p = 0; p < 3; ++p) {
        auto src = read_lines(segmented_file(cfg.output_dir, p, "src"));
        auto tgt = read_lines(segmented_file(cfg.output_dir, p, "tgt"));
        REQUIRE(src.size() == source_lines.size());
        REQUIRE(tgt.size() == target_lines.size());
        for (std::size_t i = 0; i < src.size(); ++i) {
            CHECK(strip_joiners(src[i]) == normalize_whitespace(source_lines[i]));
            CHECK(strip_joiners(tgt[i]) == target_lines[i]);
        }
        distinct.insert(slurp(segmented_file(cfg.output_dir, p, "src")));
    }
    CHECK(distinct.size() > 1);
    auto manifest = read_manifest(cfg.output_dir / "segment.json");
    CHECK(manifest.passes == 3);
    CHECK(manifest.target_mode == TargetMode::dpe_on_the_fly);
    CHECK_NOTHROW(verify_manifest(manifest, cfg.output_dir));
}

TEST_CASE("unsegmentable words fall back to characters and are reported") {
    TempDir tmp("seg_fallback");
    auto cfg = prepared(tmp.path);
    auto tgt = target_lines;
    tgt[2] = "a Zebra cat";
    write_lines(tmp.path / "odd.tgt", tgt);
    cfg.target = tmp.path / "odd.tgt";
    cfg.output_dir = tmp.path / "seg";
    cfg.target_mode = TargetMode::dpe_fixed;
    cfg.source_mode = SourceMode::bpe;
    auto summary = run_stage_segment(cfg);
    REQUIRE(summary.unsegmentable.size() == 1);
    CHECK(summary.unsegmentable[0].line == 3);
    CHECK(summary.unsegmentable[0].word == "Zebra");
    auto out = read_lines(segmented_file(cfg.output_dir, 0, "tgt"));
    REQUIRE(out.size() == tgt.size());
    CHECK(out[2].find("Z@@ e@@ b@@ r@@ a ") != std::string::npos);
    CHECK(strip_joiners(out[2]) == tgt[2]);
    auto sidecar = read_lines(cfg.output_dir / "unsegmentable.tsv");
    REQUIRE(sidecar.size() == 2);
    CHECK(sidecar[1] == "0\t3\ttgt\tZebra\tUnsegmentable");

    // The emitted corpus must stay inside the vocabulary.
    auto emit = cfg;
    emit.segmented_dir = cfg.output_dir;
    emit.output_dir = tmp.path / "final";
    CHECK(code_of([&] { run_stage_emit_training_set(emit); }) == ErrorCode::format);
}

TEST_CASE("emit: variants, manifest and resume") {
    TempDir tmp("emit");
    auto cfg = prepared(tmp.path);
    cfg.output_dir = tmp.path / "seg";
    cfg.target_mode = TargetMode::dpe_fixed;
    cfg.source_mode = SourceMode::bpe_dropout;
    cfg.dropout_p = 0.5;
    run_stage_segment(cfg);

    auto emit = cfg;
    emit.segmented_dir = cfg.output_dir;
    emit.output_dir = tmp.path / "final";
    emit.variants = 3;
    auto summary = run_stage_emit_training_set(emit);
    CHECK(summary.files.size() == 6);
    CHECK(slurp(emit.output_dir / "train.0.src") == slurp(segmented_file(cfg.output_dir, 0, "src")));
    CHECK(slurp(emit.output_dir / "train.2.tgt") == slurp(segmented_file(cfg.output_dir, 0, "tgt")));
    CHECK(slurp(emit.output_dir / "train.1.src") != slurp(emit.output_dir / "train.2.src"));

    auto manifest = read_manifest(emit.output_dir / "manifest.json");
    CHECK(manifest.stage == "emit");
    CHECK(manifest.tool_version == tool_version);
    CHECK(manifest.seed == cfg.seed);
    CHECK(manifest.config_hash == summary.config_hash);
    CHECK(manifest.files.size() == 6);
    write_manifest(manifest, tmp.path / "copy.json");
    CHECK(read_manifest(tmp.path / "copy.json") == manifest);

    SUBCASE("rerun with the same configuration is byte-identical") {
        auto before = slurp(emit.output_dir / "manifest.json");
        run_stage_emit_training_set(emit);
        CHECK(slurp(emit.output_dir / "manifest.json") == before);
    }
    SUBCASE("resume with a different configuration") {
        emit.variants = 2;
        CHECK(code_of([&] { run_stage_emit_training_set(emit); }) == ErrorCode::manifest_mismatch);
    }
    SUBCASE("tampered output") {
        write_lines(emit.output_dir / "train.1.tgt", {"tampered"});
        CHECK(code_of([&] { verify_manifest(manifest, emit.output_dir); }) == ErrorCode::manifest_mismatch);
    }
    SUBCASE("the config hash ignores output locations") {
        auto moved = emit;
        moved.output_dir = tmp.path / "elsewhere";
        CHECK(config_hash(moved, Stage::emit) == config_hash(emit, Stage::emit));
    }
}

TEST_CASE("emit refuses more variants than on-the-fly passes") {
    TempDir tmp("emit_otf");
    auto cfg = prepared(tmp.path);
    cfg.output_dir = tmp.path / "seg";
    cfg.passes = 2;
    run_stage_segment(cfg);
    auto emit = cfg;
    emit.segmented_dir = cfg.output_dir;
    emit.output_dir = tmp.path / "final";
    emit.variants = 3;
    CHECK(code_of([&] { run_stage_emit_training_set(emit); }) == ErrorCode::config);
    emit.variants = 2;
    CHECK_NOTHROW(run_stage_emit_training_set(emit));
}

TEST_CASE("command-line exit codes and config file") {
    TempDir tmp("cli");
    write_lines(tmp.path / "c.src", source_lines);
    write_lines(tmp.path / "c.tgt", target_lines);
    const std::string cli = DPE_CLI;
    auto run = [&](const std::string& args) {
        int status = std::system((cli + " " + args + " 2>/dev/null >/dev/null").c_str());
        return WEXITSTATUS(status);
    };
    const std::string d = tmp.path.string();
    CHECK(run("train-scorer --source " + d + "/c.src --target " + d + "/c.tgt --vocab " + d +
              "/none --merges " + d + "/none --checkpoint " + d + "/x.ckpt") == 2);
    CHECK(run("segment --mode nonsense") == 2);
    CHECK(run("--no-such-flag") == 2);

    std::ofstream(tmp.path / "run.toml") << "# shared settings\nseed = 3\n\n[train-bpe]\nsource = \"" << d
                                         << "/c.src\"\ntarget = \"" << d << "/c.tgt\"\nvocab = \"" << d
                                         << "/v.txt\"\nmerges = \"" << d << "/m.txt\"\nvocab-size = 40\n";
    CHECK(run("--config " + d + "/run.toml train-bpe") == 0);
    CHECK(load_vocab(tmp.path / "v.txt").size() == 40);
    CHECK(run("--config " + d + "/run.toml train-bpe --vocab-size 42") == 0);
    CHECK(load_vocab(tmp.path / "v.txt").size() == 42);

    // A blank target line is a data error.
    write_lines(tmp.path / "bad.tgt", {"the cat", "", "a dog"});
    write_lines(tmp.path / "bad.src", {"le chat", "x", "un chien"});
    CHECK(run("train-scorer --source " + d + "/bad.src --target " + d + "/bad.tgt --vocab " + d + "/v.txt --merges " +
              d + "/m.txt --checkpoint " + d + "/x.ckpt") == 3);
}
