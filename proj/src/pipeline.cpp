#include "dpe/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "dpe/dp.hpp"
#include "dpe/hash.hpp"
#include "dpe/parallel.hpp"

namespace dpe {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string_view to_string(SourceMode mode) noexcept {
    return mode == SourceMode::bpe ? "bpe" : "bpe-dropout";
}

std::string_view to_string(TargetMode mode) noexcept {
    switch (mode) {
        case TargetMode::bpe: return "bpe";
        case TargetMode::bpe_dropout: return "bpe-dropout";
        case TargetMode::dpe_fixed: return "dpe-fixed";
        case TargetMode::dpe_on_the_fly: return "dpe-on-the-fly";
    }
    return "?";
}

SourceMode parse_source_mode(std::string_view text) {
    if (text == "bpe") return SourceMode::bpe;
    if (text == "bpe-dropout") return SourceMode::bpe_dropout;
    throw Error(ErrorCode::config, "unknown source mode '" + std::string(text) + "'");
}

TargetMode parse_target_mode(std::string_view text) {
    for (auto m : {TargetMode::bpe, TargetMode::bpe_dropout, TargetMode::dpe_fixed, TargetMode::dpe_on_the_fly}) {
        if (text == to_string(m)) return m;
    }
    throw Error(ErrorCode::config, "unknown target mode '" + std::string(text) + "'");
}

namespace {

constexpr std::uint64_t source_stream = 0x737263;  // "src"
constexpr std::uint64_t target_stream = 0x746774;  // "tgt"

bool is_dpe(TargetMode m) {
    return m == TargetMode::dpe_fixed || m == TargetMode::dpe_on_the_fly;
}

// Target output differs between passes.
bool target_varies(TargetMode m) {
    return m == TargetMode::bpe_dropout || m == TargetMode::dpe_on_the_fly;
}

void require_file(const fs::path& path, std::string_view what) {
    if (path.empty()) throw Error(ErrorCode::config, std::string(what) + " path is required");
    if (!fs::is_regular_file(path)) throw Error(ErrorCode::config, std::string(what) + " not found: " + path.string());
}

void require_dir_setting(const fs::path& path, std::string_view what) {
    if (path.empty()) throw Error(ErrorCode::config, std::string(what) + " is required");
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

BpeModel load_bpe_model(const PipelineConfig& cfg) {
    BpeModel model{load_merges(cfg.merges), load_vocab(cfg.vocab)};
    check_merges_in_vocab(model.merges, model.vocab);
    return model;
}

SegmentedWord per_character(const CharSequence& word) {
    SegmentedWord out;
    for (char32_t c : word) out.push_back(utf8_encode(CharView(&c, 1)));
    return out;
}

SegmentedWord pieces_of(const CharSequence& word, const Segmentation& z) {
    SegmentedWord out;
    for (const auto& s : z.spans(word)) out.push_back(utf8_encode(s));
    return out;
}

struct LineOutput {
    std::vector<SegmentedWord> source;
    std::vector<SegmentedWord> target;
    std::vector<UnsegmentableWord> failures;
};

// Greedy BPE, or BPE-dropout seeded per (pass, line, word). Words with
// characters outside the vocabulary fall back to one token per character.
std::vector<SegmentedWord> bpe_side(const std::vector<CharSequence>& words, const BpeModel& bpe, bool dropout,
                                    double p, std::uint64_t line_seed, std::size_t pass, std::size_t line,
                                    const char* side, std::vector<UnsegmentableWord>& failures) {
    std::vector<SegmentedWord> out;
    out.reserve(words.size());
    for (std::size_t i = 0; i < words.size(); ++i) {
        try {
            Segmentation z = dropout ? encode_bpe_dropout(words[i], bpe.merges, bpe.vocab,
                                                          DropoutConfig{p, derive_seed(line_seed, i)})
                                     : encode_bpe(words[i], bpe.merges, bpe.vocab);
            out.push_back(pieces_of(words[i], z));
        } catch (const Error& e) {
            if (e.code() != ErrorCode::unknown_char) throw;
            failures.push_back({pass, line + 1, side, utf8_encode(words[i]), std::string(to_string(e.code()))});
            out.push_back(per_character(words[i]));
        }
    }
    return out;
}

std::vector<std::string> flatten(const std::vector<SegmentedWord>& words) {
    std::vector<std::string> out;
    for (const auto& w : words) out.insert(out.end(), w.begin(), w.end());
    return out;
}

std::uint64_t source_line_seed(std::uint64_t seed, std::size_t pass, std::size_t line) {
    return derive_seed(derive_seed(seed, source_stream), pass, line);
}

std::vector<SegmentedWord> segment_source(const CharSequence& line, const BpeModel& bpe, SourceMode mode,
                                          double p, std::uint64_t seed, std::size_t pass, std::size_t index,
                                          std::vector<UnsegmentableWord>& failures) {
    return bpe_side(split_words(line), bpe, mode == SourceMode::bpe_dropout, p, source_line_seed(seed, pass, index),
                    pass, index, "src", failures);
}

std::vector<SegmentedWord> dpe_side(const CharSequence& line, const Vocabulary& vocab, const Scorer& scorer,
                                    const std::vector<std::string>& source, std::size_t pass, std::size_t index,
                                    std::vector<UnsegmentableWord>& failures) {
    std::vector<SegmentedWord> out;
    auto words = split_words(line);
    Conditioning cond = make_conditioning(U"", source, scorer.feature_config());
    for (const auto& w : words) {
        try {
            out.push_back(pieces_of(w, viterbi_segment(w, vocab, scorer, cond).segmentation));
        } catch (const Error& e) {
            if (e.code() != ErrorCode::unsegmentable) throw;
            failures.push_back({pass, index + 1, "tgt", utf8_encode(w), std::string(to_string(e.code()))});
            out.push_back(per_character(w));
        }
        cond.left_context += w;
        cond.left_context += U' ';
    }
    return out;
}

LineOutput segment_pair(const SentencePair& pair, const BpeModel& bpe, const Scorer* scorer,
                        const PipelineConfig& cfg, std::size_t pass, std::size_t index) {
    LineOutput out;
    out.source = segment_source(pair.source, bpe, cfg.source_mode, cfg.dropout_p, cfg.seed, pass, index, out.failures);
    switch (cfg.target_mode) {
        case TargetMode::bpe:
        case TargetMode::bpe_dropout:
            out.target = bpe_side(split_words(pair.target), bpe, cfg.target_mode == TargetMode::bpe_dropout,
                                  cfg.dropout_p, derive_seed(derive_seed(cfg.seed, target_stream), pass, index), pass,
                                  index, "tgt", out.failures);
            break;
        case TargetMode::dpe_fixed: {
            std::vector<UnsegmentableWord> ignored;
            auto greedy = flatten(bpe_side(split_words(pair.source), bpe, false, 0.0, 0, pass, index, "src", ignored));
            out.target = dpe_side(pair.target, bpe.vocab, *scorer, greedy, pass, index, out.failures);
            break;
        }
        case TargetMode::dpe_on_the_fly:
            out.target = dpe_side(pair.target, bpe.vocab, *scorer, flatten(out.source), pass, index, out.failures);
            break;
    }
    return out;
}

ManifestFile describe_file(const fs::path& dir, const std::string& name) {
    std::string bytes = read_bytes(dir / name);
    std::size_t lines = 0;
    for (char c : bytes) lines += c == '\n';
    return {name, lines, hex64(fnv1a(bytes))};
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
    out << text;
    if (!out) throw Error(ErrorCode::io, "write failed: " + path.string());
}

std::string tsv_field(std::string s) {
    for (char& c : s) {
        if (c == '\t' || c == '\n') c = ' ';
    }
    return s;
}

}  // namespace

void validate(const PipelineConfig& cfg, Stage stage) {
    if (!(cfg.dropout_p >= 0.0 && cfg.dropout_p <= 1.0)) {
        throw Error(ErrorCode::config, "dropout probability must lie in [0,1]");
    }
    if (cfg.joiner.empty() || cfg.joiner.find_first_of(" \t\n") != std::string::npos) {
        throw Error(ErrorCode::config, "joiner must be non-empty and contain no whitespace");
    }
    switch (stage) {
        case Stage::train_bpe:
            require_file(cfg.source, "source corpus");
            require_file(cfg.target, "target corpus");
            require_dir_setting(cfg.vocab, "vocab output path");
            require_dir_setting(cfg.merges, "merges output path");
            if (cfg.vocab_size == 0) throw Error(ErrorCode::config, "vocab size must be positive");
            break;
        case Stage::train_scorer:
            require_file(cfg.source, "source corpus");
            require_file(cfg.target, "target corpus");
            require_file(cfg.vocab, "vocab");
            require_file(cfg.merges, "merges");
            require_dir_setting(cfg.checkpoint, "checkpoint output path");
            cfg.train.validate();
            break;
        case Stage::segment:
            require_file(cfg.source, "source corpus");
            require_file(cfg.target, "target corpus");
            require_file(cfg.vocab, "vocab");
            require_file(cfg.merges, "merges");
            require_dir_setting(cfg.output_dir, "output directory");
            if (cfg.passes == 0) throw Error(ErrorCode::config, "passes must be at least 1");
            if (is_dpe(cfg.target_mode)) require_file(cfg.checkpoint, "checkpoint (required by dpe target modes)");
            if (cfg.target_mode == TargetMode::dpe_on_the_fly && cfg.source_mode != SourceMode::bpe_dropout) {
                throw Error(ErrorCode::config, "target mode dpe-on-the-fly requires source mode bpe-dropout");
            }
            break;
        case Stage::emit:
            require_file(cfg.source, "source corpus");
            require_file(cfg.target, "target corpus");
            require_file(cfg.vocab, "vocab");
            require_file(cfg.merges, "merges");
            require_dir_setting(cfg.segmented_dir, "segmented directory");
            require_dir_setting(cfg.output_dir, "output directory");
            if (!fs::is_regular_file(cfg.segmented_dir / "segment.json")) {
                throw Error(ErrorCode::config, "no segment stage output in " + cfg.segmented_dir.string());
            }
            if (cfg.variants == 0) throw Error(ErrorCode::config, "variants must be at least 1");
            break;
    }
}

std::string file_digest(const fs::path& path) {
    return hex64(fnv1a(read_bytes(path)));
}

std::string config_hash(const PipelineConfig& cfg, Stage stage) {
    std::ostringstream s;
    s.precision(17);
    auto digest_if = [](const fs::path& p) { return p.empty() || !fs::exists(p) ? std::string("-") : file_digest(p); };
    s << "tool=" << tool_version << '\n';
    s << "source=" << digest_if(cfg.source) << "\ntarget=" << digest_if(cfg.target) << '\n';
    s << "seed=" << cfg.seed << "\ndropout_p=" << cfg.dropout_p << "\njoiner=" << cfg.joiner << '\n';
    switch (stage) {
        case Stage::train_bpe:
            s << "stage=train-bpe\nvocab_size=" << cfg.vocab_size << '\n';
            break;
        case Stage::train_scorer: {
            const auto& t = cfg.train;
            s << "stage=train-scorer\nvocab=" << digest_if(cfg.vocab) << "\nmerges=" << digest_if(cfg.merges)
              << "\nepochs=" << t.epochs << "\nlr=" << t.learning_rate << "\nbatch=" << t.batch_size
              << "\naccum=" << t.grad_accumulation << "\nmode=" << to_string(t.mode) << "\ndim=" << t.dim
              << "\ninit=" << t.init_scale << "\nclip=" << t.clip_norm << "\nwindow=" << t.features.context_window
              << "\norder=" << t.features.max_order << "\nbits=" << t.features.hash_bits << '\n';
            break;
        }
        case Stage::segment:
            s << "stage=segment\nvocab=" << digest_if(cfg.vocab) << "\nmerges=" << digest_if(cfg.merges)
              << "\ncheckpoint=" << (is_dpe(cfg.target_mode) ? digest_if(cfg.checkpoint) : "-")
              << "\nsource_mode=" << to_string(cfg.source_mode) << "\ntarget_mode=" << to_string(cfg.target_mode)
              << "\npasses=" << cfg.passes << '\n';
            break;
        case Stage::emit:
            s << "stage=emit\nvocab=" << digest_if(cfg.vocab) << "\nmerges=" << digest_if(cfg.merges)
              << "\nsegmented=" << digest_if(cfg.segmented_dir / "segment.json") << "\nvariants=" << cfg.variants
              << '\n';
            break;
    }
    return hex64(fnv1a(s.str()));
}

void write_manifest(const Manifest& m, const fs::path& path) {
    json files = json::array();
    for (const auto& f : m.files) files.push_back({{"name", f.name}, {"lines", f.lines}, {"digest", f.digest}});
    json j = {{"stage", m.stage},
              {"tool_version", m.tool_version},
              {"config_hash", m.config_hash},
              {"seed", m.seed},
              {"dropout_p", m.dropout_p},
              {"joiner", m.joiner},
              {"source_mode", to_string(m.source_mode)},
              {"target_mode", to_string(m.target_mode)},
              {"passes", m.passes},
              {"variants", m.variants},
              {"lines", m.lines},
              {"vocab_fingerprint", m.vocab_fingerprint},
              {"parent_hash", m.parent_hash},
              {"files", files}};
    write_text(path, j.dump(2) + "\n");
}

Manifest read_manifest(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_bytes(path));
        Manifest m;
        m.stage = j.at("stage").get<std::string>();
        m.tool_version = j.at("tool_version").get<std::string>();
        m.config_hash = j.at("config_hash").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.dropout_p = j.at("dropout_p").get<double>();
        m.joiner = j.at("joiner").get<std::string>();
        m.source_mode = parse_source_mode(j.at("source_mode").get<std::string>());
        m.target_mode = parse_target_mode(j.at("target_mode").get<std::string>());
        m.passes = j.at("passes").get<std::size_t>();
        m.variants = j.at("variants").get<std::size_t>();
        m.lines = j.at("lines").get<std::size_t>();
        m.vocab_fingerprint = j.at("vocab_fingerprint").get<std::string>();
        m.parent_hash = j.at("parent_hash").get<std::string>();
        for (const auto& f : j.at("files")) {
            m.files.push_back({f.at("name").get<std::string>(), f.at("lines").get<std::size_t>(),
                               f.at("digest").get<std::string>()});
        }
        return m;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::format, path.string() + ": " + e.what());
    }
}

void verify_manifest(const Manifest& manifest, const fs::path& dir) {
    for (const auto& f : manifest.files) {
        if (!fs::is_regular_file(dir / f.name)) {
            throw Error(ErrorCode::manifest_mismatch, "missing file listed in manifest: " + f.name);
        }
        auto actual = describe_file(dir, f.name);
        if (actual != f) throw Error(ErrorCode::manifest_mismatch, "file differs from manifest: " + f.name);
    }
}

fs::path segmented_file(const fs::path& dir, std::size_t pass, std::string_view side) {
    return dir / ("seg." + std::to_string(pass) + "." + std::string(side));
}

BpeModel run_train_bpe(const PipelineConfig& cfg) {
    validate(cfg, Stage::train_bpe);
    auto lines = read_lines(cfg.source);
    auto target = read_lines(cfg.target);
    lines.insert(lines.end(), target.begin(), target.end());
    auto model = train_bpe(count_words(lines), cfg.vocab_size);
    save_vocab(model.vocab, cfg.vocab);
    save_merges(model.merges, cfg.merges);
    return model;
}

TrainReport run_stage_train_scorer(const PipelineConfig& cfg, std::ostream* log) {
    validate(cfg, Stage::train_scorer);
    auto bpe = load_bpe_model(cfg);
    auto corpus = read_parallel_corpus(cfg.source, cfg.target);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    tc.workers = cfg.workers;
    tc.dropout_p = cfg.dropout_p;

    std::ostringstream records;
    auto result = train(corpus, bpe.vocab, bpe, tc, &records);
    save_checkpoint(result.checkpoint, cfg.checkpoint);
    fs::path log_path = cfg.checkpoint;
    log_path += ".log";
    write_text(log_path, records.str());
    if (log) *log << records.str();
    result.report.checkpoint_path = cfg.checkpoint.string();
    return result.report;
}

SegmentSummary run_stage_segment(const PipelineConfig& cfg) {
    validate(cfg, Stage::segment);
    auto bpe = load_bpe_model(cfg);
    std::optional<LogLinearScorer> scorer;
    if (is_dpe(cfg.target_mode)) {
        auto ckpt = load_checkpoint(cfg.checkpoint);
        if (ckpt.vocab_fingerprint != bpe.vocab.fingerprint() || ckpt.params.vocab_size != bpe.vocab.size()) {
            throw Error(ErrorCode::config, "checkpoint was trained with a different vocabulary");
        }
        scorer.emplace(std::move(ckpt.params), ckpt.features);
    }
    auto corpus = read_parallel_corpus(cfg.source, cfg.target);
    fs::create_directories(cfg.output_dir);

    SegmentSummary summary;
    summary.lines = corpus.size();
    summary.passes = cfg.passes;
    Manifest manifest;
    manifest.stage = "segment";
    manifest.tool_version = tool_version;
    manifest.config_hash = config_hash(cfg, Stage::segment);
    manifest.seed = cfg.seed;
    manifest.dropout_p = cfg.dropout_p;
    manifest.joiner = cfg.joiner;
    manifest.source_mode = cfg.source_mode;
    manifest.target_mode = cfg.target_mode;
    manifest.passes = cfg.passes;
    manifest.lines = corpus.size();
    manifest.vocab_fingerprint = hex64(bpe.vocab.fingerprint());

    for (std::size_t pass = 0; pass < cfg.passes; ++pass) {
        auto lines = parallel_map(corpus.size(), cfg.workers, [&](std::size_t i) {
            return segment_pair(corpus[i], bpe, scorer ? &*scorer : nullptr, cfg, pass, i);
        });
        std::vector<std::string> src, tgt;
        src.reserve(lines.size());
        tgt.reserve(lines.size());
        for (auto& l : lines) {
            src.push_back(join_segmented(l.source, cfg.joiner));
            tgt.push_back(join_segmented(l.target, cfg.joiner));
            for (auto& f : l.failures) summary.unsegmentable.push_back(std::move(f));
        }
        for (auto [side, text] : {std::pair{"src", &src}, std::pair{"tgt", &tgt}}) {
            auto path = segmented_file(cfg.output_dir, pass, side);
            write_lines(path, *text);
            summary.files.push_back(path);
            manifest.files.push_back(describe_file(cfg.output_dir, path.filename().string()));
        }
    }

    std::string sidecar = "pass\tline\tside\tword\treason\n";
    for (const auto& u : summary.unsegmentable) {
        sidecar += std::to_string(u.pass) + '\t' + std::to_string(u.line) + '\t' + u.side + '\t' + tsv_field(u.word) +
                   '\t' + u.reason + '\n';
    }
    write_text(cfg.output_dir / "unsegmentable.tsv", sidecar);
    manifest.files.push_back(describe_file(cfg.output_dir, "unsegmentable.tsv"));
    write_manifest(manifest, cfg.output_dir / "segment.json");
    return summary;
}

EmitSummary run_stage_emit_training_set(const PipelineConfig& cfg) {
    validate(cfg, Stage::emit);
    auto upstream = read_manifest(cfg.segmented_dir / "segment.json");
    if (upstream.stage != "segment") throw Error(ErrorCode::format, "segment.json does not describe a segment stage");
    verify_manifest(upstream, cfg.segmented_dir);
    if (target_varies(upstream.target_mode) && cfg.variants > upstream.passes) {
        throw Error(ErrorCode::config, "target mode " + std::string(to_string(upstream.target_mode)) +
                                           " produced " + std::to_string(upstream.passes) +
                                           " passes; cannot emit " + std::to_string(cfg.variants) + " variants");
    }

    // Settings that shaped the segmented files come from the upstream manifest.
    PipelineConfig eff = cfg;
    eff.seed = upstream.seed;
    eff.dropout_p = upstream.dropout_p;
    eff.joiner = upstream.joiner;
    eff.source_mode = upstream.source_mode;
    eff.target_mode = upstream.target_mode;
    const std::string hash = config_hash(eff, Stage::emit);

    const fs::path manifest_path = cfg.output_dir / "manifest.json";
    if (fs::exists(manifest_path)) {
        auto previous = read_manifest(manifest_path);
        if (previous.config_hash != hash) {
            throw Error(ErrorCode::manifest_mismatch, "output directory " + cfg.output_dir.string() +
                                                          " holds a manifest for configuration " +
                                                          previous.config_hash + ", current is " + hash);
        }
    }

    auto bpe = load_bpe_model(cfg);
    if (hex64(bpe.vocab.fingerprint()) != upstream.vocab_fingerprint) {
        throw Error(ErrorCode::manifest_mismatch, "vocabulary differs from the one used by the segment stage");
    }
    auto raw_source = read_lines(cfg.source);
    auto raw_target = read_lines(cfg.target);
    if (raw_source.size() != upstream.lines || raw_target.size() != upstream.lines) {
        throw Error(ErrorCode::alignment_mismatch, "raw corpus line count differs from the segment stage output");
    }
    fs::create_directories(cfg.output_dir);

    auto check_line = [&](const std::string& emitted, const std::string& raw, const std::string& file,
                          std::size_t line) {
        if (strip_joiners(emitted, eff.joiner) != normalize_whitespace(raw)) {
            throw Error(ErrorCode::format, file + " line " + std::to_string(line + 1) + " does not detokenize to the input");
        }
        for (const auto& word : parse_segmented(emitted, eff.joiner)) {
            for (const auto& piece : word) {
                if (!bpe.vocab.contains(utf8_decode(piece))) {
                    throw Error(ErrorCode::format, file + " line " + std::to_string(line + 1) + ": token '" + piece +
                                                       "' is not in the vocabulary");
                }
            }
        }
    };

    Manifest manifest = upstream;
    manifest.stage = "emit";
    manifest.tool_version = tool_version;
    manifest.config_hash = hash;
    manifest.variants = cfg.variants;
    manifest.parent_hash = upstream.config_hash;
    manifest.files.clear();

    EmitSummary summary;
    summary.lines = upstream.lines;
    summary.config_hash = hash;
    for (std::size_t v = 0; v < cfg.variants; ++v) {
        std::vector<std::string> src;
        if (v < upstream.passes) {
            src = read_lines(segmented_file(cfg.segmented_dir, v, "src"));
        } else if (eff.source_mode == SourceMode::bpe_dropout) {
            src = parallel_map(raw_source.size(), cfg.workers, [&](std::size_t i) {
                std::vector<UnsegmentableWord> failures;
                auto words = segment_source(utf8_decode(normalize_whitespace(raw_source[i])), bpe, eff.source_mode,
                                            eff.dropout_p, eff.seed, v, i, failures);
                return join_segmented(words, eff.joiner);
            });
        } else {
            src = read_lines(segmented_file(cfg.segmented_dir, 0, "src"));
        }
        auto tgt = read_lines(segmented_file(cfg.segmented_dir, v < upstream.passes ? v : 0, "tgt"));

        std::string src_name = "train." + std::to_string(v) + ".src";
        std::string tgt_name = "train." + std::to_string(v) + ".tgt";
        for (std::size_t i = 0; i < upstream.lines; ++i) {
            check_line(src[i], raw_source[i], src_name, i);
            check_line(tgt[i], raw_target[i], tgt_name, i);
        }
        write_lines(cfg.output_dir / src_name, src);
        write_lines(cfg.output_dir / tgt_name, tgt);
        for (const auto& name : {src_name, tgt_name}) {
            summary.files.push_back(cfg.output_dir / name);
            manifest.files.push_back(describe_file(cfg.output_dir, name));
        }
    }
    write_manifest(manifest, manifest_path);
    verify_manifest(read_manifest(manifest_path), cfg.output_dir);
    return summary;
}

}  // namespace dpe
