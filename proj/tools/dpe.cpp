// Command-line front end: train-bpe, train-scorer, segment, emit, analyze.
//
// Exit codes: 0 success, 2 configuration error, 3 data error.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "dpe/analysis.hpp"
#include "dpe/lattice.hpp"
#include "dpe/pipeline.hpp"

namespace {

constexpr int exit_config = 2;
constexpr int exit_data = 3;

struct Paths {
    std::string source, target, vocab, merges, checkpoint, output, segmented;
};

void add_corpus_options(CLI::App* cmd, Paths& p) {
    cmd->add_option("--source", p.source, "Raw source-side corpus, one sentence per line");
    cmd->add_option("--target", p.target, "Raw target-side corpus, aligned with --source");
}

void add_model_options(CLI::App* cmd, Paths& p) {
    cmd->add_option("--vocab", p.vocab, "Subword vocabulary file");
    cmd->add_option("--merges", p.merges, "BPE merges file");
}

void apply(const Paths& p, dpe::PipelineConfig& cfg) {
    cfg.source = p.source;
    cfg.target = p.target;
    cfg.vocab = p.vocab;
    cfg.merges = p.merges;
    cfg.checkpoint = p.checkpoint;
    cfg.output_dir = p.output;
    cfg.segmented_dir = p.segmented;
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << text)) throw dpe::Error(dpe::ErrorCode::io, "cannot write " + path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dynamic programming encoding: subword segmentation as a latent variable"};
    app.set_version_flag("--version", std::string(dpe::tool_version));
    app.set_config("--config", "", "Key/value configuration file; command-line flags take precedence");
    app.require_subcommand(1);

    dpe::PipelineConfig cfg;
    Paths paths;
    std::string scorer_mode = "conditional";
    std::string target_mode = "dpe-on-the-fly";
    std::string source_mode = "bpe-dropout";

    app.add_option("--seed", cfg.seed, "Seed for every random draw")->capture_default_str();
    app.add_option("--joiner", cfg.joiner, "Marker appended to non-final subwords")->capture_default_str();
    app.add_option("--dropout-p", cfg.dropout_p, "BPE-dropout merge skip probability")->capture_default_str();
    app.add_option("--workers", cfg.workers, "Worker threads")->capture_default_str();

    auto* train_bpe = app.add_subcommand("train-bpe", "Learn a joint BPE vocabulary and merges");
    add_corpus_options(train_bpe, paths);
    train_bpe->add_option("--vocab", paths.vocab, "Vocabulary output file");
    train_bpe->add_option("--merges", paths.merges, "Merges output file");
    train_bpe->add_option("--vocab-size", cfg.vocab_size, "Target vocabulary size")->capture_default_str();

    auto* train_scorer = app.add_subcommand("train-scorer", "Train the subword scorer by marginal likelihood");
    add_corpus_options(train_scorer, paths);
    add_model_options(train_scorer, paths);
    train_scorer->add_option("--checkpoint", paths.checkpoint, "Checkpoint output file");
    train_scorer->add_option("--mode", scorer_mode, "conditional | lm")->capture_default_str();
    auto& t = cfg.train;
    train_scorer->add_option("--epochs", t.epochs)->capture_default_str();
    train_scorer->add_option("--lr", t.learning_rate)->capture_default_str();
    train_scorer->add_option("--batch-size", t.batch_size)->capture_default_str();
    train_scorer->add_option("--grad-accumulation", t.grad_accumulation)->capture_default_str();
    train_scorer->add_option("--dim", t.dim, "Embedding width")->capture_default_str();
    train_scorer->add_option("--init-scale", t.init_scale)->capture_default_str();
    train_scorer->add_option("--clip-norm", t.clip_norm, "0 disables clipping")->capture_default_str();
    train_scorer->add_option("--hash-bits", t.features.hash_bits)->capture_default_str();
    train_scorer->add_option("--context-window", t.features.context_window)->capture_default_str();
    train_scorer->add_option("--max-order", t.features.max_order)->capture_default_str();

    auto* segment = app.add_subcommand("segment", "Segment a parallel corpus");
    add_corpus_options(segment, paths);
    add_model_options(segment, paths);
    segment->add_option("--checkpoint", paths.checkpoint, "Scorer checkpoint (dpe modes)");
    segment->add_option("--output", paths.output, "Output directory");
    segment->add_option("--mode", target_mode, "Target mode: bpe | bpe-dropout | dpe-fixed | dpe-on-the-fly")
        ->capture_default_str();
    segment->add_option("--source-mode", source_mode, "bpe | bpe-dropout")->capture_default_str();
    segment->add_option("--passes", cfg.passes, "Number of seeded segmentation passes")->capture_default_str();
    std::string dot_word;
    segment->add_option("--dot", dot_word, "Print the lattice of one word as DOT and exit");

    auto* emit = app.add_subcommand("emit", "Assemble training files and a manifest from segment output");
    add_corpus_options(emit, paths);
    add_model_options(emit, paths);
    emit->add_option("--segmented", paths.segmented, "Directory written by the segment command");
    emit->add_option("--output", paths.output, "Output directory");
    emit->add_option("--variants", cfg.variants, "Number of source variants")->capture_default_str();

    auto* analyze = app.add_subcommand("analyze", "Compare two segmentations of one corpus");
    std::string seg_a, seg_b, raw, tsv_out, csv_out;
    std::size_t top = 20;
    analyze->add_option("--seg-a", seg_a, "First segmented file")->required();
    analyze->add_option("--seg-b", seg_b, "Second segmented file")->required();
    analyze->add_option("--raw", raw, "Raw corpus both were produced from")->required();
    analyze->add_option("--tsv", tsv_out, "Report output (default: stdout)");
    analyze->add_option("--csv", csv_out, "Band/rate CSV output");
    analyze->add_option("--top", top, "Print this many most frequent disagreements to stderr")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : exit_config;
    }

    try {
        apply(paths, cfg);
        if (*train_bpe) {
            auto model = dpe::run_train_bpe(cfg);
            std::cerr << "vocab " << model.vocab.size() << " entries, " << model.merges.size() << " merges\n";
        } else if (*train_scorer) {
            cfg.train.mode = dpe::parse_scorer_mode(scorer_mode);
            auto report = dpe::run_stage_train_scorer(cfg, &std::cerr);
            std::cerr << "checkpoint " << report.checkpoint_path << '\n';
        } else if (*segment) {
            if (!dot_word.empty()) {
                auto vocab = dpe::load_vocab(cfg.vocab);
                dpe::write_dot(std::cout, dpe::build_lattice(dpe::utf8_decode(dot_word), vocab), vocab);
                return 0;
            }
            cfg.target_mode = dpe::parse_target_mode(target_mode);
            cfg.source_mode = dpe::parse_source_mode(source_mode);
            auto summary = dpe::run_stage_segment(cfg);
            std::cerr << summary.lines << " lines, " << summary.passes << " passes, " << summary.unsegmentable.size()
                      << " unsegmentable words\n";
        } else if (*emit) {
            auto summary = dpe::run_stage_emit_training_set(cfg);
            std::cerr << summary.files.size() << " files, config " << summary.config_hash << '\n';
        } else if (*analyze) {
            auto report = dpe::compare_segmenters(std::filesystem::path(seg_a), std::filesystem::path(seg_b),
                                                  std::filesystem::path(raw), cfg.joiner);
            if (tsv_out.empty()) {
                dpe::write_report_tsv(report, std::cout);
            } else {
                std::ostringstream s;
                dpe::write_report_tsv(report, s);
                write_file(tsv_out, s.str());
            }
            if (!csv_out.empty()) {
                std::ostringstream s;
                dpe::write_band_csv(report, s);
                write_file(csv_out, s.str());
            }
            for (const auto& w : dpe::top_disagreements(report, top)) {
                std::cerr << w.word << '\t' << w.freq << '\t' << w.seg_a << '\t' << w.seg_b << '\n';
            }
        }
    } catch (const dpe::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return dpe::is_config_error(e.code()) ? exit_config : exit_data;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_data;
    }
    return 0;
}
