#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "dpe/bpe.hpp"
#include "dpe/trainer.hpp"

namespace dpe {

inline constexpr std::string_view tool_version = "dpe 0.1.0";

enum class SourceMode { bpe, bpe_dropout };
enum class TargetMode { bpe, bpe_dropout, dpe_fixed, dpe_on_the_fly };

std::string_view to_string(SourceMode mode) noexcept;
std::string_view to_string(TargetMode mode) noexcept;
SourceMode parse_source_mode(std::string_view text);
TargetMode parse_target_mode(std::string_view text);

/// Settings shared by all stages. Paths that a stage does not use may be empty.
struct PipelineConfig {
    std::filesystem::path source;      // raw source side, one sentence per line
    std::filesystem::path target;      // raw target side, aligned with source
    std::filesystem::path vocab;       // subword vocabulary (shared by both sides)
    std::filesystem::path merges;      // BPE merges for the same vocabulary
    std::filesystem::path checkpoint;  // scorer parameters
    std::filesystem::path output_dir;
    std::filesystem::path segmented_dir;  // input of the emit stage

    SourceMode source_mode = SourceMode::bpe_dropout;
    TargetMode target_mode = TargetMode::dpe_on_the_fly;
    std::uint64_t seed = 1;
    std::size_t workers = 1;
    std::string joiner = std::string(default_joiner);
    double dropout_p = 0.05;
    std::size_t passes = 1;    // segmentation variants written by the segment stage
    std::size_t variants = 1;  // training-set variants written by the emit stage
    std::size_t vocab_size = 8000;
    bool strict_closure = false;
    TrainConfig train;
};

enum class Stage { train_bpe, train_scorer, segment, emit };

/// Throws ConfigError for anything that can be checked before doing work:
/// required paths missing, mode combinations, zero counts.
void validate(const PipelineConfig& cfg, Stage stage);

/// Learns a joint BPE model on both sides and writes cfg.vocab and cfg.merges.
BpeModel run_train_bpe(const PipelineConfig& cfg);

/// Trains the scorer, writes cfg.checkpoint and "<checkpoint>.log".
TrainReport run_stage_train_scorer(const PipelineConfig& cfg, std::ostream* log = nullptr);

struct UnsegmentableWord {
    std::size_t pass;
    std::size_t line;  // 1-based
    std::string side;  // "src" or "tgt"
    std::string word;
    std::string reason;
};

struct SegmentSummary {
    std::size_t lines = 0;
    std::size_t passes = 0;
    std::vector<std::filesystem::path> files;
    std::vector<UnsegmentableWord> unsegmentable;
};

/// Segmentation file names inside a stage directory.
std::filesystem::path segmented_file(const std::filesystem::path& dir, std::size_t pass, std::string_view side);

/// Writes seg.<pass>.src / seg.<pass>.tgt for every pass, a sidecar
/// unsegmentable.tsv, and segment.json describing the run. Words that cannot
/// be segmented are emitted one character per token and recorded.
SegmentSummary run_stage_segment(const PipelineConfig& cfg);

struct EmitSummary {
    std::size_t lines = 0;
    std::vector<std::filesystem::path> files;
    std::string config_hash;
};

/// Builds train.<v>.src / train.<v>.tgt from the segment stage output plus
/// manifest.json. Fails with ManifestMismatch when the output directory
/// already holds a manifest from a different configuration, and with
/// FormatError when an emitted token is not a vocabulary entry.
EmitSummary run_stage_emit_training_set(const PipelineConfig& cfg);

/// Stable digest of the settings that determine a stage's output. Input
/// files enter through their contents, output locations do not enter at all.
std::string config_hash(const PipelineConfig& cfg, Stage stage);

struct ManifestFile {
    std::string name;
    std::size_t lines = 0;
    std::string digest;  // 16 hex digits of FNV-1a over the file bytes

    friend bool operator==(const ManifestFile&, const ManifestFile&) = default;
};

/// Description of a stage output directory (segment.json or manifest.json).
struct Manifest {
    std::string stage;
    std::string tool_version;
    std::string config_hash;
    std::uint64_t seed = 0;
    double dropout_p = 0.0;
    std::string joiner;
    SourceMode source_mode = SourceMode::bpe;
    TargetMode target_mode = TargetMode::bpe;
    std::size_t passes = 0;
    std::size_t variants = 0;
    std::size_t lines = 0;
    std::string vocab_fingerprint;
    std::string parent_hash;  // config hash of the stage this one consumed
    std::vector<ManifestFile> files;

    friend bool operator==(const Manifest&, const Manifest&) = default;
};

void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

/// Recomputes every listed file's digest and line count; throws
/// ManifestMismatch on the first difference.
void verify_manifest(const Manifest& manifest, const std::filesystem::path& dir);

std::string file_digest(const std::filesystem::path& path);

}  // namespace dpe
