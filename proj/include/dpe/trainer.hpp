#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dpe/bpe.hpp"
#include "dpe/core.hpp"
#include "dpe/scorer.hpp"

namespace dpe {

struct TrainConfig {
    std::size_t epochs = 5;
    double learning_rate = 1.0;
    std::size_t batch_size = 1;
    std::size_t grad_accumulation = 16;  // batches per parameter update
    double dropout_p = 0.05;             // source-side BPE-dropout during training
    std::uint64_t seed = 1;
    ScorerMode mode = ScorerMode::conditional;
    std::size_t dim = 16;
    double init_scale = 0.1;
    double clip_norm = 5.0;  // global gradient norm; 0 disables clipping
    std::size_t workers = 1;
    FeatureConfig features;

    /// Throws ConfigError on non-positive sizes or rates.
    void validate() const;
};

struct EpochRecord {
    std::size_t epoch;
    double nats_per_char;  // mean over the epoch's training sentences, before each update
    double learning_rate;
    double wall_seconds;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    double wall_seconds = 0.0;
    std::string checkpoint_path;
};

struct TrainResult {
    Checkpoint checkpoint;
    TrainReport report;

    LogLinearScorer scorer() const { return {checkpoint.params, checkpoint.features}; }
};

/// Source-side subword tokens of a sentence: greedy BPE, or BPE-dropout
/// when `dropout` is given.
std::vector<std::string> source_tokens(CharView source, const BpeModel& source_bpe,
                                       const std::optional<DropoutConfig>& dropout = std::nullopt);

/// Maximizes sum log p(y | x) by SGD on the exact marginal likelihood.
/// Each epoch re-draws the source segmentation with BPE-dropout from a seed
/// derived from (seed, epoch, sentence). Sentence gradients are reduced in
/// corpus order, so results do not depend on the worker count.
/// Training records are written to `log` as "epoch=.. nats_per_char=.. lr=.. wall_s=.." lines.
TrainResult train(const std::vector<SentencePair>& corpus, const Vocabulary& target_vocab,
                  const BpeModel& source_bpe, const TrainConfig& cfg, std::ostream* log = nullptr);

/// Negative log marginal per target character, with greedy source segmentation.
double evaluate_nats_per_char(const std::vector<SentencePair>& corpus, const Vocabulary& target_vocab,
                              const BpeModel& source_bpe, const Scorer& scorer, std::size_t workers = 1);

}  // namespace dpe
