#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dpe/core.hpp"

namespace dpe {

/// Ordered BPE merge rules. Rank i is the i-th merge learned.
class MergeTable {
public:
    using Pair = std::pair<CharSequence, CharSequence>;

    MergeTable() = default;
    explicit MergeTable(std::vector<Pair> merges);

    std::size_t size() const noexcept { return merges_.size(); }
    bool empty() const noexcept { return merges_.empty(); }
    const std::vector<Pair>& merges() const noexcept { return merges_; }
    const Pair& operator[](std::size_t rank) const { return merges_.at(rank); }

    std::optional<std::size_t> rank(const CharSequence& left, const CharSequence& right) const;

private:
    static CharSequence key(const CharSequence& left, const CharSequence& right);

    std::vector<Pair> merges_;
    std::unordered_map<CharSequence, std::size_t> rank_;
};

inline constexpr std::string_view merges_header = "#version: dpe-merges 1";

void save_merges(const MergeTable& merges, const std::filesystem::path& path);
MergeTable load_merges(const std::filesystem::path& path);

/// Throws ConfigError unless every merge output is a vocabulary entry.
void check_merges_in_vocab(const MergeTable& merges, const Vocabulary& vocab);

using WordFrequencies = std::map<CharSequence, std::uint64_t>;

WordFrequencies count_words(const std::vector<std::string>& lines);

struct BpeModel {
    MergeTable merges;
    Vocabulary vocab;
};

/// Learns merges until the vocabulary (characters plus distinct merge
/// outputs) reaches `target_vocab_size` or no adjacent pair is left.
/// Equal pair counts are broken by the lexicographically smallest (left, right).
BpeModel train_bpe(const WordFrequencies& corpus, std::size_t target_vocab_size);

struct DropoutConfig {
    double p = 0.05;
    std::uint64_t rng_seed = 0;
};

/// Counters for dropout: one opportunity per candidate merge occurrence
/// examined, and how many of those were skipped.
struct DropoutStats {
    std::uint64_t opportunities = 0;
    std::uint64_t dropped = 0;
};

/// Greedy BPE: repeatedly applies the lowest-ranked adjacent merge (leftmost
/// occurrence first). Throws UnknownChar for characters outside `vocab`.
Segmentation encode_bpe(CharView word, const MergeTable& merges, const Vocabulary& vocab);

/// BPE-dropout: every candidate merge occurrence is skipped independently
/// with probability cfg.p at every step; stops when all candidates are skipped.
Segmentation encode_bpe_dropout(CharView word, const MergeTable& merges, const Vocabulary& vocab,
                                const DropoutConfig& cfg, DropoutStats* stats = nullptr);

/// Segments every word of a whitespace-normalized line. `cfg` absent means
/// greedy; with a config, word i uses a seed derived from (cfg.rng_seed, i).
std::vector<SegmentedWord> segment_line_bpe(CharView line, const MergeTable& merges, const Vocabulary& vocab,
                                            const std::optional<DropoutConfig>& cfg = std::nullopt);

}  // namespace dpe
