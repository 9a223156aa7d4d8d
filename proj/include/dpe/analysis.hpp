#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "dpe/core.hpp"

namespace dpe {

/// One word type of the raw corpus. Segmentations are written as subwords
/// separated by '|', e.g. "car|ts".
struct WordRecord {
    std::string word;
    std::uint64_t freq = 0;
    std::string seg_a;
    std::string seg_b;
    bool agree = true;
};

struct FrequencyBand {
    std::string label;
    std::uint64_t low;   // exclusive, except the first band which starts at 1
    std::uint64_t high;  // inclusive; UINT64_MAX for the open band
    std::size_t types = 0;
    std::size_t disagreements = 0;
    double rate = 0.0;  // 0 for an empty band
};

struct DisagreementReport {
    std::vector<WordRecord> words;  // sorted by word
    std::size_t types = 0;
    std::size_t disagreements = 0;
    double aggregate = 0.0;  // type-level disagreement rate
    std::vector<FrequencyBand> bands;
};

/// [1-5], (5-10], (10-100], (100-1000], >1000.
std::vector<FrequencyBand> default_bands();

/// Compares two segmentations of the same raw corpus word type by word type.
/// Each side is represented by its most frequent segmentation of the word
/// (ties go to the lexicographically smallest). Words are whitespace tokens,
/// case-sensitive. Throws AlignmentMismatch when line counts differ or a
/// segmented line does not strip back to the raw line.
DisagreementReport compare_segmenters(const std::vector<std::string>& segmented_a,
                                      const std::vector<std::string>& segmented_b,
                                      const std::vector<std::string>& raw, std::string_view joiner = default_joiner);

DisagreementReport compare_segmenters(const std::filesystem::path& segmented_a, const std::filesystem::path& segmented_b,
                                      const std::filesystem::path& raw, std::string_view joiner = default_joiner);

/// Same comparison for two segmentations of one target corpus obtained
/// under different conditioning (e.g. two source languages).
DisagreementReport cross_condition_disagreement(const std::vector<std::string>& segmented_given_1,
                                                const std::vector<std::string>& segmented_given_2,
                                                const std::vector<std::string>& raw,
                                                std::string_view joiner = default_joiner);

/// Disagreeing words, most frequent first, ties by word.
std::vector<WordRecord> top_disagreements(const DisagreementReport& report, std::size_t n);

/// Summary lines prefixed by '#', then one row per word type ordered by
/// frequency (descending) and word.
void write_report_tsv(const DisagreementReport& report, std::ostream& out);

/// "band,rate" rows for plotting.
void write_band_csv(const DisagreementReport& report, std::ostream& out);

}  // namespace dpe
