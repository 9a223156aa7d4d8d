#include "dpe/analysis.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <map>

#include "dpe/error.hpp"

namespace dpe {

namespace {

using SegCounts = std::map<std::string, std::uint64_t>;

struct TypeStats {
    std::uint64_t freq = 0;
    SegCounts a;
    SegCounts b;
};

std::string render(const SegmentedWord& pieces) {
    std::string out;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
        if (i) out += '|';
        out += pieces[i];
    }
    return out;
}

std::string modal(const SegCounts& counts) {
    const std::string* best = nullptr;
    std::uint64_t best_count = 0;
    for (const auto& [seg, n] : counts) {  // map order: the first maximum is the smallest string
        if (n > best_count) {
            best = &seg;
            best_count = n;
        }
    }
    return best ? *best : std::string();
}

std::vector<SegmentedWord> aligned_words(const std::string& segmented, const std::vector<std::string>& raw_words,
                                         std::string_view joiner, std::size_t line, const char* side) {
    auto words = parse_segmented(segmented, joiner);
    bool ok = words.size() == raw_words.size();
    for (std::size_t i = 0; ok && i < words.size(); ++i) {
        std::string joined;
        for (const auto& p : words[i]) joined += p;
        ok = joined == raw_words[i];
    }
    if (!ok) {
        throw Error(ErrorCode::alignment_mismatch,
                    std::string("segmentation ") + side + " line " + std::to_string(line + 1) + " does not match the raw corpus");
    }
    return words;
}

}  // namespace

std::vector<FrequencyBand> default_bands() {
    constexpr auto open = std::numeric_limits<std::uint64_t>::max();
    return {{"[1-5]", 0, 5}, {"(5-10]", 5, 10}, {"(10-100]", 10, 100}, {"(100-1000]", 100, 1000}, {">1000", 1000, open}};
}

DisagreementReport compare_segmenters(const std::vector<std::string>& segmented_a,
                                      const std::vector<std::string>& segmented_b,
                                      const std::vector<std::string>& raw, std::string_view joiner) {
    if (segmented_a.size() != raw.size() || segmented_b.size() != raw.size()) {
        throw Error(ErrorCode::alignment_mismatch, "line counts differ: A has " + std::to_string(segmented_a.size()) +
                                                       ", B has " + std::to_string(segmented_b.size()) + ", raw has " +
                                                       std::to_string(raw.size()));
    }
    std::map<std::string, TypeStats> types;
    for (std::size_t line = 0; line < raw.size(); ++line) {
        auto raw_words = split_words(std::string_view(raw[line]));
        auto a = aligned_words(segmented_a[line], raw_words, joiner, line, "A");
        auto b = aligned_words(segmented_b[line], raw_words, joiner, line, "B");
        for (std::size_t i = 0; i < raw_words.size(); ++i) {
            auto& t = types[raw_words[i]];
            ++t.freq;
            ++t.a[render(a[i])];
            ++t.b[render(b[i])];
        }
    }

    DisagreementReport report;
    report.bands = default_bands();
    for (const auto& [word, t] : types) {
        WordRecord rec{word, t.freq, modal(t.a), modal(t.b), true};
        rec.agree = rec.seg_a == rec.seg_b;
        ++report.types;
        report.disagreements += !rec.agree;
        for (auto& band : report.bands) {
            if (t.freq > band.low && t.freq <= band.high) {
                ++band.types;
                band.disagreements += !rec.agree;
                break;
            }
        }
        report.words.push_back(std::move(rec));
    }
    for (auto& band : report.bands) {
        band.rate = band.types ? static_cast<double>(band.disagreements) / static_cast<double>(band.types) : 0.0;
    }
    report.aggregate =
        report.types ? static_cast<double>(report.disagreements) / static_cast<double>(report.types) : 0.0;
    return report;
}

DisagreementReport compare_segmenters(const std::filesystem::path& segmented_a, const std::filesystem::path& segmented_b,
                                      const std::filesystem::path& raw, std::string_view joiner) {
    return compare_segmenters(read_lines(segmented_a), read_lines(segmented_b), read_lines(raw), joiner);
}

DisagreementReport cross_condition_disagreement(const std::vector<std::string>& segmented_given_1,
                                                const std::vector<std::string>& segmented_given_2,
                                                const std::vector<std::string>& raw, std::string_view joiner) {
    return compare_segmenters(segmented_given_1, segmented_given_2, raw, joiner);
}

std::vector<WordRecord> top_disagreements(const DisagreementReport& report, std::size_t n) {
    std::vector<WordRecord> out;
    for (const auto& w : report.words) {
        if (!w.agree) out.push_back(w);
    }
    std::stable_sort(out.begin(), out.end(), [](const WordRecord& x, const WordRecord& y) {
        return x.freq != y.freq ? x.freq > y.freq : x.word < y.word;
    });
    if (out.size() > n) out.resize(n);
    return out;
}

void write_report_tsv(const DisagreementReport& report, std::ostream& out) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12f", report.aggregate);
    out << "# types\t" << report.types << "\n# disagreements\t" << report.disagreements << "\n# aggregate_rate\t" << buf
        << "\n# band\ttypes\tdisagreements\trate\n";
    for (const auto& b : report.bands) {
        std::snprintf(buf, sizeof buf, "%.12f", b.rate);
        out << "# " << b.label << '\t' << b.types << '\t' << b.disagreements << '\t' << buf << '\n';
    }
    out << "word\tfreq\tseg_a\tseg_b\tagree\n";
    auto rows = report.words;
    std::stable_sort(rows.begin(), rows.end(), [](const WordRecord& x, const WordRecord& y) {
        return x.freq != y.freq ? x.freq > y.freq : x.word < y.word;
    });
    for (const auto& w : rows) {
        out << w.word << '\t' << w.freq << '\t' << w.seg_a << '\t' << w.seg_b << '\t' << (w.agree ? 1 : 0) << '\n';
    }
}

void write_band_csv(const DisagreementReport& report, std::ostream& out) {
    out << "band,rate\n";
    char buf[64];
    for (const auto& b : report.bands) {
        std::snprintf(buf, sizeof buf, "%.12f", b.rate);
        out << b.label << ',' << buf << '\n';
    }
}

}  // namespace dpe
