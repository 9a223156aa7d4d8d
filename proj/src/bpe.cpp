#include "dpe/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <unordered_set>

#include "dpe/hash.hpp"

namespace dpe {

MergeTable::MergeTable(std::vector<Pair> merges) : merges_(std::move(merges)) {
    rank_.reserve(merges_.size());
    for (std::size_t i = 0; i < merges_.size(); ++i) {
        const auto& [l, r] = merges_[i];
        if (l.empty() || r.empty()) {
            throw Error(ErrorCode::empty_entry, "merge " + std::to_string(i) + " has an empty side");
        }
        if (!rank_.emplace(key(l, r), i).second) {
            throw Error(ErrorCode::duplicate_entry, "merge " + std::to_string(i) + " repeats an earlier rule");
        }
    }
}

CharSequence MergeTable::key(const CharSequence& left, const CharSequence& right) {
    // 0xFFFFFFFF is not a scalar value, so it cannot occur inside either side.
    CharSequence k;
    k.reserve(left.size() + right.size() + 1);
    k += left;
    k.push_back(static_cast<char32_t>(0xffffffffu));
    k += right;
    return k;
}

std::optional<std::size_t> MergeTable::rank(const CharSequence& left, const CharSequence& right) const {
    auto it = rank_.find(key(left, right));
    if (it == rank_.end()) return std::nullopt;
    return it->second;
}

void save_merges(const MergeTable& merges, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io, "cannot write merges " + path.string());
    out << merges_header << '\n';
    for (const auto& [l, r] : merges.merges()) out << utf8_encode(l) << ' ' << utf8_encode(r) << '\n';
    if (!out) throw Error(ErrorCode::io, "write failed: " + path.string());
}

MergeTable load_merges(const std::filesystem::path& path) {
    auto lines = read_lines(path);
    if (lines.empty() || lines.front() != merges_header) {
        throw Error(ErrorCode::format, path.string() + ": missing header '" + std::string(merges_header) + "'");
    }
    std::vector<MergeTable::Pair> merges;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        auto parts = split_words(lines[i]);
        if (parts.size() != 2) {
            throw Error(ErrorCode::format, path.string() + ":" + std::to_string(i + 1) + ": expected 'left right'");
        }
        merges.emplace_back(utf8_decode(parts[0]), utf8_decode(parts[1]));
    }
    return MergeTable(std::move(merges));
}

void check_merges_in_vocab(const MergeTable& merges, const Vocabulary& vocab) {
    for (std::size_t i = 0; i < merges.size(); ++i) {
        const auto& [l, r] = merges[i];
        if (!vocab.contains(l + r)) {
            throw Error(ErrorCode::config, "merge " + std::to_string(i) + " output '" + utf8_encode(l + r) +
                                               "' is not in the vocabulary");
        }
    }
}

WordFrequencies count_words(const std::vector<std::string>& lines) {
    WordFrequencies freqs;
    for (const auto& line : lines) {
        for (auto& w : split_words(utf8_decode(line))) ++freqs[std::move(w)];
    }
    return freqs;
}

// ---------------------------------------------------------------------------
// Training

namespace {

using SymbolId = std::uint32_t;

std::uint64_t pair_key(SymbolId a, SymbolId b) {
    return (static_cast<std::uint64_t>(a) << 32) | b;
}

struct TrainWord {
    std::vector<SymbolId> symbols;
    std::uint64_t freq;
};

void add_pairs(const TrainWord& w, std::size_t index, std::int64_t sign,
               std::unordered_map<std::uint64_t, std::int64_t>& counts,
               std::unordered_map<std::uint64_t, std::vector<std::size_t>>& where) {
    for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) {
        auto k = pair_key(w.symbols[i], w.symbols[i + 1]);
        counts[k] += sign * static_cast<std::int64_t>(w.freq);
        if (sign > 0) where[k].push_back(index);
    }
}

}  // namespace

BpeModel train_bpe(const WordFrequencies& corpus, std::size_t target_vocab_size) {
    std::vector<CharSequence> symbols;
    std::unordered_map<CharSequence, SymbolId> symbol_ids;
    auto intern = [&](const CharSequence& s) {
        auto [it, inserted] = symbol_ids.emplace(s, static_cast<SymbolId>(symbols.size()));
        if (inserted) symbols.push_back(s);
        return it->second;
    };

    std::vector<char32_t> chars;
    for (const auto& [word, freq] : corpus) {
        for (char32_t c : word) chars.push_back(c);
    }
    std::sort(chars.begin(), chars.end());
    chars.erase(std::unique(chars.begin(), chars.end()), chars.end());
    if (target_vocab_size < chars.size()) {
        throw Error(ErrorCode::vocab_too_small, "target " + std::to_string(target_vocab_size) + " is below the " +
                                                    std::to_string(chars.size()) + " distinct characters");
    }

    std::vector<CharSequence> vocab_entries;
    std::unordered_set<CharSequence> in_vocab;
    for (char32_t c : chars) {
        CharSequence s(1, c);
        intern(s);
        vocab_entries.push_back(s);
        in_vocab.insert(s);
    }

    std::vector<TrainWord> words;
    for (const auto& [word, freq] : corpus) {
        if (freq == 0 || word.empty()) continue;
        TrainWord w{{}, freq};
        for (char32_t c : word) w.symbols.push_back(symbol_ids.at(CharSequence(1, c)));
        words.push_back(std::move(w));
    }

    std::unordered_map<std::uint64_t, std::int64_t> counts;
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> where;
    for (std::size_t i = 0; i < words.size(); ++i) add_pairs(words[i], i, +1, counts, where);

    std::vector<MergeTable::Pair> merges;
    while (vocab_entries.size() < target_vocab_size) {
        std::uint64_t best = 0;
        std::int64_t best_count = 0;
        for (const auto& [k, c] : counts) {
            if (c <= 0) continue;
            if (c > best_count) {
                best = k;
                best_count = c;
            } else if (c == best_count) {
                const auto& bl = symbols[best >> 32];
                const auto& br = symbols[best & 0xffffffffu];
                const auto& kl = symbols[k >> 32];
                const auto& kr = symbols[k & 0xffffffffu];
                if (std::tie(kl, kr) < std::tie(bl, br)) best = k;
            }
        }
        if (best_count == 0) break;

        auto left = static_cast<SymbolId>(best >> 32);
        auto right = static_cast<SymbolId>(best & 0xffffffffu);
        CharSequence merged = symbols[left] + symbols[right];
        merges.emplace_back(symbols[left], symbols[right]);
        SymbolId merged_id = intern(merged);
        if (in_vocab.insert(merged).second) vocab_entries.push_back(merged);

        auto affected = std::move(where[best]);
        where.erase(best);
        std::sort(affected.begin(), affected.end());
        affected.erase(std::unique(affected.begin(), affected.end()), affected.end());
        for (auto wi : affected) {
            auto& w = words[wi];
            add_pairs(w, wi, -1, counts, where);
            std::vector<SymbolId> next;
            next.reserve(w.symbols.size());
            for (std::size_t i = 0; i < w.symbols.size(); ++i) {
                if (i + 1 < w.symbols.size() && w.symbols[i] == left && w.symbols[i + 1] == right) {
                    next.push_back(merged_id);
                    ++i;
                } else {
                    next.push_back(w.symbols[i]);
                }
            }
            w.symbols = std::move(next);
            add_pairs(w, wi, +1, counts, where);
        }
        counts.erase(best);
    }

    return {MergeTable(std::move(merges)), Vocabulary(std::move(vocab_entries))};
}

// ---------------------------------------------------------------------------
// Encoding

namespace {

std::vector<CharSequence> initial_symbols(CharView word, const Vocabulary& vocab) {
    std::vector<CharSequence> symbols;
    symbols.reserve(word.size());
    for (char32_t c : word) {
        CharSequence s(1, c);
        if (!vocab.contains(s)) {
            throw Error(ErrorCode::unknown_char, "'" + utf8_encode(s) + "' in word '" + utf8_encode(word) + "'");
        }
        symbols.push_back(std::move(s));
    }
    return symbols;
}

Segmentation to_segmentation(const std::vector<CharSequence>& symbols) {
    std::vector<std::size_t> lengths;
    lengths.reserve(symbols.size());
    for (const auto& s : symbols) lengths.push_back(s.size());
    return segmentation_from_lengths(lengths);
}

// Uniform double in [0,1) from the top 53 bits; independent of the standard
// library's distribution implementation.
double unit_draw(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename Keep>
Segmentation apply_merges(CharView word, const MergeTable& merges, const Vocabulary& vocab, Keep&& keep) {
    auto symbols = initial_symbols(word, vocab);
    while (symbols.size() > 1) {
        std::size_t best_pos = symbols.size();
        std::size_t best_rank = 0;
        for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
            auto r = merges.rank(symbols[i], symbols[i + 1]);
            if (!r || !keep()) continue;
            if (best_pos == symbols.size() || *r < best_rank) {
                best_pos = i;
                best_rank = *r;
            }
        }
        if (best_pos == symbols.size()) break;
        symbols[best_pos] += symbols[best_pos + 1];
        symbols.erase(symbols.begin() + static_cast<std::ptrdiff_t>(best_pos) + 1);
    }
    return to_segmentation(symbols);
}

}  // namespace

Segmentation encode_bpe(CharView word, const MergeTable& merges, const Vocabulary& vocab) {
    return apply_merges(word, merges, vocab, [] { return true; });
}

Segmentation encode_bpe_dropout(CharView word, const MergeTable& merges, const Vocabulary& vocab,
                                const DropoutConfig& cfg, DropoutStats* stats) {
    if (!(cfg.p >= 0.0 && cfg.p <= 1.0)) {
        throw Error(ErrorCode::config, "dropout probability must lie in [0,1]");
    }
    std::mt19937_64 rng(cfg.rng_seed);
    return apply_merges(word, merges, vocab, [&] {
        bool drop = unit_draw(rng) < cfg.p;
        if (stats) {
            ++stats->opportunities;
            if (drop) ++stats->dropped;
        }
        return !drop;
    });
}

std::vector<SegmentedWord> segment_line_bpe(CharView line, const MergeTable& merges, const Vocabulary& vocab,
                                            const std::optional<DropoutConfig>& cfg) {
    std::vector<SegmentedWord> out;
    auto words = split_words(line);
    out.reserve(words.size());
    for (std::size_t i = 0; i < words.size(); ++i) {
        Segmentation z;
        if (cfg) {
            DropoutConfig word_cfg{cfg->p, derive_seed(cfg->rng_seed, i)};
            z = encode_bpe_dropout(words[i], merges, vocab, word_cfg);
        } else {
            z = encode_bpe(words[i], merges, vocab);
        }
        SegmentedWord pieces;
        for (const auto& s : z.spans(words[i])) pieces.push_back(utf8_encode(s));
        out.push_back(std::move(pieces));
    }
    return out;
}

}  // namespace dpe
