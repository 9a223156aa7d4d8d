#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dpe/error.hpp"

namespace dpe {

/// A string indexed by unicode scalar value. Byte offsets never leak out of
/// the UTF-8 helpers below.
using CharSequence = std::u32string;
using CharView = std::u32string_view;

using SubwordId = std::uint32_t;

CharSequence utf8_decode(std::string_view bytes);
std::string utf8_encode(CharView chars);

bool is_space(char32_t c) noexcept;

/// Dense bidirectional subword <-> id map. Immutable once constructed.
class Vocabulary {
public:
    Vocabulary() = default;

    /// Throws DuplicateEntry / EmptyEntry, and FormatError for entries that
    /// contain whitespace.
    explicit Vocabulary(std::vector<CharSequence> entries);

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    /// Length in characters of the longest entry; 0 only for an empty vocabulary.
    std::size_t max_len() const noexcept { return max_len_; }

    std::optional<SubwordId> find(const CharSequence& subword) const;
    bool contains(const CharSequence& subword) const { return find(subword).has_value(); }
    const CharSequence& entry(SubwordId id) const { return entries_.at(id); }
    const std::vector<CharSequence>& entries() const noexcept { return entries_; }

    /// Characters that appear as one-character entries.
    std::vector<char32_t> alphabet() const;

    /// Stable 64-bit digest of the entry list, used to tie checkpoints to a vocabulary.
    std::uint64_t fingerprint() const noexcept;

    /// Calls `emit(length, id)` for every entry that is a prefix of
    /// `text.substr(start)`, in increasing length. At most max_len() steps.
    template <typename Emit>
    void match_prefixes(CharView text, std::size_t start, Emit&& emit) const {
        std::uint32_t node = 0;
        for (std::size_t len = 1; start + len <= text.size() && len <= max_len_; ++len) {
            auto next = child(node, text[start + len - 1]);
            if (!next) return;
            node = *next;
            if (trie_[node].id != no_entry) emit(len, trie_[node].id);
        }
    }

private:
    static constexpr SubwordId no_entry = static_cast<SubwordId>(-1);

    struct TrieNode {
        std::vector<std::pair<char32_t, std::uint32_t>> children;  // sorted by character
        SubwordId id = no_entry;
    };

    std::optional<std::uint32_t> child(std::uint32_t node, char32_t c) const;

    std::vector<CharSequence> entries_;
    std::unordered_map<CharSequence, SubwordId> index_;
    std::vector<TrieNode> trie_{TrieNode{}};
    std::size_t max_len_ = 0;
};

/// Reads one entry per line, optionally "subword<TAB>id" with ids matching
/// line order.
Vocabulary load_vocab(const std::filesystem::path& path);
void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path);

/// Characters of `text` (ignoring whitespace) that are not one-character
/// vocabulary entries, in first-seen order.
std::vector<char32_t> missing_chars(const Vocabulary& vocab, CharView text);

/// Returns the missing characters; throws MissingCharClosure when `strict`
/// and any are missing.
std::vector<char32_t> check_char_closure(const Vocabulary& vocab, CharView text, bool strict);

/// Boundary indices 0 = z_1 < ... < z_{M+1} = T.
struct Segmentation {
    std::vector<std::size_t> boundaries;

    std::size_t num_segments() const noexcept {
        return boundaries.empty() ? 0 : boundaries.size() - 1;
    }
    std::vector<CharSequence> spans(CharView text) const;

    friend bool operator==(const Segmentation&, const Segmentation&) = default;
    friend auto operator<=>(const Segmentation&, const Segmentation&) = default;
};

Segmentation segmentation_from_lengths(const std::vector<std::size_t>& lengths);

/// True iff z is a well-formed segmentation of y whose spans are all in vocab.
bool validate_segmentation(CharView y, const Segmentation& z, const Vocabulary& vocab);

std::string to_string(const Segmentation& z);

struct SentencePair {
    CharSequence source;
    CharSequence target;
};

// ---------------------------------------------------------------------------
// Text helpers. A line is a whitespace-separated sequence of words; subwords
// never cross a word boundary.

std::vector<std::string> split_words(std::string_view line);
std::vector<CharSequence> split_words(CharView line);
std::string normalize_whitespace(std::string_view line);

inline constexpr std::string_view default_joiner = "@@";

/// One word as a list of subword strings.
using SegmentedWord = std::vector<std::string>;

/// Serializes words as space-separated tokens, appending `joiner` to every
/// non-final subword of a word.
std::string join_segmented(const std::vector<SegmentedWord>& words, std::string_view joiner = default_joiner);

/// Inverse of join_segmented.
std::vector<SegmentedWord> parse_segmented(std::string_view line, std::string_view joiner = default_joiner);

/// Removes joiners, reproducing the whitespace-normalized raw line.
std::string strip_joiners(std::string_view line, std::string_view joiner = default_joiner);

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

/// Reads two aligned files. Lines are whitespace-normalized; a blank side is
/// a FormatError naming the line.
std::vector<SentencePair> read_parallel_corpus(const std::filesystem::path& source,
                                               const std::filesystem::path& target);

}  // namespace dpe
