#include "dpe/core.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "dpe/hash.hpp"

namespace dpe {

CharSequence utf8_decode(std::string_view bytes) {
    CharSequence out;
    out.reserve(bytes.size());
    std::size_t i = 0;
    while (i < bytes.size()) {
        auto lead = static_cast<unsigned char>(bytes[i]);
        std::size_t len = 0;
        char32_t cp = 0;
        if (lead < 0x80) {
            len = 1;
            cp = lead;
        } else if ((lead & 0xe0) == 0xc0) {
            len = 2;
            cp = lead & 0x1f;
        } else if ((lead & 0xf0) == 0xe0) {
            len = 3;
            cp = lead & 0x0f;
        } else if ((lead & 0xf8) == 0xf0) {
            len = 4;
            cp = lead & 0x07;
        } else {
            throw Error(ErrorCode::format, "invalid UTF-8 lead byte at offset " + std::to_string(i));
        }
        if (i + len > bytes.size()) {
            throw Error(ErrorCode::format, "truncated UTF-8 sequence at offset " + std::to_string(i));
        }
        for (std::size_t k = 1; k < len; ++k) {
            auto cont = static_cast<unsigned char>(bytes[i + k]);
            if ((cont & 0xc0) != 0x80) {
                throw Error(ErrorCode::format, "invalid UTF-8 continuation at offset " + std::to_string(i + k));
            }
            cp = (cp << 6) | (cont & 0x3f);
        }
        static constexpr char32_t min_for_len[] = {0, 0, 0x80, 0x800, 0x10000};
        if (cp < min_for_len[len] || cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) {
            throw Error(ErrorCode::format, "invalid code point at offset " + std::to_string(i));
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

std::string utf8_encode(CharView chars) {
    std::string out;
    out.reserve(chars.size());
    for (char32_t cp : chars) {
        if (cp < 0x80) {
            out.push_back(static_cast<char>(cp));
        } else if (cp < 0x800) {
            out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
        } else if (cp < 0x10000) {
            out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
        } else {
            out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
        }
    }
    return out;
}

bool is_space(char32_t c) noexcept {
    return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\v' || c == U'\f';
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary(std::vector<CharSequence> entries) : entries_(std::move(entries)) {
    index_.reserve(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& e = entries_[i];
        if (e.empty()) {
            throw Error(ErrorCode::empty_entry, "entry " + std::to_string(i) + " is empty");
        }
        if (std::any_of(e.begin(), e.end(), is_space)) {
            throw Error(ErrorCode::format, "entry " + std::to_string(i) + " contains whitespace");
        }
        auto [it, inserted] = index_.emplace(e, static_cast<SubwordId>(i));
        if (!inserted) {
            throw Error(ErrorCode::duplicate_entry,
                        "'" + utf8_encode(e) + "' at entries " + std::to_string(it->second) + " and " +
                            std::to_string(i));
        }
        max_len_ = std::max(max_len_, e.size());

        std::uint32_t node = 0;
        for (char32_t c : e) {
            auto& kids = trie_[node].children;
            auto it = std::lower_bound(kids.begin(), kids.end(), c,
                                       [](const auto& kid, char32_t v) { return kid.first < v; });
            if (it != kids.end() && it->first == c) {
                node = it->second;
            } else {
                auto fresh = static_cast<std::uint32_t>(trie_.size());
                kids.insert(it, {c, fresh});
                trie_.emplace_back();
                node = fresh;
            }
        }
        trie_[node].id = static_cast<SubwordId>(i);
    }
}

std::optional<std::uint32_t> Vocabulary::child(std::uint32_t node, char32_t c) const {
    const auto& kids = trie_[node].children;
    auto it = std::lower_bound(kids.begin(), kids.end(), c,
                               [](const auto& kid, char32_t v) { return kid.first < v; });
    if (it == kids.end() || it->first != c) return std::nullopt;
    return it->second;
}

std::optional<SubwordId> Vocabulary::find(const CharSequence& subword) const {
    auto it = index_.find(subword);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::vector<char32_t> Vocabulary::alphabet() const {
    std::vector<char32_t> out;
    for (const auto& e : entries_) {
        if (e.size() == 1) out.push_back(e[0]);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::uint64_t Vocabulary::fingerprint() const noexcept {
    std::uint64_t h = fnv_offset;
    for (const auto& e : entries_) {
        h = fnv1a(utf8_encode(e), h);
        h = fnv1a(std::string_view("\n", 1), h);
    }
    return h;
}

Vocabulary load_vocab(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot open vocabulary " + path.string());
    std::vector<CharSequence> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        auto tab = line.find('\t');
        std::string_view word(line);
        if (tab != std::string::npos) {
            word = word.substr(0, tab);
            auto id_text = line.substr(tab + 1);
            std::size_t parsed = 0;
            unsigned long id = 0;
            try {
                id = std::stoul(id_text, &parsed);
            } catch (const std::exception&) {
                parsed = 0;
            }
            if (parsed != id_text.size() || parsed == 0) {
                throw Error(ErrorCode::format, path.string() + ":" + std::to_string(lineno) + ": bad id '" + id_text + "'");
            }
            if (id != entries.size()) {
                throw Error(ErrorCode::format, path.string() + ":" + std::to_string(lineno) + ": id " +
                                                   std::to_string(id) + " is not dense (expected " +
                                                   std::to_string(entries.size()) + ")");
            }
        }
        entries.push_back(utf8_decode(word));
    }
    return Vocabulary(std::move(entries));
}

void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io, "cannot write vocabulary " + path.string());
    for (const auto& e : vocab.entries()) out << utf8_encode(e) << '\n';
    if (!out) throw Error(ErrorCode::io, "write failed: " + path.string());
}

std::vector<char32_t> missing_chars(const Vocabulary& vocab, CharView text) {
    std::vector<char32_t> missing;
    std::unordered_set<char32_t> seen;
    for (char32_t c : text) {
        if (is_space(c) || !seen.insert(c).second) continue;
        if (!vocab.contains(CharSequence(1, c))) missing.push_back(c);
    }
    return missing;
}

std::vector<char32_t> check_char_closure(const Vocabulary& vocab, CharView text, bool strict) {
    auto missing = missing_chars(vocab, text);
    if (strict && !missing.empty()) {
        throw Error(ErrorCode::missing_char_closure,
                    std::to_string(missing.size()) + " character(s) missing, first '" +
                        utf8_encode(CharSequence(1, missing.front())) + "'");
    }
    return missing;
}

// ---------------------------------------------------------------------------

std::vector<CharSequence> Segmentation::spans(CharView text) const {
    std::vector<CharSequence> out;
    for (std::size_t i = 0; i + 1 < boundaries.size(); ++i) {
        out.emplace_back(text.substr(boundaries[i], boundaries[i + 1] - boundaries[i]));
    }
    return out;
}

Segmentation segmentation_from_lengths(const std::vector<std::size_t>& lengths) {
    Segmentation z;
    z.boundaries.reserve(lengths.size() + 1);
    z.boundaries.push_back(0);
    for (auto len : lengths) z.boundaries.push_back(z.boundaries.back() + len);
    return z;
}

bool validate_segmentation(CharView y, const Segmentation& z, const Vocabulary& vocab) {
    const auto& b = z.boundaries;
    if (b.empty() || b.front() != 0 || b.back() != y.size()) return false;
    for (std::size_t i = 0; i + 1 < b.size(); ++i) {
        if (b[i] >= b[i + 1]) return false;
        std::size_t len = b[i + 1] - b[i];
        if (len > vocab.max_len()) return false;
        if (!vocab.contains(CharSequence(y.substr(b[i], len)))) return false;
    }
    return true;
}

std::string to_string(const Segmentation& z) {
    std::string out = "(";
    for (std::size_t i = 0; i < z.boundaries.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(z.boundaries[i]);
    }
    return out + ")";
}

// ---------------------------------------------------------------------------

namespace {

bool ascii_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

}  // namespace

std::vector<std::string> split_words(std::string_view line) {
    std::vector<std::string> words;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && ascii_space(line[i])) ++i;
        std::size_t start = i;
        while (i < line.size() && !ascii_space(line[i])) ++i;
        if (i > start) words.emplace_back(line.substr(start, i - start));
    }
    return words;
}

std::vector<CharSequence> split_words(CharView line) {
    std::vector<CharSequence> words;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && is_space(line[i])) ++i;
        std::size_t start = i;
        while (i < line.size() && !is_space(line[i])) ++i;
        if (i > start) words.emplace_back(line.substr(start, i - start));
    }
    return words;
}

std::string normalize_whitespace(std::string_view line) {
    std::string out;
    for (const auto& w : split_words(line)) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

std::string join_segmented(const std::vector<SegmentedWord>& words, std::string_view joiner) {
    std::string out;
    for (const auto& word : words) {
        for (std::size_t i = 0; i < word.size(); ++i) {
            if (!out.empty()) out += ' ';
            out += word[i];
            if (i + 1 < word.size()) out += joiner;
        }
    }
    return out;
}

std::vector<SegmentedWord> parse_segmented(std::string_view line, std::string_view joiner) {
    std::vector<SegmentedWord> words;
    bool open = false;
    for (auto& token : split_words(line)) {
        bool continues = !joiner.empty() && token.size() > joiner.size() &&
                         std::string_view(token).substr(token.size() - joiner.size()) == joiner;
        if (continues) token.resize(token.size() - joiner.size());
        if (!open) words.emplace_back();
        words.back().push_back(std::move(token));
        open = continues;
    }
    return words;
}

std::string strip_joiners(std::string_view line, std::string_view joiner) {
    std::string out;
    for (const auto& word : parse_segmented(line, joiner)) {
        if (!out.empty()) out += ' ';
        for (const auto& piece : word) out += piece;
    }
    return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
    }
    return lines;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
    for (const auto& l : lines) out << l << '\n';
    if (!out) throw Error(ErrorCode::io, "write failed: " + path.string());
}

std::vector<SentencePair> read_parallel_corpus(const std::filesystem::path& source,
                                               const std::filesystem::path& target) {
    auto src = read_lines(source);
    auto tgt = read_lines(target);
    if (src.size() != tgt.size()) {
        throw Error(ErrorCode::alignment_mismatch, source.string() + " has " + std::to_string(src.size()) +
                                                       " lines, " + target.string() + " has " +
                                                       std::to_string(tgt.size()));
    }
    std::vector<SentencePair> pairs;
    pairs.reserve(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
        auto s = normalize_whitespace(src[i]);
        auto t = normalize_whitespace(tgt[i]);
        if (s.empty() || t.empty()) {
            throw Error(ErrorCode::format, "line " + std::to_string(i + 1) + ": empty " +
                                               (s.empty() ? "source" : "target") + " side");
        }
        pairs.push_back({utf8_decode(s), utf8_decode(t)});
    }
    return pairs;
}

}  // namespace dpe
