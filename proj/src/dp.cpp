#include "dpe/dp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

namespace dpe {

namespace {

constexpr double neg_inf = -std::numeric_limits<double>::infinity();
constexpr std::size_t npos = static_cast<std::size_t>(-1);

double log_add(double a, double b) {
    if (a == neg_inf) return b;
    if (b == neg_inf) return a;
    double hi = std::max(a, b);
    return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

// Lattice of y plus log p(edge | prefix) for every edge, scored with one
// row per start position that has outgoing edges and is reachable.
class ScoredLattice {
public:
    ScoredLattice(CharView y, const Vocabulary& vocab, const Scorer& scorer, const Conditioning& cond)
        : y_(y), scorer_(scorer), cond_(cond), lattice_(build_lattice(y, vocab)), full_(cond.left_context) {
        full_ += y;
        if (scorer.vocab_size() != vocab.size()) {
            throw Error(ErrorCode::config, "scorer covers " + std::to_string(scorer.vocab_size()) +
                                               " subwords, vocabulary has " + std::to_string(vocab.size()));
        }
        scores_.resize(y.size() + 1);
        LogitsRow row(scorer.vocab_size());
        for (std::size_t j = 0; j < y.size(); ++j) {
            const auto& out = lattice_.outgoing(j);
            if (out.empty() || !lattice_.reachable(j)) continue;
            scorer.log_probs(context(j), row);
            auto& s = scores_[j];
            s.reserve(out.size());
            for (const auto& e : out) s.push_back(row[e.id]);
        }
    }

    const Lattice& lattice() const { return lattice_; }
    std::size_t length() const { return y_.size(); }

    ScorerContext context(std::size_t j) const {
        CharView prefix(full_.data(), cond_.left_context.size() + j);
        return make_context(prefix_features(prefix, scorer_.feature_config()), cond_.source);
    }

    // Score of the i-th outgoing edge of node j.
    double score(std::size_t j, std::size_t i) const { return scores_[j].at(i); }

    std::vector<double> forward() const {
        std::vector<double> alpha(length() + 1, neg_inf);
        alpha[0] = 0.0;
        for (std::size_t j = 0; j < length(); ++j) {
            if (alpha[j] == neg_inf) continue;
            const auto& out = lattice_.outgoing(j);
            for (std::size_t i = 0; i < out.size(); ++i) {
                alpha[out[i].end] = log_add(alpha[out[i].end], alpha[j] + scores_[j][i]);
            }
        }
        return alpha;
    }

    // backward[j] = log of the total weight of paths j -> T.
    std::vector<double> backward(const std::vector<double>& alpha) const {
        std::vector<double> back(length() + 1, neg_inf);
        back[length()] = 0.0;
        for (std::size_t j = length(); j-- > 0;) {
            if (alpha[j] == neg_inf) continue;
            const auto& out = lattice_.outgoing(j);
            for (std::size_t i = 0; i < out.size(); ++i) {
                back[j] = log_add(back[j], scores_[j][i] + back[out[i].end]);
            }
        }
        return back;
    }

    [[noreturn]] void unsegmentable() const {
        throw Error(ErrorCode::unsegmentable,
                    "'" + utf8_encode(y_) + "'" +
                        (lattice_.segmentable() ? " has zero probability under the scorer" : " has no segmentation"));
    }

private:
    CharView y_;
    const Scorer& scorer_;
    const Conditioning& cond_;
    Lattice lattice_;
    CharSequence full_;
    std::vector<std::vector<double>> scores_;  // aligned with lattice_.outgoing(j)
};

}  // namespace

Conditioning make_conditioning(CharView left_context, const std::vector<std::string>& source_tokens,
                               const FeatureConfig& cfg) {
    return {CharSequence(left_context), source_features(source_tokens, cfg)};
}

AlphaTable forward_table(CharView y, const Vocabulary& vocab, const Scorer& scorer, const Conditioning& cond) {
    ScoredLattice sl(y, vocab, scorer, cond);
    return {sl.forward()};
}

double log_marginal(CharView y, const Vocabulary& vocab, const Scorer& scorer, const Conditioning& cond) {
    ScoredLattice sl(y, vocab, scorer, cond);
    auto alpha = sl.forward();
    if (alpha.back() == neg_inf) sl.unsegmentable();
    return alpha.back();
}

ViterbiTable viterbi_table(CharView y, const Vocabulary& vocab, const Scorer& scorer, const Conditioning& cond) {
    ScoredLattice sl(y, vocab, scorer, cond);
    const auto& lattice = sl.lattice();
    ViterbiTable t{std::vector<double>(y.size() + 1, neg_inf), std::vector<std::size_t>(y.size() + 1, npos)};
    t.beta[0] = 0.0;
    // Push relaxation in increasing start order: a strict comparison keeps
    // the smallest j among equal-scoring predecessors.
    for (std::size_t j = 0; j < y.size(); ++j) {
        if (t.beta[j] == neg_inf) continue;
        const auto& out = lattice.outgoing(j);
        for (std::size_t i = 0; i < out.size(); ++i) {
            double cand = t.beta[j] + sl.score(j, i);
            if (cand > t.beta[out[i].end]) {
                t.beta[out[i].end] = cand;
                t.backpointer[out[i].end] = j;
            }
        }
    }
    return t;
}

ViterbiResult viterbi_segment(CharView y, const Vocabulary& vocab, const Scorer& scorer, const Conditioning& cond) {
    auto t = viterbi_table(y, vocab, scorer, cond);
    if (t.beta.back() == neg_inf) ScoredLattice(y, vocab, scorer, cond).unsegmentable();
    std::vector<std::size_t> cuts{y.size()};
    for (std::size_t k = y.size(); k > 0;) {
        k = t.backpointer[k];
        cuts.push_back(k);
    }
    std::reverse(cuts.begin(), cuts.end());
    return {Segmentation{std::move(cuts)}, t.beta.back()};
}

std::vector<EdgePosterior> edge_posteriors(CharView y, const Vocabulary& vocab, const Scorer& scorer,
                                           const Conditioning& cond) {
    ScoredLattice sl(y, vocab, scorer, cond);
    auto alpha = sl.forward();
    if (alpha.back() == neg_inf) sl.unsegmentable();
    auto back = sl.backward(alpha);
    const double total = alpha.back();

    std::vector<EdgePosterior> out;
    for (std::size_t j = 0; j < y.size(); ++j) {
        const auto& edges = sl.lattice().outgoing(j);
        for (std::size_t i = 0; i < edges.size(); ++i) {
            const auto& e = edges[i];
            double lp = alpha[j] == neg_inf ? neg_inf : alpha[j] + sl.score(j, i) + back[e.end];
            out.push_back({e.start, e.end, e.id, lp == neg_inf ? 0.0 : std::exp(lp - total)});
        }
    }
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return std::tie(a.end, a.start) < std::tie(b.end, b.start); });
    return out;
}

MarginalGradient marginal_gradient(CharView y, const Vocabulary& vocab, const Scorer& scorer,
                                   const Conditioning& cond) {
    ScoredLattice sl(y, vocab, scorer, cond);
    auto alpha = sl.forward();
    if (alpha.back() == neg_inf) sl.unsegmentable();
    MarginalGradient result{alpha.back(), scorer.zero_gradient()};
    if (!scorer.has_parameters()) return result;

    auto back = sl.backward(alpha);
    std::vector<WeightedTarget> targets;
    for (std::size_t j = 0; j < y.size(); ++j) {
        if (alpha[j] == neg_inf) continue;
        const auto& out = sl.lattice().outgoing(j);
        targets.clear();
        for (std::size_t i = 0; i < out.size(); ++i) {
            double lp = alpha[j] + sl.score(j, i) + back[out[i].end];
            if (lp == neg_inf) continue;
            targets.push_back({out[i].id, std::exp(lp - result.log_marginal)});
        }
        if (!targets.empty()) scorer.accumulate_gradient(sl.context(j), targets, result.gradient);
    }
    return result;
}

// ---------------------------------------------------------------------------

namespace {

template <typename PerWord>
void for_each_word(CharView sentence, const Scorer& scorer, const std::vector<std::string>& source_tokens,
                   PerWord&& per_word) {
    auto words = split_words(sentence);
    Conditioning cond = make_conditioning(U"", source_tokens, scorer.feature_config());
    for (std::size_t i = 0; i < words.size(); ++i) {
        per_word(words[i], cond);
        cond.left_context += words[i];
        cond.left_context += U' ';
    }
}

}  // namespace

double sentence_log_marginal(CharView sentence, const Vocabulary& vocab, const Scorer& scorer,
                             const std::vector<std::string>& source_tokens) {
    double total = 0.0;
    for_each_word(sentence, scorer, source_tokens,
                  [&](const CharSequence& w, const Conditioning& c) { total += log_marginal(w, vocab, scorer, c); });
    return total;
}

std::vector<Segmentation> sentence_viterbi(CharView sentence, const Vocabulary& vocab, const Scorer& scorer,
                                           const std::vector<std::string>& source_tokens) {
    std::vector<Segmentation> out;
    for_each_word(sentence, scorer, source_tokens, [&](const CharSequence& w, const Conditioning& c) {
        out.push_back(viterbi_segment(w, vocab, scorer, c).segmentation);
    });
    return out;
}

MarginalGradient sentence_marginal_gradient(CharView sentence, const Vocabulary& vocab, const Scorer& scorer,
                                            const std::vector<std::string>& source_tokens) {
    MarginalGradient total{0.0, scorer.zero_gradient()};
    for_each_word(sentence, scorer, source_tokens, [&](const CharSequence& w, const Conditioning& c) {
        auto g = marginal_gradient(w, vocab, scorer, c);
        total.log_marginal += g.log_marginal;
        total.gradient.add_scaled(g.gradient, 1.0);
    });
    return total;
}

std::size_t count_chars(CharView sentence) {
    return static_cast<std::size_t>(std::count_if(sentence.begin(), sentence.end(), [](char32_t c) { return !is_space(c); }));
}

}  // namespace dpe
