#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dpe/core.hpp"
#include "dpe/lattice.hpp"
#include "dpe/scorer.hpp"

namespace dpe {

/// Everything a word's predictions are conditioned on besides its own
/// characters: the target text before it and the source-side features.
struct Conditioning {
    CharSequence left_context;
    FeatureVector source;
};

Conditioning make_conditioning(CharView left_context, const std::vector<std::string>& source_tokens,
                               const FeatureConfig& cfg);

/// Forward table. alpha[0] = 0; alpha[k] = -inf iff node k is unreachable
/// (or reachable only through zero-probability edges).
struct AlphaTable {
    std::vector<double> alpha;
};

/// Max-product table with backpointers; backpointer[k] is the start of the
/// best edge into k (unset, i.e. npos, when k is unreachable).
struct ViterbiTable {
    std::vector<double> beta;
    std::vector<std::size_t> backpointer;
};

struct ViterbiResult {
    Segmentation segmentation;
    double score = 0.0;
};

struct EdgePosterior {
    std::size_t start;
    std::size_t end;
    SubwordId id;
    double posterior;
};

struct MarginalGradient {
    double log_marginal = 0.0;
    ScorerParams gradient;  // empty for parameterless scorers
};

AlphaTable forward_table(CharView y, const Vocabulary& vocab, const Scorer& scorer, const Conditioning& cond = {});
ViterbiTable viterbi_table(CharView y, const Vocabulary& vocab, const Scorer& scorer, const Conditioning& cond = {});

/// log sum_z p(y, z) over all segmentations of y. Throws Unsegmentable when
/// no segmentation has nonzero probability.
double log_marginal(CharView y, const Vocabulary& vocab, const Scorer& scorer, const Conditioning& cond = {});

/// Highest-scoring segmentation. Among equal-scoring predecessors the one
/// with the smallest start (longest final subword) wins.
ViterbiResult viterbi_segment(CharView y, const Vocabulary& vocab, const Scorer& scorer, const Conditioning& cond = {});

/// Posterior probability of every lattice edge, ordered by (end, start).
std::vector<EdgePosterior> edge_posteriors(CharView y, const Vocabulary& vocab, const Scorer& scorer,
                                           const Conditioning& cond = {});

/// Gradient of log_marginal as the posterior-weighted sum of per-edge
/// log-probability gradients.
MarginalGradient marginal_gradient(CharView y, const Vocabulary& vocab, const Scorer& scorer,
                                   const Conditioning& cond = {});

// ---------------------------------------------------------------------------
// Sentences. Words are separated by single spaces and segmented
// independently; each word is conditioned on the sentence text before it.

double sentence_log_marginal(CharView sentence, const Vocabulary& vocab, const Scorer& scorer,
                             const std::vector<std::string>& source_tokens = {});

std::vector<Segmentation> sentence_viterbi(CharView sentence, const Vocabulary& vocab, const Scorer& scorer,
                                           const std::vector<std::string>& source_tokens = {});

MarginalGradient sentence_marginal_gradient(CharView sentence, const Vocabulary& vocab, const Scorer& scorer,
                                            const std::vector<std::string>& source_tokens = {});

/// Number of non-space characters; the unit for nats/char reporting.
std::size_t count_chars(CharView sentence);

}  // namespace dpe
