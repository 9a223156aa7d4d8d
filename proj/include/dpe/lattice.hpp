#pragma once

#include <cstddef>
#include <limits>
#include <ostream>
#include <vector>

#include "dpe/core.hpp"

namespace dpe {

struct LatticeEdge {
    std::size_t start;
    std::size_t end;
    SubwordId id;
};

/// Segmentation lattice of one string: nodes 0..T, one edge per vocabulary
/// entry matching y[start, end). Edges are stored both by end position
/// (sorted by start) and by start position (sorted by end).
class Lattice {
public:
    Lattice() = default;
    Lattice(std::size_t length, std::vector<LatticeEdge> edges);

    std::size_t length() const noexcept { return length_; }
    std::size_t num_edges() const noexcept { return num_edges_; }

    const std::vector<LatticeEdge>& incoming(std::size_t k) const { return incoming_.at(k); }
    const std::vector<LatticeEdge>& outgoing(std::size_t j) const { return outgoing_.at(j); }

    /// Node k is reachable from 0 along edges.
    bool reachable(std::size_t k) const { return reachable_.at(k); }
    bool segmentable() const { return reachable_.back(); }

    /// Number of 0 -> T paths, counted by a forward DP. Returned as a double
    /// because counts grow exponentially in T.
    double count_paths() const;

private:
    std::size_t length_ = 0;
    std::size_t num_edges_ = 0;
    std::vector<std::vector<LatticeEdge>> incoming_{1};
    std::vector<std::vector<LatticeEdge>> outgoing_{1};
    std::vector<bool> reachable_{true};
};

Lattice build_lattice(CharView y, const Vocabulary& vocab);

/// All valid segmentations of y in lexicographic order of boundaries.
/// Throws TooManySegmentations once more than `limit` are found.
std::vector<Segmentation> enumerate_segmentations(CharView y, const Vocabulary& vocab, std::size_t limit = 1'000'000);

/// Graphviz rendering, one node per position and edges labelled with subwords.
void write_dot(std::ostream& out, const Lattice& lattice, const Vocabulary& vocab);

}  // namespace dpe
