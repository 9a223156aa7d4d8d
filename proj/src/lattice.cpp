#include "dpe/lattice.hpp"

#include <algorithm>

namespace dpe {

Lattice::Lattice(std::size_t length, std::vector<LatticeEdge> edges)
    : length_(length),
      num_edges_(edges.size()),
      incoming_(length + 1),
      outgoing_(length + 1),
      reachable_(length + 1, false) {
    for (const auto& e : edges) {
        incoming_.at(e.end).push_back(e);
        outgoing_.at(e.start).push_back(e);
    }
    for (auto& in : incoming_) {
        std::sort(in.begin(), in.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
    }
    for (auto& out : outgoing_) {
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.end < b.end; });
    }
    reachable_[0] = true;
    for (std::size_t k = 1; k <= length_; ++k) {
        reachable_[k] = std::any_of(incoming_[k].begin(), incoming_[k].end(),
                                    [&](const auto& e) { return reachable_[e.start]; });
    }
}

double Lattice::count_paths() const {
    std::vector<double> paths(length_ + 1, 0.0);
    paths[0] = 1.0;
    for (std::size_t k = 1; k <= length_; ++k) {
        for (const auto& e : incoming_[k]) paths[k] += paths[e.start];
    }
    return paths[length_];
}

Lattice build_lattice(CharView y, const Vocabulary& vocab) {
    std::vector<LatticeEdge> edges;
    for (std::size_t j = 0; j < y.size(); ++j) {
        vocab.match_prefixes(y, j, [&](std::size_t len, SubwordId id) { edges.push_back({j, j + len, id}); });
    }
    return Lattice(y.size(), std::move(edges));
}

namespace {

void enumerate_from(const Lattice& lattice, std::size_t node, std::vector<std::size_t>& prefix,
                    std::vector<Segmentation>& out, std::size_t limit) {
    if (node == lattice.length()) {
        if (out.size() == limit) {
            throw Error(ErrorCode::too_many_segmentations, "more than " + std::to_string(limit) + " segmentations");
        }
        out.push_back({prefix});
        return;
    }
    for (const auto& e : lattice.outgoing(node)) {
        prefix.push_back(e.end);
        enumerate_from(lattice, e.end, prefix, out, limit);
        prefix.pop_back();
    }
}

}  // namespace

std::vector<Segmentation> enumerate_segmentations(CharView y, const Vocabulary& vocab, std::size_t limit) {
    auto lattice = build_lattice(y, vocab);
    std::vector<Segmentation> out;
    std::vector<std::size_t> prefix{0};
    enumerate_from(lattice, 0, prefix, out, limit);
    return out;
}

void write_dot(std::ostream& out, const Lattice& lattice, const Vocabulary& vocab) {
    out << "digraph lattice {\n  rankdir=LR;\n";
    for (std::size_t k = 0; k <= lattice.length(); ++k) {
        out << "  n" << k << " [label=\"" << k << "\"" << (lattice.reachable(k) ? "" : ", style=dashed") << "];\n";
    }
    for (std::size_t k = 1; k <= lattice.length(); ++k) {
        for (const auto& e : lattice.incoming(k)) {
            std::string label = utf8_encode(vocab.entry(e.id));
            std::string escaped;
            for (char c : label) {
                if (c == '"' || c == '\\') escaped += '\\';
                escaped += c;
            }
            out << "  n" << e.start << " -> n" << e.end << " [label=\"" << escaped << "\"];\n";
        }
    }
    out << "}\n";
}

}  // namespace dpe
