#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sarcx/enrich.hpp"
#include "sarcx/types.hpp"

namespace sarcx::graph {

// Undirected edge in canonical form (u < v), weight > 0.
struct Edge {
    std::size_t u = 0;
    std::size_t v = 0;
    double weight = 0.0;

    bool operator==(const Edge&) const = default;
    auto operator<=>(const Edge&) const = default;
};

// Weighted undirected graph over token positions. `edges` holds exactly the
// rule-mandated edges (canonical, sorted, no self-edges); unit self-loops are
// added to every node when materializing the adjacency so isolated positions
// keep a positive degree.
struct WeightedGraph {
    std::size_t node_count = 0;
    std::vector<Edge> edges;

    // A-hat = A + I, symmetric node_count x node_count.
    Matrix adjacency() const;
    // Row sums of A-hat (the D-hat diagonal).
    Vector degrees() const;

    bool operator==(const WeightedGraph&) const = default;
};

// Edge rules over an enriched sequence:
//   - unit edges between consecutive caption tokens and consecutive
//     description tokens (never between consecutive object tokens);
//   - a relevance-weighted edge from each source token to the first token of
//     its concept, with unit edges chaining the concept's own consecutive
//     tokens;
//   - separator/target/target-concept positions stay isolated.
WeightedGraph build_graph(const enrich::EnrichedSequence& seq);

// Symmetric normalization D^{-1/2} (A + I) D^{-1/2}; an isolated self-looped
// node's row is its own unit vector.
Matrix normalize(const WeightedGraph& g);

// Same, embedded into padded_size x padded_size: padding positions are
// isolated self-looped nodes, so the extension is the identity block.
Matrix normalized_adjacency(const WeightedGraph& g, std::size_t padded_size);

// Edge-list JSON: {"node_count": n, "edges": [[u, v, w], ...]}.
std::string to_json(const WeightedGraph& g);
WeightedGraph graph_from_json(const std::string& json_text);

} // namespace sarcx::graph
