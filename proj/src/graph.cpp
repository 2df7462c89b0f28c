#include "sarcx/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "sarcx/error.hpp"

namespace sarcx::graph {

Matrix WeightedGraph::adjacency() const {
    Matrix a = Matrix::Identity(static_cast<Eigen::Index>(node_count),
                                static_cast<Eigen::Index>(node_count));
    for (const auto& e : edges) {
        a(static_cast<Eigen::Index>(e.u), static_cast<Eigen::Index>(e.v)) = e.weight;
        a(static_cast<Eigen::Index>(e.v), static_cast<Eigen::Index>(e.u)) = e.weight;
    }
    return a;
}

Vector WeightedGraph::degrees() const {
    return adjacency().rowwise().sum();
}

WeightedGraph build_graph(const enrich::EnrichedSequence& seq) {
    enrich::validate(seq); // rejects dangling links before any edge is laid

    WeightedGraph g;
    g.node_count = seq.size();
    std::set<std::pair<std::size_t, std::size_t>> seen;
    auto add_edge = [&](std::size_t u, std::size_t v, double w) {
        if (u > v) std::swap(u, v);
        if (u == v || !seen.insert({u, v}).second) {
            // Unreachable for validated sequences: every rule touches a
            // distinct position pair.
            throw DataError("graph rules produced a duplicate or self edge");
        }
        g.edges.push_back(Edge{u, v, w});
    };

    for (const auto& seg : seq.segments) {
        // Consecutive-token edges exist for caption and description only.
        if (seg.kind == enrich::SegmentKind::caption ||
            seg.kind == enrich::SegmentKind::description) {
            for (std::size_t i = seg.start; i + 1 < seg.end; ++i) {
                add_edge(i, i + 1, 1.0);
            }
        }
        // Concept attachments: caption/description/object concepts join the
        // graph; target concepts stay isolated like the target itself.
        if (seg.kind == enrich::SegmentKind::caption_concepts ||
            seg.kind == enrich::SegmentKind::description_concepts ||
            seg.kind == enrich::SegmentKind::object_concepts) {
            for (const auto& link : seg.links) {
                add_edge(link.source_index, link.start, link.relevance);
                for (std::size_t i = link.start; i + 1 < link.end; ++i) {
                    add_edge(i, i + 1, 1.0);
                }
            }
        }
    }
    std::sort(g.edges.begin(), g.edges.end());
    return g;
}

Matrix normalize(const WeightedGraph& g) {
    const Matrix a = g.adjacency();
    const Vector deg = a.rowwise().sum();
    Vector inv_sqrt(deg.size());
    for (Eigen::Index i = 0; i < deg.size(); ++i) {
        if (!(deg(i) > 0.0)) {
            throw DataError("zero-degree node in graph normalization (self-loops missing?)");
        }
        inv_sqrt(i) = 1.0 / std::sqrt(deg(i));
    }
    return inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal();
}

Matrix normalized_adjacency(const WeightedGraph& g, std::size_t padded_size) {
    if (padded_size < g.node_count) {
        throw UsageError("normalized_adjacency: padded size smaller than node count");
    }
    Matrix out = Matrix::Identity(static_cast<Eigen::Index>(padded_size),
                                  static_cast<Eigen::Index>(padded_size));
    if (g.node_count > 0) {
        out.topLeftCorner(static_cast<Eigen::Index>(g.node_count),
                          static_cast<Eigen::Index>(g.node_count)) = normalize(g);
    }
    return out;
}

std::string to_json(const WeightedGraph& g) {
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : g.edges) {
        edges.push_back(nlohmann::json::array({e.u, e.v, e.weight}));
    }
    return nlohmann::json{{"node_count", g.node_count}, {"edges", std::move(edges)}}.dump();
}

WeightedGraph graph_from_json(const std::string& json_text) {
    WeightedGraph g;
    try {
        auto doc = nlohmann::json::parse(json_text);
        g.node_count = doc.at("node_count").get<std::size_t>();
        for (const auto& e : doc.at("edges")) {
            g.edges.push_back(
                Edge{e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>(), e.at(2).get<double>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("invalid graph JSON: ") + e.what());
    }
    for (const auto& e : g.edges) {
        if (e.u >= g.node_count || e.v >= g.node_count || e.u >= e.v || !(e.weight > 0.0)) {
            throw DataError("invalid graph JSON: malformed edge");
        }
    }
    return g;
}

} // namespace sarcx::graph
