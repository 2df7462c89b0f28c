// Shared test utilities: fixture paths, independent re-derivations used as
// oracles, random structure generators, and finite-difference checking.
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sarcx/enrich.hpp"
#include "sarcx/graph.hpp"
#include "sarcx/knowledge.hpp"
#include "sarcx/nn.hpp"
#include "sarcx/rng.hpp"
#include "sarcx/types.hpp"

namespace testutil {

inline std::filesystem::path fixture_path(const std::string& name) {
    return std::filesystem::path(SARCX_FIXTURE_DIR) / name;
}

// Fresh scratch directory under the system temp root.
inline std::filesystem::path scratch_dir(const std::string& tag) {
    static int counter = 0;
    auto dir = std::filesystem::temp_directory_path() /
               ("sarcx-test-" + tag + "-" + std::to_string(++counter));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// --- Concept lookup construction --------------------------------------------

inline sarcx::knowledge::ConceptEntry entry(const std::string& source,
                                            std::vector<std::string> concept_tokens,
                                            double relevance) {
    return sarcx::knowledge::ConceptEntry{source, std::move(concept_tokens), relevance};
}

// Lookup aligned with `tokens`, all nullopt except the listed positions.
inline sarcx::knowledge::ConceptLookup
make_lookup(std::size_t size,
            const std::map<std::size_t, sarcx::knowledge::ConceptEntry>& at = {}) {
    sarcx::knowledge::ConceptLookup lookup(size);
    for (const auto& [index, e] : at) {
        lookup.at(index) = e;
    }
    return lookup;
}

// --- Random enriched sequences -----------------------------------------------
// Used by the graph-rule oracle, the ordering property, and acceptance runs.

struct RandomSequenceOptions {
    std::size_t max_tokens = 40;
    double concept_prob = 0.4;
    double target_prob = 0.5;
    double target_concepts_prob = 0.5;
};

inline std::vector<std::string> random_tokens(sarcx::Rng& rng, std::size_t count,
                                              const std::string& prefix) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(prefix + std::to_string(rng.uniform_index(50)));
    }
    return out;
}

inline sarcx::knowledge::ConceptLookup random_lookup(sarcx::Rng& rng,
                                                     const std::vector<std::string>& tokens,
                                                     double prob) {
    sarcx::knowledge::ConceptLookup lookup(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (rng.chance(prob)) {
            const std::size_t len = 1 + rng.uniform_index(3);
            lookup[i] = sarcx::knowledge::ConceptEntry{tokens[i], random_tokens(rng, len, "c"),
                                                       rng.uniform(0.1, 3.0)};
        }
    }
    return lookup;
}

inline sarcx::enrich::EnrichedSequence
random_enriched_sequence(sarcx::Rng& rng, const RandomSequenceOptions& opts = {}) {
    const auto caption = random_tokens(rng, 1 + rng.uniform_index(5), "w");
    const auto description = random_tokens(rng, rng.uniform_index(5), "d");
    const auto objects = random_tokens(rng, rng.uniform_index(5), "o");
    auto seq = sarcx::enrich::build_knowledge_sequence(
        caption, random_lookup(rng, caption, opts.concept_prob), description,
        random_lookup(rng, description, opts.concept_prob), objects,
        random_lookup(rng, objects, opts.concept_prob));
    if (rng.chance(opts.target_prob)) {
        const auto target = random_tokens(rng, 1 + rng.uniform_index(3), "t");
        const bool with_concepts = rng.chance(opts.target_concepts_prob);
        auto lookup = with_concepts ? random_lookup(rng, target, opts.concept_prob)
                                    : sarcx::knowledge::ConceptLookup(target.size());
        return sarcx::enrich::append_target(seq, target, with_concepts, lookup,
                                            opts.max_tokens);
    }
    return sarcx::enrich::truncate_sequence(seq, opts.max_tokens);
}

// --- Independent edge-rule re-derivation -------------------------------------
// Dumb, direct restatement of the construction rules; deliberately shares no
// code with the production builder.

inline std::set<std::tuple<std::size_t, std::size_t, double>>
brute_force_edges(const sarcx::enrich::EnrichedSequence& seq) {
    std::set<std::tuple<std::size_t, std::size_t, double>> edges;
    auto add = [&edges](std::size_t a, std::size_t b, double w) {
        edges.insert({std::min(a, b), std::max(a, b), w});
    };
    using sarcx::enrich::SegmentKind;
    for (const auto& seg : seq.segments) {
        if (seg.kind == SegmentKind::caption || seg.kind == SegmentKind::description) {
            for (std::size_t i = seg.start; i + 1 < seg.end; ++i) {
                add(i, i + 1, 1.0);
            }
        }
        if (seg.kind == SegmentKind::caption_concepts ||
            seg.kind == SegmentKind::description_concepts ||
            seg.kind == SegmentKind::object_concepts) {
            for (const auto& link : seg.links) {
                add(link.source_index, link.start, link.relevance);
                for (std::size_t p = link.start; p + 1 < link.end; ++p) {
                    add(p, p + 1, 1.0);
                }
            }
        }
        // objects: no consecutive edges; separator/target/target_concepts:
        // isolated.
    }
    return edges;
}

inline std::set<std::tuple<std::size_t, std::size_t, double>>
edge_set(const sarcx::graph::WeightedGraph& g) {
    std::set<std::tuple<std::size_t, std::size_t, double>> edges;
    for (const auto& e : g.edges) {
        edges.insert({e.u, e.v, e.weight});
    }
    return edges;
}

// --- Finite differences -------------------------------------------------------

// Central finite difference of `loss` w.r.t. every entry of every view. The
// views must alias the storage `loss` reads.
inline std::vector<sarcx::Matrix> finite_difference(const std::function<double()>& loss,
                                                    std::vector<sarcx::nn::TensorView> views,
                                                    double eps = 1e-5) {
    std::vector<sarcx::Matrix> grads;
    for (auto& view : views) {
        sarcx::Matrix g(view.rows, view.cols);
        for (Eigen::Index i = 0; i < view.rows * view.cols; ++i) {
            double* x = view.data + i;
            const double orig = *x;
            *x = orig + eps;
            const double hi = loss();
            *x = orig - eps;
            const double lo = loss();
            *x = orig;
            g(i % view.rows, i / view.rows) = (hi - lo) / (2.0 * eps);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

// Worst relative error between an analytic gradient and its FD estimate.
inline double max_rel_error(const sarcx::Matrix& analytic, const sarcx::Matrix& fd) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < analytic.size(); ++i) {
        const double a = analytic(i), f = fd(i);
        const double denom = std::max({1e-6, std::abs(a), std::abs(f)});
        worst = std::max(worst, std::abs(a - f) / denom);
    }
    return worst;
}

} // namespace testutil
