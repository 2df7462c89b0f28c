#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sarcx/types.hpp"

namespace sarcx::metrics {

// ---------------------------------------------------------------------------
// Embedding backends
//
// The two embedding-based metrics (token-level greedy matching and whole-
// sentence cosine) are computed against this interface. Tests and offline
// runs use the deterministic hash backend below; full-fidelity runs can plug
// in a pretrained scorer behind the same interface. Implementations must be
// safe to call from multiple threads (const and stateless, or locked).

class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;
    virtual std::string version() const = 0;
    // One row per token.
    virtual Matrix embed_tokens(const std::vector<std::string>& tokens) const = 0;
    // Single sentence vector.
    virtual Vector embed_sentence(const std::vector<std::string>& tokens) const = 0;
};

// Deterministic stub: every token maps to a fixed unit vector seeded by the
// token's hash, a sentence to the normalized mean of its token vectors.
// Identical strings therefore score exactly 1.0 in cosine similarity, and all
// scores are bitwise-reproducible across runs and platforms.
class HashEmbeddingBackend : public EmbeddingBackend {
public:
    explicit HashEmbeddingBackend(int dim = 64, std::uint64_t seed = 0);

    std::string version() const override;
    Matrix embed_tokens(const std::vector<std::string>& tokens) const override;
    Vector embed_sentence(const std::vector<std::string>& tokens) const override;

private:
    Vector token_vector(const std::string& token) const;

    int dim_;
    std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Reports

struct EvalConfig {
    // Epsilon smoothing for zero higher-order n-gram matches (n >= 2 only;
    // disjoint corpora still score exactly 0 on the unigram column).
    bool bleu_smoothing = true;
};

// Per-sample breakdown for error analysis. The n-gram overlap precision
// columns (B1..B4) are corpus-level statistics and do not decompose by
// sample, so they are reported only at corpus level.
struct SampleScores {
    std::size_t index = 0;
    double r1 = 0.0, r2 = 0.0, rl = 0.0;
    double meteor = 0.0;
    double bs_p = 0.0, bs_r = 0.0, bs_f1 = 0.0;
    double sentbert = 0.0;
};

struct EvalReport {
    // All values are percentages in [0, 100].
    double b1 = 0.0, b2 = 0.0, b3 = 0.0, b4 = 0.0;
    double rl = 0.0, r1 = 0.0, r2 = 0.0;
    double meteor = 0.0;
    double bs_p = 0.0, bs_r = 0.0, bs_f1 = 0.0;
    double sentbert = 0.0;

    std::string tokenizer_version;
    std::string embedding_version;
    std::vector<SampleScores> samples;
};

// ---------------------------------------------------------------------------
// Building blocks (exposed so tests can pit them against independent oracles)

// Cumulative corpus n-gram overlap scores with brevity penalty, as fractions
// in [0, 1]; element k-1 is the order-k cumulative score.
std::vector<double> corpus_bleu(const std::vector<std::vector<std::string>>& candidates,
                                const std::vector<std::vector<std::string>>& references,
                                int max_n = 4, bool smoothing = true);

struct RougeScores {
    double r1 = 0.0; // unigram F1
    double r2 = 0.0; // bigram F1
    double rl = 0.0; // longest-common-subsequence F1
};
RougeScores rouge_scores(const std::vector<std::string>& candidate,
                         const std::vector<std::string>& reference);

// Exact-match harmonic-alignment score: m exact unigram alignments (greedy
// leftmost), F = 10PR / (R + 9P), fragmentation penalty 0.5 * (chunks/m)^3.
double meteor_score(const std::vector<std::string>& candidate,
                    const std::vector<std::string>& reference);

struct PrfScores {
    double p = 0.0, r = 0.0, f1 = 0.0;
};
// Greedy token-matching precision/recall/F1 over backend embeddings; raw
// cosines are clamped to [0, 1] before aggregation.
PrfScores greedy_embedding_match(const std::vector<std::string>& candidate,
                                 const std::vector<std::string>& reference,
                                 const EmbeddingBackend& backend);

double cosine_similarity(const Vector& a, const Vector& b);

// ---------------------------------------------------------------------------
// Corpus evaluation
//
// Tokenizes with text::metric_tokenize, computes the corpus n-gram columns
// once, and averages all per-sample metrics. Throws UsageError on length
// mismatch or an empty corpus.
EvalReport evaluate_corpus(const std::vector<std::string>& candidates,
                           const std::vector<std::string>& references,
                           const EmbeddingBackend& backend, const EvalConfig& config = {});

// ---------------------------------------------------------------------------
// Rendering

// Aligned comparison table, one row per named report, rows in the given
// order, 12 metric columns.
std::string report_table(const std::vector<std::pair<std::string, EvalReport>>& rows);

// Same content as CSV (header + one row per report).
std::string report_csv(const std::vector<std::pair<std::string, EvalReport>>& rows);

// Per-sample breakdown, one JSON object per line.
std::string report_jsonl(const EvalReport& report);

} // namespace sarcx::metrics
