#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace sarcx::knowledge {

// The single highest-relevance one-hop neighbor retrieved for a token.
// Multi-word concepts are split on whitespace into concept_tokens.
struct ConceptEntry {
    std::string source_token;
    std::vector<std::string> concept_tokens;
    double relevance = 0.0;

    bool operator==(const ConceptEntry&) const = default;
};

// Index-aligned with the queried token sequence; stopword positions (and
// tokens with no edge in the knowledge source) hold nullopt.
using ConceptLookup = std::vector<std::optional<ConceptEntry>>;

// Frozen English stopword list; these tokens are never queried.
const std::unordered_set<std::string>& stopwords();
bool is_stopword(const std::string& token);

// Raw neighbor list for one token: (concept phrase, weight) pairs in service
// order. An empty list means the source has no edge for the token.
using NeighborList = std::vector<std::pair<std::string, double>>;

class ConceptBackend {
public:
    virtual ~ConceptBackend() = default;
    virtual std::string version() const = 0;
    // `token` is already normalized (lowercase NFC). Throws BackendError on
    // transport failure; an empty list is the authoritative "no concepts".
    virtual NeighborList neighbors(const std::string& token) = 0;
    // Remote round trips performed so far; fixture-backed sources stay at 0.
    virtual std::size_t transport_calls() const { return 0; }
};

// Offline source backed by a JSON map: token -> [[concept, weight], ...].
class FixtureBackend : public ConceptBackend {
public:
    explicit FixtureBackend(const std::filesystem::path& file);
    explicit FixtureBackend(std::map<std::string, NeighborList> entries);

    std::string version() const override { return "fixture/1"; }
    NeighborList neighbors(const std::string& token) override;

private:
    std::map<std::string, NeighborList> entries_;
};

struct HttpBackendConfig {
    std::string endpoint = "http://api.conceptnet.io"; // override via SARCX_KNOWLEDGE_ENDPOINT
    int edge_limit = 50;
    int max_retries = 3;
    int backoff_ms = 250;
    double requests_per_second = 2.0;
};

// Client for a ConceptNet-style HTTP API: GET /query?node=/c/en/<token>&other=/c/en
// returning {"edges": [{"weight": w, "start": {...}, "end": {...}}]}.
// Rate-limited by a token bucket; transient failures retried with backoff.
class HttpConceptBackend : public ConceptBackend {
public:
    explicit HttpConceptBackend(HttpBackendConfig config);
    ~HttpConceptBackend() override;

    std::string version() const override;
    NeighborList neighbors(const std::string& token) override;
    std::size_t transport_calls() const override { return calls_; }

private:
    HttpBackendConfig config_;
    std::string host_;
    int port_ = 80;
    bool https_ = false;
    std::size_t calls_ = 0;
    double bucket_tokens_;
    std::chrono::steady_clock::time_point bucket_refill_;
    std::mutex mutex_;

    void rate_limit_acquire();
};

// Read-through cache shared by all backends. The cache file uses the fixture
// format, so a warmed cache can be replayed as a fixture. Writes are
// serialized; reads after a write observe it within the process.
class CachingBackend : public ConceptBackend {
public:
    CachingBackend(std::shared_ptr<ConceptBackend> inner, std::filesystem::path cache_file);

    std::string version() const override { return inner_->version(); }
    NeighborList neighbors(const std::string& token) override;
    std::size_t transport_calls() const override { return inner_->transport_calls(); }

    // Persists the cache (sorted keys, byte-stable for identical contents).
    void flush() const;
    std::size_t size() const;

private:
    std::shared_ptr<ConceptBackend> inner_;
    std::filesystem::path cache_file_;
    mutable std::mutex mutex_;
    std::map<std::string, NeighborList> entries_;
};

// Loads/saves the shared fixture/cache JSON format.
std::map<std::string, NeighborList> load_neighbor_map(const std::filesystem::path& file);
void save_neighbor_map(const std::map<std::string, NeighborList>& entries,
                       const std::filesystem::path& file);

class ConceptClient {
public:
    explicit ConceptClient(std::shared_ptr<ConceptBackend> backend);

    // Top-1 one-hop neighbor for a non-stopword token, or nullopt when the
    // source has no edge. Weights are clipped to >= kMinRelevance so graph
    // degrees stay positive. Precondition: token non-empty and not a stopword.
    std::optional<ConceptEntry> fetch_concept(const std::string& token) const;

    // Position-aligned lookup over a token sequence; stopwords and unknown
    // tokens yield nullopt. Backend errors are rethrown naming the token.
    ConceptLookup enrich_tokens(const std::vector<std::string>& tokens) const;

    std::size_t transport_calls() const { return backend_->transport_calls(); }
    const ConceptBackend& backend() const { return *backend_; }

    static constexpr double kMinRelevance = 1e-3;

private:
    std::shared_ptr<ConceptBackend> backend_;
};

struct MissingReport {
    std::vector<std::string> missing_tokens; // non-stopword tokens without concepts
    std::size_t queried = 0;                 // non-stopword positions
    std::size_t resolved = 0;

    bool empty() const { return missing_tokens.empty(); }
};

// Diagnostic for the "no concepts extracted" failure mode.
MissingReport diagnose_missing(const ConceptLookup& lookup, const std::vector<std::string>& tokens);

std::string format_missing_report(const MissingReport& report);

} // namespace sarcx::knowledge
