#include "sarcx/knowledge.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "sarcx/error.hpp"
#include "sarcx/text.hpp"

namespace sarcx::knowledge {

bool is_stopword(const std::string& token) {
    return stopwords().contains(token);
}

// ---------------------------------------------------------------------------
// Fixture / cache file format: {"token": [["concept phrase", weight], ...]}

std::map<std::string, NeighborList> load_neighbor_map(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) {
        throw DataError("cannot open neighbor map: " + file.string());
    }
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("invalid JSON in " + file.string() + ": " + e.what());
    }
    if (!doc.is_object()) {
        throw DataError(file.string() + ": neighbor map must be a JSON object");
    }
    std::map<std::string, NeighborList> entries;
    for (const auto& [token, value] : doc.items()) {
        if (!value.is_array()) {
            throw DataError(file.string() + ": entry \"" + token + "\" must be an array");
        }
        NeighborList neighbors;
        neighbors.reserve(value.size());
        for (const auto& pair : value) {
            if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string() ||
                !pair[1].is_number()) {
                throw DataError(file.string() + ": entry \"" + token +
                                "\" must hold [concept, weight] pairs");
            }
            neighbors.emplace_back(pair[0].get<std::string>(), pair[1].get<double>());
        }
        entries.emplace(token, std::move(neighbors));
    }
    return entries;
}

void save_neighbor_map(const std::map<std::string, NeighborList>& entries,
                       const std::filesystem::path& file) {
    nlohmann::json doc = nlohmann::json::object();
    for (const auto& [token, neighbors] : entries) {
        nlohmann::json list = nlohmann::json::array();
        for (const auto& [phrase, weight] : neighbors) {
            list.push_back(nlohmann::json::array({phrase, weight}));
        }
        doc[token] = std::move(list);
    }
    if (file.has_parent_path()) {
        std::filesystem::create_directories(file.parent_path());
    }
    std::ofstream out(file);
    if (!out) {
        throw DataError("cannot write neighbor map: " + file.string());
    }
    out << doc.dump(2) << '\n';
    if (!out) {
        throw DataError("failed writing neighbor map: " + file.string());
    }
}

// ---------------------------------------------------------------------------
// FixtureBackend

FixtureBackend::FixtureBackend(const std::filesystem::path& file)
    : entries_(load_neighbor_map(file)) {}

FixtureBackend::FixtureBackend(std::map<std::string, NeighborList> entries)
    : entries_(std::move(entries)) {}

NeighborList FixtureBackend::neighbors(const std::string& token) {
    auto it = entries_.find(token);
    return it == entries_.end() ? NeighborList{} : it->second;
}

// ---------------------------------------------------------------------------
// HttpConceptBackend

namespace {

// The service names nodes /c/<lang>/<term>; a node matches the query term when
// its id is exactly that path or a sense-tagged extension of it (".../n").
bool node_matches(const nlohmann::json& node, const std::string& id_prefix) {
    if (!node.is_object() || !node.contains("@id") || !node["@id"].is_string()) {
        return false;
    }
    const auto id = node["@id"].get<std::string>();
    return id == id_prefix || id.rfind(id_prefix + "/", 0) == 0;
}

bool node_is_english(const nlohmann::json& node) {
    if (!node.is_object()) return false;
    if (node.contains("language") && node["language"].is_string()) {
        return node["language"].get<std::string>() == "en";
    }
    if (node.contains("@id") && node["@id"].is_string()) {
        return node["@id"].get<std::string>().rfind("/c/en/", 0) == 0;
    }
    return false;
}

std::string node_label(const nlohmann::json& node) {
    if (node.contains("label") && node["label"].is_string()) {
        return node["label"].get<std::string>();
    }
    // Fall back to the last id component with underscores opened up.
    std::string id = node.value("@id", std::string{});
    auto pos = id.find_last_of('/');
    std::string term = pos == std::string::npos ? id : id.substr(pos + 1);
    std::replace(term.begin(), term.end(), '_', ' ');
    return term;
}

} // namespace

HttpConceptBackend::HttpConceptBackend(HttpBackendConfig config) : config_(std::move(config)) {
    std::string rest = config_.endpoint;
    if (rest.rfind("http://", 0) == 0) {
        rest = rest.substr(7);
    } else if (rest.rfind("https://", 0) == 0) {
        throw BackendError("https endpoints are not supported by this build: " +
                           config_.endpoint);
    } else if (rest.find("://") != std::string::npos) {
        throw BackendError("unsupported endpoint scheme: " + config_.endpoint);
    }
    while (!rest.empty() && rest.back() == '/') {
        rest.pop_back();
    }
    if (auto slash = rest.find('/'); slash != std::string::npos) {
        throw BackendError("endpoint must not carry a path: " + config_.endpoint);
    }
    if (auto colon = rest.find(':'); colon != std::string::npos) {
        host_ = rest.substr(0, colon);
        try {
            port_ = std::stoi(rest.substr(colon + 1));
        } catch (const std::exception&) {
            throw BackendError("invalid endpoint port: " + config_.endpoint);
        }
    } else {
        host_ = rest;
        port_ = 80;
    }
    if (host_.empty()) {
        throw BackendError("empty endpoint host: " + config_.endpoint);
    }
    bucket_tokens_ = std::max(1.0, config_.requests_per_second);
    bucket_refill_ = std::chrono::steady_clock::now();
}

HttpConceptBackend::~HttpConceptBackend() = default;

std::string HttpConceptBackend::version() const {
    return "http/1 " + config_.endpoint + " limit=" + std::to_string(config_.edge_limit);
}

void HttpConceptBackend::rate_limit_acquire() {
    if (config_.requests_per_second <= 0.0) {
        return; // unlimited
    }
    const double capacity = std::max(1.0, config_.requests_per_second);
    for (;;) {
        const auto now = std::chrono::steady_clock::now();
        const double elapsed = std::chrono::duration<double>(now - bucket_refill_).count();
        bucket_refill_ = now;
        bucket_tokens_ =
            std::min(capacity, bucket_tokens_ + elapsed * config_.requests_per_second);
        if (bucket_tokens_ >= 1.0) {
            bucket_tokens_ -= 1.0;
            return;
        }
        const double wait_s = (1.0 - bucket_tokens_) / config_.requests_per_second;
        std::this_thread::sleep_for(std::chrono::duration<double>(wait_s));
    }
}

NeighborList HttpConceptBackend::neighbors(const std::string& token) {
    std::lock_guard lock(mutex_);
    const std::string node = "/c/en/" + token;
    const httplib::Params params{
        {"node", node},
        {"other", "/c/en"},
        {"limit", std::to_string(config_.edge_limit)},
    };

    std::string last_failure = "no attempt made";
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(
                std::chrono::milliseconds(config_.backoff_ms << (attempt - 1)));
        }
        rate_limit_acquire();

        httplib::Client client(host_, port_);
        client.set_connection_timeout(std::chrono::seconds(10));
        client.set_read_timeout(std::chrono::seconds(30));
        ++calls_;
        auto res = client.Get("/query", params, httplib::Headers{});
        if (!res) {
            last_failure = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_failure = "HTTP status " + std::to_string(res->status);
            continue;
        }

        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            last_failure = std::string("invalid JSON response: ") + e.what();
            continue;
        }
        if (!doc.is_object() || !doc.contains("edges") || !doc["edges"].is_array()) {
            last_failure = "response lacks an edges array";
            continue;
        }

        NeighborList neighbors;
        for (const auto& edge : doc["edges"]) {
            if (!edge.is_object() || !edge.contains("start") || !edge.contains("end")) {
                continue;
            }
            const auto& start = edge["start"];
            const auto& end = edge["end"];
            const nlohmann::json* other = nullptr;
            if (node_matches(start, node) && !node_matches(end, node)) {
                other = &end;
            } else if (node_matches(end, node) && !node_matches(start, node)) {
                other = &start;
            } else {
                continue; // self-loop or edge not anchored at the query node
            }
            if (!node_is_english(*other)) {
                continue;
            }
            const std::string label = text::lower(text::nfc(node_label(*other)));
            if (label.empty()) {
                continue;
            }
            neighbors.emplace_back(label, edge.value("weight", 1.0));
        }
        return neighbors;
    }
    throw BackendError("knowledge query for \"" + token + "\" failed after " +
                       std::to_string(config_.max_retries + 1) + " attempts (" + last_failure +
                       ")");
}

// ---------------------------------------------------------------------------
// CachingBackend

CachingBackend::CachingBackend(std::shared_ptr<ConceptBackend> inner,
                               std::filesystem::path cache_file)
    : inner_(std::move(inner)), cache_file_(std::move(cache_file)) {
    if (!inner_) {
        throw UsageError("CachingBackend requires a backend");
    }
    if (std::filesystem::exists(cache_file_)) {
        entries_ = load_neighbor_map(cache_file_);
    }
}

NeighborList CachingBackend::neighbors(const std::string& token) {
    std::lock_guard lock(mutex_);
    if (auto it = entries_.find(token); it != entries_.end()) {
        return it->second;
    }
    NeighborList fresh = inner_->neighbors(token);
    entries_.emplace(token, fresh); // an empty list is a cached "known absent"
    return fresh;
}

void CachingBackend::flush() const {
    std::lock_guard lock(mutex_);
    save_neighbor_map(entries_, cache_file_);
}

std::size_t CachingBackend::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

// ---------------------------------------------------------------------------
// ConceptClient

ConceptClient::ConceptClient(std::shared_ptr<ConceptBackend> backend)
    : backend_(std::move(backend)) {
    if (!backend_) {
        throw UsageError("ConceptClient requires a backend");
    }
}

std::optional<ConceptEntry> ConceptClient::fetch_concept(const std::string& token) const {
    if (token.empty()) {
        throw UsageError("fetch_concept: empty token");
    }
    if (is_stopword(token)) {
        throw UsageError("fetch_concept: stopword token \"" + token + "\"");
    }
    const NeighborList neighbors = backend_->neighbors(token);

    bool found = false;
    double best_weight = 0.0;
    std::vector<std::string> best_tokens;
    for (const auto& [phrase, weight] : neighbors) {
        auto tokens = text::split_whitespace(text::lower(text::nfc(phrase)));
        if (tokens.empty()) {
            continue;
        }
        if (!found || weight > best_weight) { // ties keep the earliest neighbor
            found = true;
            best_weight = weight;
            best_tokens = std::move(tokens);
        }
    }
    if (!found) {
        return std::nullopt;
    }
    return ConceptEntry{token, std::move(best_tokens), std::max(best_weight, kMinRelevance)};
}

ConceptLookup ConceptClient::enrich_tokens(const std::vector<std::string>& tokens) const {
    ConceptLookup lookup(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const std::string& token = tokens[i];
        if (token.empty() || is_stopword(token)) {
            continue;
        }
        try {
            lookup[i] = fetch_concept(token);
        } catch (const BackendError& e) {
            throw BackendError("token \"" + token + "\": " + e.what());
        }
    }
    return lookup;
}

// ---------------------------------------------------------------------------
// Missing-concept diagnostics

MissingReport diagnose_missing(const ConceptLookup& lookup,
                               const std::vector<std::string>& tokens) {
    if (lookup.size() != tokens.size()) {
        throw UsageError("diagnose_missing: lookup/token size mismatch");
    }
    MissingReport report;
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const std::string& token = tokens[i];
        if (token.empty() || is_stopword(token)) {
            continue;
        }
        ++report.queried;
        if (lookup[i].has_value()) {
            ++report.resolved;
        } else if (seen.insert(token).second) {
            report.missing_tokens.push_back(token);
        }
    }
    return report;
}

std::string format_missing_report(const MissingReport& report) {
    std::ostringstream out;
    out << "concept coverage: " << report.resolved << "/" << report.queried
        << " non-stopword tokens resolved";
    if (!report.missing_tokens.empty()) {
        out << "\nmissing: " << text::join(report.missing_tokens, ", ");
    }
    return out.str();
}

} // namespace sarcx::knowledge
