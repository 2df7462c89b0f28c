#include "sarcx/visual.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "sarcx/error.hpp"
#include "sarcx/rng.hpp"

namespace sarcx::visual {

std::vector<std::string> ObjectLabelSet::label_tokens() const {
    std::vector<std::string> tokens;
    tokens.reserve(labels.size());
    for (const auto& l : labels) {
        tokens.push_back(l.label);
    }
    return tokens;
}

// ---------------------------------------------------------------------------
// Operations

ImageDescription describe_image(const std::string& image_ref, VisionBackend& backend) {
    return backend.describe(image_ref);
}

ObjectLabelSet detect_objects(const std::string& image_ref, int k_max, VisionBackend& backend) {
    if (k_max < 0) {
        throw UsageError("detect_objects: k_max must be >= 0");
    }
    std::vector<ObjectLabel> candidates = backend.objects(image_ref);
    for (const auto& c : candidates) {
        if (!(c.confidence >= 0.0 && c.confidence <= 1.0)) {
            throw BackendError("detect_objects: confidence outside [0,1] for label \"" +
                               c.label + "\"");
        }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const ObjectLabel& a, const ObjectLabel& b) {
                         return a.confidence > b.confidence;
                     });
    if (candidates.size() > static_cast<std::size_t>(k_max)) {
        candidates.resize(static_cast<std::size_t>(k_max));
    }
    return ObjectLabelSet{std::move(candidates)};
}

Matrix embed_image(const std::string& image_ref, VisionBackend& backend) {
    Matrix features = backend.embed(image_ref);
    if (!features.allFinite()) {
        throw BackendError("embed_image: non-finite features for \"" + image_ref + "\"");
    }
    return features;
}

Matrix project_visual(const Matrix& features, const Matrix& proj) {
    if (proj.cols() != features.rows()) {
        std::ostringstream msg;
        msg << "project_visual: projection is " << proj.rows() << "x" << proj.cols()
            << " but features have " << features.rows() << " rows";
        throw UsageError(msg.str());
    }
    return proj * features;
}

Extraction extract_all(const std::string& image_ref, int k_max, VisionBackend& backend) {
    Extraction out;
    try {
        out.description = describe_image(image_ref, backend);
    } catch (const Error& e) {
        out.diagnostics.push_back("description unavailable for \"" + image_ref +
                                  "\": " + e.what());
    }
    try {
        out.objects = detect_objects(image_ref, k_max, backend);
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::usage) {
            throw; // bad k_max is a caller bug, not a backend degradation
        }
        out.diagnostics.push_back("objects unavailable for \"" + image_ref + "\": " + e.what());
    }
    out.features = embed_image(image_ref, backend); // failures propagate
    return out;
}

// ---------------------------------------------------------------------------
// StubVisionBackend

namespace {

// Small scene vocabulary for the deterministic stub. Concrete nouns only, so
// fixture knowledge maps can attach concepts to them.
constexpr std::array<const char*, 24> kStubNouns = {
    "street", "dog",    "car",   "tree",   "person", "building", "sky",   "food",
    "table",  "sign",   "water", "grass",  "phone",  "window",   "light", "bicycle",
    "train",  "bridge", "cup",   "jacket", "cloud",  "road",     "chair", "bag",
};

constexpr std::array<const char*, 8> kStubRelations = {
    "near", "beside", "under", "above", "behind", "facing", "holding", "passing",
};

} // namespace

StubVisionBackend::StubVisionBackend(StubVisionConfig config) : config_(config) {
    if (config_.patch_count <= 0 || config_.feature_dim <= 0 || config_.candidate_objects < 0) {
        throw UsageError("StubVisionBackend: dimensions must be positive");
    }
}

std::string StubVisionBackend::version() const {
    std::ostringstream out;
    out << "stub/1 m=" << config_.patch_count << " df=" << config_.feature_dim
        << " cand=" << config_.candidate_objects << " seed=" << config_.seed;
    return out.str();
}

ImageDescription StubVisionBackend::describe(const std::string& image_ref) {
    Rng rng(hash64(image_ref) ^ config_.seed ^ hash64("describe"));
    // "a <noun> <relation> a <noun> [<relation> a <noun>]" — plausible token
    // mix of stopwords and content words.
    const std::size_t clauses = 1 + rng.uniform_index(2);
    ImageDescription description;
    description.tokens.emplace_back("a");
    description.tokens.emplace_back(kStubNouns[rng.uniform_index(kStubNouns.size())]);
    for (std::size_t i = 0; i < clauses; ++i) {
        description.tokens.emplace_back(kStubRelations[rng.uniform_index(kStubRelations.size())]);
        description.tokens.emplace_back("a");
        description.tokens.emplace_back(kStubNouns[rng.uniform_index(kStubNouns.size())]);
    }
    return description;
}

std::vector<ObjectLabel> StubVisionBackend::objects(const std::string& image_ref) {
    Rng rng(hash64(image_ref) ^ config_.seed ^ hash64("objects"));
    std::vector<ObjectLabel> out;
    out.reserve(static_cast<std::size_t>(config_.candidate_objects));
    for (int i = 0; i < config_.candidate_objects; ++i) {
        ObjectLabel label;
        label.label = kStubNouns[rng.uniform_index(kStubNouns.size())];
        label.confidence = rng.uniform();
        out.push_back(std::move(label));
    }
    return out;
}

Matrix StubVisionBackend::embed(const std::string& image_ref) {
    Rng rng(hash64(image_ref) ^ config_.seed ^ hash64("embed"));
    Matrix features(config_.patch_count, config_.feature_dim);
    for (Eigen::Index r = 0; r < features.rows(); ++r) {
        for (Eigen::Index c = 0; c < features.cols(); ++c) {
            features(r, c) = rng.normal();
        }
    }
    return features;
}

// ---------------------------------------------------------------------------
// HttpVisionBackend

HttpVisionBackend::HttpVisionBackend(HttpVisionConfig config) : config_(std::move(config)) {
    std::string rest = config_.endpoint;
    if (rest.rfind("http://", 0) == 0) {
        rest = rest.substr(7);
    } else if (rest.find("://") != std::string::npos) {
        throw BackendError("unsupported vision endpoint scheme: " + config_.endpoint);
    }
    while (!rest.empty() && rest.back() == '/') {
        rest.pop_back();
    }
    if (auto colon = rest.find(':'); colon != std::string::npos) {
        host_ = rest.substr(0, colon);
        try {
            port_ = std::stoi(rest.substr(colon + 1));
        } catch (const std::exception&) {
            throw BackendError("invalid vision endpoint port: " + config_.endpoint);
        }
    } else {
        host_ = rest;
        port_ = 80;
    }
    if (host_.empty()) {
        throw BackendError("empty vision endpoint host: " + config_.endpoint);
    }
}

std::string HttpVisionBackend::version() const {
    return "http-vision/1 " + config_.endpoint;
}

std::string HttpVisionBackend::request(const std::string& route, const std::string& image_ref) {
    std::lock_guard lock(mutex_);
    const std::string body = nlohmann::json{{"image_ref", image_ref}}.dump();

    std::string last_failure = "no attempt made";
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(
                std::chrono::milliseconds(config_.backoff_ms << (attempt - 1)));
        }
        httplib::Client client(host_, port_);
        client.set_connection_timeout(std::chrono::seconds(10));
        client.set_read_timeout(std::chrono::seconds(60));
        ++calls_;
        auto res = client.Post(route, body, "application/json");
        if (!res) {
            last_failure = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_failure = "HTTP status " + std::to_string(res->status);
            continue;
        }
        return res->body;
    }
    throw BackendError("vision request " + route + " for \"" + image_ref + "\" failed after " +
                       std::to_string(config_.max_retries + 1) + " attempts (" + last_failure +
                       ")");
}

ImageDescription HttpVisionBackend::describe(const std::string& image_ref) {
    const std::string body = request("/describe", image_ref);
    try {
        auto doc = nlohmann::json::parse(body);
        ImageDescription out;
        out.tokens = doc.at("tokens").get<std::vector<std::string>>();
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("malformed /describe response: ") + e.what());
    }
}

std::vector<ObjectLabel> HttpVisionBackend::objects(const std::string& image_ref) {
    const std::string body = request("/objects", image_ref);
    try {
        auto doc = nlohmann::json::parse(body);
        std::vector<ObjectLabel> out;
        for (const auto& item : doc.at("objects")) {
            out.push_back(
                ObjectLabel{item.at(0).get<std::string>(), item.at(1).get<double>()});
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("malformed /objects response: ") + e.what());
    }
}

Matrix HttpVisionBackend::embed(const std::string& image_ref) {
    const std::string body = request("/embed", image_ref);
    try {
        auto doc = nlohmann::json::parse(body);
        const auto rows = doc.at("rows").get<Eigen::Index>();
        const auto cols = doc.at("cols").get<Eigen::Index>();
        const auto data = doc.at("data").get<std::vector<double>>();
        if (rows <= 0 || cols <= 0 ||
            data.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
            throw BackendError("malformed /embed response: shape/data mismatch");
        }
        Matrix features(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) {
                features(r, c) = data[static_cast<std::size_t>(r) * cols + c];
            }
        }
        return features;
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("malformed /embed response: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// CachingVisionBackend

namespace {

std::uint64_t image_key(const std::string& image_ref) {
    std::error_code ec;
    if (std::filesystem::is_regular_file(image_ref, ec)) {
        std::ifstream in(image_ref, std::ios::binary);
        if (in) {
            std::ostringstream bytes;
            bytes << in.rdbuf();
            return hash64(bytes.str());
        }
    }
    return hash64(image_ref);
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

} // namespace

CachingVisionBackend::CachingVisionBackend(std::shared_ptr<VisionBackend> inner,
                                           std::filesystem::path cache_dir)
    : inner_(std::move(inner)), cache_dir_(std::move(cache_dir)) {
    if (!inner_) {
        throw UsageError("CachingVisionBackend requires a backend");
    }
    std::filesystem::create_directories(cache_dir_);
}

std::filesystem::path CachingVisionBackend::cache_path(const std::string& image_ref) const {
    // Key covers image content and backend version so stale entries never
    // survive a backend change.
    const std::uint64_t key = image_key(image_ref) ^ hash64(inner_->version());
    return cache_dir_ / (hex64(key) + ".json");
}

namespace {

nlohmann::json load_cache_entry(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        return nlohmann::json::object();
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception&) {
        return nlohmann::json::object(); // corrupt cache entries are re-fetched
    }
}

void store_cache_entry(const std::filesystem::path& path, const nlohmann::json& doc) {
    std::ofstream out(path);
    if (out) {
        out << doc.dump() << '\n';
    }
}

} // namespace

ImageDescription CachingVisionBackend::describe(const std::string& image_ref) {
    std::lock_guard lock(mutex_);
    const auto path = cache_path(image_ref);
    nlohmann::json doc = load_cache_entry(path);
    if (doc.contains("description") && doc["description"].is_array()) {
        return ImageDescription{doc["description"].get<std::vector<std::string>>()};
    }
    ImageDescription fresh = inner_->describe(image_ref);
    doc["description"] = fresh.tokens;
    store_cache_entry(path, doc);
    return fresh;
}

std::vector<ObjectLabel> CachingVisionBackend::objects(const std::string& image_ref) {
    std::lock_guard lock(mutex_);
    const auto path = cache_path(image_ref);
    nlohmann::json doc = load_cache_entry(path);
    if (doc.contains("objects") && doc["objects"].is_array()) {
        std::vector<ObjectLabel> out;
        for (const auto& item : doc["objects"]) {
            out.push_back(
                ObjectLabel{item.at(0).get<std::string>(), item.at(1).get<double>()});
        }
        return out;
    }
    std::vector<ObjectLabel> fresh = inner_->objects(image_ref);
    nlohmann::json list = nlohmann::json::array();
    for (const auto& label : fresh) {
        list.push_back(nlohmann::json::array({label.label, label.confidence}));
    }
    doc["objects"] = std::move(list);
    store_cache_entry(path, doc);
    return fresh;
}

Matrix CachingVisionBackend::embed(const std::string& image_ref) {
    std::lock_guard lock(mutex_);
    const auto path = cache_path(image_ref);
    nlohmann::json doc = load_cache_entry(path);
    if (doc.contains("embedding") && doc["embedding"].is_object()) {
        const auto& entry = doc["embedding"];
        const auto rows = entry.at("rows").get<Eigen::Index>();
        const auto cols = entry.at("cols").get<Eigen::Index>();
        const auto data = entry.at("data").get<std::vector<double>>();
        if (rows > 0 && cols > 0 &&
            data.size() == static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
            Matrix features(rows, cols);
            for (Eigen::Index r = 0; r < rows; ++r) {
                for (Eigen::Index c = 0; c < cols; ++c) {
                    features(r, c) = data[static_cast<std::size_t>(r) * cols + c];
                }
            }
            return features;
        }
    }
    Matrix fresh = inner_->embed(image_ref);
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(fresh.size()));
    for (Eigen::Index r = 0; r < fresh.rows(); ++r) {
        for (Eigen::Index c = 0; c < fresh.cols(); ++c) {
            data.push_back(fresh(r, c));
        }
    }
    doc["embedding"] = {{"rows", fresh.rows()}, {"cols", fresh.cols()}, {"data", data}};
    store_cache_entry(path, doc);
    return fresh;
}

} // namespace sarcx::visual
