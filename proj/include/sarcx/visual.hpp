#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "sarcx/types.hpp"

namespace sarcx::visual {

// Defaults for the full-scale pipeline: 50 patch embeddings of width 768,
// projected to 256 rows, and up to 36 detected objects per image.
inline constexpr int kDefaultPatchCount = 50;
inline constexpr int kDefaultFeatureDim = 768;
inline constexpr int kDefaultTopK = 36;

// Natural-language description of an image, already tokenized in generation
// order.
struct ImageDescription {
    std::vector<std::string> tokens;

    bool operator==(const ImageDescription&) const = default;
};

struct ObjectLabel {
    std::string label;
    double confidence = 0.0; // in [0, 1]

    bool operator==(const ObjectLabel&) const = default;
};

// At most k_max labels, sorted by descending confidence (ties keep backend
// emission order). Duplicate labels are allowed: each detection is kept as a
// separate token source.
struct ObjectLabelSet {
    std::vector<ObjectLabel> labels;

    std::vector<std::string> label_tokens() const;
};

// Three granularities of visual semantics behind one interface. Instances
// must be reentrant (all methods here are const-free but implementations
// guard their own state); outputs are pure functions of (image_ref, config).
class VisionBackend {
public:
    virtual ~VisionBackend() = default;

    // Identifies the backend + parameters that change its answers; recorded
    // into enrichment output for provenance.
    virtual std::string version() const = 0;

    virtual ImageDescription describe(const std::string& image_ref) = 0;

    // Raw candidate detections in emission order, confidences in [0, 1];
    // callers clip to top-K via detect_objects().
    virtual std::vector<ObjectLabel> objects(const std::string& image_ref) = 0;

    // Dense patch features, m x D_f.
    virtual Matrix embed(const std::string& image_ref) = 0;

    virtual std::size_t transport_calls() const { return 0; }
};

// Deterministic offline backend: every answer is a pure function of
// hash(image_ref) ^ seed, so repeat calls are byte-identical and distinct
// refs (almost surely) differ.
struct StubVisionConfig {
    std::uint64_t seed = 0;
    int patch_count = kDefaultPatchCount; // m
    int feature_dim = kDefaultFeatureDim; // D_f
    int candidate_objects = 40;           // emitted before top-K clipping
};

class StubVisionBackend : public VisionBackend {
public:
    explicit StubVisionBackend(StubVisionConfig config = {});

    std::string version() const override;
    ImageDescription describe(const std::string& image_ref) override;
    std::vector<ObjectLabel> objects(const std::string& image_ref) override;
    Matrix embed(const std::string& image_ref) override;

private:
    StubVisionConfig config_;
};

// Client for an extraction service exposing POST /describe, /objects, /embed
// with a JSON body {"image_ref": ...}; see README for the response shapes.
struct HttpVisionConfig {
    std::string endpoint = "http://127.0.0.1:8601";
    int max_retries = 3;
    int backoff_ms = 250;
};

class HttpVisionBackend : public VisionBackend {
public:
    explicit HttpVisionBackend(HttpVisionConfig config);

    std::string version() const override;
    ImageDescription describe(const std::string& image_ref) override;
    std::vector<ObjectLabel> objects(const std::string& image_ref) override;
    Matrix embed(const std::string& image_ref) override;
    std::size_t transport_calls() const override { return calls_; }

private:
    std::string request(const std::string& route, const std::string& image_ref);

    HttpVisionConfig config_;
    std::string host_;
    int port_ = 80;
    std::size_t calls_ = 0;
    std::mutex mutex_;
};

// Read-through cache: one JSON file per image under cache_dir, keyed by the
// image content hash (or the ref string when no such file exists) plus the
// inner backend version. Safe for concurrent use.
class CachingVisionBackend : public VisionBackend {
public:
    CachingVisionBackend(std::shared_ptr<VisionBackend> inner, std::filesystem::path cache_dir);

    std::string version() const override { return inner_->version(); }
    ImageDescription describe(const std::string& image_ref) override;
    std::vector<ObjectLabel> objects(const std::string& image_ref) override;
    Matrix embed(const std::string& image_ref) override;
    std::size_t transport_calls() const override { return inner_->transport_calls(); }

    std::filesystem::path cache_path(const std::string& image_ref) const;

private:
    std::shared_ptr<VisionBackend> inner_;
    std::filesystem::path cache_dir_;
    std::mutex mutex_;
};

// --- Operations ------------------------------------------------------------

// Tokenized description; empty only if the backend emits nothing.
ImageDescription describe_image(const std::string& image_ref, VisionBackend& backend);

// Top k_max candidates by descending confidence; ties keep emission order.
ObjectLabelSet detect_objects(const std::string& image_ref, int k_max, VisionBackend& backend);

// m x D_f patch features; throws BackendError on non-finite entries.
Matrix embed_image(const std::string& image_ref, VisionBackend& backend);

// Sequence-axis resampling: proj (N x m) times features (m x D_f) -> N x D_f.
Matrix project_visual(const Matrix& features, const Matrix& proj);

// One-stop extraction with the documented degradation policy: description and
// object failures degrade to empty outputs with a diagnostic line; embedding
// failures propagate (downstream fusion cannot run without features).
struct Extraction {
    ImageDescription description;
    ObjectLabelSet objects;
    Matrix features;
    std::vector<std::string> diagnostics;
};

Extraction extract_all(const std::string& image_ref, int k_max, VisionBackend& backend);

} // namespace sarcx::visual
