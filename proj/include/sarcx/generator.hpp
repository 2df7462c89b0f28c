#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sarcx/backbone.hpp"
#include "sarcx/corpus.hpp"
#include "sarcx/enrich.hpp"
#include "sarcx/fusion.hpp"
#include "sarcx/graph.hpp"
#include "sarcx/knowledge.hpp"
#include "sarcx/reasoner.hpp"
#include "sarcx/types.hpp"
#include "sarcx/visual.hpp"

namespace sarcx::generator {

// Exactly one variant is active per run. The two branch predicates control
// how Z is combined; the target predicates control sequence assembly.
enum class AblationVariant {
    full,
    minus_sf,
    minus_kg,
    minus_ts,
    minus_sf_ts,
    minus_kg_ts,
    plus_ts_concepts,
};

const char* to_string(AblationVariant v); // "full", "-SF", "-KG", ...
AblationVariant variant_from_string(const std::string& name);
const std::vector<AblationVariant>& all_variants();

bool uses_graph_branch(AblationVariant v);    // graph reasoning contributes to Z
bool uses_fusion_branch(AblationVariant v);   // shared fusion contributes to Z
bool uses_target(AblationVariant v);          // separator + target appended
bool uses_target_concepts(AblationVariant v); // target concepts appended too

struct PipelineConfig {
    int width = 768;       // D_f
    int max_tokens = 256;  // N (sequence budget and padded length)
    int patch_count = 50;  // m (visual rows before projection)
    int k_objects = 36;    // K
    int gcn_layers = 2;
    reasoner::Activation activation = reasoner::Activation::relu;
    fusion::AttentionScale attention_scale = fusion::AttentionScale::sqrt_dim;
    int backbone_layers = 2;
    int ffn_mult = 4;
    int max_target_tokens = 64; // explanation length budget
    AblationVariant variant = AblationVariant::full;

    std::string to_json() const;
    static PipelineConfig from_json(const std::string& json_text);
};

struct TrainConfig {
    double lr_backbone = 1e-4;
    double lr_pipeline = 1e-3; // graph reasoner, fusion, projection, mix weights
    int epochs = 20;
    int batch_size = 16;
    int max_steps = 0; // nonzero: stop after this many optimizer steps
    double weight_decay = 1e-2;
    std::uint64_t seed = 0;
    bool shuffle = true;
};

// A sample after enrichment/tokenization: everything the model consumes.
struct PreparedSample {
    std::string id;
    std::vector<int> input_ids; // enriched sequence, length <= max_tokens
    Matrix norm_adj;            // max_tokens x max_tokens
    Matrix visual;              // patch_count x width raw features
    std::vector<int> target_ids;
    std::vector<std::string> reference_tokens; // untruncated explanation tokens
};

struct Pipeline {
    PipelineConfig config;
    backbone::Tokenizer tokenizer;
    backbone::TinyBackbone net;
    reasoner::GcnConfig gcn_config;
    reasoner::GcnParams gcn;
    fusion::FusionParams fus;
    Matrix vis_proj; // max_tokens x patch_count

    static Pipeline init(const PipelineConfig& config, backbone::Tokenizer tokenizer,
                         std::uint64_t seed);

    // Trainable tensors by group (names are the checkpoint entry names).
    std::vector<nn::TensorView> backbone_params();
    std::vector<nn::TensorView> pipeline_params(); // active branches only
};

struct PipelineGrads {
    backbone::BackboneGrads net;
    std::vector<Matrix> gcn_weights;
    fusion::FusionGradients fus; // e_t/e_v members unused here
    Matrix vis_proj;

    static PipelineGrads zeros_like(const Pipeline& pipe);
    std::vector<nn::TensorView> backbone_views();
    std::vector<nn::TensorView> pipeline_views(AblationVariant variant);
};

// Encoder input: elementwise sum of the two branch outputs, or the
// surviving branch under the single-branch variants.
Matrix combine(const Matrix& h_l, const Matrix& f_sf, AblationVariant v);

// Forward intermediates for one sample (reused by the backward pass).
struct ForwardCaches {
    backbone::EncoderCache enc_context; // pass 1: contextual embeddings
    backbone::EncoderCache enc_fused;   // pass 2: encoder over Z
    backbone::DecoderCache dec;
    reasoner::GcnCache gcn;
    fusion::FusionCache fus;
    Matrix e_t, e_v, h_l, f_sf, z, memory;
    Matrix d_logits; // filled by the loss
    std::vector<int> dec_input, dec_target;
};

// Embedding -> contextual encoder -> active branches -> combine. The heart of
// the model; decoding and training both start here.
Matrix compute_z(Pipeline& pipe, const PreparedSample& sample, ForwardCaches* caches);

// Teacher-forced mean token cross-entropy for one sample.
double sample_loss(Pipeline& pipe, const PreparedSample& sample, ForwardCaches& caches);

// Accumulates gradients for one sample; `scale` multiplies the loss (use
// 1/batch for batch means). Requires the caches filled by sample_loss.
void sample_backward(Pipeline& pipe, const PreparedSample& sample, const ForwardCaches& caches,
                     double scale, PipelineGrads& grads);

struct TrainResult {
    std::vector<double> step_losses; // mean batch loss per optimizer step
    std::vector<double> epoch_losses;
};

TrainResult train(Pipeline& pipe, const std::vector<PreparedSample>& dataset,
                  const TrainConfig& config);

struct DecodeConfig {
    int beam = 4; // 1 = greedy
    int max_length = 64;
};

std::vector<std::string> generate_tokens(Pipeline& pipe, const PreparedSample& sample,
                                         const DecodeConfig& config);
std::string generate_explanation(Pipeline& pipe, const PreparedSample& sample,
                                 const DecodeConfig& config);

// Single-file checkpoint: JSON meta (config echo, tokenizer, caller metadata)
// plus named raw tensors; round-trips doubles exactly.
void save_checkpoint(const Pipeline& pipe, const std::filesystem::path& path,
                     const std::string& extra_meta_json = "{}");
Pipeline load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_meta(const std::filesystem::path& path);

// --- Sample preparation (integration over the upstream modules) -------------

struct EnrichmentResult {
    enrich::EnrichedSequence seq;
    std::vector<std::string> diagnostics;      // degraded visual extractions
    knowledge::MissingReport missing;          // tokens with no concepts
    std::vector<std::string> caption_tokens, description_tokens, object_tokens;
};

EnrichmentResult enrich_sample(const corpus::Sample& sample, visual::VisionBackend& vision,
                               const knowledge::ConceptClient& concepts,
                               const PipelineConfig& config);

PreparedSample prepare_sample(const corpus::Sample& sample, visual::VisionBackend& vision,
                              const knowledge::ConceptClient& concepts,
                              const backbone::Tokenizer& tokenizer,
                              const PipelineConfig& config);

// Deterministic vocabulary over the training split: enriched tokens (of the
// concept-richest variant, so every variant's tokens are covered) plus
// explanation tokens.
backbone::Tokenizer build_tokenizer(const std::vector<corpus::Sample>& samples,
                                    visual::VisionBackend& vision,
                                    const knowledge::ConceptClient& concepts,
                                    const PipelineConfig& config, std::size_t max_vocab = 0);

} // namespace sarcx::generator
