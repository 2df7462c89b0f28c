#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "sarcx/nn.hpp"
#include "sarcx/rng.hpp"
#include "sarcx/types.hpp"

namespace sarcx::backbone {

// Word-level tokenizer with four reserved ids. <sep> doubles as the
// end-of-sequence marker and as the knowledge/target separator, matching the
// reserved token used by the enrichment stage.
struct Tokenizer {
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kSep = 2;
    static constexpr int kUnk = 3;

    std::vector<std::string> id_to_token;
    std::unordered_map<std::string, int> token_to_id;

    // Vocabulary = reserved ids + corpus tokens by descending frequency
    // (ties broken lexicographically), truncated to max_vocab when nonzero.
    static Tokenizer build(const std::vector<std::vector<std::string>>& corpora,
                           std::size_t max_vocab = 0);

    int size() const { return static_cast<int>(id_to_token.size()); }
    int id(const std::string& token) const;
    std::vector<int> encode(const std::vector<std::string>& tokens) const;
    // Drops reserved ids; inverse of encode for in-vocabulary tokens.
    std::vector<std::string> decode_ids(const std::vector<int>& ids) const;

    std::string to_json() const;
    static Tokenizer from_json(const std::string& json_text);
};

struct BackboneConfig {
    int vocab = 0;
    int width = 32;
    int layers = 2;
    int ffn_mult = 4;
    int max_positions = 256;        // encoder sequence length (padded)
    int max_target_positions = 64;  // decoder length budget (excl. start row)
};

// --- Parameter blocks (also reused as gradient accumulators) ---------------

struct Norm {
    Vector gamma, beta;
};

struct AttnBlock {
    Matrix wq, wk, wv, wo; // width x width
};

struct FfnBlock {
    Matrix w1; // hidden x width
    Vector b1;
    Matrix w2; // width x hidden
    Vector b2;
};

struct EncoderLayer {
    Norm ln1;
    AttnBlock attn;
    Norm ln2;
    FfnBlock ffn;
};

struct DecoderLayer {
    Norm ln1;
    AttnBlock self_attn;
    Norm ln2;
    AttnBlock cross_attn;
    Norm ln3;
    FfnBlock ffn;
};

// --- Forward caches ----------------------------------------------------------

struct NormCache {
    Matrix x, x_hat;
    Vector inv_std;
};

struct AttnCache {
    Matrix q, k, v, p, ctx;
};

struct FfnCache {
    Matrix x, h_pre, h;
};

struct EncoderLayerCache {
    NormCache ln1;
    AttnCache attn;
    Matrix ln1_out;
    NormCache ln2;
    FfnCache ffn;
};

struct EncoderCache {
    std::vector<EncoderLayerCache> layers;
    NormCache final_ln;
};

struct DecoderLayerCache {
    NormCache ln1;
    AttnCache self_attn;
    Matrix ln1_out;
    NormCache ln2;
    AttnCache cross;
    Matrix ln2_out;
    NormCache ln3;
    FfnCache ffn;
};

struct DecoderCache {
    Matrix dec_input; // embedded decoder input (for embedding backward)
    Matrix memory;    // encoder output the cross-attention consumed
    std::vector<DecoderLayerCache> layers;
    NormCache final_ln;
    Matrix final_out; // post-LN activations feeding the lm head
};

// Pre-LN single-head encoder-decoder transformer over real-valued rows.
// The encoder runs on any N x width matrix, so externally fused
// representations can replace the embedded input wholesale. Attention is
// full (no padding mask): padded positions carry deterministic embeddings.
struct TinyBackbone {
    BackboneConfig config;
    Matrix tok_embed; // vocab x width (shared encoder/decoder input table)
    Matrix pos_enc;   // max_positions x width
    Matrix pos_dec;   // (max_target_positions + 1) x width
    std::vector<EncoderLayer> enc_layers;
    Norm enc_ln;
    std::vector<DecoderLayer> dec_layers;
    Norm dec_ln;
    Matrix lm_head; // vocab x width

    static TinyBackbone init(const BackboneConfig& config, Rng& rng);

    // Token + learned position embeddings, padded/truncated to exactly
    // max_positions rows (pad id fills the tail).
    Matrix embed_sequence(const std::vector<int>& ids) const;
    Matrix encode(const Matrix& input, EncoderCache* cache = nullptr) const;
    // Teacher-forced decoder: rows = embedded dec_input_ids; returns logits
    // (len x vocab).
    Matrix decode(const Matrix& memory, const std::vector<int>& dec_input_ids,
                  DecoderCache* cache = nullptr) const;

    // Backward passes mirror the forwards; gradients accumulate into `grads`.
    void embed_backward(const Matrix& d_embed, const std::vector<int>& ids,
                        struct BackboneGrads& grads) const;
    Matrix encode_backward(const Matrix& d_out, const EncoderCache& cache,
                           struct BackboneGrads& grads) const;
    // Returns d_memory; decoder input embedding gradients go to tok_embed/pos_dec.
    Matrix decode_backward(const Matrix& d_logits, const std::vector<int>& dec_input_ids,
                           const DecoderCache& cache, struct BackboneGrads& grads) const;

    // Trainable tensors in a fixed traversal order (same order as grads).
    void collect_views(const std::string& prefix, std::vector<nn::TensorView>& out);
};

struct BackboneGrads {
    Matrix tok_embed, pos_enc, pos_dec, lm_head;
    std::vector<EncoderLayer> enc_layers;
    Norm enc_ln;
    std::vector<DecoderLayer> dec_layers;
    Norm dec_ln;

    static BackboneGrads zeros_like(const TinyBackbone& net);
    void collect_views(const std::string& prefix, std::vector<nn::TensorView>& out);
};

// Mean token cross-entropy over logit rows; optionally emits d_logits
// (already scaled by 1/rows).
double cross_entropy(const Matrix& logits, const std::vector<int>& targets, Matrix* d_logits);

} // namespace sarcx::backbone
