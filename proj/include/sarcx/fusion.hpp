#pragma once

#include <string>

#include "sarcx/rng.hpp"
#include "sarcx/types.hpp"

namespace sarcx::fusion {

// The attention score divisor: sqrt(width) (standard scaled dot-product,
// default) or the raw width, for fidelity experiments.
enum class AttentionScale { sqrt_dim, raw_dim };

const char* to_string(AttentionScale s);
AttentionScale attention_scale_from_string(const std::string& name);

double scale_value(AttentionScale mode, int width);

// Per-modality self-attention projections. Row convention throughout: inputs
// are N x D_f with one token per row, so Q = E * wq^T etc.
struct AttentionParams {
    Matrix wq, wk, wv; // D_f x D_f
    double scale = 1.0;

    static AttentionParams init(int width, AttentionScale mode, Rng& rng);
};

struct GateParams {
    Matrix wv, wt; // D_f x D_f
    Vector bv, bt; // D_f

    static GateParams init(int width, Rng& rng);
};

// Four scalar mixing weights, initialized to an unbiased average.
struct MixWeights {
    double a1 = 0.25, a2 = 0.25, b1 = 0.25, b2 = 0.25;
};

struct FusionParams {
    AttentionParams text, vis;
    GateParams gate;
    MixWeights mix;

    static FusionParams init(int width, AttentionScale mode, Rng& rng);
};

// Every intermediate of the block, exposed for tests and reused as the
// backward cache.
struct FusionTensors {
    Matrix a_t, a_v;   // self-attended modalities
    Matrix f_vt, f_tv; // cross-amplified products
    Matrix g_v, g_t;   // gates, entries in (0,1)
    Matrix f1, f2;     // gated fusions of the two cross products
    Matrix f_v, f_t;   // gated unimodal/cross mixtures
    Matrix f_sf;       // final mix
};

struct FusionCache {
    Matrix e_t, e_v;
    Matrix q_t, k_t, v_t, p_t; // text attention internals (p = softmax rows)
    Matrix q_v, k_v, v_v, p_v;
    FusionTensors t;
};

// A = softmax(Q K^T / scale) V with row-max-stabilized softmax.
Matrix self_attend(const Matrix& e, const AttentionParams& params);

// F_vt = A_t (.) E_v and F_tv = A_v (.) E_t.
void cross_amplify(const Matrix& a_t, const Matrix& a_v, const Matrix& e_t, const Matrix& e_v,
                   Matrix& f_vt, Matrix& f_tv);

// Gates + the four mixtures:
//   G_v = sigmoid(E_v wv^T + bv),  G_t = sigmoid(E_t wt^T + bt)
//   F_1 = G_v(.)F_tv + (1-G_v)(.)F_vt,   F_2 = G_t(.)F_tv + (1-G_t)(.)F_vt
//   F_v = G_v(.)E_v + (1-G_v)(.)F_tv,    F_t = G_t(.)E_t + (1-G_t)(.)F_vt
//   F_SF = a1 F_1 + a2 F_2 + b1 F_v + b2 F_t
FusionTensors fuse(const Matrix& e_t, const Matrix& e_v, const Matrix& f_vt, const Matrix& f_tv,
                   const GateParams& gate, const MixWeights& mix);

// Whole block: self-attention on both modalities, cross amplification, gated
// fusion. `cache` must outlive the matching backward call.
FusionTensors shared_fusion_forward(const Matrix& e_t, const Matrix& e_v,
                                    const FusionParams& params, FusionCache* cache = nullptr);

struct AttentionGrads {
    Matrix wq, wk, wv;
};

struct FusionGradients {
    Matrix e_t, e_v; // gradients w.r.t. the block inputs
    AttentionGrads text, vis;
    Matrix gate_wv, gate_wt;
    Vector gate_bv, gate_bt;
    double a1 = 0.0, a2 = 0.0, b1 = 0.0, b2 = 0.0;
};

// Analytic backward of the whole block given dL/dF_SF.
FusionGradients shared_fusion_backward(const Matrix& d_fsf, const FusionParams& params,
                                       const FusionCache& cache);

} // namespace sarcx::fusion
