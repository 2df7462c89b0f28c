#pragma once

#include <string>
#include <vector>

#include "sarcx/rng.hpp"
#include "sarcx/types.hpp"

namespace sarcx::reasoner {

enum class Activation { relu, tanh, identity };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct GcnConfig {
    int layers = 2;   // L >= 1
    int width = 768;  // must match the embedding width
    Activation activation = Activation::relu;
};

struct GcnParams {
    std::vector<Matrix> weights; // W_1..W_L, each width x width

    // Fan-based uniform init in +-sqrt(6 / (2*width)), seeded.
    static GcnParams init(const GcnConfig& config, Rng& rng);
};

// Everything the backward pass needs: H_0..H_L plus each layer's
// pre-activation M_l = norm_adj * H_{l-1} * W_l.
struct GcnCache {
    std::vector<Matrix> h;
    std::vector<Matrix> pre;
};

// H_l = f(norm_adj * H_{l-1} * W_l), returns H_L. `cache` (optional) captures
// the intermediates for gcn_gradients and for layer-by-layer inspection.
Matrix gcn_forward(const Matrix& h0, const Matrix& norm_adj, const GcnParams& params,
                   const GcnConfig& config, GcnCache* cache = nullptr);

struct GcnGradients {
    std::vector<Matrix> weights; // dL/dW_l
    Matrix h0;                   // dL/dH_0
};

// Analytic gradients given dL/dH_L and the cached forward state.
GcnGradients gcn_gradients(const Matrix& d_hl, const Matrix& norm_adj, const GcnParams& params,
                           const GcnConfig& config, const GcnCache& cache);

} // namespace sarcx::reasoner
