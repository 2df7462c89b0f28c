#include "sarcx/reasoner.hpp"

#include <cmath>
#include <string>

#include "sarcx/error.hpp"

namespace sarcx::reasoner {

const char* to_string(Activation a) {
    switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
    }
    return "unknown";
}

Activation activation_from_string(const std::string& name) {
    if (name == "relu") return Activation::relu;
    if (name == "tanh") return Activation::tanh;
    if (name == "identity") return Activation::identity;
    throw UsageError("unknown activation: \"" + name + "\" (relu|tanh|identity)");
}

GcnParams GcnParams::init(const GcnConfig& config, Rng& rng) {
    if (config.layers < 1 || config.width < 1) {
        throw UsageError("GcnParams::init: layers and width must be positive");
    }
    const double bound = std::sqrt(6.0 / (2.0 * config.width));
    GcnParams params;
    params.weights.reserve(static_cast<std::size_t>(config.layers));
    for (int l = 0; l < config.layers; ++l) {
        Matrix w(config.width, config.width);
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) {
                w(r, c) = rng.uniform(-bound, bound);
            }
        }
        params.weights.push_back(std::move(w));
    }
    return params;
}

namespace {

Matrix activate(const Matrix& m, Activation a) {
    switch (a) {
    case Activation::relu: return m.cwiseMax(0.0);
    case Activation::tanh: return m.array().tanh().matrix();
    case Activation::identity: return m;
    }
    throw UsageError("unknown activation");
}

// f'(pre), expressed with the cached pre-activation (and post for tanh).
Matrix activate_grad(const Matrix& pre, const Matrix& post, Activation a) {
    switch (a) {
    case Activation::relu:
        return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::tanh:
        return (1.0 - post.array().square()).matrix();
    case Activation::identity:
        return Matrix::Ones(pre.rows(), pre.cols());
    }
    throw UsageError("unknown activation");
}

void check_shapes(const Matrix& h0, const Matrix& norm_adj, const GcnParams& params,
                  const GcnConfig& config) {
    if (h0.cols() != config.width) {
        throw UsageError("gcn: H_0 width does not match config width");
    }
    if (norm_adj.rows() != norm_adj.cols() || norm_adj.rows() != h0.rows()) {
        throw UsageError("gcn: adjacency must be square and match H_0 rows");
    }
    if (params.weights.size() != static_cast<std::size_t>(config.layers)) {
        throw UsageError("gcn: parameter count does not match config layers");
    }
    for (const auto& w : params.weights) {
        if (w.rows() != config.width || w.cols() != config.width) {
            throw UsageError("gcn: weight matrix is not width x width");
        }
    }
}

} // namespace

Matrix gcn_forward(const Matrix& h0, const Matrix& norm_adj, const GcnParams& params,
                   const GcnConfig& config, GcnCache* cache) {
    check_shapes(h0, norm_adj, params, config);
    if (cache != nullptr) {
        cache->h.clear();
        cache->pre.clear();
        cache->h.push_back(h0);
    }
    Matrix h = h0;
    for (int l = 0; l < config.layers; ++l) {
        Matrix pre = norm_adj * h * params.weights[static_cast<std::size_t>(l)];
        h = activate(pre, config.activation);
        if (!h.allFinite()) {
            throw DataError("gcn_forward: non-finite values at layer " + std::to_string(l + 1));
        }
        if (cache != nullptr) {
            cache->pre.push_back(std::move(pre));
            cache->h.push_back(h);
        }
    }
    return h;
}

GcnGradients gcn_gradients(const Matrix& d_hl, const Matrix& norm_adj, const GcnParams& params,
                           const GcnConfig& config, const GcnCache& cache) {
    if (cache.h.size() != static_cast<std::size_t>(config.layers) + 1 ||
        cache.pre.size() != static_cast<std::size_t>(config.layers)) {
        throw UsageError("gcn_gradients: forward cache missing or stale");
    }
    check_shapes(cache.h.front(), norm_adj, params, config);
    if (d_hl.rows() != cache.h.back().rows() || d_hl.cols() != cache.h.back().cols()) {
        throw UsageError("gcn_gradients: upstream gradient shape mismatch");
    }

    GcnGradients grads;
    grads.weights.assign(params.weights.size(), Matrix());

    // H_l = f(M_l), M_l = S H_{l-1} W_l with S symmetric:
    //   dM_l      = dH_l (.) f'(M_l)
    //   dW_l      = (S H_{l-1})^T dM_l
    //   dH_{l-1}  = S^T dM_l W_l^T
    Matrix dh = d_hl;
    for (int l = config.layers - 1; l >= 0; --l) {
        const auto li = static_cast<std::size_t>(l);
        const Matrix dm =
            dh.cwiseProduct(activate_grad(cache.pre[li], cache.h[li + 1], config.activation));
        grads.weights[li] = (norm_adj * cache.h[li]).transpose() * dm;
        dh = norm_adj.transpose() * dm * params.weights[li].transpose();
    }
    grads.h0 = std::move(dh);
    return grads;
}

} // namespace sarcx::reasoner
