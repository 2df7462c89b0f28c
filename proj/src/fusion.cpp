#include "sarcx/fusion.hpp"

#include <cmath>

#include "sarcx/error.hpp"
#include "sarcx/nn.hpp"

namespace sarcx::fusion {

const char* to_string(AttentionScale s) {
    return s == AttentionScale::sqrt_dim ? "sqrt_dim" : "raw_dim";
}

AttentionScale attention_scale_from_string(const std::string& name) {
    if (name == "sqrt_dim" || name == "sqrt") return AttentionScale::sqrt_dim;
    if (name == "raw_dim" || name == "dim" || name == "raw") return AttentionScale::raw_dim;
    throw UsageError("unknown attention scale: \"" + name + "\" (sqrt|dim)");
}

double scale_value(AttentionScale mode, int width) {
    if (width < 1) {
        throw UsageError("attention scale: width must be positive");
    }
    return mode == AttentionScale::sqrt_dim ? std::sqrt(static_cast<double>(width))
                                            : static_cast<double>(width);
}

namespace {

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = rng.uniform(-bound, bound);
        }
    }
    return m;
}

} // namespace

AttentionParams AttentionParams::init(int width, AttentionScale mode, Rng& rng) {
    const double bound = std::sqrt(6.0 / (2.0 * width));
    AttentionParams p;
    p.wq = uniform_matrix(width, width, bound, rng);
    p.wk = uniform_matrix(width, width, bound, rng);
    p.wv = uniform_matrix(width, width, bound, rng);
    p.scale = scale_value(mode, width);
    return p;
}

GateParams GateParams::init(int width, Rng& rng) {
    const double bound = std::sqrt(6.0 / (2.0 * width));
    GateParams p;
    p.wv = uniform_matrix(width, width, bound, rng);
    p.wt = uniform_matrix(width, width, bound, rng);
    p.bv = Vector::Zero(width);
    p.bt = Vector::Zero(width);
    return p;
}

FusionParams FusionParams::init(int width, AttentionScale mode, Rng& rng) {
    FusionParams p;
    p.text = AttentionParams::init(width, mode, rng);
    p.vis = AttentionParams::init(width, mode, rng);
    p.gate = GateParams::init(width, rng);
    return p;
}

namespace {

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw UsageError(std::string("fusion: shape mismatch in ") + what);
    }
}

void check_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) {
        throw DataError(std::string("fusion: non-finite values in ") + what);
    }
}

struct AttentionRun {
    Matrix q, k, v, p, a;
};

AttentionRun attend(const Matrix& e, const AttentionParams& params) {
    AttentionRun run;
    run.q = e * params.wq.transpose();
    run.k = e * params.wk.transpose();
    run.v = e * params.wv.transpose();
    run.p = nn::softmax_rows(run.q * run.k.transpose() / params.scale);
    run.a = run.p * run.v;
    return run;
}

// Backward of a = softmax(q k^T / s) v; accumulates into de and the grads.
void attend_backward(const Matrix& da, const Matrix& e, const AttentionRun& run,
                     const AttentionParams& params, Matrix& de, AttentionGrads& grads) {
    const Matrix dp = da * run.v.transpose();
    const Matrix dv = run.p.transpose() * da;
    const Matrix ds = nn::softmax_rows_backward(run.p, dp);
    const Matrix dq = ds * run.k / params.scale;
    const Matrix dk = ds.transpose() * run.q / params.scale;
    grads.wq = dq.transpose() * e;
    grads.wk = dk.transpose() * e;
    grads.wv = dv.transpose() * e;
    de += dq * params.wq + dk * params.wk + dv * params.wv;
}

} // namespace

Matrix self_attend(const Matrix& e, const AttentionParams& params) {
    check_finite(e, "self_attend input");
    if (params.wq.rows() != e.cols()) {
        throw UsageError("self_attend: projection width does not match input");
    }
    return attend(e, params).a;
}

void cross_amplify(const Matrix& a_t, const Matrix& a_v, const Matrix& e_t, const Matrix& e_v,
                   Matrix& f_vt, Matrix& f_tv) {
    check_same_shape(a_t, e_v, "cross_amplify (A_t vs E_v)");
    check_same_shape(a_v, e_t, "cross_amplify (A_v vs E_t)");
    f_vt = a_t.cwiseProduct(e_v);
    f_tv = a_v.cwiseProduct(e_t);
}

FusionTensors fuse(const Matrix& e_t, const Matrix& e_v, const Matrix& f_vt, const Matrix& f_tv,
                   const GateParams& gate, const MixWeights& mix) {
    check_same_shape(e_t, e_v, "fuse (E_t vs E_v)");
    check_same_shape(f_vt, f_tv, "fuse (F_vt vs F_tv)");
    check_same_shape(e_t, f_vt, "fuse (inputs vs products)");

    FusionTensors t;
    t.f_vt = f_vt;
    t.f_tv = f_tv;
    t.g_v = nn::sigmoid((e_v * gate.wv.transpose()).rowwise() + gate.bv.transpose());
    t.g_t = nn::sigmoid((e_t * gate.wt.transpose()).rowwise() + gate.bt.transpose());

    const Matrix ones = Matrix::Ones(e_t.rows(), e_t.cols());
    t.f1 = t.g_v.cwiseProduct(f_tv) + (ones - t.g_v).cwiseProduct(f_vt);
    t.f2 = t.g_t.cwiseProduct(f_tv) + (ones - t.g_t).cwiseProduct(f_vt);
    t.f_v = t.g_v.cwiseProduct(e_v) + (ones - t.g_v).cwiseProduct(f_tv);
    t.f_t = t.g_t.cwiseProduct(e_t) + (ones - t.g_t).cwiseProduct(f_vt);
    t.f_sf = mix.a1 * t.f1 + mix.a2 * t.f2 + mix.b1 * t.f_v + mix.b2 * t.f_t;
    check_finite(t.f_sf, "F_SF");
    return t;
}

FusionTensors shared_fusion_forward(const Matrix& e_t, const Matrix& e_v,
                                    const FusionParams& params, FusionCache* cache) {
    check_same_shape(e_t, e_v, "shared_fusion (E_t vs E_v)");
    check_finite(e_t, "E_t");
    check_finite(e_v, "E_v");

    AttentionRun text = attend(e_t, params.text);
    AttentionRun vis = attend(e_v, params.vis);

    Matrix f_vt, f_tv;
    cross_amplify(text.a, vis.a, e_t, e_v, f_vt, f_tv);
    FusionTensors t = fuse(e_t, e_v, f_vt, f_tv, params.gate, params.mix);
    t.a_t = text.a;
    t.a_v = vis.a;

    if (cache != nullptr) {
        cache->e_t = e_t;
        cache->e_v = e_v;
        cache->q_t = std::move(text.q);
        cache->k_t = std::move(text.k);
        cache->v_t = std::move(text.v);
        cache->p_t = std::move(text.p);
        cache->q_v = std::move(vis.q);
        cache->k_v = std::move(vis.k);
        cache->v_v = std::move(vis.v);
        cache->p_v = std::move(vis.p);
        cache->t = t;
    }
    return t;
}

FusionGradients shared_fusion_backward(const Matrix& d_fsf, const FusionParams& params,
                                       const FusionCache& cache) {
    const Matrix& e_t = cache.e_t;
    const Matrix& e_v = cache.e_v;
    const FusionTensors& t = cache.t;
    if (e_t.size() == 0) {
        throw UsageError("shared_fusion_backward: forward cache missing");
    }
    check_same_shape(d_fsf, t.f_sf, "backward upstream gradient");

    FusionGradients g;
    const Matrix ones = Matrix::Ones(e_t.rows(), e_t.cols());

    // F_SF = a1 F_1 + a2 F_2 + b1 F_v + b2 F_t
    g.a1 = d_fsf.cwiseProduct(t.f1).sum();
    g.a2 = d_fsf.cwiseProduct(t.f2).sum();
    g.b1 = d_fsf.cwiseProduct(t.f_v).sum();
    g.b2 = d_fsf.cwiseProduct(t.f_t).sum();
    const Matrix df1 = params.mix.a1 * d_fsf;
    const Matrix df2 = params.mix.a2 * d_fsf;
    const Matrix dfv = params.mix.b1 * d_fsf;
    const Matrix dft = params.mix.b2 * d_fsf;

    g.e_t = Matrix::Zero(e_t.rows(), e_t.cols());
    g.e_v = Matrix::Zero(e_v.rows(), e_v.cols());
    Matrix dg_v = Matrix::Zero(e_t.rows(), e_t.cols());
    Matrix dg_t = Matrix::Zero(e_t.rows(), e_t.cols());
    Matrix df_vt = Matrix::Zero(e_t.rows(), e_t.cols());
    Matrix df_tv = Matrix::Zero(e_t.rows(), e_t.cols());

    // F_t = G_t(.)E_t + (1-G_t)(.)F_vt
    dg_t += dft.cwiseProduct(e_t - t.f_vt);
    g.e_t += dft.cwiseProduct(t.g_t);
    df_vt += dft.cwiseProduct(ones - t.g_t);
    // F_v = G_v(.)E_v + (1-G_v)(.)F_tv
    dg_v += dfv.cwiseProduct(e_v - t.f_tv);
    g.e_v += dfv.cwiseProduct(t.g_v);
    df_tv += dfv.cwiseProduct(ones - t.g_v);
    // F_2 = G_t(.)F_tv + (1-G_t)(.)F_vt
    dg_t += df2.cwiseProduct(t.f_tv - t.f_vt);
    df_tv += df2.cwiseProduct(t.g_t);
    df_vt += df2.cwiseProduct(ones - t.g_t);
    // F_1 = G_v(.)F_tv + (1-G_v)(.)F_vt
    dg_v += df1.cwiseProduct(t.f_tv - t.f_vt);
    df_tv += df1.cwiseProduct(t.g_v);
    df_vt += df1.cwiseProduct(ones - t.g_v);

    // Gates: G = sigmoid(z), dz = dG (.) G (.) (1-G); z = E w^T + b
    const Matrix dz_v = dg_v.cwiseProduct(t.g_v).cwiseProduct(ones - t.g_v);
    const Matrix dz_t = dg_t.cwiseProduct(t.g_t).cwiseProduct(ones - t.g_t);
    g.gate_wv = dz_v.transpose() * e_v;
    g.gate_wt = dz_t.transpose() * e_t;
    g.gate_bv = dz_v.colwise().sum().transpose();
    g.gate_bt = dz_t.colwise().sum().transpose();
    g.e_v += dz_v * params.gate.wv;
    g.e_t += dz_t * params.gate.wt;

    // Cross products: F_vt = A_t (.) E_v, F_tv = A_v (.) E_t
    const Matrix da_t = df_vt.cwiseProduct(e_v);
    g.e_v += df_vt.cwiseProduct(t.a_t);
    const Matrix da_v = df_tv.cwiseProduct(e_t);
    g.e_t += df_tv.cwiseProduct(t.a_v);

    // Self-attention blocks.
    AttentionRun text{cache.q_t, cache.k_t, cache.v_t, cache.p_t, t.a_t};
    AttentionRun vis{cache.q_v, cache.k_v, cache.v_v, cache.p_v, t.a_v};
    attend_backward(da_t, e_t, text, params.text, g.e_t, g.text);
    attend_backward(da_v, e_v, vis, params.vis, g.e_v, g.vis);
    return g;
}

} // namespace sarcx::fusion
