#include "sarcx/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <json.hpp>

#include "sarcx/error.hpp"

namespace sarcx::backbone {

// ---------------------------------------------------------------------------
// Tokenizer

namespace {
constexpr const char* kReserved[] = {"<pad>", "<s>", "<sep>", "<unk>"};
}

Tokenizer Tokenizer::build(const std::vector<std::vector<std::string>>& corpora,
                           std::size_t max_vocab) {
    Tokenizer t;
    for (const char* tok : kReserved) {
        t.token_to_id.emplace(tok, t.size());
        t.id_to_token.emplace_back(tok);
    }
    std::map<std::string, std::size_t> counts; // ordered: lexicographic tie-break for free
    for (const auto& corpus : corpora) {
        for (const auto& token : corpus) {
            if (!t.token_to_id.contains(token)) {
                ++counts[token];
            }
        }
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    for (const auto& [token, count] : ranked) {
        if (max_vocab != 0 && t.id_to_token.size() >= max_vocab) {
            break;
        }
        t.token_to_id.emplace(token, t.size());
        t.id_to_token.push_back(token);
    }
    return t;
}

int Tokenizer::id(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnk : it->second;
}

std::vector<int> Tokenizer::encode(const std::vector<std::string>& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& token : tokens) {
        ids.push_back(id(token));
    }
    return ids;
}

std::vector<std::string> Tokenizer::decode_ids(const std::vector<int>& ids) const {
    std::vector<std::string> tokens;
    for (int i : ids) {
        if (i < 0 || i >= size()) {
            throw UsageError("decode_ids: id outside the vocabulary");
        }
        if (i <= kUnk) {
            continue; // reserved ids never surface in decoded text
        }
        tokens.push_back(id_to_token[static_cast<std::size_t>(i)]);
    }
    return tokens;
}

std::string Tokenizer::to_json() const {
    return nlohmann::json{{"tokens", id_to_token}}.dump();
}

Tokenizer Tokenizer::from_json(const std::string& json_text) {
    Tokenizer t;
    try {
        auto doc = nlohmann::json::parse(json_text);
        t.id_to_token = doc.at("tokens").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("invalid tokenizer JSON: ") + e.what());
    }
    if (t.id_to_token.size() < 4) {
        throw DataError("invalid tokenizer JSON: reserved ids missing");
    }
    for (int i = 0; i < 4; ++i) {
        if (t.id_to_token[static_cast<std::size_t>(i)] != kReserved[i]) {
            throw DataError("invalid tokenizer JSON: reserved id order changed");
        }
    }
    for (std::size_t i = 0; i < t.id_to_token.size(); ++i) {
        if (!t.token_to_id.emplace(t.id_to_token[i], static_cast<int>(i)).second) {
            throw DataError("invalid tokenizer JSON: duplicate token");
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// Parameter init

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

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = stddev * rng.normal();
        }
    }
    return m;
}

Norm init_norm(int width) {
    return Norm{Vector::Ones(width), Vector::Zero(width)};
}

AttnBlock init_attn(int width, Rng& rng) {
    const double bound = std::sqrt(6.0 / (2.0 * width));
    return AttnBlock{uniform_matrix(width, width, bound, rng),
                     uniform_matrix(width, width, bound, rng),
                     uniform_matrix(width, width, bound, rng),
                     uniform_matrix(width, width, bound, rng)};
}

FfnBlock init_ffn(int width, int hidden, Rng& rng) {
    const double bound = std::sqrt(6.0 / (width + hidden));
    return FfnBlock{uniform_matrix(hidden, width, bound, rng), Vector::Zero(hidden),
                    uniform_matrix(width, hidden, bound, rng), Vector::Zero(width)};
}

} // namespace

TinyBackbone TinyBackbone::init(const BackboneConfig& config, Rng& rng) {
    if (config.vocab < 4 || config.width < 1 || config.layers < 1 || config.ffn_mult < 1 ||
        config.max_positions < 1 || config.max_target_positions < 1) {
        throw UsageError("TinyBackbone::init: invalid configuration");
    }
    const int hidden = config.width * config.ffn_mult;
    TinyBackbone net;
    net.config = config;
    net.tok_embed = normal_matrix(config.vocab, config.width, 0.02, rng);
    net.pos_enc = normal_matrix(config.max_positions, config.width, 0.02, rng);
    net.pos_dec = normal_matrix(config.max_target_positions + 1, config.width, 0.02, rng);
    for (int l = 0; l < config.layers; ++l) {
        net.enc_layers.push_back(EncoderLayer{init_norm(config.width), init_attn(config.width, rng),
                                              init_norm(config.width),
                                              init_ffn(config.width, hidden, rng)});
    }
    net.enc_ln = init_norm(config.width);
    for (int l = 0; l < config.layers; ++l) {
        net.dec_layers.push_back(DecoderLayer{init_norm(config.width), init_attn(config.width, rng),
                                              init_norm(config.width), init_attn(config.width, rng),
                                              init_norm(config.width),
                                              init_ffn(config.width, hidden, rng)});
    }
    net.dec_ln = init_norm(config.width);
    net.lm_head =
        uniform_matrix(config.vocab, config.width,
                       std::sqrt(6.0 / (config.vocab + config.width)), rng);
    return net;
}

BackboneGrads BackboneGrads::zeros_like(const TinyBackbone& net) {
    auto zero = [](const Matrix& m) { return Matrix::Zero(m.rows(), m.cols()).eval(); };
    auto zero_v = [](const Vector& v) { return Vector::Zero(v.size()).eval(); };
    auto zero_norm = [&](const Norm& n) { return Norm{zero_v(n.gamma), zero_v(n.beta)}; };
    auto zero_attn = [&](const AttnBlock& a) {
        return AttnBlock{zero(a.wq), zero(a.wk), zero(a.wv), zero(a.wo)};
    };
    auto zero_ffn = [&](const FfnBlock& f) {
        return FfnBlock{zero(f.w1), zero_v(f.b1), zero(f.w2), zero_v(f.b2)};
    };

    BackboneGrads g;
    g.tok_embed = zero(net.tok_embed);
    g.pos_enc = zero(net.pos_enc);
    g.pos_dec = zero(net.pos_dec);
    g.lm_head = zero(net.lm_head);
    for (const auto& l : net.enc_layers) {
        g.enc_layers.push_back(
            EncoderLayer{zero_norm(l.ln1), zero_attn(l.attn), zero_norm(l.ln2), zero_ffn(l.ffn)});
    }
    g.enc_ln = zero_norm(net.enc_ln);
    for (const auto& l : net.dec_layers) {
        g.dec_layers.push_back(DecoderLayer{zero_norm(l.ln1), zero_attn(l.self_attn),
                                            zero_norm(l.ln2), zero_attn(l.cross_attn),
                                            zero_norm(l.ln3), zero_ffn(l.ffn)});
    }
    g.dec_ln = zero_norm(net.dec_ln);
    return g;
}

// ---------------------------------------------------------------------------
// Shared view collection (params and grads share field names, so one template
// guarantees both traversals stay aligned).

namespace {

template <typename T>
void collect_norm(const std::string& prefix, T& n, std::vector<nn::TensorView>& out) {
    out.push_back(nn::view(prefix + ".gamma", n.gamma));
    out.push_back(nn::view(prefix + ".beta", n.beta));
}

template <typename T>
void collect_attn(const std::string& prefix, T& a, std::vector<nn::TensorView>& out) {
    out.push_back(nn::view(prefix + ".wq", a.wq));
    out.push_back(nn::view(prefix + ".wk", a.wk));
    out.push_back(nn::view(prefix + ".wv", a.wv));
    out.push_back(nn::view(prefix + ".wo", a.wo));
}

template <typename T>
void collect_ffn(const std::string& prefix, T& f, std::vector<nn::TensorView>& out) {
    out.push_back(nn::view(prefix + ".w1", f.w1));
    out.push_back(nn::view(prefix + ".b1", f.b1));
    out.push_back(nn::view(prefix + ".w2", f.w2));
    out.push_back(nn::view(prefix + ".b2", f.b2));
}

template <typename T>
void collect_backbone(const std::string& prefix, T& t, std::vector<nn::TensorView>& out) {
    out.push_back(nn::view(prefix + ".tok_embed", t.tok_embed));
    out.push_back(nn::view(prefix + ".pos_enc", t.pos_enc));
    out.push_back(nn::view(prefix + ".pos_dec", t.pos_dec));
    for (std::size_t i = 0; i < t.enc_layers.size(); ++i) {
        const std::string lp = prefix + ".enc." + std::to_string(i);
        collect_norm(lp + ".ln1", t.enc_layers[i].ln1, out);
        collect_attn(lp + ".attn", t.enc_layers[i].attn, out);
        collect_norm(lp + ".ln2", t.enc_layers[i].ln2, out);
        collect_ffn(lp + ".ffn", t.enc_layers[i].ffn, out);
    }
    collect_norm(prefix + ".enc_ln", t.enc_ln, out);
    for (std::size_t i = 0; i < t.dec_layers.size(); ++i) {
        const std::string lp = prefix + ".dec." + std::to_string(i);
        collect_norm(lp + ".ln1", t.dec_layers[i].ln1, out);
        collect_attn(lp + ".self", t.dec_layers[i].self_attn, out);
        collect_norm(lp + ".ln2", t.dec_layers[i].ln2, out);
        collect_attn(lp + ".cross", t.dec_layers[i].cross_attn, out);
        collect_norm(lp + ".ln3", t.dec_layers[i].ln3, out);
        collect_ffn(lp + ".ffn", t.dec_layers[i].ffn, out);
    }
    collect_norm(prefix + ".dec_ln", t.dec_ln, out);
    out.push_back(nn::view(prefix + ".lm_head", t.lm_head));
}

} // namespace

void TinyBackbone::collect_views(const std::string& prefix, std::vector<nn::TensorView>& out) {
    collect_backbone(prefix, *this, out);
}

void BackboneGrads::collect_views(const std::string& prefix, std::vector<nn::TensorView>& out) {
    collect_backbone(prefix, *this, out);
}

// ---------------------------------------------------------------------------
// Layer primitives

namespace {

constexpr double kNormEps = 1e-5;

Matrix norm_forward(const Norm& n, const Matrix& x, NormCache* cache) {
    Matrix x_hat(x.rows(), x.cols());
    Vector inv_std(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().mean();
        const double is = 1.0 / std::sqrt(var + kNormEps);
        x_hat.row(r) = ((x.row(r).array() - mu) * is).matrix();
        inv_std(r) = is;
    }
    Matrix y = ((x_hat.array().rowwise() * n.gamma.transpose().array()).rowwise() +
                n.beta.transpose().array())
                   .matrix();
    if (cache != nullptr) {
        cache->x = x;
        cache->x_hat = std::move(x_hat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

Matrix norm_backward(const Norm& n, const NormCache& c, const Matrix& dy, Norm& grads) {
    grads.gamma += (dy.array() * c.x_hat.array()).colwise().sum().matrix().transpose();
    grads.beta += dy.colwise().sum().transpose();
    const Matrix dx_hat = (dy.array().rowwise() * n.gamma.transpose().array()).matrix();
    Matrix dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const double mean_dxh = dx_hat.row(r).mean();
        const double mean_dxh_xh = (dx_hat.row(r).array() * c.x_hat.row(r).array()).mean();
        dx.row(r) = (c.inv_std(r) *
                     (dx_hat.row(r).array() - mean_dxh - c.x_hat.row(r).array() * mean_dxh_xh))
                        .matrix();
    }
    return dx;
}

Matrix attn_forward(const AttnBlock& blk, const Matrix& x_q, const Matrix& x_kv, bool causal,
                    double scale, AttnCache* cache) {
    AttnCache local;
    AttnCache& c = cache != nullptr ? *cache : local;
    c.q = x_q * blk.wq.transpose();
    c.k = x_kv * blk.wk.transpose();
    c.v = x_kv * blk.wv.transpose();
    Matrix scores = c.q * c.k.transpose() / scale;
    if (causal) {
        const double neg_inf = -std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < scores.rows(); ++i) {
            for (Eigen::Index j = i + 1; j < scores.cols(); ++j) {
                scores(i, j) = neg_inf;
            }
        }
    }
    c.p = nn::softmax_rows(scores);
    c.ctx = c.p * c.v;
    return c.ctx * blk.wo.transpose();
}

void attn_backward(const AttnBlock& blk, const AttnCache& c, const Matrix& x_q,
                   const Matrix& x_kv, const Matrix& d_out, double scale, AttnBlock& grads,
                   Matrix& dx_q, Matrix& dx_kv) {
    grads.wo += d_out.transpose() * c.ctx;
    const Matrix dctx = d_out * blk.wo;
    const Matrix dp = dctx * c.v.transpose();
    const Matrix dv = c.p.transpose() * dctx;
    const Matrix ds = nn::softmax_rows_backward(c.p, dp);
    const Matrix dq = ds * c.k / scale;
    const Matrix dk = ds.transpose() * c.q / scale;
    grads.wq += dq.transpose() * x_q;
    grads.wk += dk.transpose() * x_kv;
    grads.wv += dv.transpose() * x_kv;
    dx_q += dq * blk.wq;
    dx_kv += dk * blk.wk + dv * blk.wv;
}

Matrix ffn_forward(const FfnBlock& f, const Matrix& x, FfnCache* cache) {
    FfnCache local;
    FfnCache& c = cache != nullptr ? *cache : local;
    c.x = x;
    c.h_pre = ((x * f.w1.transpose()).rowwise() + f.b1.transpose()).eval();
    c.h = c.h_pre.cwiseMax(0.0);
    return ((c.h * f.w2.transpose()).rowwise() + f.b2.transpose()).eval();
}

Matrix ffn_backward(const FfnBlock& f, const FfnCache& c, const Matrix& dy, FfnBlock& grads) {
    grads.w2 += dy.transpose() * c.h;
    grads.b2 += dy.colwise().sum().transpose();
    const Matrix dh = dy * f.w2;
    const Matrix dh_pre =
        dh.cwiseProduct((c.h_pre.array() > 0.0).cast<double>().matrix());
    grads.w1 += dh_pre.transpose() * c.x;
    grads.b1 += dh_pre.colwise().sum().transpose();
    return dh_pre * f.w1;
}

} // namespace

// ---------------------------------------------------------------------------
// Embeddings

Matrix TinyBackbone::embed_sequence(const std::vector<int>& ids) const {
    const auto n = static_cast<std::size_t>(config.max_positions);
    if (ids.size() > n) {
        throw UsageError("embed_sequence: sequence longer than max_positions");
    }
    Matrix x(config.max_positions, config.width);
    for (std::size_t i = 0; i < n; ++i) {
        const int id = i < ids.size() ? ids[i] : Tokenizer::kPad;
        if (id < 0 || id >= config.vocab) {
            throw UsageError("embed_sequence: token id outside the vocabulary");
        }
        x.row(static_cast<Eigen::Index>(i)) =
            tok_embed.row(id) + pos_enc.row(static_cast<Eigen::Index>(i));
    }
    return x;
}

void TinyBackbone::embed_backward(const Matrix& d_embed, const std::vector<int>& ids,
                                  BackboneGrads& grads) const {
    if (d_embed.rows() != config.max_positions || d_embed.cols() != config.width) {
        throw UsageError("embed_backward: gradient shape mismatch");
    }
    for (Eigen::Index i = 0; i < d_embed.rows(); ++i) {
        const int id =
            static_cast<std::size_t>(i) < ids.size() ? ids[static_cast<std::size_t>(i)]
                                                     : Tokenizer::kPad;
        grads.tok_embed.row(id) += d_embed.row(i);
        grads.pos_enc.row(i) += d_embed.row(i);
    }
}

// ---------------------------------------------------------------------------
// Encoder

Matrix TinyBackbone::encode(const Matrix& input, EncoderCache* cache) const {
    if (input.cols() != config.width) {
        throw UsageError("encode: input width mismatch");
    }
    const double scale = std::sqrt(static_cast<double>(config.width));
    if (cache != nullptr) {
        cache->layers.assign(enc_layers.size(), EncoderLayerCache{});
    }
    Matrix x = input;
    for (std::size_t l = 0; l < enc_layers.size(); ++l) {
        const EncoderLayer& layer = enc_layers[l];
        EncoderLayerCache* lc = cache != nullptr ? &cache->layers[l] : nullptr;

        Matrix ln1_out = norm_forward(layer.ln1, x, lc != nullptr ? &lc->ln1 : nullptr);
        Matrix attn_out = attn_forward(layer.attn, ln1_out, ln1_out, /*causal=*/false, scale,
                                       lc != nullptr ? &lc->attn : nullptr);
        if (lc != nullptr) {
            lc->ln1_out = std::move(ln1_out);
        }
        Matrix x_mid = x + attn_out;
        Matrix ln2_out = norm_forward(layer.ln2, x_mid, lc != nullptr ? &lc->ln2 : nullptr);
        Matrix ffn_out = ffn_forward(layer.ffn, ln2_out, lc != nullptr ? &lc->ffn : nullptr);
        x = x_mid + ffn_out;
    }
    Matrix out = norm_forward(enc_ln, x, cache != nullptr ? &cache->final_ln : nullptr);
    if (!out.allFinite()) {
        throw DataError("encode: non-finite activations");
    }
    return out;
}

Matrix TinyBackbone::encode_backward(const Matrix& d_out, const EncoderCache& cache,
                                     BackboneGrads& grads) const {
    if (cache.layers.size() != enc_layers.size()) {
        throw UsageError("encode_backward: cache missing or stale");
    }
    const double scale = std::sqrt(static_cast<double>(config.width));
    Matrix dx = norm_backward(enc_ln, cache.final_ln, d_out, grads.enc_ln);
    for (std::size_t li = enc_layers.size(); li-- > 0;) {
        const EncoderLayer& layer = enc_layers[li];
        const EncoderLayerCache& lc = cache.layers[li];
        EncoderLayer& lg = grads.enc_layers[li];

        // x_out = x_mid + ffn(ln2(x_mid))
        const Matrix d_ln2_out = ffn_backward(layer.ffn, lc.ffn, dx, lg.ffn);
        Matrix dx_mid = dx + norm_backward(layer.ln2, lc.ln2, d_ln2_out, lg.ln2);

        // x_mid = x + attn(ln1(x))
        Matrix d_ln1_out = Matrix::Zero(dx.rows(), dx.cols());
        attn_backward(layer.attn, lc.attn, lc.ln1_out, lc.ln1_out, dx_mid, scale, lg.attn,
                      d_ln1_out, d_ln1_out);
        dx = dx_mid + norm_backward(layer.ln1, lc.ln1, d_ln1_out, lg.ln1);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Decoder

Matrix TinyBackbone::decode(const Matrix& memory, const std::vector<int>& dec_input_ids,
                            DecoderCache* cache) const {
    if (memory.cols() != config.width) {
        throw UsageError("decode: memory width mismatch");
    }
    if (dec_input_ids.empty() ||
        dec_input_ids.size() > static_cast<std::size_t>(config.max_target_positions) + 1) {
        throw UsageError("decode: decoder input length out of range");
    }
    const double scale = std::sqrt(static_cast<double>(config.width));

    Matrix x(static_cast<Eigen::Index>(dec_input_ids.size()), config.width);
    for (std::size_t i = 0; i < dec_input_ids.size(); ++i) {
        const int id = dec_input_ids[i];
        if (id < 0 || id >= config.vocab) {
            throw UsageError("decode: token id outside the vocabulary");
        }
        x.row(static_cast<Eigen::Index>(i)) =
            tok_embed.row(id) + pos_dec.row(static_cast<Eigen::Index>(i));
    }
    if (cache != nullptr) {
        cache->dec_input = x;
        cache->memory = memory;
        cache->layers.assign(dec_layers.size(), DecoderLayerCache{});
    }

    for (std::size_t l = 0; l < dec_layers.size(); ++l) {
        const DecoderLayer& layer = dec_layers[l];
        DecoderLayerCache* lc = cache != nullptr ? &cache->layers[l] : nullptr;

        Matrix ln1_out = norm_forward(layer.ln1, x, lc != nullptr ? &lc->ln1 : nullptr);
        Matrix self_out = attn_forward(layer.self_attn, ln1_out, ln1_out, /*causal=*/true, scale,
                                       lc != nullptr ? &lc->self_attn : nullptr);
        if (lc != nullptr) {
            lc->ln1_out = std::move(ln1_out);
        }
        Matrix a = x + self_out;

        Matrix ln2_out = norm_forward(layer.ln2, a, lc != nullptr ? &lc->ln2 : nullptr);
        Matrix cross_out = attn_forward(layer.cross_attn, ln2_out, memory, /*causal=*/false,
                                        scale, lc != nullptr ? &lc->cross : nullptr);
        if (lc != nullptr) {
            lc->ln2_out = std::move(ln2_out);
        }
        Matrix b = a + cross_out;

        Matrix ln3_out = norm_forward(layer.ln3, b, lc != nullptr ? &lc->ln3 : nullptr);
        Matrix ffn_out = ffn_forward(layer.ffn, ln3_out, lc != nullptr ? &lc->ffn : nullptr);
        x = b + ffn_out;
    }
    Matrix out = norm_forward(dec_ln, x, cache != nullptr ? &cache->final_ln : nullptr);
    if (cache != nullptr) {
        cache->final_out = out;
    }
    Matrix logits = out * lm_head.transpose();
    if (!logits.allFinite()) {
        throw DataError("decode: non-finite logits");
    }
    return logits;
}

Matrix TinyBackbone::decode_backward(const Matrix& d_logits,
                                     const std::vector<int>& dec_input_ids,
                                     const DecoderCache& cache, BackboneGrads& grads) const {
    if (cache.layers.size() != dec_layers.size() || cache.final_out.size() == 0) {
        throw UsageError("decode_backward: cache missing or stale");
    }
    const double scale = std::sqrt(static_cast<double>(config.width));

    grads.lm_head += d_logits.transpose() * cache.final_out;
    const Matrix d_final = d_logits * lm_head;
    Matrix dx = norm_backward(dec_ln, cache.final_ln, d_final, grads.dec_ln);
    Matrix d_memory = Matrix::Zero(cache.memory.rows(), cache.memory.cols());

    for (std::size_t li = dec_layers.size(); li-- > 0;) {
        const DecoderLayer& layer = dec_layers[li];
        const DecoderLayerCache& lc = cache.layers[li];
        DecoderLayer& lg = grads.dec_layers[li];

        // x_out = b + ffn(ln3(b))
        const Matrix d_ln3_out = ffn_backward(layer.ffn, lc.ffn, dx, lg.ffn);
        Matrix db = dx + norm_backward(layer.ln3, lc.ln3, d_ln3_out, lg.ln3);

        // b = a + cross(ln2(a), memory)
        Matrix d_ln2_out = Matrix::Zero(db.rows(), db.cols());
        attn_backward(layer.cross_attn, lc.cross, lc.ln2_out, cache.memory, db, scale,
                      lg.cross_attn, d_ln2_out, d_memory);
        Matrix da = db + norm_backward(layer.ln2, lc.ln2, d_ln2_out, lg.ln2);

        // a = x + self_causal(ln1(x))
        Matrix d_ln1_out = Matrix::Zero(da.rows(), da.cols());
        attn_backward(layer.self_attn, lc.self_attn, lc.ln1_out, lc.ln1_out, da, scale,
                      lg.self_attn, d_ln1_out, d_ln1_out);
        dx = da + norm_backward(layer.ln1, lc.ln1, d_ln1_out, lg.ln1);
    }

    for (std::size_t i = 0; i < dec_input_ids.size(); ++i) {
        grads.tok_embed.row(dec_input_ids[i]) += dx.row(static_cast<Eigen::Index>(i));
        grads.pos_dec.row(static_cast<Eigen::Index>(i)) += dx.row(static_cast<Eigen::Index>(i));
    }
    return d_memory;
}

// ---------------------------------------------------------------------------
// Loss

double cross_entropy(const Matrix& logits, const std::vector<int>& targets, Matrix* d_logits) {
    if (static_cast<std::size_t>(logits.rows()) != targets.size() || targets.empty()) {
        throw UsageError("cross_entropy: one target id per logit row required");
    }
    const double inv_rows = 1.0 / static_cast<double>(logits.rows());
    if (d_logits != nullptr) {
        d_logits->resize(logits.rows(), logits.cols());
    }
    double loss = 0.0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const int t = targets[static_cast<std::size_t>(r)];
        if (t < 0 || t >= logits.cols()) {
            throw UsageError("cross_entropy: target id outside the vocabulary");
        }
        const double row_max = logits.row(r).maxCoeff();
        const Eigen::ArrayXd shifted = logits.row(r).array() - row_max;
        const double lse = std::log(shifted.exp().sum()) + row_max;
        loss += (lse - logits(r, t)) * inv_rows;
        if (d_logits != nullptr) {
            d_logits->row(r) = ((shifted - (lse - row_max)).exp() * inv_rows).matrix();
            (*d_logits)(r, t) -= inv_rows;
        }
    }
    return loss;
}

} // namespace sarcx::backbone
