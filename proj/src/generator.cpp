#include "sarcx/generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "sarcx/error.hpp"
#include "sarcx/rng.hpp"
#include "sarcx/text.hpp"

namespace sarcx::generator {

// ---------------------------------------------------------------------------
// Variants

const char* to_string(AblationVariant v) {
    switch (v) {
    case AblationVariant::full: return "full";
    case AblationVariant::minus_sf: return "-SF";
    case AblationVariant::minus_kg: return "-KG";
    case AblationVariant::minus_ts: return "-TS";
    case AblationVariant::minus_sf_ts: return "-SF-TS";
    case AblationVariant::minus_kg_ts: return "-KG-TS";
    case AblationVariant::plus_ts_concepts: return "+TS-concepts";
    }
    return "unknown";
}

const std::vector<AblationVariant>& all_variants() {
    static const std::vector<AblationVariant> variants = {
        AblationVariant::full,        AblationVariant::minus_sf,
        AblationVariant::minus_kg,    AblationVariant::minus_ts,
        AblationVariant::minus_sf_ts, AblationVariant::minus_kg_ts,
        AblationVariant::plus_ts_concepts,
    };
    return variants;
}

AblationVariant variant_from_string(const std::string& name) {
    for (AblationVariant v : all_variants()) {
        if (name == to_string(v)) {
            return v;
        }
    }
    throw UsageError("unknown ablation variant: \"" + name +
                     "\" (full|-SF|-KG|-TS|-SF-TS|-KG-TS|+TS-concepts)");
}

bool uses_graph_branch(AblationVariant v) {
    return v != AblationVariant::minus_kg && v != AblationVariant::minus_kg_ts;
}

bool uses_fusion_branch(AblationVariant v) {
    return v != AblationVariant::minus_sf && v != AblationVariant::minus_sf_ts;
}

bool uses_target(AblationVariant v) {
    return v != AblationVariant::minus_ts && v != AblationVariant::minus_sf_ts &&
           v != AblationVariant::minus_kg_ts;
}

bool uses_target_concepts(AblationVariant v) {
    return v == AblationVariant::plus_ts_concepts;
}

// ---------------------------------------------------------------------------
// Config JSON

std::string PipelineConfig::to_json() const {
    nlohmann::json doc = {
        {"width", width},
        {"max_tokens", max_tokens},
        {"patch_count", patch_count},
        {"k_objects", k_objects},
        {"gcn_layers", gcn_layers},
        {"activation", reasoner::to_string(activation)},
        {"attention_scale", fusion::to_string(attention_scale)},
        {"backbone_layers", backbone_layers},
        {"ffn_mult", ffn_mult},
        {"max_target_tokens", max_target_tokens},
        {"variant", to_string(variant)},
    };
    return doc.dump();
}

PipelineConfig PipelineConfig::from_json(const std::string& json_text) {
    PipelineConfig c;
    try {
        auto doc = nlohmann::json::parse(json_text);
        c.width = doc.value("width", c.width);
        c.max_tokens = doc.value("max_tokens", c.max_tokens);
        c.patch_count = doc.value("patch_count", c.patch_count);
        c.k_objects = doc.value("k_objects", c.k_objects);
        c.gcn_layers = doc.value("gcn_layers", c.gcn_layers);
        if (doc.contains("activation")) {
            c.activation = reasoner::activation_from_string(doc["activation"].get<std::string>());
        }
        if (doc.contains("attention_scale")) {
            c.attention_scale =
                fusion::attention_scale_from_string(doc["attention_scale"].get<std::string>());
        }
        c.backbone_layers = doc.value("backbone_layers", c.backbone_layers);
        c.ffn_mult = doc.value("ffn_mult", c.ffn_mult);
        c.max_target_tokens = doc.value("max_target_tokens", c.max_target_tokens);
        if (doc.contains("variant")) {
            c.variant = variant_from_string(doc["variant"].get<std::string>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("invalid pipeline config JSON: ") + e.what());
    }
    return c;
}

// ---------------------------------------------------------------------------
// Pipeline construction & parameter views

Pipeline Pipeline::init(const PipelineConfig& config, backbone::Tokenizer tokenizer,
                        std::uint64_t seed) {
    if (config.width < 1 || config.max_tokens < 1 || config.patch_count < 1 ||
        config.k_objects < 0 || config.gcn_layers < 1 || config.max_target_tokens < 1) {
        throw UsageError("PipelineConfig: hyperparameters must be positive");
    }
    Rng root(seed);
    Pipeline pipe;
    pipe.config = config;
    pipe.tokenizer = std::move(tokenizer);

    backbone::BackboneConfig bc;
    bc.vocab = pipe.tokenizer.size();
    bc.width = config.width;
    bc.layers = config.backbone_layers;
    bc.ffn_mult = config.ffn_mult;
    bc.max_positions = config.max_tokens;
    bc.max_target_positions = config.max_target_tokens;
    Rng backbone_rng = root.fork("backbone");
    pipe.net = backbone::TinyBackbone::init(bc, backbone_rng);

    pipe.gcn_config =
        reasoner::GcnConfig{config.gcn_layers, config.width, config.activation};
    Rng gcn_rng = root.fork("gcn");
    pipe.gcn = reasoner::GcnParams::init(pipe.gcn_config, gcn_rng);

    Rng fusion_rng = root.fork("fusion");
    pipe.fus = fusion::FusionParams::init(config.width, config.attention_scale, fusion_rng);

    Rng proj_rng = root.fork("proj");
    const double bound = std::sqrt(6.0 / (config.max_tokens + config.patch_count));
    pipe.vis_proj = Matrix(config.max_tokens, config.patch_count);
    for (Eigen::Index r = 0; r < pipe.vis_proj.rows(); ++r) {
        for (Eigen::Index c = 0; c < pipe.vis_proj.cols(); ++c) {
            pipe.vis_proj(r, c) = proj_rng.uniform(-bound, bound);
        }
    }
    return pipe;
}

namespace {

// Shared traversal so parameter and gradient views always zip correctly.
template <typename GcnW, typename Fus, typename Proj>
void collect_pipeline_views(GcnW& gcn_weights, Fus& fus, Proj& vis_proj, AblationVariant variant,
                            std::vector<nn::TensorView>& out) {
    if (uses_graph_branch(variant)) {
        for (std::size_t l = 0; l < gcn_weights.size(); ++l) {
            out.push_back(nn::view("gcn.w" + std::to_string(l), gcn_weights[l]));
        }
    }
    if (uses_fusion_branch(variant)) {
        out.push_back(nn::view("fusion.text.wq", fus.text.wq));
        out.push_back(nn::view("fusion.text.wk", fus.text.wk));
        out.push_back(nn::view("fusion.text.wv", fus.text.wv));
        out.push_back(nn::view("fusion.vis.wq", fus.vis.wq));
        out.push_back(nn::view("fusion.vis.wk", fus.vis.wk));
        out.push_back(nn::view("fusion.vis.wv", fus.vis.wv));
        out.push_back(nn::view("fusion.gate.wv", fus.gate.wv));
        out.push_back(nn::view("fusion.gate.wt", fus.gate.wt));
        out.push_back(nn::view("fusion.gate.bv", fus.gate.bv));
        out.push_back(nn::view("fusion.gate.bt", fus.gate.bt));
        out.push_back(nn::view("fusion.mix.a1", fus.mix.a1));
        out.push_back(nn::view("fusion.mix.a2", fus.mix.a2));
        out.push_back(nn::view("fusion.mix.b1", fus.mix.b1));
        out.push_back(nn::view("fusion.mix.b2", fus.mix.b2));
        out.push_back(nn::view("vis_proj", vis_proj));
    }
}

} // namespace

std::vector<nn::TensorView> Pipeline::backbone_params() {
    std::vector<nn::TensorView> out;
    net.collect_views("backbone", out);
    return out;
}

std::vector<nn::TensorView> Pipeline::pipeline_params() {
    std::vector<nn::TensorView> out;
    collect_pipeline_views(gcn.weights, fus, vis_proj, config.variant, out);
    return out;
}

PipelineGrads PipelineGrads::zeros_like(const Pipeline& pipe) {
    PipelineGrads g;
    g.net = backbone::BackboneGrads::zeros_like(pipe.net);
    for (const auto& w : pipe.gcn.weights) {
        g.gcn_weights.push_back(Matrix::Zero(w.rows(), w.cols()));
    }
    const int width = pipe.config.width;
    auto zero = [&](Eigen::Index r, Eigen::Index c) { return Matrix::Zero(r, c).eval(); };
    g.fus.text = fusion::AttentionGrads{zero(width, width), zero(width, width),
                                        zero(width, width)};
    g.fus.vis =
        fusion::AttentionGrads{zero(width, width), zero(width, width), zero(width, width)};
    g.fus.gate_wv = zero(width, width);
    g.fus.gate_wt = zero(width, width);
    g.fus.gate_bv = Vector::Zero(width);
    g.fus.gate_bt = Vector::Zero(width);
    g.vis_proj = Matrix::Zero(pipe.vis_proj.rows(), pipe.vis_proj.cols());
    return g;
}

std::vector<nn::TensorView> PipelineGrads::backbone_views() {
    std::vector<nn::TensorView> out;
    net.collect_views("backbone", out);
    return out;
}

namespace {

// Adapter exposing FusionGradients with the same field paths the param
// collector expects (text/vis/gate/mix names).
struct FusGradFacade {
    fusion::AttentionGrads& text;
    fusion::AttentionGrads& vis;
    struct GateFacade {
        Matrix& wv;
        Matrix& wt;
        Vector& bv;
        Vector& bt;
    } gate;
    struct MixFacade {
        double& a1;
        double& a2;
        double& b1;
        double& b2;
    } mix;
};

} // namespace

std::vector<nn::TensorView> PipelineGrads::pipeline_views(AblationVariant variant) {
    std::vector<nn::TensorView> out;
    FusGradFacade facade{fus.text,
                         fus.vis,
                         {fus.gate_wv, fus.gate_wt, fus.gate_bv, fus.gate_bt},
                         {fus.a1, fus.a2, fus.b1, fus.b2}};
    collect_pipeline_views(gcn_weights, facade, vis_proj, variant, out);
    return out;
}

// ---------------------------------------------------------------------------
// Forward / backward

Matrix combine(const Matrix& h_l, const Matrix& f_sf, AblationVariant v) {
    const bool graph = uses_graph_branch(v);
    const bool fuse = uses_fusion_branch(v);
    if (graph && fuse) {
        if (h_l.rows() != f_sf.rows() || h_l.cols() != f_sf.cols()) {
            throw UsageError("combine: branch output shapes differ");
        }
        return h_l + f_sf;
    }
    return graph ? h_l : f_sf;
}

namespace {

void check_sample(const Pipeline& pipe, const PreparedSample& sample) {
    const auto n = static_cast<Eigen::Index>(pipe.config.max_tokens);
    if (sample.norm_adj.rows() != n || sample.norm_adj.cols() != n) {
        throw UsageError("sample \"" + sample.id + "\": adjacency is not max_tokens square");
    }
    if (sample.visual.rows() != pipe.config.patch_count ||
        sample.visual.cols() != pipe.config.width) {
        throw UsageError("sample \"" + sample.id + "\": visual features have the wrong shape");
    }
    if (sample.input_ids.size() > static_cast<std::size_t>(pipe.config.max_tokens)) {
        throw UsageError("sample \"" + sample.id + "\": input longer than max_tokens");
    }
}

} // namespace

Matrix compute_z(Pipeline& pipe, const PreparedSample& sample, ForwardCaches* caches) {
    check_sample(pipe, sample);
    const AblationVariant v = pipe.config.variant;

    const Matrix embedded = pipe.net.embed_sequence(sample.input_ids);
    Matrix e_t =
        pipe.net.encode(embedded, caches != nullptr ? &caches->enc_context : nullptr);

    Matrix h_l, f_sf;
    if (uses_graph_branch(v)) {
        h_l = reasoner::gcn_forward(e_t, sample.norm_adj, pipe.gcn, pipe.gcn_config,
                                    caches != nullptr ? &caches->gcn : nullptr);
    }
    Matrix e_v;
    if (uses_fusion_branch(v)) {
        e_v = visual::project_visual(sample.visual, pipe.vis_proj);
        f_sf = fusion::shared_fusion_forward(e_t, e_v, pipe.fus,
                                             caches != nullptr ? &caches->fus : nullptr)
                   .f_sf;
    }
    Matrix z = combine(h_l, f_sf, v);
    if (caches != nullptr) {
        caches->e_t = std::move(e_t);
        caches->e_v = std::move(e_v);
        caches->h_l = std::move(h_l);
        caches->f_sf = std::move(f_sf);
        caches->z = z;
    }
    return z;
}

double sample_loss(Pipeline& pipe, const PreparedSample& sample, ForwardCaches& caches) {
    if (sample.target_ids.size() > static_cast<std::size_t>(pipe.config.max_target_tokens)) {
        throw UsageError("sample \"" + sample.id + "\": target longer than the decoder budget");
    }
    const Matrix z = compute_z(pipe, sample, &caches);
    caches.memory = pipe.net.encode(z, &caches.enc_fused);

    caches.dec_input.assign(1, backbone::Tokenizer::kBos);
    caches.dec_input.insert(caches.dec_input.end(), sample.target_ids.begin(),
                            sample.target_ids.end());
    caches.dec_target = sample.target_ids;
    caches.dec_target.push_back(backbone::Tokenizer::kSep);

    const Matrix logits = pipe.net.decode(caches.memory, caches.dec_input, &caches.dec);
    return backbone::cross_entropy(logits, caches.dec_target, &caches.d_logits);
}

void sample_backward(Pipeline& pipe, const PreparedSample& sample, const ForwardCaches& caches,
                     double scale, PipelineGrads& grads) {
    if (caches.d_logits.size() == 0) {
        throw UsageError("sample_backward: run sample_loss first");
    }
    const AblationVariant v = pipe.config.variant;

    const Matrix d_logits = scale * caches.d_logits;
    const Matrix d_memory =
        pipe.net.decode_backward(d_logits, caches.dec_input, caches.dec, grads.net);
    const Matrix dz = pipe.net.encode_backward(d_memory, caches.enc_fused, grads.net);

    Matrix de_t = Matrix::Zero(dz.rows(), dz.cols());
    if (uses_graph_branch(v)) {
        reasoner::GcnGradients gg =
            reasoner::gcn_gradients(dz, sample.norm_adj, pipe.gcn, pipe.gcn_config, caches.gcn);
        for (std::size_t l = 0; l < gg.weights.size(); ++l) {
            grads.gcn_weights[l] += gg.weights[l];
        }
        de_t += gg.h0;
    }
    if (uses_fusion_branch(v)) {
        fusion::FusionGradients fg = fusion::shared_fusion_backward(dz, pipe.fus, caches.fus);
        grads.fus.text.wq += fg.text.wq;
        grads.fus.text.wk += fg.text.wk;
        grads.fus.text.wv += fg.text.wv;
        grads.fus.vis.wq += fg.vis.wq;
        grads.fus.vis.wk += fg.vis.wk;
        grads.fus.vis.wv += fg.vis.wv;
        grads.fus.gate_wv += fg.gate_wv;
        grads.fus.gate_wt += fg.gate_wt;
        grads.fus.gate_bv += fg.gate_bv;
        grads.fus.gate_bt += fg.gate_bt;
        grads.fus.a1 += fg.a1;
        grads.fus.a2 += fg.a2;
        grads.fus.b1 += fg.b1;
        grads.fus.b2 += fg.b2;
        de_t += fg.e_t;
        grads.vis_proj += fg.e_v * sample.visual.transpose();
    }
    const Matrix d_embed = pipe.net.encode_backward(de_t, caches.enc_context, grads.net);
    pipe.net.embed_backward(d_embed, sample.input_ids, grads.net);
}

// ---------------------------------------------------------------------------
// Training

TrainResult train(Pipeline& pipe, const std::vector<PreparedSample>& dataset,
                  const TrainConfig& config) {
    if (dataset.empty()) {
        throw UsageError("train: dataset is empty");
    }
    if (config.epochs < 1 || config.batch_size < 1 || config.lr_backbone <= 0.0 ||
        config.lr_pipeline <= 0.0) {
        throw UsageError("train: invalid training configuration");
    }

    nn::AdamW optimizer(0.9, 0.999, 1e-8, config.weight_decay);
    PipelineGrads grads = PipelineGrads::zeros_like(pipe);
    auto zero_grads = [&grads, &pipe]() {
        PipelineGrads fresh = PipelineGrads::zeros_like(pipe);
        std::swap(grads, fresh);
    };

    const auto backbone_p = pipe.backbone_params();
    const auto pipeline_p = pipe.pipeline_params();

    Rng shuffle_rng = Rng(config.seed).fork("shuffle");
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    int steps = 0;
    const int step_budget = config.max_steps > 0 ? config.max_steps
                                                 : config.epochs *
                                                       static_cast<int>((dataset.size() +
                                                                         config.batch_size - 1) /
                                                                        config.batch_size);
    while (steps < step_budget) {
        if (config.shuffle) {
            for (std::size_t i = order.size(); i > 1; --i) {
                std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
            }
        }
        double epoch_loss = 0.0;
        int epoch_steps = 0;
        for (std::size_t begin = 0; begin < order.size() && steps < step_budget;
             begin += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
            const double inv_batch = 1.0 / static_cast<double>(end - begin);

            zero_grads();
            double batch_loss = 0.0;
            for (std::size_t i = begin; i < end; ++i) {
                const PreparedSample& sample = dataset[order[i]];
                ForwardCaches caches;
                const double loss = sample_loss(pipe, sample, caches);
                if (!std::isfinite(loss)) {
                    throw DataError("train: non-finite loss at step " + std::to_string(steps) +
                                    " on sample \"" + sample.id + "\"");
                }
                batch_loss += loss * inv_batch;
                sample_backward(pipe, sample, caches, inv_batch, grads);
            }

            std::vector<nn::AdamW::Group> groups;
            groups.push_back({backbone_p, grads.backbone_views(), config.lr_backbone});
            groups.push_back(
                {pipeline_p, grads.pipeline_views(pipe.config.variant), config.lr_pipeline});
            optimizer.step(groups);

            result.step_losses.push_back(batch_loss);
            epoch_loss += batch_loss;
            ++epoch_steps;
            ++steps;
        }
        if (epoch_steps > 0) {
            result.epoch_losses.push_back(epoch_loss / epoch_steps);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Decoding

namespace {

Vector log_softmax_row(const Matrix& logits, Eigen::Index row) {
    const double row_max = logits.row(row).maxCoeff();
    const Eigen::ArrayXd shifted = logits.row(row).array() - row_max;
    const double lse = std::log(shifted.exp().sum());
    return (shifted - lse).matrix();
}

struct Hypothesis {
    std::vector<int> ids; // starts with <s>
    double log_prob = 0.0;
    bool finished = false;
};

// Deterministic preference: higher probability first, then the
// lexicographically smaller id sequence.
bool better_than(const Hypothesis& a, const Hypothesis& b) {
    if (a.log_prob != b.log_prob) {
        return a.log_prob > b.log_prob;
    }
    return a.ids < b.ids;
}

} // namespace

std::vector<std::string> generate_tokens(Pipeline& pipe, const PreparedSample& sample,
                                         const DecodeConfig& config) {
    if (config.beam < 1 || config.max_length < 1) {
        throw UsageError("generate: beam and max_length must be positive");
    }
    const int max_len = std::min(config.max_length, pipe.config.max_target_tokens);

    const Matrix z = compute_z(pipe, sample, nullptr);
    const Matrix memory = pipe.net.encode(z, nullptr);

    std::vector<Hypothesis> beam{Hypothesis{{backbone::Tokenizer::kBos}, 0.0, false}};
    for (int step = 0; step < max_len; ++step) {
        std::vector<Hypothesis> expanded;
        bool any_open = false;
        for (const Hypothesis& hyp : beam) {
            if (hyp.finished) {
                expanded.push_back(hyp);
                continue;
            }
            any_open = true;
            const Matrix logits = pipe.net.decode(memory, hyp.ids, nullptr);
            const Vector log_probs = log_softmax_row(logits, logits.rows() - 1);

            // Top candidates by (log prob desc, id asc); never extend with
            // <pad>/<s> so ties cannot resurrect reserved ids.
            std::vector<int> cand(static_cast<std::size_t>(log_probs.size()));
            std::iota(cand.begin(), cand.end(), 0);
            std::stable_sort(cand.begin(), cand.end(), [&](int a, int b) {
                if (log_probs(a) != log_probs(b)) return log_probs(a) > log_probs(b);
                return a < b;
            });
            int taken = 0;
            for (int token : cand) {
                if (token == backbone::Tokenizer::kPad || token == backbone::Tokenizer::kBos) {
                    continue;
                }
                Hypothesis next = hyp;
                next.log_prob += log_probs(token);
                if (token == backbone::Tokenizer::kSep) {
                    next.finished = true;
                } else {
                    next.ids.push_back(token);
                }
                expanded.push_back(std::move(next));
                if (++taken == config.beam) {
                    break;
                }
            }
        }
        if (!any_open) {
            break;
        }
        std::stable_sort(expanded.begin(), expanded.end(), better_than);
        if (expanded.size() > static_cast<std::size_t>(config.beam)) {
            expanded.resize(static_cast<std::size_t>(config.beam));
        }
        beam = std::move(expanded);
    }

    const Hypothesis* best = &beam.front();
    for (const Hypothesis& hyp : beam) {
        if (better_than(hyp, *best)) {
            best = &hyp;
        }
    }
    std::vector<int> generated(best->ids.begin() + 1, best->ids.end()); // strip <s>
    return pipe.tokenizer.decode_ids(generated);
}

std::string generate_explanation(Pipeline& pipe, const PreparedSample& sample,
                                 const DecodeConfig& config) {
    return text::join(generate_tokens(pipe, sample, config));
}

// ---------------------------------------------------------------------------
// Checkpointing

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'X', 'C', 'P', '0', '0', '0', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

// Every tensor in the artifact, parameters and frozen buffers alike.
std::vector<nn::TensorView> all_tensors(Pipeline& pipe) {
    std::vector<nn::TensorView> views;
    pipe.net.collect_views("backbone", views);
    for (std::size_t l = 0; l < pipe.gcn.weights.size(); ++l) {
        views.push_back(nn::view("gcn.w" + std::to_string(l), pipe.gcn.weights[l]));
    }
    views.push_back(nn::view("fusion.text.wq", pipe.fus.text.wq));
    views.push_back(nn::view("fusion.text.wk", pipe.fus.text.wk));
    views.push_back(nn::view("fusion.text.wv", pipe.fus.text.wv));
    views.push_back(nn::view("fusion.vis.wq", pipe.fus.vis.wq));
    views.push_back(nn::view("fusion.vis.wk", pipe.fus.vis.wk));
    views.push_back(nn::view("fusion.vis.wv", pipe.fus.vis.wv));
    views.push_back(nn::view("fusion.gate.wv", pipe.fus.gate.wv));
    views.push_back(nn::view("fusion.gate.wt", pipe.fus.gate.wt));
    views.push_back(nn::view("fusion.gate.bv", pipe.fus.gate.bv));
    views.push_back(nn::view("fusion.gate.bt", pipe.fus.gate.bt));
    views.push_back(nn::view("fusion.mix.a1", pipe.fus.mix.a1));
    views.push_back(nn::view("fusion.mix.a2", pipe.fus.mix.a2));
    views.push_back(nn::view("fusion.mix.b1", pipe.fus.mix.b1));
    views.push_back(nn::view("fusion.mix.b2", pipe.fus.mix.b2));
    views.push_back(nn::view("vis_proj", pipe.vis_proj));
    return views;
}

} // namespace

void save_checkpoint(const Pipeline& pipe, const std::filesystem::path& path,
                     const std::string& extra_meta_json) {
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(extra_meta_json);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("save_checkpoint: extra meta must be JSON: ") + e.what());
    }
    nlohmann::json header = {
        {"config", nlohmann::json::parse(pipe.config.to_json())},
        {"tokenizer", nlohmann::json::parse(pipe.tokenizer.to_json())},
        {"meta", std::move(meta)},
    };
    const std::string header_text = header.dump();

    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write checkpoint: " + path.string());
    }
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_u64(out, header_text.size());
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));

    auto views = all_tensors(const_cast<Pipeline&>(pipe));
    write_u64(out, views.size());
    for (const auto& v : views) {
        write_u64(out, v.name.size());
        out.write(v.name.data(), static_cast<std::streamsize>(v.name.size()));
        write_u64(out, static_cast<std::uint64_t>(v.rows));
        write_u64(out, static_cast<std::uint64_t>(v.cols));
        out.write(reinterpret_cast<const char*>(v.data),
                  static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!out) {
        throw DataError("failed writing checkpoint: " + path.string());
    }
}

Pipeline load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open checkpoint: " + path.string());
    }
    char magic[sizeof(kCheckpointMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw DataError("not a checkpoint file: " + path.string());
    }
    const std::uint64_t header_len = read_u64(in);
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in) {
        throw DataError("truncated checkpoint header: " + path.string());
    }

    PipelineConfig config;
    backbone::Tokenizer tokenizer;
    try {
        auto header = nlohmann::json::parse(header_text);
        config = PipelineConfig::from_json(header.at("config").dump());
        tokenizer = backbone::Tokenizer::from_json(header.at("tokenizer").dump());
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("invalid checkpoint header: ") + e.what());
    }

    Pipeline pipe = Pipeline::init(config, std::move(tokenizer), /*seed=*/0);
    auto views = all_tensors(pipe);
    const std::uint64_t count = read_u64(in);
    if (count != views.size()) {
        throw DataError("incompatible checkpoint: tensor count mismatch");
    }
    for (auto& v : views) {
        const std::uint64_t name_len = read_u64(in);
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        const auto rows = static_cast<Eigen::Index>(read_u64(in));
        const auto cols = static_cast<Eigen::Index>(read_u64(in));
        if (!in || name != v.name || rows != v.rows || cols != v.cols) {
            throw DataError("incompatible checkpoint: tensor \"" + name +
                            "\" does not match the configured model");
        }
        in.read(reinterpret_cast<char*>(v.data),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!in) {
        throw DataError("truncated checkpoint data: " + path.string());
    }
    return pipe;
}

std::string checkpoint_meta(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open checkpoint: " + path.string());
    }
    char magic[sizeof(kCheckpointMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw DataError("not a checkpoint file: " + path.string());
    }
    const std::uint64_t header_len = read_u64(in);
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in) {
        throw DataError("truncated checkpoint header: " + path.string());
    }
    return header_text;
}

// ---------------------------------------------------------------------------
// Sample preparation

namespace {

std::vector<std::string> retokenize(const std::vector<std::string>& raw_tokens) {
    return text::metric_tokenize(text::join(raw_tokens));
}

} // namespace

EnrichmentResult enrich_sample(const corpus::Sample& sample, visual::VisionBackend& vision,
                               const knowledge::ConceptClient& concepts,
                               const PipelineConfig& config) {
    EnrichmentResult result;
    result.caption_tokens = text::metric_tokenize(sample.caption);

    visual::Extraction extraction =
        visual::extract_all(sample.image_ref, config.k_objects, vision);
    result.diagnostics = std::move(extraction.diagnostics);
    result.description_tokens = retokenize(extraction.description.tokens);
    result.object_tokens = retokenize(extraction.objects.label_tokens());

    const auto caption_lookup = concepts.enrich_tokens(result.caption_tokens);
    const auto description_lookup = concepts.enrich_tokens(result.description_tokens);
    const auto object_lookup = concepts.enrich_tokens(result.object_tokens);

    // One coverage report across all three knowledge-queried streams.
    std::vector<std::string> queried = result.caption_tokens;
    queried.insert(queried.end(), result.description_tokens.begin(),
                   result.description_tokens.end());
    queried.insert(queried.end(), result.object_tokens.begin(), result.object_tokens.end());
    knowledge::ConceptLookup combined = caption_lookup;
    combined.insert(combined.end(), description_lookup.begin(), description_lookup.end());
    combined.insert(combined.end(), object_lookup.begin(), object_lookup.end());
    result.missing = knowledge::diagnose_missing(combined, queried);

    enrich::EnrichedSequence seq =
        enrich::build_knowledge_sequence(result.caption_tokens, caption_lookup,
                                         result.description_tokens, description_lookup,
                                         result.object_tokens, object_lookup);
    const auto budget = static_cast<std::size_t>(config.max_tokens);
    if (uses_target(config.variant)) {
        const auto target_tokens = text::metric_tokenize(sample.target);
        knowledge::ConceptLookup target_lookup(target_tokens.size());
        if (uses_target_concepts(config.variant)) {
            target_lookup = concepts.enrich_tokens(target_tokens);
        }
        seq = enrich::append_target(seq, target_tokens, uses_target_concepts(config.variant),
                                    target_lookup, budget);
    } else {
        seq = enrich::truncate_sequence(seq, budget);
    }
    result.seq = std::move(seq);
    return result;
}

PreparedSample prepare_sample(const corpus::Sample& sample, visual::VisionBackend& vision,
                              const knowledge::ConceptClient& concepts,
                              const backbone::Tokenizer& tokenizer,
                              const PipelineConfig& config) {
    EnrichmentResult enriched = enrich_sample(sample, vision, concepts, config);

    PreparedSample prepared;
    prepared.id = sample.id;
    prepared.input_ids = tokenizer.encode(enriched.seq.tokens);

    const graph::WeightedGraph g = graph::build_graph(enriched.seq);
    prepared.norm_adj =
        graph::normalized_adjacency(g, static_cast<std::size_t>(config.max_tokens));

    prepared.visual = visual::embed_image(sample.image_ref, vision);
    if (prepared.visual.rows() != config.patch_count ||
        prepared.visual.cols() != config.width) {
        std::ostringstream msg;
        msg << "sample \"" << sample.id << "\": visual backend produced "
            << prepared.visual.rows() << "x" << prepared.visual.cols() << ", config expects "
            << config.patch_count << "x" << config.width;
        throw DataError(msg.str());
    }

    prepared.reference_tokens = text::metric_tokenize(sample.explanation);
    std::vector<std::string> target_tokens = prepared.reference_tokens;
    if (target_tokens.size() > static_cast<std::size_t>(config.max_target_tokens)) {
        target_tokens.resize(static_cast<std::size_t>(config.max_target_tokens));
    }
    prepared.target_ids = tokenizer.encode(target_tokens);
    return prepared;
}

backbone::Tokenizer build_tokenizer(const std::vector<corpus::Sample>& samples,
                                    visual::VisionBackend& vision,
                                    const knowledge::ConceptClient& concepts,
                                    const PipelineConfig& config, std::size_t max_vocab) {
    // Enrich with the concept-richest variant so every variant's tokens are
    // in-vocabulary.
    PipelineConfig rich = config;
    rich.variant = AblationVariant::plus_ts_concepts;

    std::vector<std::vector<std::string>> corpora;
    for (const auto& sample : samples) {
        corpora.push_back(enrich_sample(sample, vision, concepts, rich).seq.tokens);
        corpora.push_back(text::metric_tokenize(sample.explanation));
    }
    return backbone::Tokenizer::build(corpora, max_vocab);
}

} // namespace sarcx::generator
