// Acceptance gate. Each criterion below prints exactly one line:
//
//   PASS <criterion>
//   FAIL <criterion>: <what went wrong>
//   SKIP <criterion>: <why it cannot run here>
//
// and the process exits nonzero if anything FAILed. Tolerances are pinned in
// the checks themselves; a criterion that cannot be satisfied in this
// environment is skipped with its reason, never faked.
#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "helpers.hpp"
#include "sarcx/backbone.hpp"
#include "sarcx/corpus.hpp"
#include "sarcx/enrich.hpp"
#include "sarcx/fusion.hpp"
#include "sarcx/generator.hpp"
#include "sarcx/graph.hpp"
#include "sarcx/knowledge.hpp"
#include "sarcx/metrics.hpp"
#include "sarcx/nn.hpp"
#include "sarcx/reasoner.hpp"
#include "sarcx/rng.hpp"
#include "sarcx/types.hpp"
#include "sarcx/visual.hpp"

namespace {

using sarcx::Matrix;
using sarcx::Rng;
using sarcx::Vector;

struct Outcome {
    enum Kind { pass, fail, skip } kind = pass;
    std::string detail;
};

Outcome ok() { return {Outcome::pass, ""}; }
Outcome failed(std::string detail) { return {Outcome::fail, std::move(detail)}; }
Outcome skipped(std::string detail) { return {Outcome::skip, std::move(detail)}; }

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) {
            m(i, j) = rng.uniform(-scale, scale);
        }
    }
    return m;
}

std::string fmt(double v) {
    std::ostringstream out;
    out << v;
    return out.str();
}

// ---------------------------------------------------------------------------
// Criterion: the graph builder's edge set equals a brute-force restatement of
// the construction rules on 200 randomized sequences.

Outcome graph_rule_oracle() {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(4242);
    for (int i = 0; i < 200; ++i) {
        const auto seq = testutil::random_enriched_sequence(rng);
        const auto built = testutil::edge_set(sarcx::graph::build_graph(seq));
        const auto expected = testutil::brute_force_edges(seq);
        if (built != expected) {
            return failed("edge set mismatch on random sequence " + std::to_string(i));
        }
    }
    const double elapsed = seconds_since(start);
    if (elapsed >= 10.0) {
        return failed("200 sequences took " + fmt(elapsed) + "s (budget 10s)");
    }
    return ok();
}

// ---------------------------------------------------------------------------
// Criterion: analytic gradients of the graph reasoner and the full fusion
// block agree with central finite differences at N=6, D_f=8 within 1e-4.

Outcome gradient_verification() {
    const auto start = std::chrono::steady_clock::now();
    const int n = 6, d = 8;
    double worst = 0.0;
    auto track = [&worst](const Matrix& analytic, const Matrix& fd) {
        worst = std::max(worst, testutil::max_rel_error(analytic, fd));
    };

    // Graph reasoner, two layers, relu. The finite-difference step must not
    // cross a relu kink, so seeds are searched until every pre-activation
    // clears the step size by a wide margin.
    {
        sarcx::graph::WeightedGraph g;
        g.node_count = static_cast<std::size_t>(n);
        g.edges = {{0, 1, 1.0}, {1, 2, 0.8}, {2, 3, 1.7}, {1, 4, 2.2}, {4, 5, 1.0}};
        const Matrix norm_adj = sarcx::graph::normalize(g);

        sarcx::reasoner::GcnConfig config;
        config.layers = 2;
        config.width = d;
        config.activation = sarcx::reasoner::Activation::relu;

        bool found = false;
        sarcx::reasoner::GcnParams params;
        Matrix h0;
        for (std::uint64_t seed = 700; seed < 760 && !found; ++seed) {
            Rng rng(seed);
            params = sarcx::reasoner::GcnParams::init(config, rng);
            h0 = random_matrix(rng, n, d);
            sarcx::reasoner::GcnCache cache;
            sarcx::reasoner::gcn_forward(h0, norm_adj, params, config, &cache);
            found = true;
            for (const auto& pre : cache.pre) {
                found = found && pre.cwiseAbs().minCoeff() > 5e-4;
            }
        }
        if (!found) {
            return failed("no kink-safe seed found for the graph reasoner");
        }

        Rng loss_rng(31);
        const Matrix r_weight = random_matrix(loss_rng, n, d);
        const auto loss = [&]() {
            return sarcx::reasoner::gcn_forward(h0, norm_adj, params, config)
                .cwiseProduct(r_weight)
                .sum();
        };
        sarcx::reasoner::GcnCache cache;
        sarcx::reasoner::gcn_forward(h0, norm_adj, params, config, &cache);
        const auto grads =
            sarcx::reasoner::gcn_gradients(r_weight, norm_adj, params, config, cache);

        const auto fd = testutil::finite_difference(
            loss, {sarcx::nn::view("w1", params.weights[0]),
                   sarcx::nn::view("w2", params.weights[1]), sarcx::nn::view("h0", h0)});
        track(grads.weights[0], fd[0]);
        track(grads.weights[1], fd[1]);
        track(grads.h0, fd[2]);
    }

    // Full fusion block: inputs, both attention stacks, gates, mix scalars.
    {
        Rng rng(321);
        auto params = sarcx::fusion::FusionParams::init(d, sarcx::fusion::AttentionScale::sqrt_dim,
                                                        rng);
        Matrix e_t = random_matrix(rng, n, d);
        Matrix e_v = random_matrix(rng, n, d);
        const Matrix r_weight = random_matrix(rng, n, d);

        const auto loss = [&]() {
            return sarcx::fusion::shared_fusion_forward(e_t, e_v, params)
                .f_sf.cwiseProduct(r_weight)
                .sum();
        };
        sarcx::fusion::FusionCache cache;
        sarcx::fusion::shared_fusion_forward(e_t, e_v, params, &cache);
        const auto grads = sarcx::fusion::shared_fusion_backward(r_weight, params, cache);

        const auto fd = testutil::finite_difference(
            loss,
            {sarcx::nn::view("e_t", e_t), sarcx::nn::view("e_v", e_v),
             sarcx::nn::view("t.wq", params.text.wq), sarcx::nn::view("t.wk", params.text.wk),
             sarcx::nn::view("t.wv", params.text.wv), sarcx::nn::view("v.wq", params.vis.wq),
             sarcx::nn::view("v.wk", params.vis.wk), sarcx::nn::view("v.wv", params.vis.wv),
             sarcx::nn::view("g.wv", params.gate.wv), sarcx::nn::view("g.wt", params.gate.wt),
             sarcx::nn::view("g.bv", params.gate.bv), sarcx::nn::view("g.bt", params.gate.bt),
             sarcx::nn::view("a1", params.mix.a1), sarcx::nn::view("a2", params.mix.a2),
             sarcx::nn::view("b1", params.mix.b1), sarcx::nn::view("b2", params.mix.b2)});

        track(grads.e_t, fd[0]);
        track(grads.e_v, fd[1]);
        track(grads.text.wq, fd[2]);
        track(grads.text.wk, fd[3]);
        track(grads.text.wv, fd[4]);
        track(grads.vis.wq, fd[5]);
        track(grads.vis.wk, fd[6]);
        track(grads.vis.wv, fd[7]);
        track(grads.gate_wv, fd[8]);
        track(grads.gate_wt, fd[9]);
        track(Matrix(grads.gate_bv), fd[10]);
        track(Matrix(grads.gate_bt), fd[11]);
        Matrix scalar(1, 1);
        scalar(0, 0) = grads.a1;
        track(scalar, fd[12]);
        scalar(0, 0) = grads.a2;
        track(scalar, fd[13]);
        scalar(0, 0) = grads.b1;
        track(scalar, fd[14]);
        scalar(0, 0) = grads.b2;
        track(scalar, fd[15]);
    }

    if (worst >= 1e-4) {
        return failed("max relative gradient error " + fmt(worst) + " (budget 1e-4)");
    }
    const double elapsed = seconds_since(start);
    if (elapsed >= 30.0) {
        return failed("gradient checks took " + fmt(elapsed) + "s (budget 30s)");
    }
    return ok();
}

// ---------------------------------------------------------------------------
// Criterion: closed-form identities of the gated fusion stage, all within
// 1e-12 on random inputs.

Outcome fusion_identities() {
    Rng rng(555);
    const int n = 5, d = 6;
    const Matrix e_t = random_matrix(rng, n, d);
    const Matrix e_v = random_matrix(rng, n, d);
    const Matrix f_vt = random_matrix(rng, n, d);
    const Matrix f_tv = random_matrix(rng, n, d);
    const double tol = 1e-12;
    auto max_abs = [](const Matrix& m) { return m.cwiseAbs().maxCoeff(); };

    sarcx::fusion::GateParams gate;
    gate.wv = Matrix::Zero(d, d);
    gate.wt = Matrix::Zero(d, d);
    gate.bv = Vector::Zero(d);
    gate.bt = Vector::Zero(d);
    sarcx::fusion::MixWeights mix; // 0.25 each

    // Saturated gates: G == 1 selects F_tv outright and passes E_v through.
    gate.bv.setConstant(40.0);
    gate.bt.setConstant(40.0);
    auto t = sarcx::fusion::fuse(e_t, e_v, f_vt, f_tv, gate, mix);
    if (max_abs(t.f1 - f_tv) > tol) {
        return failed("saturated gate: F_1 != F_tv (max err " + fmt(max_abs(t.f1 - f_tv)) + ")");
    }
    if (max_abs(t.f_v - e_v) > tol) {
        return failed("saturated gate: F_v != E_v (max err " + fmt(max_abs(t.f_v - e_v)) + ")");
    }

    // Neutral gates: zero weights and biases give an exact elementwise mean.
    gate.bv.setZero();
    gate.bt.setZero();
    t = sarcx::fusion::fuse(e_t, e_v, f_vt, f_tv, gate, mix);
    if (max_abs(t.f1 - 0.5 * (f_tv + f_vt)) > tol ||
        max_abs(t.f2 - 0.5 * (f_tv + f_vt)) > tol) {
        return failed("neutral gate: F_1/F_2 are not the elementwise average");
    }
    if (max_abs(t.f_v - 0.5 * (e_v + f_tv)) > tol ||
        max_abs(t.f_t - 0.5 * (e_t + f_vt)) > tol) {
        return failed("neutral gate: F_v/F_t are not the elementwise average");
    }

    // Mixing selector: weight 1 on the first mixture reproduces it exactly.
    sarcx::fusion::GateParams random_gate;
    random_gate.wv = random_matrix(rng, d, d);
    random_gate.wt = random_matrix(rng, d, d);
    random_gate.bv = random_matrix(rng, d, 1);
    random_gate.bt = random_matrix(rng, d, 1);
    sarcx::fusion::MixWeights selector;
    selector.a1 = 1.0;
    selector.a2 = selector.b1 = selector.b2 = 0.0;
    t = sarcx::fusion::fuse(e_t, e_v, f_vt, f_tv, random_gate, selector);
    if (max_abs(t.f_sf - t.f1) > tol) {
        return failed("mixing selector: F_SF != F_1 at a1=1");
    }

    // Convexity: every gated mixture lies elementwise between its endpoints.
    t = sarcx::fusion::fuse(e_t, e_v, f_vt, f_tv, random_gate, mix);
    struct Bound {
        const Matrix* value;
        const Matrix* lo_src;
        const Matrix* hi_src;
        const char* name;
    };
    const Bound bounds[] = {
        {&t.f1, &f_tv, &f_vt, "F_1"},
        {&t.f2, &f_tv, &f_vt, "F_2"},
        {&t.f_v, &e_v, &f_tv, "F_v"},
        {&t.f_t, &e_t, &f_vt, "F_t"},
    };
    for (const auto& b : bounds) {
        const Matrix lo = b.lo_src->cwiseMin(*b.hi_src);
        const Matrix hi = b.lo_src->cwiseMax(*b.hi_src);
        if (((*b.value - lo).minCoeff() < -tol) || ((hi - *b.value).minCoeff() < -tol)) {
            return failed(std::string("convexity bound violated for ") + b.name);
        }
    }
    return ok();
}

// ---------------------------------------------------------------------------
// Criterion: within every concept segment, concepts appear in source-token
// order (source j < k if and only if concept position p < q); 1,000 cases.

Outcome concept_ordering() {
    Rng rng(9090);
    for (int i = 0; i < 1000; ++i) {
        const auto seq = testutil::random_enriched_sequence(rng);
        for (const auto& seg : seq.segments) {
            if (seg.links.empty()) {
                continue;
            }
            for (std::size_t k = 0; k < seg.links.size(); ++k) {
                const auto& link = seg.links[k];
                if (link.start < seg.start || link.end > seg.end || link.start >= link.end) {
                    return failed("case " + std::to_string(i) + ": link span escapes segment");
                }
                if (k == 0) {
                    continue;
                }
                const auto& prev = seg.links[k - 1];
                // Strict order both ways: earlier source, earlier concept,
                // and contiguous non-overlapping spans.
                if (!(prev.source_index < link.source_index) || !(prev.end <= link.start)) {
                    return failed("case " + std::to_string(i) +
                                  ": concept order diverges from source order");
                }
            }
        }
    }
    return ok();
}

// ---------------------------------------------------------------------------
// Criterion: a tiny model memorizes 16 synthetic samples in 300 optimizer
// steps (final mean loss < 0.1, at least 14/16 exact greedy decodes), and the
// loss curve is bitwise reproducible from the same seed.

struct ToyRig {
    sarcx::generator::PipelineConfig config;
    std::vector<sarcx::corpus::Sample> samples;
    std::vector<sarcx::generator::PreparedSample> prepared;
    sarcx::backbone::Tokenizer tokenizer;
};

ToyRig build_toy_rig() {
    ToyRig rig;
    rig.config.width = 16;
    rig.config.max_tokens = 40;
    rig.config.patch_count = 4;
    rig.config.k_objects = 2;
    rig.config.gcn_layers = 1;
    rig.config.backbone_layers = 1;
    rig.config.ffn_mult = 2;
    rig.config.max_target_tokens = 8;
    rig.config.variant = sarcx::generator::AblationVariant::full;

    const char* colors[] = {"red", "blue", "green", "black"};
    const char* shapes[] = {"door", "lamp", "boat", "kite"};
    for (int i = 0; i < 16; ++i) {
        const std::string color = colors[i % 4];
        const std::string shape = shapes[i / 4];
        sarcx::corpus::Sample s;
        s.id = "toy-" + std::to_string(i);
        s.image_ref = "img-" + std::to_string(i);
        s.caption = "the " + color + " " + shape + " looks fine today";
        s.explanation = color + " " + shape + " praise is fake";
        s.target = color + " " + shape;
        rig.samples.push_back(std::move(s));
    }

    auto backend = std::make_shared<sarcx::knowledge::FixtureBackend>(
        std::map<std::string, sarcx::knowledge::NeighborList>{});
    sarcx::knowledge::ConceptClient concepts(backend);
    sarcx::visual::StubVisionConfig stub;
    stub.seed = 11;
    stub.patch_count = rig.config.patch_count;
    stub.feature_dim = rig.config.width;
    sarcx::visual::StubVisionBackend vision(stub);

    rig.tokenizer =
        sarcx::generator::build_tokenizer(rig.samples, vision, concepts, rig.config);
    for (const auto& sample : rig.samples) {
        rig.prepared.push_back(sarcx::generator::prepare_sample(sample, vision, concepts,
                                                                rig.tokenizer, rig.config));
    }
    return rig;
}

Outcome toy_overfit() {
    const auto start = std::chrono::steady_clock::now();
    ToyRig rig = build_toy_rig();

    sarcx::generator::TrainConfig tconfig;
    tconfig.lr_backbone = 3e-3;
    tconfig.lr_pipeline = 3e-3;
    tconfig.epochs = 1; // superseded by the step cap
    tconfig.batch_size = 16;
    tconfig.max_steps = 300;
    tconfig.weight_decay = 0.0;
    tconfig.seed = 7;
    tconfig.shuffle = true;

    auto pipe = sarcx::generator::Pipeline::init(rig.config, rig.tokenizer, 7);
    const auto result = sarcx::generator::train(pipe, rig.prepared, tconfig);
    if (result.step_losses.size() != 300) {
        return failed("expected 300 steps, ran " + std::to_string(result.step_losses.size()));
    }
    const double final_loss = result.step_losses.back();
    if (!(final_loss < 0.1)) {
        return failed("final mean loss " + fmt(final_loss) + " (budget 0.1)");
    }

    sarcx::generator::DecodeConfig decode;
    decode.beam = 1;
    decode.max_length = 8;
    int exact = 0;
    for (const auto& sample : rig.prepared) {
        if (sarcx::generator::generate_tokens(pipe, sample, decode) == sample.reference_tokens) {
            ++exact;
        }
    }
    if (exact < 14) {
        return failed("only " + std::to_string(exact) + "/16 exact greedy reconstructions");
    }

    auto pipe2 = sarcx::generator::Pipeline::init(rig.config, rig.tokenizer, 7);
    const auto result2 = sarcx::generator::train(pipe2, rig.prepared, tconfig);
    if (result2.step_losses.size() != result.step_losses.size()) {
        return failed("rerun produced a different number of steps");
    }
    for (std::size_t i = 0; i < result.step_losses.size(); ++i) {
        if (result.step_losses[i] != result2.step_losses[i]) {
            return failed("loss curve differs at step " + std::to_string(i + 1) +
                          " under the same seed");
        }
    }

    const double elapsed = seconds_since(start);
    if (elapsed >= 300.0) {
        return failed("overfit run took " + fmt(elapsed) + "s (budget 300s)");
    }
    return ok();
}

// ---------------------------------------------------------------------------
// Criterion: for each of the seven variants, the pipeline's fused
// representation equals a composition assembled by hand from the public
// module functions, tensor for tensor.

Outcome ablation_wiring() {
    sarcx::generator::PipelineConfig base;
    base.width = 8;
    base.max_tokens = 24;
    base.patch_count = 3;
    base.k_objects = 2;
    base.gcn_layers = 2;
    base.backbone_layers = 1;
    base.ffn_mult = 2;
    base.max_target_tokens = 6;

    sarcx::corpus::Sample sample;
    sample.id = "wire";
    sample.image_ref = "img-wire";
    sample.caption = "the gadget hums quietly";
    sample.explanation = "the gadget is mocked";
    sample.target = "gadget";

    auto backend = std::make_shared<sarcx::knowledge::FixtureBackend>(
        std::map<std::string, sarcx::knowledge::NeighborList>{
            {"gadget", {{"device", 2.0}}},
            {"hums", {{"sound", 1.5}}},
        });
    sarcx::knowledge::ConceptClient concepts(backend);
    sarcx::visual::StubVisionConfig stub;
    stub.seed = 17;
    stub.patch_count = base.patch_count;
    stub.feature_dim = base.width;
    sarcx::visual::StubVisionBackend vision(stub);

    const auto samples = std::vector<sarcx::corpus::Sample>{sample};
    const auto tokenizer = sarcx::generator::build_tokenizer(samples, vision, concepts, base);

    // Expected composition per variant, restated independently of the
    // predicate helpers: which branches reach the combined representation and
    // whether the target (and its concepts) joins the input sequence.
    struct Expectation {
        sarcx::generator::AblationVariant variant;
        bool graph, fusion, target;
    };
    using V = sarcx::generator::AblationVariant;
    const Expectation table[] = {
        {V::full, true, true, true},
        {V::minus_sf, true, false, true},
        {V::minus_kg, false, true, true},
        {V::minus_ts, true, true, false},
        {V::minus_sf_ts, true, false, false},
        {V::minus_kg_ts, false, true, false},
        {V::plus_ts_concepts, true, true, true},
    };

    std::size_t full_len = 0, plus_len = 0;
    for (const auto& expect : table) {
        sarcx::generator::PipelineConfig config = base;
        config.variant = expect.variant;
        const auto prepared =
            sarcx::generator::prepare_sample(sample, vision, concepts, tokenizer, config);
        auto pipe = sarcx::generator::Pipeline::init(config, tokenizer, 13);

        const Matrix z = sarcx::generator::compute_z(pipe, prepared, nullptr);

        const Matrix embedded = pipe.net.embed_sequence(prepared.input_ids);
        const Matrix e_t = pipe.net.encode(embedded);
        Matrix reference;
        if (expect.graph) {
            reference = sarcx::reasoner::gcn_forward(e_t, prepared.norm_adj, pipe.gcn,
                                                     pipe.gcn_config);
        }
        if (expect.fusion) {
            const Matrix e_v = sarcx::visual::project_visual(prepared.visual, pipe.vis_proj);
            const Matrix f_sf =
                sarcx::fusion::shared_fusion_forward(e_t, e_v, pipe.fus).f_sf;
            reference = expect.graph ? Matrix(reference + f_sf) : f_sf;
        }
        const char* name = sarcx::generator::to_string(expect.variant);
        if (z.rows() != reference.rows() || z.cols() != reference.cols()) {
            return failed(std::string(name) + ": combined shape mismatch");
        }
        if ((z - reference).cwiseAbs().maxCoeff() != 0.0) {
            return failed(std::string(name) + ": pipeline differs from manual composition");
        }

        const auto sep_count =
            std::count(prepared.input_ids.begin(), prepared.input_ids.end(),
                       sarcx::backbone::Tokenizer::kSep);
        if (expect.target && sep_count != 1) {
            return failed(std::string(name) + ": expected exactly one separator in the input");
        }
        if (!expect.target && sep_count != 0) {
            return failed(std::string(name) + ": target variant wiring leaked a separator");
        }
        if (expect.variant == V::full) {
            full_len = prepared.input_ids.size();
        }
        if (expect.variant == V::plus_ts_concepts) {
            plus_len = prepared.input_ids.size();
        }
    }
    // The target token has a concept in the lookup, so appending target
    // concepts must lengthen the sequence relative to the plain-target run.
    if (!(plus_len > full_len)) {
        return failed("target concepts did not extend the input sequence");
    }
    return ok();
}

// ---------------------------------------------------------------------------
// Criterion: metric sanity. Identical corpora score 100 on the n-gram overlap
// and subsequence columns (+-1e-9); a hand-counted 3-token example matches an
// independent derivation within 1e-6; the cumulative overlap score is
// non-increasing in the order on 100 random corpora.

Outcome metrics_sanity() {
    // Identical candidate/reference corpus.
    const std::vector<std::string> texts = {
        "waiting in traffic all morning",
        "what a lovely way to spend monday",
        "the pizza arrived cold again",
        "parking here is such a joy",
    };
    sarcx::metrics::HashEmbeddingBackend embeddings(16, 1);
    const auto report = sarcx::metrics::evaluate_corpus(texts, texts, embeddings);
    for (auto [value, label] :
         {std::pair{report.b1, "B1"}, {report.b2, "B2"}, {report.b3, "B3"},
          {report.b4, "B4"}, {report.r1, "R1"}, {report.rl, "RL"}}) {
        if (std::abs(value - 100.0) > 1e-9) {
            return failed(std::string("identical corpus: ") + label + " = " + fmt(value) +
                          " != 100");
        }
    }

    // Hand-counted example: candidate "the cat sat" against reference
    // "the cat sat down". All 1/2/3-gram precisions are exactly 1, there are
    // no candidate 4-grams (the order-4 score is 0 by construction), and the
    // brevity penalty is exp(1 - 4/3).
    const auto scores = sarcx::metrics::corpus_bleu({{"the", "cat", "sat"}},
                                                    {{"the", "cat", "sat", "down"}});
    const double bp = std::exp(1.0 - 4.0 / 3.0);
    const double expected[] = {bp, bp, bp, 0.0};
    for (int k = 0; k < 4; ++k) {
        if (std::abs(scores[static_cast<std::size_t>(k)] - expected[k]) > 1e-6) {
            return failed("hand example order " + std::to_string(k + 1) + ": got " +
                          fmt(scores[static_cast<std::size_t>(k)]) + ", expected " +
                          fmt(expected[k]));
        }
    }

    // Non-increasing cumulative scores across orders, 100 random corpora.
    Rng rng(20260814);
    const char* vocab[] = {"w0", "w1", "w2", "w3", "w4", "w5",
                           "w6", "w7", "w8", "w9", "w10", "w11"};
    for (int corpus = 0; corpus < 100; ++corpus) {
        std::vector<std::vector<std::string>> cands, refs;
        for (int s = 0; s < 8; ++s) {
            const std::size_t len = 4 + rng.uniform_index(9);
            std::vector<std::string> ref, cand;
            for (std::size_t t = 0; t < len; ++t) {
                ref.push_back(vocab[rng.uniform_index(12)]);
                cand.push_back(rng.chance(0.3) ? vocab[rng.uniform_index(12)] : ref.back());
            }
            refs.push_back(std::move(ref));
            cands.push_back(std::move(cand));
        }
        const auto bleu = sarcx::metrics::corpus_bleu(cands, refs);
        for (std::size_t k = 1; k < bleu.size(); ++k) {
            if (bleu[k] > bleu[k - 1] + 1e-9) {
                return failed("corpus " + std::to_string(corpus) + ": order " +
                              std::to_string(k + 1) + " score " + fmt(bleu[k]) +
                              " exceeds order " + std::to_string(k) + " score " +
                              fmt(bleu[k - 1]));
            }
        }
    }
    return ok();
}

// ---------------------------------------------------------------------------
// Criterion: dataset statistics. On the bundled fixture the stats must match
// an independent tokenization exactly (plus hand-derived anchors); on the
// full corpus (pointed to by SARCX_MOREPLUS_DIR) the split sizes must match
// the published counts exactly and the average lengths within +-0.5.

struct IndependentStats {
    std::size_t count = 0;
    double cap_len = 0.0, expl_len = 0.0, target_len = 0.0;
    std::size_t cap_voc = 0, expl_voc = 0, target_voc = 0;
};

IndependentStats independent_stats(const std::vector<sarcx::corpus::Sample>& samples) {
    auto tokenize = [](const std::string& raw) {
        std::vector<std::string> out;
        std::string current;
        for (char c : raw) {
            if (std::isspace(static_cast<unsigned char>(c))) {
                if (!current.empty()) {
                    out.push_back(current);
                    current.clear();
                }
            } else {
                current.push_back(
                    static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            }
        }
        if (!current.empty()) {
            out.push_back(current);
        }
        return out;
    };

    IndependentStats stats;
    stats.count = samples.size();
    std::set<std::string> cap_voc, expl_voc, target_voc;
    std::size_t cap = 0, expl = 0, target = 0;
    for (const auto& s : samples) {
        for (auto& tok : tokenize(s.caption)) {
            ++cap;
            cap_voc.insert(tok);
        }
        for (auto& tok : tokenize(s.explanation)) {
            ++expl;
            expl_voc.insert(tok);
        }
        for (auto& tok : tokenize(s.target)) {
            ++target;
            target_voc.insert(tok);
        }
    }
    const double n = samples.empty() ? 1.0 : static_cast<double>(samples.size());
    stats.cap_len = static_cast<double>(cap) / n;
    stats.expl_len = static_cast<double>(expl) / n;
    stats.target_len = static_cast<double>(target) / n;
    stats.cap_voc = cap_voc.size();
    stats.expl_voc = expl_voc.size();
    stats.target_voc = target_voc.size();
    return stats;
}

Outcome dataset_stats_fixture() {
    const struct {
        const char* file;
        std::size_t count;
        double cap_len; // hand-derived anchors for the bundled files
    } expected[] = {
        {"train.jsonl", 3, 28.0 / 3.0},
        {"val.jsonl", 1, 5.0},
        {"test.jsonl", 2, 7.0},
    };
    for (const auto& split : expected) {
        const auto samples = sarcx::corpus::load_file(testutil::fixture_path(split.file));
        const auto stats = sarcx::corpus::compute_stats(samples);
        const auto oracle = independent_stats(samples);
        if (stats.sample_count != split.count || oracle.count != split.count) {
            return failed(std::string(split.file) + ": sample count " +
                          std::to_string(stats.sample_count) + " != " +
                          std::to_string(split.count));
        }
        if (std::abs(stats.avg_caption_len - split.cap_len) > 1e-9) {
            return failed(std::string(split.file) + ": caption average " +
                          fmt(stats.avg_caption_len) + " != " + fmt(split.cap_len));
        }
        const bool lengths_match = std::abs(stats.avg_caption_len - oracle.cap_len) <= 1e-9 &&
                                   std::abs(stats.avg_explanation_len - oracle.expl_len) <=
                                       1e-9 &&
                                   std::abs(stats.avg_target_len - oracle.target_len) <= 1e-9;
        const bool vocab_match = stats.caption_vocab == oracle.cap_voc &&
                                 stats.explanation_vocab == oracle.expl_voc &&
                                 stats.target_vocab == oracle.target_voc;
        if (!lengths_match || !vocab_match) {
            return failed(std::string(split.file) +
                          ": stats diverge from the independent tokenization");
        }
    }
    return ok();
}

Outcome dataset_stats_moreplus() {
    const char* dir = std::getenv("SARCX_MOREPLUS_DIR");
    if (dir == nullptr || *dir == '\0') {
        return skipped(
            "SARCX_MOREPLUS_DIR not set; the full corpus is not bundled with this repository");
    }
    const struct {
        const char* file;
        std::size_t count;
        double cap_len, expl_len, target_len; // published split statistics
    } expected[] = {
        {"train.jsonl", 2983, 19.75, 15.47, 4.17},
        {"val.jsonl", 175, 18.85, 15.39, 4.46},
        {"test.jsonl", 352, 19.43, 15.08, 4.57},
    };
    for (const auto& split : expected) {
        const auto path = std::filesystem::path(dir) / split.file;
        if (!std::filesystem::exists(path)) {
            return failed(path.string() + " is missing");
        }
        const auto stats = sarcx::corpus::compute_stats(sarcx::corpus::load_file(path));
        if (stats.sample_count != split.count) {
            return failed(std::string(split.file) + ": " + std::to_string(stats.sample_count) +
                          " samples, published count is " + std::to_string(split.count));
        }
        const struct {
            double got, want;
            const char* what;
        } lengths[] = {
            {stats.avg_caption_len, split.cap_len, "caption"},
            {stats.avg_explanation_len, split.expl_len, "explanation"},
            {stats.avg_target_len, split.target_len, "target"},
        };
        for (const auto& l : lengths) {
            if (std::abs(l.got - l.want) > 0.5) {
                return failed(std::string(split.file) + ": average " + l.what + " length " +
                              fmt(l.got) + " outside +-0.5 of " + fmt(l.want));
            }
        }
    }
    return ok();
}

// ---------------------------------------------------------------------------
// Criterion: enrichment in fixture mode touches no network transport.

Outcome offline_integrity() {
    sarcx::generator::PipelineConfig config;
    config.width = 8;
    config.max_tokens = 48;
    config.patch_count = 4;
    config.k_objects = 3;
    config.gcn_layers = 1;
    config.backbone_layers = 1;
    config.ffn_mult = 2;
    config.max_target_tokens = 12;

    auto backend = std::make_shared<sarcx::knowledge::FixtureBackend>(
        testutil::fixture_path("concepts.json"));
    sarcx::knowledge::ConceptClient concepts(backend);
    sarcx::visual::StubVisionConfig stub;
    stub.seed = 23;
    stub.patch_count = config.patch_count;
    stub.feature_dim = config.width;
    sarcx::visual::StubVisionBackend vision(stub);

    std::size_t enriched = 0;
    for (const char* file : {"train.jsonl", "val.jsonl", "test.jsonl"}) {
        for (const auto& sample : sarcx::corpus::load_file(testutil::fixture_path(file))) {
            const auto result = sarcx::generator::enrich_sample(sample, vision, concepts, config);
            sarcx::enrich::validate(result.seq);
            ++enriched;
        }
    }
    if (enriched != 6) {
        return failed("expected 6 fixture samples, enriched " + std::to_string(enriched));
    }
    if (concepts.transport_calls() != 0) {
        return failed(std::to_string(concepts.transport_calls()) +
                      " knowledge transport calls in fixture mode");
    }
    if (vision.transport_calls() != 0) {
        return failed(std::to_string(vision.transport_calls()) +
                      " vision transport calls in stub mode");
    }
    return ok();
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"graph-rule-oracle", graph_rule_oracle},
        {"gradient-verification", gradient_verification},
        {"fusion-identities", fusion_identities},
        {"concept-ordering", concept_ordering},
        {"toy-overfit", toy_overfit},
        {"ablation-wiring", ablation_wiring},
        {"metrics-sanity", metrics_sanity},
        {"dataset-stats-fixture", dataset_stats_fixture},
        {"dataset-stats-moreplus", dataset_stats_moreplus},
        {"offline-integrity", offline_integrity},
    };

    int failures = 0;
    for (const auto& [name, check] : criteria) {
        Outcome outcome;
        try {
            outcome = check();
        } catch (const std::exception& e) {
            outcome = failed(std::string("unexpected exception: ") + e.what());
        }
        switch (outcome.kind) {
        case Outcome::pass:
            std::cout << "PASS " << name << '\n';
            break;
        case Outcome::fail:
            std::cout << "FAIL " << name << ": " << outcome.detail << '\n';
            ++failures;
            break;
        case Outcome::skip:
            std::cout << "SKIP " << name << ": " << outcome.detail << '\n';
            break;
        }
    }
    std::cout << (failures == 0 ? "acceptance: all runnable criteria passed"
                                : "acceptance: " + std::to_string(failures) + " criteria failed")
              << '\n';
    return failures == 0 ? 0 : 1;
}
