// Command-line surface for the enrichment/training/evaluation pipeline.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error.
// stdout carries artifacts and summaries, stderr carries diagnostics.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sarcx/corpus.hpp"
#include "sarcx/enrich.hpp"
#include "sarcx/error.hpp"
#include "sarcx/generator.hpp"
#include "sarcx/graph.hpp"
#include "sarcx/knowledge.hpp"
#include "sarcx/metrics.hpp"
#include "sarcx/text.hpp"
#include "sarcx/visual.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Shared option bundles

struct GlobalOptions {
    std::uint64_t seed = 0;
    int jobs = 1; // accepted for interface stability; this build is sequential
};

struct KnowledgeOptions {
    std::string fixture;        // path to a fixture JSON; selects offline mode
    std::string endpoint;       // HTTP endpoint; env var may override default
    bool endpoint_given = false;
    std::string cache;          // read-through cache file
    double requests_per_second = 2.0;
};

struct VisionOptions {
    std::string mode = "stub"; // stub | http
    std::string endpoint = "http://127.0.0.1:8601";
    std::string cache; // cache directory
};

struct ModelOptions {
    sarcx::generator::PipelineConfig config;
    std::string activation = "relu";
    std::string attention_scale = "sqrt";
    std::string variant = "full";

    sarcx::generator::PipelineConfig resolve() const {
        sarcx::generator::PipelineConfig out = config;
        out.activation = sarcx::reasoner::activation_from_string(activation);
        out.attention_scale = sarcx::fusion::attention_scale_from_string(attention_scale);
        out.variant = sarcx::generator::variant_from_string(variant);
        return out;
    }
};

void add_knowledge_options(CLI::App* cmd, KnowledgeOptions& opts) {
    cmd->add_option("--knowledge-fixture", opts.fixture,
                    "Offline concept fixture JSON ({token: [[phrase, weight], ...]})");
    cmd->add_option("--knowledge-endpoint", opts.endpoint,
                    "Concept service endpoint (SARCX_KNOWLEDGE_ENDPOINT overrides the default)");
    cmd->add_option("--knowledge-cache", opts.cache, "Read-through concept cache file");
    cmd->add_option("--knowledge-rps", opts.requests_per_second,
                    "Remote request rate limit (requests/second)");
}

void add_vision_options(CLI::App* cmd, VisionOptions& opts) {
    cmd->add_option("--vision", opts.mode, "Vision backend: stub | http")
        ->check(CLI::IsMember({"stub", "http"}));
    cmd->add_option("--vision-endpoint", opts.endpoint, "Vision service endpoint");
    cmd->add_option("--vision-cache", opts.cache, "Vision cache directory");
}

void add_model_options(CLI::App* cmd, ModelOptions& opts) {
    auto& c = opts.config;
    cmd->add_option("--width", c.width, "Feature width D_f")->check(CLI::PositiveNumber);
    cmd->add_option("--max-tokens", c.max_tokens, "Token sequence budget N")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--patches", c.patch_count, "Visual patch rows m")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--k-objects", c.k_objects, "Top-K detected objects kept")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--gcn-layers", c.gcn_layers, "Graph reasoner depth")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--activation", opts.activation, "Graph reasoner activation: relu|tanh|identity");
    cmd->add_option("--attention-scale", opts.attention_scale,
                    "Fusion attention scaling: sqrt | dim");
    cmd->add_option("--backbone-layers", c.backbone_layers, "Encoder/decoder depth")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--ffn-mult", c.ffn_mult, "Feed-forward width multiplier")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--max-target-tokens", c.max_target_tokens, "Explanation length budget")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--variant", opts.variant,
                    "Pipeline variant: full|-SF|-KG|-TS|-SF-TS|-KG-TS|+TS-concepts");
}

// ---------------------------------------------------------------------------
// Backend construction

std::shared_ptr<sarcx::knowledge::ConceptBackend> make_knowledge_backend(
    const KnowledgeOptions& opts) {
    std::shared_ptr<sarcx::knowledge::ConceptBackend> backend;
    if (!opts.fixture.empty()) {
        backend = std::make_shared<sarcx::knowledge::FixtureBackend>(fs::path(opts.fixture));
    } else {
        sarcx::knowledge::HttpBackendConfig config;
        config.requests_per_second = opts.requests_per_second;
        const char* env = std::getenv("SARCX_KNOWLEDGE_ENDPOINT");
        if (opts.endpoint_given) {
            config.endpoint = opts.endpoint;
        } else if (env != nullptr && *env != '\0') {
            config.endpoint = env;
        }
        backend = std::make_shared<sarcx::knowledge::HttpConceptBackend>(config);
    }
    if (!opts.cache.empty()) {
        backend = std::make_shared<sarcx::knowledge::CachingBackend>(std::move(backend),
                                                                     fs::path(opts.cache));
    }
    return backend;
}

std::shared_ptr<sarcx::visual::VisionBackend> make_vision_backend(
    const VisionOptions& opts, const sarcx::generator::PipelineConfig& config,
    std::uint64_t seed) {
    std::shared_ptr<sarcx::visual::VisionBackend> backend;
    if (opts.mode == "stub") {
        sarcx::visual::StubVisionConfig stub;
        stub.seed = seed;
        stub.patch_count = config.patch_count;
        stub.feature_dim = config.width;
        backend = std::make_shared<sarcx::visual::StubVisionBackend>(stub);
    } else {
        sarcx::visual::HttpVisionConfig http;
        http.endpoint = opts.endpoint;
        backend = std::make_shared<sarcx::visual::HttpVisionBackend>(http);
    }
    if (!opts.cache.empty()) {
        backend = std::make_shared<sarcx::visual::CachingVisionBackend>(std::move(backend),
                                                                        fs::path(opts.cache));
    }
    return backend;
}

// ---------------------------------------------------------------------------
// Provenance echo

json config_echo(const std::string& command, const GlobalOptions& global,
                 const sarcx::generator::PipelineConfig& config) {
    return json{{"command", command},
                {"seed", global.seed},
                {"jobs", global.jobs},
                {"pipeline", json::parse(config.to_json())}};
}

// First line of every JSONL artifact; readers skip records carrying
// "artifact".
void write_artifact_header(std::ostream& out, const std::string& name, const json& echo) {
    out << json{{"artifact", name}, {"config", echo}}.dump() << '\n';
}

std::ofstream open_artifact(const fs::path& path) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw sarcx::DataError("cannot write " + path.string());
    }
    return out;
}

std::vector<std::string> read_jsonl_records(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw sarcx::DataError("cannot open " + path.string());
    }
    std::vector<std::string> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        records.push_back(line);
    }
    return records;
}

bool is_artifact_header(const std::string& record) {
    auto doc = json::parse(record, nullptr, false);
    return doc.is_object() && doc.contains("artifact");
}

// ---------------------------------------------------------------------------
// stats

int run_stats(const std::string& dataset) {
    const fs::path path(dataset);
    std::vector<std::pair<std::string, sarcx::corpus::SplitStats>> rows;
    if (fs::is_directory(path)) {
        for (auto split : {sarcx::corpus::Split::train, sarcx::corpus::Split::val,
                           sarcx::corpus::Split::test}) {
            const fs::path file = path / (std::string(sarcx::corpus::split_name(split)) + ".jsonl");
            if (fs::exists(file)) {
                rows.emplace_back(std::string(sarcx::corpus::split_name(split)),
                                  sarcx::corpus::compute_stats(sarcx::corpus::load_file(file)));
            }
        }
        if (rows.empty()) {
            throw sarcx::DataError("no <split>.jsonl files under " + path.string());
        }
    } else {
        rows.emplace_back(path.stem().string(),
                          sarcx::corpus::compute_stats(sarcx::corpus::load_file(path)));
    }
    std::cout << sarcx::corpus::format_stats_table(rows);
    return 0;
}

// ---------------------------------------------------------------------------
// enrich

int run_enrich(const std::string& dataset, const std::string& out, const GlobalOptions& global,
               const KnowledgeOptions& kopts, const VisionOptions& vopts,
               const ModelOptions& mopts) {
    const auto config = mopts.resolve();
    const auto samples = sarcx::corpus::load_file(dataset);
    auto knowledge_backend = make_knowledge_backend(kopts);
    sarcx::knowledge::ConceptClient concepts(knowledge_backend);
    auto vision = make_vision_backend(vopts, config, global.seed);

    auto sink = open_artifact(out);
    write_artifact_header(sink, "enriched-sequences", config_echo("enrich", global, config));

    sarcx::knowledge::MissingReport total;
    std::size_t truncated = 0;
    for (const auto& sample : samples) {
        auto enriched = sarcx::generator::enrich_sample(sample, *vision, concepts, config);
        json record = {
            {"id", sample.id},
            {"sequence", json::parse(sarcx::enrich::to_json(enriched.seq))},
            {"diagnostics", enriched.diagnostics},
        };
        sink << record.dump() << '\n';
        total.queried += enriched.missing.queried;
        total.resolved += enriched.missing.resolved;
        for (const auto& token : enriched.missing.missing_tokens) {
            if (std::find(total.missing_tokens.begin(), total.missing_tokens.end(), token) ==
                total.missing_tokens.end()) {
                total.missing_tokens.push_back(token);
            }
        }
        truncated += enriched.seq.truncated ? 1 : 0;
        for (const auto& line : enriched.diagnostics) {
            std::cerr << sample.id << ": " << line << '\n';
        }
    }

    if (auto* caching = dynamic_cast<sarcx::knowledge::CachingBackend*>(knowledge_backend.get())) {
        caching->flush();
    }
    std::cout << "enriched " << samples.size() << " samples (" << truncated << " truncated)\n"
              << sarcx::knowledge::format_missing_report(total) << '\n'
              << "knowledge transport calls: " << concepts.transport_calls() << '\n'
              << "vision transport calls: " << vision->transport_calls() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// build-graph

int run_build_graph(const std::string& in, const std::string& out, const GlobalOptions& global) {
    const auto records = read_jsonl_records(in);
    auto sink = open_artifact(out);
    write_artifact_header(sink, "token-graphs",
                          json{{"command", "build-graph"}, {"seed", global.seed}, {"input", in}});
    std::size_t count = 0;
    for (const auto& record : records) {
        if (is_artifact_header(record)) {
            continue;
        }
        json doc;
        try {
            doc = json::parse(record);
        } catch (const json::exception& e) {
            throw sarcx::DataError(std::string("invalid enriched record: ") + e.what());
        }
        if (!doc.contains("id") || !doc.contains("sequence")) {
            throw sarcx::DataError("enriched record needs {id, sequence}");
        }
        const auto seq = sarcx::enrich::sequence_from_json(doc["sequence"].dump());
        const auto g = sarcx::graph::build_graph(seq);
        sink << json{{"id", doc["id"]}, {"graph", json::parse(sarcx::graph::to_json(g))}}.dump()
             << '\n';
        ++count;
    }
    std::cout << "built " << count << " graphs\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct PreparedCorpus {
    sarcx::backbone::Tokenizer tokenizer;
    std::vector<sarcx::generator::PreparedSample> samples;
};

PreparedCorpus prepare_corpus(const std::vector<sarcx::corpus::Sample>& samples,
                              sarcx::visual::VisionBackend& vision,
                              const sarcx::knowledge::ConceptClient& concepts,
                              const sarcx::generator::PipelineConfig& config) {
    PreparedCorpus out;
    out.tokenizer = sarcx::generator::build_tokenizer(samples, vision, concepts, config);
    for (const auto& sample : samples) {
        out.samples.push_back(
            sarcx::generator::prepare_sample(sample, vision, concepts, out.tokenizer, config));
    }
    return out;
}

int run_train(const std::string& dataset, const std::string& out, const GlobalOptions& global,
              const KnowledgeOptions& kopts, const VisionOptions& vopts,
              const ModelOptions& mopts, const sarcx::generator::TrainConfig& tconfig_in,
              const std::string& loss_out) {
    const auto config = mopts.resolve();
    const auto samples = sarcx::corpus::load_file(dataset);
    auto knowledge_backend = make_knowledge_backend(kopts);
    sarcx::knowledge::ConceptClient concepts(knowledge_backend);
    auto vision = make_vision_backend(vopts, config, global.seed);

    PreparedCorpus corpus = prepare_corpus(samples, *vision, concepts, config);
    auto pipe = sarcx::generator::Pipeline::init(config, corpus.tokenizer, global.seed);

    sarcx::generator::TrainConfig tconfig = tconfig_in;
    tconfig.seed = global.seed;
    const auto result = sarcx::generator::train(pipe, corpus.samples, tconfig);

    for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
        std::cout << "epoch " << (e + 1) << " loss " << result.epoch_losses[e] << '\n';
    }

    json meta = config_echo("train", global, config);
    meta["train"] = {{"lr_backbone", tconfig.lr_backbone},
                     {"lr_pipeline", tconfig.lr_pipeline},
                     {"epochs", tconfig.epochs},
                     {"batch_size", tconfig.batch_size},
                     {"max_steps", tconfig.max_steps},
                     {"weight_decay", tconfig.weight_decay},
                     {"shuffle", tconfig.shuffle}};
    meta["final_loss"] = result.step_losses.empty() ? 0.0 : result.step_losses.back();
    sarcx::generator::save_checkpoint(pipe, out, meta.dump());
    std::cout << "saved checkpoint " << out << " (" << result.step_losses.size() << " steps)\n";

    if (!loss_out.empty()) {
        auto sink = open_artifact(loss_out);
        sink << "step,loss\n";
        for (std::size_t i = 0; i < result.step_losses.size(); ++i) {
            sink << (i + 1) << ',' << result.step_losses[i] << '\n';
        }
    }
    if (auto* caching = dynamic_cast<sarcx::knowledge::CachingBackend*>(knowledge_backend.get())) {
        caching->flush();
    }
    return 0;
}

// ---------------------------------------------------------------------------
// generate

int run_generate(const std::string& checkpoint, const std::string& dataset,
                 const std::string& out, const GlobalOptions& global,
                 const KnowledgeOptions& kopts, const VisionOptions& vopts,
                 const sarcx::generator::DecodeConfig& decode) {
    auto pipe = sarcx::generator::load_checkpoint(checkpoint);
    const auto samples = sarcx::corpus::load_file(dataset);
    auto knowledge_backend = make_knowledge_backend(kopts);
    sarcx::knowledge::ConceptClient concepts(knowledge_backend);
    auto vision = make_vision_backend(vopts, pipe.config, global.seed);

    auto sink = open_artifact(out);
    json echo = config_echo("generate", global, pipe.config);
    echo["decode"] = {{"beam", decode.beam}, {"max_length", decode.max_length}};
    echo["checkpoint"] = checkpoint;
    write_artifact_header(sink, "generations", echo);

    for (const auto& sample : samples) {
        const auto prepared =
            sarcx::generator::prepare_sample(sample, *vision, concepts, pipe.tokenizer,
                                             pipe.config);
        const std::string explanation =
            sarcx::generator::generate_explanation(pipe, prepared, decode);
        sink << json{{"id", sample.id}, {"explanation", explanation}}.dump() << '\n';
    }
    if (auto* caching = dynamic_cast<sarcx::knowledge::CachingBackend*>(knowledge_backend.get())) {
        caching->flush();
    }
    std::cout << "generated " << samples.size() << " explanations -> " << out << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate

std::map<std::string, std::string> load_generations(const fs::path& path) {
    std::map<std::string, std::string> out;
    for (const auto& record : read_jsonl_records(path)) {
        if (is_artifact_header(record)) {
            continue;
        }
        json doc;
        try {
            doc = json::parse(record);
        } catch (const json::exception& e) {
            throw sarcx::DataError(std::string("invalid generation record: ") + e.what());
        }
        if (!doc.contains("id") || !doc.contains("explanation")) {
            throw sarcx::DataError("generation record needs {id, explanation}");
        }
        out[doc["id"].get<std::string>()] = doc["explanation"].get<std::string>();
    }
    return out;
}

sarcx::metrics::EvalReport evaluate_generations(const std::string& generated,
                                                const std::string& dataset,
                                                std::uint64_t seed, int embed_dim) {
    const auto generations = load_generations(generated);
    const auto samples = sarcx::corpus::load_file(dataset);
    std::vector<std::string> candidates, references;
    for (const auto& sample : samples) {
        auto it = generations.find(sample.id);
        if (it == generations.end()) {
            throw sarcx::DataError("no generation for sample \"" + sample.id + "\"");
        }
        candidates.push_back(it->second);
        references.push_back(sample.explanation);
    }
    sarcx::metrics::HashEmbeddingBackend embeddings(embed_dim, seed);
    return sarcx::metrics::evaluate_corpus(candidates, references, embeddings);
}

int run_evaluate(const std::string& generated, const std::string& dataset,
                 const GlobalOptions& global, int embed_dim, const std::string& name,
                 const std::string& csv_out, const std::string& samples_out) {
    const auto report = evaluate_generations(generated, dataset, global.seed, embed_dim);
    const std::vector<std::pair<std::string, sarcx::metrics::EvalReport>> rows = {{name, report}};
    std::cout << sarcx::metrics::report_table(rows);
    if (!csv_out.empty()) {
        open_artifact(csv_out) << sarcx::metrics::report_csv(rows);
    }
    if (!samples_out.empty()) {
        open_artifact(samples_out) << sarcx::metrics::report_jsonl(report);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// ablate

std::string variant_slug(sarcx::generator::AblationVariant v) {
    using sarcx::generator::AblationVariant;
    switch (v) {
    case AblationVariant::full: return "full";
    case AblationVariant::minus_sf: return "minus-sf";
    case AblationVariant::minus_kg: return "minus-kg";
    case AblationVariant::minus_ts: return "minus-ts";
    case AblationVariant::minus_sf_ts: return "minus-sf-ts";
    case AblationVariant::minus_kg_ts: return "minus-kg-ts";
    case AblationVariant::plus_ts_concepts: return "plus-ts-concepts";
    }
    return "unknown";
}

int run_ablate(const std::string& dataset, const std::string& out_dir,
               const GlobalOptions& global, const KnowledgeOptions& kopts,
               const VisionOptions& vopts, const ModelOptions& mopts,
               const sarcx::generator::TrainConfig& tconfig_in,
               const sarcx::generator::DecodeConfig& decode, int embed_dim) {
    const auto base_config = mopts.resolve();
    const auto samples = sarcx::corpus::load_file(dataset);
    auto knowledge_backend = make_knowledge_backend(kopts);
    sarcx::knowledge::ConceptClient concepts(knowledge_backend);
    auto vision = make_vision_backend(vopts, base_config, global.seed);
    fs::create_directories(out_dir);

    // The tokenizer covers the concept-richest sequences, so one vocabulary
    // serves every variant.
    auto tokenizer =
        sarcx::generator::build_tokenizer(samples, *vision, concepts, base_config);

    // Prepared inputs only depend on the variant through the sequence shape
    // (target appended or not, target concepts or not), so variants sharing a
    // shape share one preparation pass.
    std::map<std::pair<bool, bool>, std::vector<sarcx::generator::PreparedSample>> prepared;
    auto prepared_for = [&](sarcx::generator::AblationVariant v)
        -> const std::vector<sarcx::generator::PreparedSample>& {
        const auto key = std::make_pair(sarcx::generator::uses_target(v),
                                        sarcx::generator::uses_target_concepts(v));
        auto it = prepared.find(key);
        if (it == prepared.end()) {
            sarcx::generator::PipelineConfig config = base_config;
            config.variant = v;
            std::vector<sarcx::generator::PreparedSample> batch;
            for (const auto& sample : samples) {
                batch.push_back(sarcx::generator::prepare_sample(sample, *vision, concepts,
                                                                 tokenizer, config));
            }
            it = prepared.emplace(key, std::move(batch)).first;
        }
        return it->second;
    };

    std::vector<std::pair<std::string, sarcx::metrics::EvalReport>> rows;
    sarcx::metrics::HashEmbeddingBackend embeddings(embed_dim, global.seed);
    for (auto variant : sarcx::generator::all_variants()) {
        sarcx::generator::PipelineConfig config = base_config;
        config.variant = variant;
        auto pipe = sarcx::generator::Pipeline::init(config, tokenizer, global.seed);

        sarcx::generator::TrainConfig tconfig = tconfig_in;
        tconfig.seed = global.seed;
        const auto& data = prepared_for(variant);
        const auto result = sarcx::generator::train(pipe, data, tconfig);

        std::vector<std::string> candidates, references;
        for (const auto& sample : data) {
            candidates.push_back(
                sarcx::text::join(sarcx::generator::generate_tokens(pipe, sample, decode)));
            references.push_back(sarcx::text::join(sample.reference_tokens));
        }
        rows.emplace_back(sarcx::generator::to_string(variant),
                          sarcx::metrics::evaluate_corpus(candidates, references, embeddings));

        json meta = config_echo("ablate", global, config);
        meta["final_loss"] = result.step_losses.empty() ? 0.0 : result.step_losses.back();
        sarcx::generator::save_checkpoint(
            pipe, fs::path(out_dir) / (variant_slug(variant) + ".ckpt"), meta.dump());
        std::cerr << "variant " << sarcx::generator::to_string(variant) << " trained ("
                  << result.step_losses.size() << " steps)\n";
    }

    const std::string table = sarcx::metrics::report_table(rows);
    std::cout << table;
    open_artifact(fs::path(out_dir) / "ablation.txt") << table;
    open_artifact(fs::path(out_dir) / "ablation.csv") << sarcx::metrics::report_csv(rows);
    if (auto* caching = dynamic_cast<sarcx::knowledge::CachingBackend*>(knowledge_backend.get())) {
        caching->flush();
    }
    return 0;
}

// ---------------------------------------------------------------------------
// cache

int run_cache_inspect(const std::string& path) {
    const fs::path p(path);
    if (fs::is_directory(p)) {
        std::size_t files = 0;
        for (const auto& entry : fs::directory_iterator(p)) {
            if (entry.is_regular_file()) {
                ++files;
            }
        }
        std::cout << "cache directory " << p.string() << ": " << files << " entries\n";
        return 0;
    }
    const auto entries = sarcx::knowledge::load_neighbor_map(p);
    std::size_t with_neighbors = 0;
    for (const auto& [token, neighbors] : entries) {
        with_neighbors += neighbors.empty() ? 0 : 1;
    }
    std::cout << "cache file " << p.string() << ": " << entries.size() << " tokens, "
              << with_neighbors << " with neighbors\n";
    return 0;
}

int run_cache_clear(const std::string& path) {
    const fs::path p(path);
    if (!fs::exists(p)) {
        std::cout << "cache " << p.string() << " already empty\n";
        return 0;
    }
    std::size_t removed = 0;
    if (fs::is_directory(p)) {
        for (const auto& entry : fs::directory_iterator(p)) {
            removed += fs::remove_all(entry.path());
        }
    } else {
        removed = fs::remove(p) ? 1 : 0;
    }
    std::cout << "cleared " << removed << " cache entries from " << p.string() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Knowledge-enriched multimodal explanation pipeline"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Key-value config file; command-line flags override");

    GlobalOptions global;
    app.add_option("--seed", global.seed, "Seed for all derived random streams");
    app.add_option("--jobs", global.jobs, "Worker cap (this build runs sequentially)")
        ->check(CLI::PositiveNumber);

    // stats
    auto* stats = app.add_subcommand("stats", "Dataset split statistics");
    std::string stats_dataset;
    stats->add_option("dataset", stats_dataset, "Split file or dataset directory")->required();

    // enrich
    auto* enrich = app.add_subcommand("enrich", "Build knowledge-enriched token sequences");
    std::string enrich_dataset, enrich_out;
    KnowledgeOptions enrich_k;
    VisionOptions enrich_v;
    ModelOptions enrich_m;
    enrich->add_option("--dataset", enrich_dataset, "Input split JSONL")->required();
    enrich->add_option("--out", enrich_out, "Output JSONL")->required();
    add_knowledge_options(enrich, enrich_k);
    add_vision_options(enrich, enrich_v);
    add_model_options(enrich, enrich_m);

    // build-graph
    auto* build_graph = app.add_subcommand("build-graph", "Token graphs from enriched sequences");
    std::string graph_in, graph_out;
    build_graph->add_option("--in", graph_in, "Enriched JSONL")->required();
    build_graph->add_option("--out", graph_out, "Output JSONL")->required();

    // train
    auto* train = app.add_subcommand("train", "Train the generation pipeline");
    std::string train_dataset, train_out, train_loss_out;
    KnowledgeOptions train_k;
    VisionOptions train_v;
    ModelOptions train_m;
    sarcx::generator::TrainConfig train_t;
    train->add_option("--dataset", train_dataset, "Training split JSONL")->required();
    train->add_option("--out", train_out, "Checkpoint path")->required();
    train->add_option("--loss-out", train_loss_out, "Per-step loss CSV");
    add_knowledge_options(train, train_k);
    add_vision_options(train, train_v);
    add_model_options(train, train_m);
    train->add_option("--lr-backbone", train_t.lr_backbone, "Backbone learning rate");
    train->add_option("--lr-pipeline", train_t.lr_pipeline,
                      "Graph/fusion/projection learning rate");
    train->add_option("--epochs", train_t.epochs, "Training epochs")->check(CLI::PositiveNumber);
    train->add_option("--batch-size", train_t.batch_size, "Batch size")
        ->check(CLI::PositiveNumber);
    train->add_option("--max-steps", train_t.max_steps, "Optimizer step cap (0 = epochs)")
        ->check(CLI::NonNegativeNumber);
    train->add_option("--weight-decay", train_t.weight_decay, "Decoupled weight decay");
    train->add_flag("--no-shuffle{false}", train_t.shuffle, "Keep dataset order each epoch");

    // generate
    auto* generate = app.add_subcommand("generate", "Decode explanations from a checkpoint");
    std::string gen_checkpoint, gen_dataset, gen_out;
    KnowledgeOptions gen_k;
    VisionOptions gen_v;
    sarcx::generator::DecodeConfig gen_d;
    generate->add_option("--checkpoint", gen_checkpoint, "Trained checkpoint")->required();
    generate->add_option("--dataset", gen_dataset, "Split JSONL")->required();
    generate->add_option("--out", gen_out, "Output JSONL")->required();
    generate->add_option("--beam", gen_d.beam, "Beam width (1 = greedy)")
        ->check(CLI::PositiveNumber);
    generate->add_option("--max-length", gen_d.max_length, "Decode length cap")
        ->check(CLI::PositiveNumber);
    add_knowledge_options(generate, gen_k);
    add_vision_options(generate, gen_v);

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Score generations against references");
    std::string eval_generated, eval_dataset, eval_name = "model", eval_csv, eval_samples;
    int eval_dim = 64;
    evaluate->add_option("--generated", eval_generated, "Generations JSONL")->required();
    evaluate->add_option("--dataset", eval_dataset, "Reference split JSONL")->required();
    evaluate->add_option("--name", eval_name, "Row label");
    evaluate->add_option("--csv", eval_csv, "CSV report path");
    evaluate->add_option("--samples", eval_samples, "Per-sample JSONL path");
    evaluate->add_option("--embed-dim", eval_dim, "Hash embedding dimension")
        ->check(CLI::PositiveNumber);

    // ablate
    auto* ablate = app.add_subcommand("ablate", "Train and score all pipeline variants");
    std::string ablate_dataset, ablate_out;
    KnowledgeOptions ablate_k;
    VisionOptions ablate_v;
    ModelOptions ablate_m;
    sarcx::generator::TrainConfig ablate_t;
    sarcx::generator::DecodeConfig ablate_d;
    int ablate_dim = 64;
    ablate->add_option("--dataset", ablate_dataset, "Training split JSONL")->required();
    ablate->add_option("--out-dir", ablate_out, "Artifact directory")->required();
    add_knowledge_options(ablate, ablate_k);
    add_vision_options(ablate, ablate_v);
    add_model_options(ablate, ablate_m);
    ablate->add_option("--epochs", ablate_t.epochs, "Training epochs")
        ->check(CLI::PositiveNumber);
    ablate->add_option("--batch-size", ablate_t.batch_size, "Batch size")
        ->check(CLI::PositiveNumber);
    ablate->add_option("--max-steps", ablate_t.max_steps, "Optimizer step cap (0 = epochs)")
        ->check(CLI::NonNegativeNumber);
    ablate->add_option("--lr-backbone", ablate_t.lr_backbone, "Backbone learning rate");
    ablate->add_option("--lr-pipeline", ablate_t.lr_pipeline,
                       "Graph/fusion/projection learning rate");
    ablate->add_option("--beam", ablate_d.beam, "Beam width")->check(CLI::PositiveNumber);
    ablate->add_option("--max-length", ablate_d.max_length, "Decode length cap")
        ->check(CLI::PositiveNumber);
    ablate->add_option("--embed-dim", ablate_dim, "Hash embedding dimension")
        ->check(CLI::PositiveNumber);

    // cache
    auto* cache = app.add_subcommand("cache", "Inspect or clear backend caches");
    cache->require_subcommand(1);
    auto* cache_inspect = cache->add_subcommand("inspect", "Summarize a cache file/directory");
    auto* cache_clear = cache->add_subcommand("clear", "Delete cache contents");
    std::string cache_inspect_path, cache_clear_path;
    cache_inspect->add_option("path", cache_inspect_path, "Cache file or directory")->required();
    cache_clear->add_option("path", cache_clear_path, "Cache file or directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        enrich_k.endpoint_given = enrich->count("--knowledge-endpoint") > 0;
        train_k.endpoint_given = train->count("--knowledge-endpoint") > 0;
        gen_k.endpoint_given = generate->count("--knowledge-endpoint") > 0;
        ablate_k.endpoint_given = ablate->count("--knowledge-endpoint") > 0;

        if (stats->parsed()) {
            return run_stats(stats_dataset);
        }
        if (enrich->parsed()) {
            return run_enrich(enrich_dataset, enrich_out, global, enrich_k, enrich_v, enrich_m);
        }
        if (build_graph->parsed()) {
            return run_build_graph(graph_in, graph_out, global);
        }
        if (train->parsed()) {
            return run_train(train_dataset, train_out, global, train_k, train_v, train_m,
                             train_t, train_loss_out);
        }
        if (generate->parsed()) {
            return run_generate(gen_checkpoint, gen_dataset, gen_out, global, gen_k, gen_v,
                                gen_d);
        }
        if (evaluate->parsed()) {
            return run_evaluate(eval_generated, eval_dataset, global, eval_dim, eval_name,
                                eval_csv, eval_samples);
        }
        if (ablate->parsed()) {
            return run_ablate(ablate_dataset, ablate_out, global, ablate_k, ablate_v, ablate_m,
                              ablate_t, ablate_d, ablate_dim);
        }
        if (cache_inspect->parsed()) {
            return run_cache_inspect(cache_inspect_path);
        }
        if (cache_clear->parsed()) {
            return run_cache_clear(cache_clear_path);
        }
        std::cerr << "no command selected\n";
        return 1;
    } catch (const sarcx::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
