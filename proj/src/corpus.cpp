#include "sarcx/corpus.hpp"

#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "sarcx/error.hpp"
#include "sarcx/text.hpp"

namespace sarcx::corpus {

using nlohmann::json;

std::string_view split_name(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "val" || name == "validation") return Split::val;
    if (name == "test") return Split::test;
    throw UsageError("unknown split: " + std::string(name));
}

namespace {

std::string require_string_field(const json& record, const char* key, std::size_t line_no,
                                 bool allow_empty) {
    auto it = record.find(key);
    if (it == record.end()) {
        throw DataError("line " + std::to_string(line_no) + ": missing field \"" + key + "\"");
    }
    if (!it->is_string()) {
        throw DataError("line " + std::to_string(line_no) + ": field \"" + key +
                        "\" must be a string");
    }
    std::string value = it->get<std::string>();
    if (!allow_empty && value.empty()) {
        throw DataError("line " + std::to_string(line_no) + ": field \"" + key +
                        "\" must be non-empty");
    }
    return value;
}

} // namespace

std::vector<Sample> load_file(const std::filesystem::path& file,
                              const std::filesystem::path& image_root) {
    std::ifstream in(file);
    if (!in) {
        throw DataError("cannot open dataset file: " + file.string());
    }

    std::vector<Sample> samples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        line_no++;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

        json record;
        try {
            record = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError("line " + std::to_string(line_no) + ": invalid JSON: " + e.what());
        }
        if (!record.is_object()) {
            throw DataError("line " + std::to_string(line_no) + ": record must be a JSON object");
        }

        Sample s;
        s.id = require_string_field(record, "id", line_no, false);
        s.image_ref = require_string_field(record, "image", line_no, true);
        s.caption = text::nfc(require_string_field(record, "caption", line_no, false));
        s.explanation = text::nfc(require_string_field(record, "explanation", line_no, false));
        s.target = text::nfc(require_string_field(record, "target", line_no, false));
        if (!image_root.empty()) {
            s.image_ok = std::filesystem::exists(image_root / s.image_ref);
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

std::vector<Sample> load_split(const std::filesystem::path& path, Split split,
                               const std::filesystem::path& image_root) {
    std::filesystem::path file = path;
    if (std::filesystem::is_directory(path)) {
        file = path / (std::string(split_name(split)) + ".jsonl");
    }
    if (!std::filesystem::exists(file)) {
        throw DataError("dataset file not found: " + file.string());
    }
    return load_file(file, image_root);
}

void save_samples(const std::vector<Sample>& samples, const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) {
        throw DataError("cannot write dataset file: " + file.string());
    }
    for (const Sample& s : samples) {
        json record = {{"id", s.id},
                       {"image", s.image_ref},
                       {"caption", s.caption},
                       {"explanation", s.explanation},
                       {"target", s.target}};
        out << record.dump() << "\n";
    }
}

namespace {

struct FieldAccumulator {
    std::size_t token_total = 0;
    std::unordered_set<std::string> vocab;

    void add(const std::string& raw) {
        for (auto& tok : text::split_whitespace(text::lower(raw))) {
            token_total++;
            vocab.insert(std::move(tok));
        }
    }
};

} // namespace

SplitStats compute_stats(const std::vector<Sample>& samples) {
    SplitStats stats;
    stats.sample_count = samples.size();
    if (samples.empty()) return stats;

    FieldAccumulator caption, explanation, target;
    for (const Sample& s : samples) {
        caption.add(s.caption);
        explanation.add(s.explanation);
        target.add(s.target);
    }
    const double n = static_cast<double>(samples.size());
    stats.avg_caption_len = static_cast<double>(caption.token_total) / n;
    stats.avg_explanation_len = static_cast<double>(explanation.token_total) / n;
    stats.avg_target_len = static_cast<double>(target.token_total) / n;
    stats.caption_vocab = caption.vocab.size();
    stats.explanation_vocab = explanation.vocab.size();
    stats.target_vocab = target.vocab.size();
    return stats;
}

std::string format_stats_table(const std::vector<std::pair<std::string, SplitStats>>& rows) {
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-12s %9s %12s %10s %12s %10s %12s %10s\n", "split",
                  "samples", "cap.len", "cap.voc", "expl.len", "expl.voc", "target.len",
                  "target.voc");
    out << buf;
    for (const auto& [name, s] : rows) {
        std::snprintf(buf, sizeof(buf), "%-12s %9zu %12.2f %10zu %12.2f %10zu %12.2f %10zu\n",
                      name.c_str(), s.sample_count, s.avg_caption_len, s.caption_vocab,
                      s.avg_explanation_len, s.explanation_vocab, s.avg_target_len,
                      s.target_vocab);
        out << buf;
    }
    return out.str();
}

} // namespace sarcx::corpus
