#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace sarcx::corpus {

// One social-media post: an image reference, its caption, the annotated
// target of the sarcasm, and the gold explanation.
struct Sample {
    std::string id;
    std::string image_ref;
    std::string caption;
    std::string explanation;
    std::string target;
    // Set while loading when an image root is supplied; samples whose image
    // file cannot be found are kept but flagged.
    bool image_ok = true;

    bool operator==(const Sample&) const = default;
};

struct SplitStats {
    std::size_t sample_count = 0;
    double avg_caption_len = 0.0;
    double avg_explanation_len = 0.0;
    double avg_target_len = 0.0;
    std::size_t caption_vocab = 0;
    std::size_t explanation_vocab = 0;
    std::size_t target_vocab = 0;
};

enum class Split { train, val, test };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

// Loads one JSONL dataset file: one object per line with keys
// {id, image, caption, explanation, target}. Malformed records are rejected
// with their line number. Text fields are NFC-normalized at load.
std::vector<Sample> load_file(const std::filesystem::path& file,
                              const std::filesystem::path& image_root = {});

// `path` may be the split file itself or a dataset directory containing
// <split>.jsonl.
std::vector<Sample> load_split(const std::filesystem::path& path, Split split,
                               const std::filesystem::path& image_root = {});

// Inverse of load_file for valid samples (round-trip identity).
void save_samples(const std::vector<Sample>& samples, const std::filesystem::path& file);

// Averages are over whitespace tokens of lowercased text; vocabularies count
// distinct lowercased tokens. Empty input yields all-zero stats.
SplitStats compute_stats(const std::vector<Sample>& samples);

// Aligned table, one row per named split.
std::string format_stats_table(const std::vector<std::pair<std::string, SplitStats>>& rows);

} // namespace sarcx::corpus
