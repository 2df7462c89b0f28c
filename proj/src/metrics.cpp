#include "sarcx/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "sarcx/error.hpp"
#include "sarcx/rng.hpp"
#include "sarcx/text.hpp"

namespace sarcx::metrics {

// ---------------------------------------------------------------------------
// Hash embedding backend

HashEmbeddingBackend::HashEmbeddingBackend(int dim, std::uint64_t seed)
    : dim_(dim), seed_(seed) {
    if (dim < 1) {
        throw UsageError("HashEmbeddingBackend: dimension must be positive");
    }
}

std::string HashEmbeddingBackend::version() const {
    return "hash-embed/1 dim=" + std::to_string(dim_) + " seed=" + std::to_string(seed_);
}

Vector HashEmbeddingBackend::token_vector(const std::string& token) const {
    Rng rng(hash64(token) ^ seed_ ^ 0x9e3779b97f4a7c15ull);
    Vector v(dim_);
    for (int i = 0; i < dim_; ++i) {
        v(i) = rng.normal();
    }
    const double norm = v.norm();
    return norm > 0.0 ? Vector(v / norm) : v;
}

Matrix HashEmbeddingBackend::embed_tokens(const std::vector<std::string>& tokens) const {
    Matrix out(static_cast<Eigen::Index>(tokens.size()), dim_);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = token_vector(tokens[i]).transpose();
    }
    return out;
}

Vector HashEmbeddingBackend::embed_sentence(const std::vector<std::string>& tokens) const {
    Vector sum = Vector::Zero(dim_);
    for (const auto& token : tokens) {
        sum += token_vector(token);
    }
    const double norm = sum.norm();
    return norm > 0.0 ? Vector(sum / norm) : sum;
}

// ---------------------------------------------------------------------------
// n-gram utilities

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const std::vector<std::string>& tokens, std::size_t n) {
    NgramCounts counts;
    if (n == 0 || tokens.size() < n) {
        return counts;
    }
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                          tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return counts;
}

std::size_t clipped_overlap(const NgramCounts& cand, const NgramCounts& ref) {
    std::size_t overlap = 0;
    for (const auto& [gram, count] : cand) {
        auto it = ref.find(gram);
        if (it != ref.end()) {
            overlap += std::min(count, it->second);
        }
    }
    return overlap;
}

double clamp_pct(double fraction) { return std::clamp(fraction, 0.0, 1.0) * 100.0; }

double f1(double p, double r) { return (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

} // namespace

// ---------------------------------------------------------------------------
// Corpus n-gram score with brevity penalty

std::vector<double> corpus_bleu(const std::vector<std::vector<std::string>>& candidates,
                                const std::vector<std::vector<std::string>>& references,
                                int max_n, bool smoothing) {
    if (candidates.size() != references.size()) {
        throw UsageError("corpus_bleu: candidate/reference counts differ");
    }
    if (candidates.empty()) {
        throw UsageError("corpus_bleu: empty corpus");
    }
    if (max_n < 1) {
        throw UsageError("corpus_bleu: max_n must be positive");
    }

    std::vector<std::size_t> matches(static_cast<std::size_t>(max_n), 0);
    std::vector<std::size_t> totals(static_cast<std::size_t>(max_n), 0);
    std::size_t cand_len = 0, ref_len = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        cand_len += candidates[i].size();
        ref_len += references[i].size();
        for (int n = 1; n <= max_n; ++n) {
            const auto cand = count_ngrams(candidates[i], static_cast<std::size_t>(n));
            const auto ref = count_ngrams(references[i], static_cast<std::size_t>(n));
            matches[static_cast<std::size_t>(n - 1)] += clipped_overlap(cand, ref);
            for (const auto& [gram, count] : cand) {
                totals[static_cast<std::size_t>(n - 1)] += count;
            }
        }
    }

    const double bp =
        cand_len == 0 ? 0.0
        : cand_len >= ref_len
            ? 1.0
            : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));

    // Modified precision per order; epsilon substitution only for orders >= 2
    // so a fully disjoint corpus still reports an exact unigram zero.
    constexpr double kEpsilon = 0.1;
    std::vector<double> precisions(static_cast<std::size_t>(max_n), 0.0);
    for (int n = 1; n <= max_n; ++n) {
        const auto idx = static_cast<std::size_t>(n - 1);
        if (totals[idx] == 0) {
            precisions[idx] = 0.0;
        } else if (matches[idx] == 0 && smoothing && n >= 2) {
            precisions[idx] = kEpsilon / static_cast<double>(totals[idx]);
        } else {
            precisions[idx] = static_cast<double>(matches[idx]) / static_cast<double>(totals[idx]);
        }
    }

    std::vector<double> scores(static_cast<std::size_t>(max_n), 0.0);
    double log_sum = 0.0;
    bool dead = false;
    for (int n = 1; n <= max_n; ++n) {
        const auto idx = static_cast<std::size_t>(n - 1);
        if (precisions[idx] <= 0.0) {
            dead = true;
        } else {
            log_sum += std::log(precisions[idx]);
        }
        scores[idx] = dead ? 0.0 : bp * std::exp(log_sum / n);
    }
    return scores;
}

// ---------------------------------------------------------------------------
// Overlap F-measures

RougeScores rouge_scores(const std::vector<std::string>& candidate,
                         const std::vector<std::string>& reference) {
    RougeScores out;
    for (std::size_t n : {std::size_t{1}, std::size_t{2}}) {
        const auto cand = count_ngrams(candidate, n);
        const auto ref = count_ngrams(reference, n);
        std::size_t cand_total = 0, ref_total = 0;
        for (const auto& [gram, count] : cand) cand_total += count;
        for (const auto& [gram, count] : ref) ref_total += count;
        double score = 0.0;
        if (cand_total > 0 && ref_total > 0) {
            const auto overlap = static_cast<double>(clipped_overlap(cand, ref));
            score = f1(overlap / static_cast<double>(cand_total),
                       overlap / static_cast<double>(ref_total));
        }
        (n == 1 ? out.r1 : out.r2) = score;
    }

    // Longest common subsequence, classic O(len(c)·len(r)) table.
    const std::size_t cl = candidate.size(), rl = reference.size();
    if (cl > 0 && rl > 0) {
        std::vector<std::size_t> prev(rl + 1, 0), curr(rl + 1, 0);
        for (std::size_t i = 1; i <= cl; ++i) {
            for (std::size_t j = 1; j <= rl; ++j) {
                curr[j] = candidate[i - 1] == reference[j - 1]
                              ? prev[j - 1] + 1
                              : std::max(prev[j], curr[j - 1]);
            }
            std::swap(prev, curr);
        }
        const auto lcs = static_cast<double>(prev[rl]);
        out.rl = f1(lcs / static_cast<double>(cl), lcs / static_cast<double>(rl));
    }
    return out;
}

double meteor_score(const std::vector<std::string>& candidate,
                    const std::vector<std::string>& reference) {
    if (candidate.empty() || reference.empty()) {
        return 0.0;
    }
    // Greedy leftmost exact alignment: candidate tokens scan left to right,
    // each taking the first unused matching reference position.
    std::vector<bool> used(reference.size(), false);
    std::vector<std::ptrdiff_t> aligned_ref; // per aligned candidate token, in candidate order
    for (const auto& token : candidate) {
        for (std::size_t j = 0; j < reference.size(); ++j) {
            if (!used[j] && reference[j] == token) {
                used[j] = true;
                aligned_ref.push_back(static_cast<std::ptrdiff_t>(j));
                break;
            }
        }
    }
    const auto m = static_cast<double>(aligned_ref.size());
    if (aligned_ref.empty()) {
        return 0.0;
    }
    const double p = m / static_cast<double>(candidate.size());
    const double r = m / static_cast<double>(reference.size());
    const double f_mean = 10.0 * p * r / (r + 9.0 * p);

    // Chunks: maximal runs where consecutive aligned candidate tokens map to
    // consecutive reference positions.
    std::size_t chunks = 1;
    for (std::size_t i = 1; i < aligned_ref.size(); ++i) {
        if (aligned_ref[i] != aligned_ref[i - 1] + 1) {
            ++chunks;
        }
    }
    const double penalty = 0.5 * std::pow(static_cast<double>(chunks) / m, 3.0);
    return f_mean * (1.0 - penalty);
}

double cosine_similarity(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) {
        throw UsageError("cosine_similarity: dimension mismatch");
    }
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    return a.dot(b) / (na * nb);
}

PrfScores greedy_embedding_match(const std::vector<std::string>& candidate,
                                 const std::vector<std::string>& reference,
                                 const EmbeddingBackend& backend) {
    PrfScores out;
    if (candidate.empty() || reference.empty()) {
        return out;
    }
    const Matrix ce = backend.embed_tokens(candidate);
    const Matrix re = backend.embed_tokens(reference);
    if (ce.cols() != re.cols()) {
        throw BackendError("embedding backend returned inconsistent dimensions");
    }

    // Pairwise cosines; rows = candidate tokens, cols = reference tokens.
    Matrix sim(ce.rows(), re.rows());
    for (Eigen::Index i = 0; i < ce.rows(); ++i) {
        for (Eigen::Index j = 0; j < re.rows(); ++j) {
            sim(i, j) = cosine_similarity(ce.row(i).transpose(), re.row(j).transpose());
        }
    }
    const double p = std::clamp(sim.rowwise().maxCoeff().mean(), 0.0, 1.0);
    const double r = std::clamp(sim.colwise().maxCoeff().mean(), 0.0, 1.0);
    out.p = p;
    out.r = r;
    out.f1 = f1(p, r);
    return out;
}

// ---------------------------------------------------------------------------
// Corpus evaluation

EvalReport evaluate_corpus(const std::vector<std::string>& candidates,
                           const std::vector<std::string>& references,
                           const EmbeddingBackend& backend, const EvalConfig& config) {
    if (candidates.size() != references.size()) {
        throw UsageError("evaluate_corpus: " + std::to_string(candidates.size()) +
                         " candidates vs " + std::to_string(references.size()) + " references");
    }
    if (candidates.empty()) {
        throw UsageError("evaluate_corpus: empty corpus");
    }

    std::vector<std::vector<std::string>> cand_tokens, ref_tokens;
    cand_tokens.reserve(candidates.size());
    ref_tokens.reserve(references.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        cand_tokens.push_back(text::metric_tokenize(candidates[i]));
        ref_tokens.push_back(text::metric_tokenize(references[i]));
    }

    EvalReport report;
    report.tokenizer_version = text::kMetricTokenizerVersion;
    report.embedding_version = backend.version();

    const auto bleu = corpus_bleu(cand_tokens, ref_tokens, 4, config.bleu_smoothing);
    report.b1 = clamp_pct(bleu[0]);
    report.b2 = clamp_pct(bleu[1]);
    report.b3 = clamp_pct(bleu[2]);
    report.b4 = clamp_pct(bleu[3]);

    double r1 = 0.0, r2 = 0.0, rl = 0.0, meteor = 0.0;
    double bs_p = 0.0, bs_r = 0.0, bs_f1 = 0.0, sentbert = 0.0;
    for (std::size_t i = 0; i < cand_tokens.size(); ++i) {
        SampleScores s;
        s.index = i;
        const RougeScores rouge = rouge_scores(cand_tokens[i], ref_tokens[i]);
        s.r1 = clamp_pct(rouge.r1);
        s.r2 = clamp_pct(rouge.r2);
        s.rl = clamp_pct(rouge.rl);
        s.meteor = clamp_pct(meteor_score(cand_tokens[i], ref_tokens[i]));
        const PrfScores prf = greedy_embedding_match(cand_tokens[i], ref_tokens[i], backend);
        s.bs_p = clamp_pct(prf.p);
        s.bs_r = clamp_pct(prf.r);
        s.bs_f1 = clamp_pct(prf.f1);
        s.sentbert = clamp_pct(std::clamp(
            cosine_similarity(backend.embed_sentence(cand_tokens[i]),
                              backend.embed_sentence(ref_tokens[i])),
            0.0, 1.0));

        r1 += s.r1;
        r2 += s.r2;
        rl += s.rl;
        meteor += s.meteor;
        bs_p += s.bs_p;
        bs_r += s.bs_r;
        bs_f1 += s.bs_f1;
        sentbert += s.sentbert;
        report.samples.push_back(s);
    }
    const auto count = static_cast<double>(cand_tokens.size());
    report.r1 = r1 / count;
    report.r2 = r2 / count;
    report.rl = rl / count;
    report.meteor = meteor / count;
    report.bs_p = bs_p / count;
    report.bs_r = bs_r / count;
    report.bs_f1 = bs_f1 / count;
    report.sentbert = sentbert / count;
    return report;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

constexpr const char* kColumns[] = {"B1",   "B2", "B3",   "B4",   "RL",   "R1",
                                    "R2",   "M",  "BS-P", "BS-R", "BS-F1", "SB"};

std::vector<double> column_values(const EvalReport& r) {
    return {r.b1, r.b2,     r.b3,   r.b4,   r.rl,    r.r1,
            r.r2, r.meteor, r.bs_p, r.bs_r, r.bs_f1, r.sentbert};
}

std::string fixed2(double v) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(2) << v;
    return out.str();
}

} // namespace

std::string report_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
    if (rows.empty()) {
        throw UsageError("report_table: no reports");
    }
    std::size_t name_width = 5;
    for (const auto& [name, report] : rows) {
        name_width = std::max(name_width, name.size());
    }
    std::ostringstream out;
    out << std::left << std::setw(static_cast<int>(name_width)) << "model";
    for (const char* column : kColumns) {
        out << "  " << std::right << std::setw(6) << column;
    }
    out << '\n';
    for (const auto& [name, report] : rows) {
        out << std::left << std::setw(static_cast<int>(name_width)) << name;
        for (double value : column_values(report)) {
            out << "  " << std::right << std::setw(6) << fixed2(value);
        }
        out << '\n';
    }
    return out.str();
}

std::string report_csv(const std::vector<std::pair<std::string, EvalReport>>& rows) {
    if (rows.empty()) {
        throw UsageError("report_csv: no reports");
    }
    std::ostringstream out;
    out << "model";
    for (const char* column : kColumns) {
        out << ',' << column;
    }
    out << ",tokenizer,embedding\n";
    for (const auto& [name, report] : rows) {
        out << name;
        for (double value : column_values(report)) {
            out << ',' << fixed2(value);
        }
        out << ',' << report.tokenizer_version << ',' << report.embedding_version << '\n';
    }
    return out.str();
}

std::string report_jsonl(const EvalReport& report) {
    std::ostringstream out;
    for (const auto& s : report.samples) {
        nlohmann::json line = {
            {"index", s.index}, {"r1", s.r1},     {"r2", s.r2},     {"rl", s.rl},
            {"meteor", s.meteor}, {"bs_p", s.bs_p}, {"bs_r", s.bs_r}, {"bs_f1", s.bs_f1},
            {"sentbert", s.sentbert},
        };
        out << line.dump() << '\n';
    }
    return out.str();
}

} // namespace sarcx::metrics
