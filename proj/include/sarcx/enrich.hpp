#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sarcx/knowledge.hpp"

namespace sarcx::enrich {

// Reserved separator between the knowledge sequence and the appended target
// phrase; resolved to a real vocabulary id by the generator's tokenizer.
inline constexpr const char* kSeparatorToken = "<sep>";

// Default sequence budget (padding happens downstream at embedding time).
inline constexpr std::size_t kDefaultMaxTokens = 256;

enum class SegmentKind {
    caption,
    caption_concepts,
    description,
    description_concepts,
    objects,
    object_concepts,
    separator,
    target,
    target_concepts,
};

const char* to_string(SegmentKind kind);
SegmentKind segment_kind_from_string(const std::string& name);

// One concept attachment: the source token at `source_index` owns the concept
// tokens in [start, end), weighted by the knowledge relevance score.
struct ConceptLink {
    std::size_t source_index = 0;
    std::size_t start = 0;
    std::size_t end = 0;
    double relevance = 0.0;

    bool operator==(const ConceptLink&) const = default;
};

struct Segment {
    SegmentKind kind = SegmentKind::caption;
    std::size_t start = 0;
    std::size_t end = 0;            // [start, end), may be empty
    std::vector<ConceptLink> links; // concept segments only

    std::size_t size() const { return end - start; }
    bool operator==(const Segment&) const = default;
};

// A token sequence with provenance segments. Segment spans tile [0, size())
// in the fixed order: caption, caption_concepts, description,
// description_concepts, objects, object_concepts, then optionally separator,
// target, target_concepts.
struct EnrichedSequence {
    std::vector<std::string> tokens;
    std::vector<Segment> segments;
    bool truncated = false;

    std::size_t size() const { return tokens.size(); }
    const Segment* find(SegmentKind kind) const;
    bool has_target() const { return find(SegmentKind::separator) != nullptr; }

    bool operator==(const EnrichedSequence&) const = default;
};

// Concatenates caption + caption concepts + description + description
// concepts + objects + object concepts. Within every concept segment the
// concepts appear in source-token order (source j < k implies concept
// position p < q). Lookups must be index-aligned with their token lists.
EnrichedSequence build_knowledge_sequence(const std::vector<std::string>& caption_tokens,
                                          const knowledge::ConceptLookup& caption_lookup,
                                          const std::vector<std::string>& description_tokens,
                                          const knowledge::ConceptLookup& description_lookup,
                                          const std::vector<std::string>& object_tokens,
                                          const knowledge::ConceptLookup& object_lookup);

// Appends separator + target tokens (+ target concepts when the variant flag
// is set), then truncates to max_tokens. Errors if `seq` already carries a
// target. The separator, target, and target-concept tokens are never
// truncated away.
EnrichedSequence append_target(const EnrichedSequence& seq,
                               const std::vector<std::string>& target_tokens,
                               bool include_target_concepts,
                               const knowledge::ConceptLookup& target_lookup,
                               std::size_t max_tokens = kDefaultMaxTokens);

// Drops tokens until size() <= max_tokens, in reverse segment priority:
// object concepts, objects, description concepts, description, caption
// concepts, caption tail. The caption's first token and the whole
// separator/target/target-concepts tail are always preserved; if they alone
// exceed the budget this throws. A concept is removed before (never after)
// its source token can be touched, so links never dangle.
EnrichedSequence truncate_sequence(const EnrichedSequence& seq, std::size_t max_tokens);

// Checks every structural invariant (tiling spans, fixed segment order, link
// containment, strictly increasing source->concept order); throws DataError
// with the first violation.
void validate(const EnrichedSequence& seq);

// JSON round-trip for enriched records (tokens, segments, links, flag).
std::string to_json(const EnrichedSequence& seq);
EnrichedSequence sequence_from_json(const std::string& json_text);

} // namespace sarcx::enrich
