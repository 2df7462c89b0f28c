#include "sarcx/enrich.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "sarcx/error.hpp"

namespace sarcx::enrich {

namespace {

constexpr std::array<SegmentKind, 9> kCanonicalOrder = {
    SegmentKind::caption,   SegmentKind::caption_concepts,
    SegmentKind::description, SegmentKind::description_concepts,
    SegmentKind::objects,   SegmentKind::object_concepts,
    SegmentKind::separator, SegmentKind::target,
    SegmentKind::target_concepts,
};

bool is_concept_kind(SegmentKind kind) {
    return kind == SegmentKind::caption_concepts || kind == SegmentKind::description_concepts ||
           kind == SegmentKind::object_concepts || kind == SegmentKind::target_concepts;
}

SegmentKind source_of(SegmentKind concept_kind) {
    switch (concept_kind) {
    case SegmentKind::caption_concepts: return SegmentKind::caption;
    case SegmentKind::description_concepts: return SegmentKind::description;
    case SegmentKind::object_concepts: return SegmentKind::objects;
    case SegmentKind::target_concepts: return SegmentKind::target;
    default: throw UsageError("source_of: not a concept segment kind");
    }
}

// --- Builder representation -------------------------------------------------
// Assembly and truncation both work on this draft form: per source segment,
// the tokens plus the ordered concepts hanging off them. Global indices only
// exist after assemble(), which makes dangling links unrepresentable.

struct ConceptItem {
    std::size_t source_rel = 0; // index within the owning source segment
    std::vector<std::string> tokens;
    double relevance = 0.0;
};

struct SourceDraft {
    std::vector<std::string> tokens;
    std::vector<ConceptItem> concepts; // ascending source_rel

    std::size_t concept_token_count() const {
        std::size_t n = 0;
        for (const auto& c : concepts) n += c.tokens.size();
        return n;
    }
};

struct Drafts {
    SourceDraft caption;
    SourceDraft description;
    SourceDraft objects;
    bool has_target = false;
    bool has_target_concepts = false;
    SourceDraft target;
    bool truncated = false;

    std::size_t token_count() const {
        std::size_t n = caption.tokens.size() + caption.concept_token_count() +
                        description.tokens.size() + description.concept_token_count() +
                        objects.tokens.size() + objects.concept_token_count();
        if (has_target) {
            n += 1 + target.tokens.size(); // separator + target
            if (has_target_concepts) n += target.concept_token_count();
        }
        return n;
    }
};

SourceDraft make_draft(const std::vector<std::string>& tokens,
                       const knowledge::ConceptLookup& lookup, const char* what) {
    if (lookup.size() != tokens.size()) {
        std::ostringstream msg;
        msg << "misaligned " << what << " lookup: " << lookup.size() << " entries for "
            << tokens.size() << " tokens";
        throw UsageError(msg.str());
    }
    SourceDraft draft;
    draft.tokens = tokens;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (lookup[i].has_value() && !lookup[i]->concept_tokens.empty()) {
            draft.concepts.push_back(ConceptItem{i, lookup[i]->concept_tokens,
                                                 lookup[i]->relevance});
        }
    }
    return draft;
}

EnrichedSequence assemble(const Drafts& drafts) {
    EnrichedSequence seq;
    seq.truncated = drafts.truncated;

    auto emit_source = [&seq](SegmentKind kind, const std::vector<std::string>& tokens) {
        Segment seg;
        seg.kind = kind;
        seg.start = seq.tokens.size();
        seq.tokens.insert(seq.tokens.end(), tokens.begin(), tokens.end());
        seg.end = seq.tokens.size();
        seq.segments.push_back(std::move(seg));
        return seq.segments.back().start;
    };

    auto emit_concepts = [&seq](SegmentKind kind, std::size_t source_start,
                                const std::vector<ConceptItem>& concepts) {
        Segment seg;
        seg.kind = kind;
        seg.start = seq.tokens.size();
        for (const auto& item : concepts) {
            ConceptLink link;
            link.source_index = source_start + item.source_rel;
            link.start = seq.tokens.size();
            seq.tokens.insert(seq.tokens.end(), item.tokens.begin(), item.tokens.end());
            link.end = seq.tokens.size();
            link.relevance = item.relevance;
            seg.links.push_back(link);
        }
        seg.end = seq.tokens.size();
        seq.segments.push_back(std::move(seg));
    };

    std::size_t start = emit_source(SegmentKind::caption, drafts.caption.tokens);
    emit_concepts(SegmentKind::caption_concepts, start, drafts.caption.concepts);
    start = emit_source(SegmentKind::description, drafts.description.tokens);
    emit_concepts(SegmentKind::description_concepts, start, drafts.description.concepts);
    start = emit_source(SegmentKind::objects, drafts.objects.tokens);
    emit_concepts(SegmentKind::object_concepts, start, drafts.objects.concepts);

    if (drafts.has_target) {
        emit_source(SegmentKind::separator, {kSeparatorToken});
        start = emit_source(SegmentKind::target, drafts.target.tokens);
        if (drafts.has_target_concepts) {
            emit_concepts(SegmentKind::target_concepts, start, drafts.target.concepts);
        }
    }
    return seq;
}

Drafts decompose(const EnrichedSequence& seq) {
    Drafts drafts;
    drafts.truncated = seq.truncated;

    auto extract = [&seq](const Segment* source, const Segment* concepts) {
        SourceDraft draft;
        if (source != nullptr) {
            draft.tokens.assign(seq.tokens.begin() + static_cast<std::ptrdiff_t>(source->start),
                                seq.tokens.begin() + static_cast<std::ptrdiff_t>(source->end));
        }
        if (concepts != nullptr) {
            for (const auto& link : concepts->links) {
                ConceptItem item;
                item.source_rel = link.source_index - source->start;
                item.tokens.assign(seq.tokens.begin() + static_cast<std::ptrdiff_t>(link.start),
                                   seq.tokens.begin() + static_cast<std::ptrdiff_t>(link.end));
                item.relevance = link.relevance;
                draft.concepts.push_back(std::move(item));
            }
        }
        return draft;
    };

    drafts.caption = extract(seq.find(SegmentKind::caption), seq.find(SegmentKind::caption_concepts));
    drafts.description =
        extract(seq.find(SegmentKind::description), seq.find(SegmentKind::description_concepts));
    drafts.objects = extract(seq.find(SegmentKind::objects), seq.find(SegmentKind::object_concepts));
    if (const Segment* target = seq.find(SegmentKind::target); target != nullptr) {
        drafts.has_target = true;
        const Segment* tsc = seq.find(SegmentKind::target_concepts);
        drafts.has_target_concepts = tsc != nullptr;
        drafts.target = extract(target, tsc);
    }
    return drafts;
}

} // namespace

const char* to_string(SegmentKind kind) {
    switch (kind) {
    case SegmentKind::caption: return "caption";
    case SegmentKind::caption_concepts: return "caption_concepts";
    case SegmentKind::description: return "description";
    case SegmentKind::description_concepts: return "description_concepts";
    case SegmentKind::objects: return "objects";
    case SegmentKind::object_concepts: return "object_concepts";
    case SegmentKind::separator: return "separator";
    case SegmentKind::target: return "target";
    case SegmentKind::target_concepts: return "target_concepts";
    }
    return "unknown";
}

SegmentKind segment_kind_from_string(const std::string& name) {
    for (SegmentKind kind : kCanonicalOrder) {
        if (name == to_string(kind)) {
            return kind;
        }
    }
    throw DataError("unknown segment kind: \"" + name + "\"");
}

const Segment* EnrichedSequence::find(SegmentKind kind) const {
    for (const auto& seg : segments) {
        if (seg.kind == kind) {
            return &seg;
        }
    }
    return nullptr;
}

EnrichedSequence build_knowledge_sequence(const std::vector<std::string>& caption_tokens,
                                          const knowledge::ConceptLookup& caption_lookup,
                                          const std::vector<std::string>& description_tokens,
                                          const knowledge::ConceptLookup& description_lookup,
                                          const std::vector<std::string>& object_tokens,
                                          const knowledge::ConceptLookup& object_lookup) {
    Drafts drafts;
    drafts.caption = make_draft(caption_tokens, caption_lookup, "caption");
    drafts.description = make_draft(description_tokens, description_lookup, "description");
    drafts.objects = make_draft(object_tokens, object_lookup, "object");
    EnrichedSequence seq = assemble(drafts);
    validate(seq);
    return seq;
}

EnrichedSequence append_target(const EnrichedSequence& seq,
                               const std::vector<std::string>& target_tokens,
                               bool include_target_concepts,
                               const knowledge::ConceptLookup& target_lookup,
                               std::size_t max_tokens) {
    if (seq.has_target()) {
        throw UsageError("append_target: sequence already carries a target");
    }
    Drafts drafts = decompose(seq);
    drafts.has_target = true;
    drafts.has_target_concepts = include_target_concepts;
    if (include_target_concepts) {
        drafts.target = make_draft(target_tokens, target_lookup, "target");
    } else {
        drafts.target.tokens = target_tokens;
    }
    EnrichedSequence out = assemble(drafts);
    validate(out);
    return truncate_sequence(out, max_tokens);
}

EnrichedSequence truncate_sequence(const EnrichedSequence& seq, std::size_t max_tokens) {
    validate(seq);
    if (seq.size() <= max_tokens) {
        return seq;
    }
    Drafts drafts = decompose(seq);
    std::size_t overflow = drafts.token_count() - max_tokens;

    // Pops one trailing concept token (dissolving emptied concepts).
    auto trim_concept_token = [](SourceDraft& draft) {
        if (draft.concepts.empty()) return false;
        auto& last = draft.concepts.back();
        last.tokens.pop_back();
        if (last.tokens.empty()) {
            draft.concepts.pop_back();
        }
        return true;
    };
    auto trim_source_token = [](SourceDraft& draft, std::size_t keep_at_least) {
        if (draft.tokens.size() <= keep_at_least) return false;
        draft.tokens.pop_back();
        return true;
    };

    // Reverse segment priority; a source segment is only touched once its
    // concept segment is gone, so no link can dangle.
    while (overflow > 0) {
        bool dropped = trim_concept_token(drafts.objects) || trim_source_token(drafts.objects, 0) ||
                       trim_concept_token(drafts.description) ||
                       trim_source_token(drafts.description, 0) ||
                       trim_concept_token(drafts.caption) ||
                       trim_source_token(drafts.caption, 1); // keep the caption head
        if (!dropped) {
            std::ostringstream msg;
            msg << "cannot truncate to " << max_tokens
                << " tokens: protected separator/target tail (plus the caption head) needs "
                << drafts.token_count() << " tokens";
            throw DataError(msg.str());
        }
        --overflow;
    }
    drafts.truncated = true;
    EnrichedSequence out = assemble(drafts);
    validate(out);
    return out;
}

void validate(const EnrichedSequence& seq) {
    auto fail = [](const std::string& what) { throw DataError("invalid sequence: " + what); };

    // Fixed segment order: the six knowledge segments, then the optional
    // separator/target/target_concepts tail.
    if (seq.segments.size() < 6) {
        fail("expected at least the six knowledge segments");
    }
    for (std::size_t i = 0; i < seq.segments.size(); ++i) {
        if (i >= kCanonicalOrder.size() || seq.segments[i].kind != kCanonicalOrder[i]) {
            fail(std::string("segment order broken at position ") + std::to_string(i));
        }
    }
    const bool has_sep = seq.segments.size() >= 7;
    if (has_sep && seq.segments.size() < 8) {
        fail("separator present without a target segment");
    }

    // Spans tile [0, size()).
    std::size_t cursor = 0;
    for (const auto& seg : seq.segments) {
        if (seg.start != cursor || seg.end < seg.start) {
            fail(std::string("segment spans do not tile at ") + to_string(seg.kind));
        }
        cursor = seg.end;
    }
    if (cursor != seq.tokens.size()) {
        fail("segment spans do not cover the token sequence");
    }

    if (const Segment* sep = seq.find(SegmentKind::separator); sep != nullptr) {
        if (sep->size() != 1 || seq.tokens[sep->start] != kSeparatorToken) {
            fail("separator segment must hold exactly the separator token");
        }
    }

    for (const auto& seg : seq.segments) {
        if (!is_concept_kind(seg.kind)) {
            if (!seg.links.empty()) {
                fail(std::string("non-concept segment carries links: ") + to_string(seg.kind));
            }
            continue;
        }
        const Segment* source = seq.find(source_of(seg.kind));
        if (source == nullptr) {
            fail(std::string("concept segment without source: ") + to_string(seg.kind));
        }
        std::size_t link_cursor = seg.start;
        std::size_t prev_source = 0;
        bool first = true;
        for (const auto& link : seg.links) {
            if (link.start != link_cursor || link.end <= link.start || link.end > seg.end) {
                fail(std::string("links do not tile ") + to_string(seg.kind));
            }
            link_cursor = link.end;
            if (link.source_index < source->start || link.source_index >= source->end) {
                fail(std::string("link source outside ") + to_string(source->kind));
            }
            // Ordering constraint: source order j < k iff concept order p < q.
            if (!first && link.source_index <= prev_source) {
                fail(std::string("concept order does not follow source order in ") +
                     to_string(seg.kind));
            }
            prev_source = link.source_index;
            first = false;
            if (!(link.relevance > 0.0) || !std::isfinite(link.relevance)) {
                fail("link relevance must be finite and positive");
            }
        }
        if (link_cursor != seg.end) {
            fail(std::string("links do not cover ") + to_string(seg.kind));
        }
    }
}

std::string to_json(const EnrichedSequence& seq) {
    nlohmann::json segments = nlohmann::json::array();
    for (const auto& seg : seq.segments) {
        nlohmann::json links = nlohmann::json::array();
        for (const auto& link : seg.links) {
            links.push_back({{"source", link.source_index},
                             {"start", link.start},
                             {"end", link.end},
                             {"relevance", link.relevance}});
        }
        segments.push_back({{"kind", to_string(seg.kind)},
                            {"start", seg.start},
                            {"end", seg.end},
                            {"links", std::move(links)}});
    }
    nlohmann::json doc = {
        {"tokens", seq.tokens}, {"segments", std::move(segments)}, {"truncated", seq.truncated}};
    return doc.dump();
}

EnrichedSequence sequence_from_json(const std::string& json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("invalid enriched-sequence JSON: ") + e.what());
    }
    EnrichedSequence seq;
    try {
        seq.tokens = doc.at("tokens").get<std::vector<std::string>>();
        seq.truncated = doc.value("truncated", false);
        for (const auto& s : doc.at("segments")) {
            Segment seg;
            seg.kind = segment_kind_from_string(s.at("kind").get<std::string>());
            seg.start = s.at("start").get<std::size_t>();
            seg.end = s.at("end").get<std::size_t>();
            for (const auto& l : s.value("links", nlohmann::json::array())) {
                ConceptLink link;
                link.source_index = l.at("source").get<std::size_t>();
                link.start = l.at("start").get<std::size_t>();
                link.end = l.at("end").get<std::size_t>();
                link.relevance = l.at("relevance").get<double>();
                seg.links.push_back(link);
            }
            seq.segments.push_back(std::move(seg));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("invalid enriched-sequence JSON: ") + e.what());
    }
    validate(seq);
    return seq;
}

} // namespace sarcx::enrich
