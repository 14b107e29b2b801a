#pragma once
// Embedded knowledge-fragment store with exact top-k cosine retrieval,
// entity-to-query templating, constrained report-request assembly, report
// constraint checking and the conservative fallback statement.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tunnelkit/core.hpp"
#include "tunnelkit/entity.hpp"

namespace tk::knowledge {

struct FragmentMetadata {
    std::string defect_category;
    std::string structural_part;
    std::string source_doc;
};

struct KnowledgeFragment {
    std::string id; // content digest, stable across runs
    std::string text;
    FragmentMetadata metadata;
    std::vector<float> embedding;
};

class EmbedderProvider {
public:
    virtual ~EmbedderProvider() = default;
    virtual std::string id() const = 0;
    virtual std::size_t dimension() const = 0;
    virtual std::vector<float> embed(const std::string& text) const = 0;
};

// Deterministic desk-scale embedder: lowercased alphanumeric tokens hashed
// into a fixed-dim bag-of-words histogram.
class HashEmbedder : public EmbedderProvider {
public:
    explicit HashEmbedder(std::size_t dim) : dim_(dim) {}
    std::string id() const override { return "hash-bow-" + std::to_string(dim_); }
    std::size_t dimension() const override { return dim_; }
    std::vector<float> embed(const std::string& text) const override;

private:
    std::size_t dim_;
};

struct MetadataFilter {
    std::optional<std::string> defect_category;
    std::optional<std::string> structural_part;
    std::optional<std::string> source_doc;

    bool matches(const FragmentMetadata& m) const;
};

struct Evidence {
    std::string fragment_id;
    double score;
};

using EvidenceSet = std::vector<Evidence>; // scores non-increasing, ids unique

std::string evidence_to_json(const EvidenceSet& evidence);
EvidenceSet evidence_from_json(const std::string& text);

class FragmentStore {
public:
    // Errors: "degenerate embedding" on a zero vector, "store dimension
    // conflict" when dims disagree. Re-ingesting identical text+metadata is
    // a no-op returning the existing id.
    std::string ingest(const std::string& text, const FragmentMetadata& metadata,
                       const EmbedderProvider& embedder);
    std::string ingest_precomputed(const std::string& text, const FragmentMetadata& metadata,
                                   std::vector<float> embedding);

    // Exact brute-force cosine top-k over fragments passing the filter,
    // descending score, ties by ingestion order. Empty store -> empty set.
    EvidenceSet retrieve(const std::vector<float>& query_embedding, int k,
                         const MetadataFilter& filter = {}) const;

    const KnowledgeFragment* find(const std::string& id) const;
    const std::vector<KnowledgeFragment>& fragments() const { return fragments_; }
    std::size_t size() const { return fragments_.size(); }
    std::size_t dimension() const { return dim_; }

    // JSONL, one fragment per line:
    // {"id","text","metadata":{...},"embedding":[...]}
    std::string to_jsonl() const;
    static FragmentStore from_jsonl(const std::string& text);
    void save_file(const std::string& path) const;
    static FragmentStore load_file(const std::string& path);

private:
    std::vector<KnowledgeFragment> fragments_;
    std::map<std::string, std::size_t> by_id_;
    std::size_t dim_ = 0;
};

// Fixed-size character chunking with overlap (the only splitting heuristic
// shipped).
std::vector<std::string> split_text(const std::string& text, std::size_t chunk_size,
                                    std::size_t overlap);

// Deterministic template substitution. Placeholders (in single guillemets):
// type, location, length, width, area, severity, section. Missing attributes
// render as "unspecified"; an unknown placeholder throws Error("bad
// template").
std::string build_query(const entity::DefectEntity& e, const std::string& tmpl);

struct ConstraintConfig {
    std::vector<std::string> uncertainty_lexicon = {"uncertain", "reinspection",
                                                    "re-inspection"};
    std::vector<std::string> imperative_blocklist = {"must", "shall", "required to"};
    double evidence_floor = 0.3; // top-1 cosine below this counts as weak
};

struct ReportRequest {
    std::string entity_json;
    std::vector<std::pair<std::string, std::string>> evidence; // (token, text)
    std::vector<std::string> evidence_ids;
    std::string instruction;
    std::vector<std::string> constraints;
    bool uncertainty_required = false;
    std::optional<std::string> fallback_text; // set when evidence is empty

    bool is_fallback() const { return fallback_text.has_value(); }
};

ReportRequest assemble_request(const entity::DefectEntity& e, const EvidenceSet& evidence,
                               const FragmentStore& store, const std::string& instruction,
                               const ConstraintConfig& cfg = {});

std::string request_to_json(const ReportRequest& req);

struct ReportVerdict {
    bool cites_evidence = false;
    bool states_uncertainty = false; // vacuously true when not required
    bool advisory_phrasing = false;
    bool overall() const { return cites_evidence && states_uncertainty && advisory_phrasing; }
};

// Constraint 1: some [Fk] token matching the supplied evidence appears.
// Constraint 2: near_threshold entities must use the uncertainty lexicon.
// Constraint 3: no blocklisted imperative outside verbatim evidence spans.
ReportVerdict check_constraints(const std::string& report_text, const EvidenceSet& evidence,
                                const entity::DefectEntity& e,
                                const FragmentStore& store,
                                const ConstraintConfig& cfg = {});

std::string verdict_to_json(const ReportVerdict& v);

std::string fallback_statement(const entity::DefectEntity& e);

} // namespace tk::knowledge
