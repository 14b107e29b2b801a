#include "tunnelkit/knowledge.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace tk::knowledge {

namespace {

using nlohmann::json;

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

double dot(const std::vector<float>& a, const std::vector<float>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += static_cast<double>(a[i]) * b[i];
    return s;
}

double norm(const std::vector<float>& a) { return std::sqrt(dot(a, a)); }

} // namespace

std::vector<float> HashEmbedder::embed(const std::string& text) const {
    std::vector<float> v(dim_, 0.0f);
    std::string token;
    auto flush = [&]() {
        if (token.empty()) return;
        v[fnv1a64(token) % dim_] += 1.0f;
        token.clear();
    };
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c)))
            token.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        else
            flush();
    }
    flush();
    return v;
}

std::string evidence_to_json(const EvidenceSet& evidence) {
    nlohmann::ordered_json j;
    j["evidence"] = nlohmann::ordered_json::array();
    for (const auto& e : evidence) {
        nlohmann::ordered_json item;
        item["id"] = e.fragment_id;
        item["score"] = e.score;
        j["evidence"].push_back(std::move(item));
    }
    return j.dump();
}

EvidenceSet evidence_from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("evidence") ||
        !j["evidence"].is_array())
        throw Error("invalid evidence", "expected {\"evidence\":[...]}");
    EvidenceSet out;
    for (const auto& item : j["evidence"])
        out.push_back({item["id"].get<std::string>(), item.value("score", 0.0)});
    return out;
}

bool MetadataFilter::matches(const FragmentMetadata& m) const {
    if (defect_category && *defect_category != m.defect_category) return false;
    if (structural_part && *structural_part != m.structural_part) return false;
    if (source_doc && *source_doc != m.source_doc) return false;
    return true;
}

std::string FragmentStore::ingest(const std::string& text, const FragmentMetadata& metadata,
                                  const EmbedderProvider& embedder) {
    if (text.empty()) throw Error("degenerate embedding", "empty text");
    return ingest_precomputed(text, metadata, embedder.embed(text));
}

std::string FragmentStore::ingest_precomputed(const std::string& text,
                                              const FragmentMetadata& metadata,
                                              std::vector<float> embedding) {
    if (norm(embedding) == 0.0) throw Error("degenerate embedding", "zero vector");
    if (dim_ != 0 && embedding.size() != dim_)
        throw Error("store dimension conflict",
                    "store dim " + std::to_string(dim_) + " vs fragment dim " +
                        std::to_string(embedding.size()));

    // Content-digest id over text and metadata, stable across sessions.
    const std::string key = text + "\x1f" + metadata.defect_category + "\x1f" +
                            metadata.structural_part + "\x1f" + metadata.source_doc;
    const std::string id = "kf-" + fnv1a64_hex(key);
    if (auto it = by_id_.find(id); it != by_id_.end())
        return fragments_[it->second].id; // idempotent re-ingest

    if (dim_ == 0) dim_ = embedding.size();
    KnowledgeFragment frag{id, text, metadata, std::move(embedding)};
    by_id_[id] = fragments_.size();
    fragments_.push_back(std::move(frag));
    return id;
}

EvidenceSet FragmentStore::retrieve(const std::vector<float>& query_embedding, int k,
                                    const MetadataFilter& filter) const {
    if (k < 1) throw std::invalid_argument("retrieve: k must be >= 1");
    if (fragments_.empty()) return {};
    if (query_embedding.size() != dim_)
        throw std::invalid_argument("retrieve: query dimension mismatch");

    const double qn = norm(query_embedding);
    std::vector<std::pair<double, std::size_t>> scored; // (score, ingestion index)
    for (std::size_t i = 0; i < fragments_.size(); ++i) {
        if (!filter.matches(fragments_[i].metadata)) continue;
        const double fn = norm(fragments_[i].embedding);
        double s = 0.0;
        if (qn > 0.0 && fn > 0.0)
            s = std::clamp(dot(query_embedding, fragments_[i].embedding) / (qn * fn),
                           -1.0, 1.0);
        scored.push_back({s, i});
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    EvidenceSet out;
    for (std::size_t i = 0; i < scored.size() && i < static_cast<std::size_t>(k); ++i)
        out.push_back({fragments_[scored[i].second].id, scored[i].first});
    return out;
}

const KnowledgeFragment* FragmentStore::find(const std::string& id) const {
    const auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &fragments_[it->second];
}

std::string FragmentStore::to_jsonl() const {
    std::string out;
    for (const auto& f : fragments_) {
        nlohmann::ordered_json j;
        j["id"] = f.id;
        j["text"] = f.text;
        j["metadata"] = {{"defect_category", f.metadata.defect_category},
                         {"structural_part", f.metadata.structural_part},
                         {"source_doc", f.metadata.source_doc}};
        j["embedding"] = f.embedding;
        out += j.dump();
        out += "\n";
    }
    return out;
}

FragmentStore FragmentStore::from_jsonl(const std::string& text) {
    FragmentStore store;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("text") ||
            !j.contains("embedding"))
            throw Error("invalid fragment", "bad JSONL line");
        FragmentMetadata meta;
        if (j.contains("metadata")) {
            meta.defect_category = j["metadata"].value("defect_category", "");
            meta.structural_part = j["metadata"].value("structural_part", "");
            meta.source_doc = j["metadata"].value("source_doc", "");
        }
        std::vector<float> emb;
        for (const auto& v : j["embedding"]) emb.push_back(v.get<float>());
        store.ingest_precomputed(j["text"].get<std::string>(), meta, std::move(emb));
    }
    return store;
}

void FragmentStore::save_file(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io error", "cannot write " + path);
    const std::string text = to_jsonl();
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

FragmentStore FragmentStore::load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("invalid fragment", "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_jsonl(ss.str());
}

std::vector<std::string> split_text(const std::string& text, std::size_t chunk_size,
                                    std::size_t overlap) {
    if (chunk_size == 0) throw std::invalid_argument("chunk_size must be > 0");
    if (overlap >= chunk_size) throw std::invalid_argument("overlap must be < chunk_size");
    std::vector<std::string> out;
    const std::size_t step = chunk_size - overlap;
    for (std::size_t pos = 0; pos < text.size(); pos += step) {
        out.push_back(text.substr(pos, chunk_size));
        if (pos + chunk_size >= text.size()) break;
    }
    return out;
}

namespace {

std::string attr_or_unspecified(const std::optional<double>& v) {
    return v ? format_fixed3(quantize3(*v)) : "unspecified";
}

} // namespace

std::string build_query(const entity::DefectEntity& e, const std::string& tmpl) {
    if (e.type.empty()) throw Error("invalid argument", "entity has no type");
    static const std::string kOpen = "‹";  // single left guillemet
    static const std::string kClose = "›"; // single right guillemet

    std::string out;
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        const std::size_t open = tmpl.find(kOpen, pos);
        if (open == std::string::npos) {
            out += tmpl.substr(pos);
            break;
        }
        out += tmpl.substr(pos, open - pos);
        const std::size_t close = tmpl.find(kClose, open + kOpen.size());
        if (close == std::string::npos) throw Error("bad template", "unterminated placeholder");
        const std::string name = tmpl.substr(open + kOpen.size(), close - open - kOpen.size());

        if (name == "type") {
            out += e.type;
        } else if (name == "location") {
            out += e.location.empty() ? "unspecified" : e.location;
        } else if (name == "length") {
            out += attr_or_unspecified(e.geometry ? e.geometry->length_mm : std::nullopt);
        } else if (name == "width") {
            out += attr_or_unspecified(e.geometry ? e.geometry->width_mm : std::nullopt);
        } else if (name == "area") {
            out += attr_or_unspecified(e.geometry ? e.geometry->area_mm2 : std::nullopt);
        } else if (name == "severity") {
            out += e.severity ? e.severity->level : "unspecified";
        } else if (name == "section") {
            out += e.context.section_id.empty() ? "unspecified" : e.context.section_id;
        } else {
            throw Error("bad template", "unknown placeholder '" + name + "'");
        }
        pos = close + kClose.size();
    }
    return out;
}

std::string fallback_statement(const entity::DefectEntity& e) {
    const std::string type = e.type.empty() ? "unspecified" : e.type;
    const std::string loc = e.location.empty() ? "unspecified" : e.location;
    return "No clear recommendation is available from the current knowledge base for " +
           type + " at " + loc +
           "; case-specific judgment by professional engineers is required.";
}

ReportRequest assemble_request(const entity::DefectEntity& e, const EvidenceSet& evidence,
                               const FragmentStore& store, const std::string& instruction,
                               const ConstraintConfig& cfg) {
    ReportRequest req;
    req.entity_json = entity::serialize_entity(e);
    req.instruction = instruction;

    if (evidence.empty()) {
        req.fallback_text = fallback_statement(e);
        return req;
    }

    for (std::size_t i = 0; i < evidence.size(); ++i) {
        const KnowledgeFragment* frag = store.find(evidence[i].fragment_id);
        const std::string token = "[F" + std::to_string(i + 1) + "]";
        req.evidence.push_back({token, frag ? frag->text : ""});
        req.evidence_ids.push_back(evidence[i].fragment_id);
    }

    const bool weak_evidence = evidence.front().score < cfg.evidence_floor;
    const bool near = e.severity && e.severity->near_threshold;
    req.uncertainty_required = near || weak_evidence;

    req.constraints.push_back(
        "Refer to the retrieved source fragments explicitly, citing them by their "
        "[Fk] tokens.");
    req.constraints.push_back(
        "When measured attributes are close to grading thresholds or the evidence is "
        "insufficiently specific, state the uncertainty explicitly and recommend "
        "on-site reinspection.");
    req.constraints.push_back(
        "Phrase suggestions as advisory options; the final decision rests with "
        "qualified engineers.");
    if (req.uncertainty_required)
        req.constraints.push_back(
            "This case requires an explicit uncertainty statement: flag it as "
            "uncertain and recommend reinspection.");
    return req;
}

std::string request_to_json(const ReportRequest& req) {
    nlohmann::ordered_json j;
    j["entity"] = nlohmann::ordered_json::parse(req.entity_json);
    if (req.is_fallback()) {
        j["fallback_statement"] = *req.fallback_text;
        return j.dump();
    }
    j["evidence"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < req.evidence.size(); ++i) {
        nlohmann::ordered_json item;
        item["token"] = req.evidence[i].first;
        item["id"] = req.evidence_ids[i];
        item["text"] = req.evidence[i].second;
        j["evidence"].push_back(std::move(item));
    }
    j["instruction"] = req.instruction;
    j["constraints"] = req.constraints;
    j["uncertainty_required"] = req.uncertainty_required;
    return j.dump();
}

namespace {

// Case-insensitive phrase search with alphabetic word boundaries on both
// sides, honoring a masked-out character set.
bool contains_phrase_outside(const std::string& haystack_lower,
                             const std::vector<bool>& masked, const std::string& phrase) {
    const std::string p = lower(phrase);
    if (p.empty()) return false;
    std::size_t pos = 0;
    while ((pos = haystack_lower.find(p, pos)) != std::string::npos) {
        const bool left_ok =
            pos == 0 || !std::isalpha(static_cast<unsigned char>(haystack_lower[pos - 1]));
        const std::size_t end = pos + p.size();
        const bool right_ok =
            end >= haystack_lower.size() ||
            !std::isalpha(static_cast<unsigned char>(haystack_lower[end]));
        bool in_masked = false;
        for (std::size_t i = pos; i < end && !in_masked; ++i) in_masked = masked[i];
        if (left_ok && right_ok && !in_masked) return true;
        ++pos;
    }
    return false;
}

bool contains_substring(const std::string& haystack_lower, const std::string& needle) {
    return haystack_lower.find(lower(needle)) != std::string::npos;
}

} // namespace

ReportVerdict check_constraints(const std::string& report_text, const EvidenceSet& evidence,
                                const entity::DefectEntity& e, const FragmentStore& store,
                                const ConstraintConfig& cfg) {
    ReportVerdict v;

    // 1: at least one citation token matching the supplied evidence.
    for (std::size_t i = 0; i < evidence.size() && !v.cites_evidence; ++i) {
        const std::string token = "[F" + std::to_string(i + 1) + "]";
        if (report_text.find(token) != std::string::npos) v.cites_evidence = true;
    }

    const std::string report_lower = lower(report_text);

    // 2: near-threshold entities must state uncertainty (lexicon substring,
    // case-insensitive); otherwise the constraint holds vacuously.
    const bool near = e.severity && e.severity->near_threshold;
    if (!near) {
        v.states_uncertainty = true;
    } else {
        v.states_uncertainty =
            std::any_of(cfg.uncertainty_lexicon.begin(), cfg.uncertainty_lexicon.end(),
                        [&](const std::string& w) { return contains_substring(report_lower, w); });
    }

    // 3: no blocklisted imperative outside verbatim evidence quotes.
    std::vector<bool> masked(report_text.size(), false);
    for (const Evidence& ev : evidence) {
        const KnowledgeFragment* frag = store.find(ev.fragment_id);
        if (!frag || frag->text.empty()) continue;
        const std::string needle = lower(frag->text);
        std::size_t pos = 0;
        while ((pos = report_lower.find(needle, pos)) != std::string::npos) {
            for (std::size_t i = pos; i < pos + needle.size(); ++i) masked[i] = true;
            ++pos;
        }
    }
    v.advisory_phrasing =
        std::none_of(cfg.imperative_blocklist.begin(), cfg.imperative_blocklist.end(),
                     [&](const std::string& w) {
                         return contains_phrase_outside(report_lower, masked, w);
                     });
    return v;
}

std::string verdict_to_json(const ReportVerdict& v) {
    nlohmann::ordered_json j;
    j["cites_evidence"] = v.cites_evidence;
    j["states_uncertainty"] = v.states_uncertainty;
    j["advisory_phrasing"] = v.advisory_phrasing;
    j["overall"] = v.overall();
    return j.dump();
}

} // namespace tk::knowledge
