#include "tunnelkit/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "tunnelkit/feature_grid.hpp"
#include "tunnelkit/geometry.hpp"
#include "tunnelkit/intake.hpp"
#include "tunnelkit/metrics.hpp"
#include "tunnelkit/overlay.hpp"
#include "tunnelkit/segmenter.hpp"

namespace tk::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io error", "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io error", "cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string pad3(std::size_t n) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "%03zu", n);
    return buf;
}

} // namespace

PipelineConfig load_pipeline_config(const std::string& json_text) {
    json j = json::parse(json_text, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw Error("invalid config", "config must be a JSON object");
    PipelineConfig cfg;
    cfg.recal.K = j.value("K", cfg.recal.K);
    cfg.recal.r = j.value("r", cfg.recal.r);
    cfg.recal.tau = j.value("tau", cfg.recal.tau);
    cfg.recal.top_m = j.value("top_m", cfg.recal.top_m);
    cfg.recal.neg_count = j.value("neg_count", cfg.recal.neg_count);
    cfg.recal.nms_iou = j.value("nms_iou", cfg.recal.nms_iou);
    cfg.recal.validate();
    cfg.tau_seg = j.value("tau_seg", cfg.recal.tau);
    cfg.mm_per_pixel = j.value("mm_per_pixel", cfg.mm_per_pixel);
    cfg.registry_path = j.value("registry", "");
    cfg.zone_map_path = j.value("zone_map", "");
    cfg.rule_set_path = j.value("rule_set", "");
    cfg.template_path = j.value("template", "");
    cfg.knowledge_base_path = j.value("knowledge_base", "");
    cfg.retrieval_k = j.value("retrieval_k", cfg.retrieval_k);
    cfg.segmenter_provider = j.value("segmenter", cfg.segmenter_provider);
    cfg.exchange_dir = j.value("exchange_dir", "");
    cfg.instruction = j.value("instruction", cfg.instruction);
    if (cfg.retrieval_k < 1) throw Error("invalid config", "retrieval_k must be >= 1");
    if (cfg.segmenter_provider != "reference" && cfg.segmenter_provider != "external")
        throw Error("invalid config", "segmenter must be reference or external");
    return cfg;
}

PipelineConfig load_pipeline_config_file(const std::string& path) {
    return load_pipeline_config(slurp(path));
}

std::vector<PipelineInput> load_manifest_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io error", "cannot open manifest " + path);
    std::vector<PipelineInput> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("features") ||
            !j.contains("proposals"))
            throw Error("invalid manifest",
                        "line " + std::to_string(line_no) + " needs features and proposals");
        PipelineInput rec;
        rec.id = j.value("id", "img" + std::to_string(line_no));
        rec.features_path = j["features"].get<std::string>();
        rec.proposals_path = j["proposals"].get<std::string>();
        rec.retry_path = j.value("proposals_retry", "");
        rec.section_id = j.value("section_id", "");
        rec.time = j.value("time", "");
        out.push_back(std::move(rec));
    }
    return out;
}

std::string RunSummary::to_json() const {
    nlohmann::ordered_json j;
    j["images"] = images;
    j["proposals_accepted"] = proposals_accepted;
    j["proposals_rejected"] = proposals_rejected;
    j["retries_planned"] = retries_planned;
    j["entities"] = entities;
    j["fallback_requests"] = fallback_requests;
    j["seed"] = seed;
    j["errors"] = nlohmann::ordered_json::array();
    for (const auto& e : errors) {
        nlohmann::ordered_json item;
        item["image"] = e.image;
        item["proposal_index"] = e.proposal_index;
        item["stage"] = e.stage;
        item["error"] = e.error;
        j["errors"].push_back(std::move(item));
    }
    return j.dump(2);
}

namespace {

struct Stores {
    intake::ClassRegistry registry;
    std::optional<entity::ZoneMap> zones;
    std::optional<entity::SeverityRuleSet> rules;
    std::string query_template;
    std::optional<knowledge::FragmentStore> kb;
};

Stores load_stores(const PipelineConfig& cfg) {
    Stores s;
    if (cfg.registry_path.empty())
        throw Error("invalid config", "registry path is required");
    s.registry = intake::load_registry_file(cfg.registry_path);
    if (!cfg.zone_map_path.empty()) s.zones = entity::load_zone_map_file(cfg.zone_map_path);
    if (!cfg.rule_set_path.empty()) s.rules = entity::load_rule_set_file(cfg.rule_set_path);
    if (!cfg.template_path.empty())
        s.query_template = slurp(cfg.template_path);
    else
        s.query_template =
            "‹type› at ‹location›, severity ‹severity›";
    if (!cfg.knowledge_base_path.empty())
        s.kb = knowledge::FragmentStore::load_file(cfg.knowledge_base_path);
    return s;
}

} // namespace

RunSummary run_pipeline(const std::vector<PipelineInput>& inputs,
                        const PipelineConfig& cfg, const std::string& out_dir) {
    cfg.recal.validate();
    const Stores stores = load_stores(cfg);

    const fs::path root(out_dir);
    for (const char* sub :
         {"intake", "bundles", "masks", "geometry", "entities", "requests", "overlays"})
        fs::create_directories(root / sub);

    RunSummary summary;
    summary.seed = cfg.seed;
    std::string detections_jsonl;
    std::string errors_jsonl;

    auto record_error = [&](const std::string& image, int proposal, const std::string& stage,
                            const std::string& what) {
        summary.errors.push_back({image, proposal, stage, what});
        nlohmann::ordered_json j;
        j["image"] = image;
        j["proposal_index"] = proposal;
        j["stage"] = stage;
        j["error"] = what;
        errors_jsonl += j.dump();
        errors_jsonl += "\n";
    };

    for (const PipelineInput& input : inputs) {
        ++summary.images;

        grid::DenseFeatureMap fmap;
        intake::IntakeOutcome outcome;
        try {
            fmap = grid::load_feature_map_file(input.features_path);
            const std::string raw = slurp(input.proposals_path);
            outcome = intake::parse_proposals(raw, stores.registry,
                                              static_cast<double>(fmap.image_w),
                                              static_cast<double>(fmap.image_h));
        } catch (const std::exception& e) {
            record_error(input.id, -1, "intake", e.what());
            continue;
        }

        // Single retry: replacement semantics for the failed query. The
        // directives per class are recorded; a retry response file supplied
        // in the manifest stands in for the second provider round-trip.
        const bool retry_needed = outcome.retry_needed;
        nlohmann::ordered_json retry_record = nlohmann::ordered_json::array();
        if (outcome.retry_needed) {
            for (const auto& cls : stores.registry.classes) {
                intake::IntakeOutcome probe = outcome;
                probe.queried_class = cls.name;
                if (auto directive = intake::plan_retry(probe, stores.registry, 0)) {
                    nlohmann::ordered_json item;
                    item["class"] = cls.name;
                    item["query"] = directive->class_phrase;
                    retry_record.push_back(std::move(item));
                    ++summary.retries_planned;
                }
            }
            if (!input.retry_path.empty()) {
                try {
                    const std::string raw2 = slurp(input.retry_path);
                    outcome = intake::parse_proposals(raw2, stores.registry,
                                                      static_cast<double>(fmap.image_w),
                                                      static_cast<double>(fmap.image_h),
                                                      "", 1);
                } catch (const std::exception& e) {
                    record_error(input.id, -1, "retry", e.what());
                }
            }
        }

        summary.proposals_accepted += outcome.accepted.items.size();
        summary.proposals_rejected += outcome.rejections.size();
        {
            nlohmann::ordered_json j = nlohmann::ordered_json::parse(
                intake::proposal_set_to_json(outcome.accepted, outcome.rejections));
            j["retry_needed"] = retry_needed;
            j["retry_directives"] = retry_record;
            spit(root / "intake" / (input.id + ".json"), j.dump(2));
        }

        const grid::KeyPatchField field = grid::pool_key_patches(fmap, cfg.recal.K);

        // Recalibrate every accepted proposal, then category-wise NMS.
        std::vector<recal::PromptBundle> bundles;
        for (std::size_t i = 0; i < outcome.accepted.items.size(); ++i) {
            try {
                bundles.push_back(
                    recal::recalibrate_proposal(outcome.accepted.items[i], field, cfg.recal));
            } catch (const std::exception& e) {
                record_error(input.id, static_cast<int>(i), "recalibrate", e.what());
            }
        }
        std::vector<recal::PromptBundle> kept;
        {
            std::vector<std::string> class_order;
            std::map<std::string, std::vector<recal::PromptBundle>> by_class;
            for (const auto& b : bundles) {
                if (!by_class.count(b.cls)) class_order.push_back(b.cls);
                by_class[b.cls].push_back(b);
            }
            for (const auto& cls : class_order)
                for (auto& b : recal::nms(by_class[cls], cfg.recal.nms_iou))
                    kept.push_back(std::move(b));
        }
        spit(root / "bundles" / (input.id + ".json"), recal::bundles_to_json(kept));

        maskseg::ReferenceSegmenter reference(field, cfg.tau_seg);
        maskseg::FileExchangeSegmenter external(cfg.exchange_dir);
        maskseg::SegmenterProvider& provider =
            cfg.segmenter_provider == "external"
                ? static_cast<maskseg::SegmenterProvider&>(external)
                : static_cast<maskseg::SegmenterProvider&>(reference);

        std::vector<overlay::OverlayItem> overlay_items;
        const geometry::Calibration cal{cfg.mm_per_pixel};

        for (std::size_t bi = 0; bi < kept.size(); ++bi) {
            const recal::PromptBundle& bundle = kept[bi];
            const std::string stem = input.id + "_" + pad3(bi);
            try {
                maskseg::SegmentRequest req;
                req.image_ref = input.features_path;
                req.bundle = bundle;
                req.image_w = fmap.image_w;
                req.image_h = fmap.image_h;
                maskseg::Mask mask = maskseg::segment(req, provider);
                mask = maskseg::keep_prompted_component(mask, bundle.pos);
                const std::string mask_rel = "masks/" + stem + ".pgm";
                maskseg::write_mask_file(mask, (root / mask_rel).string());

                const geometry::GeometryAttrs attrs = geometry::measure_mask(mask, cal);
                spit(root / "geometry" / (stem + ".json"), geometry::attrs_to_json(attrs));

                std::string location;
                if (stores.zones) {
                    const Point centroid = entity::mask_centroid(mask);
                    location = entity::assign_location(centroid,
                                                       static_cast<double>(fmap.image_w),
                                                       static_cast<double>(fmap.image_h),
                                                       *stores.zones);
                }

                std::optional<entity::Severity> severity;
                if (stores.rules) {
                    try {
                        severity = entity::grade_severity(bundle.cls, attrs, *stores.rules);
                    } catch (const Error& e) {
                        if (e.code() != "ungradable") throw;
                    }
                }

                entity::Context context;
                context.confidence = bundle.confidence;
                context.section_id = input.section_id;
                context.time = input.time;
                context.providers = {provider.id()};
                if (bundle.empty_support()) {
                    context.extra_json = "{\"box_fallback\":true}";
                }
                const entity::DefectEntity ent =
                    entity::build_entity(bundle.cls, location, attrs, severity, context);
                const std::string entity_json = entity::serialize_entity(ent);
                spit(root / "entities" / (stem + ".json"), entity_json);
                ++summary.entities;

                // Retrieval-grounded report request (fallback when the
                // knowledge base is absent or yields nothing).
                knowledge::EvidenceSet evidence;
                static const knowledge::FragmentStore kEmptyStore;
                const knowledge::FragmentStore& store =
                    stores.kb ? *stores.kb : kEmptyStore;
                if (stores.kb && stores.kb->size() > 0) {
                    const std::string query_text =
                        knowledge::build_query(ent, stores.query_template);
                    const knowledge::HashEmbedder embedder(stores.kb->dimension());
                    evidence = stores.kb->retrieve(embedder.embed(query_text),
                                                   cfg.retrieval_k);
                }
                const knowledge::ReportRequest req_out =
                    knowledge::assemble_request(ent, evidence, store, cfg.instruction);
                if (req_out.is_fallback()) ++summary.fallback_requests;
                spit(root / "requests" / (stem + ".json"),
                     knowledge::request_to_json(req_out));

                eval::DetectionRecord det;
                det.image = input.id;
                det.cls = bundle.cls;
                det.box = maskseg::mask_bbox(mask); // the realized instance
                det.confidence = bundle.confidence;
                det.mask_path = mask_rel;
                eval::RecordEntity rent;
                rent.location = ent.location;
                if (ent.geometry) {
                    rent.length_mm = ent.geometry->length_mm;
                    rent.width_mm = ent.geometry->width_mm;
                    rent.area_mm2 = ent.geometry->area_mm2;
                }
                if (ent.severity) rent.severity_level = ent.severity->level;
                rent.complete = ent.complete();
                det.entity = rent;
                detections_jsonl += eval::record_to_json(det);
                detections_jsonl += "\n";

                overlay::OverlayItem item;
                item.mask = mask;
                item.box = bundle.box;
                item.label = bundle.cls;
                item.confidence = bundle.confidence;
                overlay_items.push_back(std::move(item));
            } catch (const std::exception& e) {
                record_error(input.id, static_cast<int>(bi), "realize", e.what());
            }
        }

        const overlay::Canvas canvas =
            overlay::emit_overlay(fmap.image_w, fmap.image_h, overlay_items);
        overlay::write_ppm_file(canvas, (root / "overlays" / (input.id + ".ppm")).string());
    }

    spit(root / "detections.jsonl", detections_jsonl);
    spit(root / "errors.jsonl", errors_jsonl);
    spit(root / "run_summary.json", summary.to_json());
    return summary;
}

} // namespace tk::pipeline
