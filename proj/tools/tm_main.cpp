// tm: tunnel inspection toolkit CLI. Subcommands cover every pipeline stage
// individually plus the batched end-to-end run, evaluation, knowledge-base
// maintenance, report assembly/checking and overlay emission.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tunnelkit/entity.hpp"
#include "tunnelkit/feature_grid.hpp"
#include "tunnelkit/geometry.hpp"
#include "tunnelkit/intake.hpp"
#include "tunnelkit/knowledge.hpp"
#include "tunnelkit/metrics.hpp"
#include "tunnelkit/overlay.hpp"
#include "tunnelkit/pipeline.hpp"
#include "tunnelkit/recalibrate.hpp"
#include "tunnelkit/segmenter.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw tk::Error("io error", "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const std::string& path, const std::string& text) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw tk::Error("io error", "cannot write " + path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

// Proposal-set JSON (the provider envelope) without registry validation;
// boxes are taken as already validated.
std::vector<tk::intake::Proposal> proposals_from_envelope(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("result"))
        throw tk::Error("invalid proposals", "expected {\"result\":[...]}");
    std::vector<tk::intake::Proposal> out;
    for (const auto& item : j["result"]) {
        const auto& b = item["bbox"];
        out.push_back({item["class"].get<std::string>(),
                       tk::Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                               b[3].get<double>()},
                       0});
    }
    return out;
}

tk::pipeline::PipelineConfig config_or_default(const std::string& config_path) {
    if (config_path.empty()) return tk::pipeline::PipelineConfig{};
    return tk::pipeline::load_pipeline_config_file(config_path);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"tunnel inspection toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    app.add_option("--config", config_path, "pipeline config JSON")->envname("TM_CONFIG");
    app.add_option("--seed", seed, "seed for randomized harnesses");

    // --- intake ---------------------------------------------------------
    auto* cmd_intake = app.add_subcommand("intake", "parse a raw proposal response");
    std::string in_registry, in_raw, in_out, in_queried;
    double in_w = 768, in_h = 768;
    int in_attempt = 0;
    cmd_intake->add_option("--registry", in_registry)->required();
    cmd_intake->add_option("--in", in_raw, "raw provider response")->required();
    cmd_intake->add_option("--width", in_w)->required();
    cmd_intake->add_option("--height", in_h)->required();
    cmd_intake->add_option("--queried-class", in_queried);
    cmd_intake->add_option("--attempt", in_attempt);
    cmd_intake->add_option("--out", in_out)->required();

    // --- recal ----------------------------------------------------------
    auto* cmd_recal = app.add_subcommand("recal", "recalibrate proposals into prompts");
    std::string rc_features, rc_proposals, rc_out;
    cmd_recal->add_option("--features", rc_features)->required();
    cmd_recal->add_option("--proposals", rc_proposals)->required();
    cmd_recal->add_option("--out", rc_out)->required();

    // --- segment --------------------------------------------------------
    auto* cmd_segment = app.add_subcommand("segment", "realize a prompt bundle as a mask");
    std::string sg_provider = "reference", sg_features, sg_bundles, sg_out, sg_exchange;
    double sg_tau_seg = -1.0;
    std::size_t sg_index = 0;
    cmd_segment->add_option("--provider", sg_provider)
        ->check(CLI::IsMember({"reference", "external"}));
    cmd_segment->add_option("--tau-seg", sg_tau_seg);
    cmd_segment->add_option("--features", sg_features)->required();
    cmd_segment->add_option("--bundles", sg_bundles)->required();
    cmd_segment->add_option("--index", sg_index, "bundle index within the file");
    cmd_segment->add_option("--exchange-dir", sg_exchange);
    cmd_segment->add_option("--out", sg_out)->required();

    // --- measure --------------------------------------------------------
    auto* cmd_measure = app.add_subcommand("measure", "geometric attributes of a mask");
    std::string ms_mask, ms_out;
    double ms_cal = 1.0;
    cmd_measure->add_option("--mask", ms_mask)->required();
    cmd_measure->add_option("--mm-per-pixel", ms_cal);
    cmd_measure->add_option("--out", ms_out)->required();

    // --- entity ---------------------------------------------------------
    auto* cmd_entity = app.add_subcommand("entity", "assemble a defect entity");
    std::string en_class, en_attrs, en_zones, en_rules, en_mask, en_out;
    std::string en_section, en_time;
    double en_conf = 0.0, en_w = 768, en_h = 768;
    std::vector<double> en_box;
    cmd_entity->add_option("--class", en_class)->required();
    cmd_entity->add_option("--attrs", en_attrs)->required();
    cmd_entity->add_option("--zones", en_zones);
    cmd_entity->add_option("--rules", en_rules);
    cmd_entity->add_option("--mask", en_mask);
    cmd_entity->add_option("--box", en_box)->expected(4);
    cmd_entity->add_option("--width", en_w);
    cmd_entity->add_option("--height", en_h);
    cmd_entity->add_option("--confidence", en_conf);
    cmd_entity->add_option("--section", en_section);
    cmd_entity->add_option("--time", en_time);
    cmd_entity->add_option("--out", en_out)->required();

    // --- kb ---------------------------------------------------------------
    auto* cmd_kb = app.add_subcommand("kb", "knowledge base maintenance");
    cmd_kb->require_subcommand(1);
    auto* cmd_kb_ingest = cmd_kb->add_subcommand("ingest", "add fragments to the store");
    std::string kb_store, kb_text, kb_file, kb_cat, kb_part, kb_src;
    std::size_t kb_chunk = 400, kb_overlap = 50, kb_dim = 64;
    cmd_kb_ingest->add_option("--store", kb_store)->required();
    cmd_kb_ingest->add_option("--text", kb_text);
    cmd_kb_ingest->add_option("--file", kb_file);
    cmd_kb_ingest->add_option("--chunk-size", kb_chunk);
    cmd_kb_ingest->add_option("--overlap", kb_overlap);
    cmd_kb_ingest->add_option("--category", kb_cat);
    cmd_kb_ingest->add_option("--part", kb_part);
    cmd_kb_ingest->add_option("--source", kb_src);
    cmd_kb_ingest->add_option("--dim", kb_dim);

    auto* cmd_kb_query = cmd_kb->add_subcommand("query", "top-k retrieval");
    std::string kq_store, kq_text, kq_cat, kq_part, kq_src, kq_out;
    int kq_k = 3;
    cmd_kb_query->add_option("--store", kq_store)->required();
    cmd_kb_query->add_option("--text", kq_text)->required();
    cmd_kb_query->add_option("--k", kq_k);
    cmd_kb_query->add_option("--category", kq_cat);
    cmd_kb_query->add_option("--part", kq_part);
    cmd_kb_query->add_option("--source", kq_src);
    cmd_kb_query->add_option("--out", kq_out)->required();

    // --- report -----------------------------------------------------------
    auto* cmd_report = app.add_subcommand("report", "report requests and checking");
    cmd_report->require_subcommand(1);
    auto* cmd_rep_assemble = cmd_report->add_subcommand("assemble");
    std::string ra_entity, ra_evidence, ra_store, ra_instruction, ra_out;
    cmd_rep_assemble->add_option("--entity", ra_entity)->required();
    cmd_rep_assemble->add_option("--evidence", ra_evidence);
    cmd_rep_assemble->add_option("--store", ra_store);
    cmd_rep_assemble->add_option("--instruction", ra_instruction)
        ->default_val("Draft an inspection explanation and an advisory suggestion.");
    cmd_rep_assemble->add_option("--out", ra_out)->required();

    auto* cmd_rep_check = cmd_report->add_subcommand("check");
    std::string rk_report, rk_evidence, rk_store, rk_entity, rk_out;
    cmd_rep_check->add_option("--report", rk_report)->required();
    cmd_rep_check->add_option("--evidence", rk_evidence);
    cmd_rep_check->add_option("--store", rk_store);
    cmd_rep_check->add_option("--entity", rk_entity)->required();
    cmd_rep_check->add_option("--out", rk_out)->required();

    // --- eval -------------------------------------------------------------
    auto* cmd_eval = app.add_subcommand("eval", "detection and entity metrics");
    std::string ev_pred, ev_gt, ev_retrieval, ev_out;
    double ev_iou = 0.5;
    int ev_k = 3;
    cmd_eval->add_option("--pred", ev_pred)->required();
    cmd_eval->add_option("--gt", ev_gt)->required();
    cmd_eval->add_option("--iou", ev_iou);
    cmd_eval->add_option("--retrieval", ev_retrieval, "JSONL of evidence/relevant ids");
    cmd_eval->add_option("--k", ev_k);
    cmd_eval->add_option("--out", ev_out)->required();

    // --- run ----------------------------------------------------------------
    auto* cmd_run = app.add_subcommand("run", "full pipeline over a manifest");
    std::string run_manifest, run_out;
    cmd_run->add_option("--manifest", run_manifest)->required();
    cmd_run->add_option("--out", run_out)->required();

    // --- overlay --------------------------------------------------------
    auto* cmd_overlay = app.add_subcommand("overlay", "render masks and boxes");
    std::string ov_features, ov_bundles, ov_out;
    std::vector<std::string> ov_masks;
    cmd_overlay->add_option("--features", ov_features)->required();
    cmd_overlay->add_option("--bundles", ov_bundles)->required();
    cmd_overlay->add_option("--mask", ov_masks, "mask PGM per bundle, repeatable");
    cmd_overlay->add_option("--out", ov_out)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        const tk::pipeline::PipelineConfig cfg = config_or_default(config_path);

        if (*cmd_intake) {
            const auto registry = tk::intake::load_registry_file(in_registry);
            const auto outcome = tk::intake::parse_proposals(
                slurp(in_raw), registry, in_w, in_h, in_queried, in_attempt);
            nlohmann::ordered_json j = nlohmann::ordered_json::parse(
                tk::intake::proposal_set_to_json(outcome.accepted, outcome.rejections));
            j["retry_needed"] = outcome.retry_needed;
            if (auto d = tk::intake::plan_retry(outcome, registry, in_attempt))
                j["retry_query"] = d->class_phrase;
            spit(in_out, j.dump(2));
        } else if (*cmd_recal) {
            const auto fmap = tk::grid::load_feature_map_file(rc_features);
            const auto field = tk::grid::pool_key_patches(fmap, cfg.recal.K);
            std::vector<tk::recal::PromptBundle> bundles;
            for (const auto& p : proposals_from_envelope(slurp(rc_proposals)))
                bundles.push_back(tk::recal::recalibrate_proposal(p, field, cfg.recal));
            // Category-wise NMS, preserving first-seen class order.
            std::vector<std::string> order;
            std::map<std::string, std::vector<tk::recal::PromptBundle>> by_class;
            for (const auto& b : bundles) {
                if (!by_class.count(b.cls)) order.push_back(b.cls);
                by_class[b.cls].push_back(b);
            }
            std::vector<tk::recal::PromptBundle> kept;
            for (const auto& cls : order)
                for (auto& b : tk::recal::nms(by_class[cls], cfg.recal.nms_iou))
                    kept.push_back(std::move(b));
            spit(rc_out, tk::recal::bundles_to_json(kept));
        } else if (*cmd_segment) {
            const auto fmap = tk::grid::load_feature_map_file(sg_features);
            const auto field = tk::grid::pool_key_patches(fmap, cfg.recal.K);
            const auto bundles = tk::recal::bundles_from_json(slurp(sg_bundles));
            if (sg_index >= bundles.size())
                throw tk::Error("invalid argument", "bundle index out of range");
            const double tau_seg = sg_tau_seg >= 0.0 ? sg_tau_seg : cfg.tau_seg;

            tk::maskseg::SegmentRequest req;
            req.image_ref = sg_features;
            req.bundle = bundles[sg_index];
            req.image_w = fmap.image_w;
            req.image_h = fmap.image_h;

            tk::maskseg::Mask mask;
            if (sg_provider == "external") {
                tk::maskseg::FileExchangeSegmenter provider(
                    sg_exchange.empty() ? cfg.exchange_dir : sg_exchange);
                mask = tk::maskseg::segment(req, provider);
            } else {
                tk::maskseg::ReferenceSegmenter provider(field, tau_seg);
                mask = tk::maskseg::segment(req, provider);
            }
            mask = tk::maskseg::keep_prompted_component(mask, req.bundle.pos);
            tk::maskseg::write_mask_file(mask, sg_out);
        } else if (*cmd_measure) {
            const auto mask = tk::maskseg::read_mask_file(ms_mask);
            const auto attrs = tk::geometry::measure_mask(mask, {ms_cal});
            spit(ms_out, tk::geometry::attrs_to_json(attrs));
        } else if (*cmd_entity) {
            const auto attrs = tk::geometry::attrs_from_json(slurp(en_attrs));
            std::string location;
            if (!en_zones.empty()) {
                const auto zones = tk::entity::load_zone_map_file(en_zones);
                tk::Point centroid;
                if (!en_mask.empty()) {
                    centroid = tk::entity::mask_centroid(tk::maskseg::read_mask_file(en_mask));
                } else if (en_box.size() == 4) {
                    centroid = tk::Box{en_box[0], en_box[1], en_box[2], en_box[3]}.center();
                } else {
                    throw tk::Error("invalid argument", "need --mask or --box for zoning");
                }
                location = tk::entity::assign_location(centroid, en_w, en_h, zones);
            }
            std::optional<tk::entity::Severity> severity;
            if (!en_rules.empty()) {
                try {
                    severity = tk::entity::grade_severity(
                        en_class, attrs, tk::entity::load_rule_set_file(en_rules));
                } catch (const tk::Error& e) {
                    if (e.code() != "ungradable") throw;
                }
            }
            tk::entity::Context ctx;
            if (en_conf > 0.0) ctx.confidence = en_conf;
            ctx.section_id = en_section;
            ctx.time = en_time;
            const auto e =
                tk::entity::build_entity(en_class, location, attrs, severity, ctx);
            spit(en_out, tk::entity::serialize_entity(e));
        } else if (*cmd_kb_ingest) {
            tk::knowledge::FragmentStore store;
            if (fs::exists(kb_store))
                store = tk::knowledge::FragmentStore::load_file(kb_store);
            const tk::knowledge::HashEmbedder embedder(
                store.size() ? store.dimension() : kb_dim);
            const tk::knowledge::FragmentMetadata meta{kb_cat, kb_part, kb_src};
            std::size_t added = 0;
            if (!kb_text.empty()) {
                store.ingest(kb_text, meta, embedder);
                ++added;
            }
            if (!kb_file.empty()) {
                for (const auto& chunk :
                     tk::knowledge::split_text(slurp(kb_file), kb_chunk, kb_overlap)) {
                    store.ingest(chunk, meta, embedder);
                    ++added;
                }
            }
            store.save_file(kb_store);
            std::cout << "ingested " << added << " fragment(s), store size "
                      << store.size() << "\n";
        } else if (*cmd_kb_query) {
            const auto store = tk::knowledge::FragmentStore::load_file(kq_store);
            const tk::knowledge::HashEmbedder embedder(store.dimension());
            tk::knowledge::MetadataFilter filter;
            if (!kq_cat.empty()) filter.defect_category = kq_cat;
            if (!kq_part.empty()) filter.structural_part = kq_part;
            if (!kq_src.empty()) filter.source_doc = kq_src;
            const auto evidence = store.retrieve(embedder.embed(kq_text), kq_k, filter);
            spit(kq_out, tk::knowledge::evidence_to_json(evidence));
        } else if (*cmd_rep_assemble) {
            const auto e = tk::entity::parse_entity(slurp(ra_entity));
            tk::knowledge::FragmentStore store;
            if (!ra_store.empty())
                store = tk::knowledge::FragmentStore::load_file(ra_store);
            tk::knowledge::EvidenceSet evidence;
            if (!ra_evidence.empty())
                evidence = tk::knowledge::evidence_from_json(slurp(ra_evidence));
            const auto req =
                tk::knowledge::assemble_request(e, evidence, store, ra_instruction);
            spit(ra_out, tk::knowledge::request_to_json(req));
        } else if (*cmd_rep_check) {
            const auto e = tk::entity::parse_entity(slurp(rk_entity));
            tk::knowledge::FragmentStore store;
            if (!rk_store.empty())
                store = tk::knowledge::FragmentStore::load_file(rk_store);
            tk::knowledge::EvidenceSet evidence;
            if (!rk_evidence.empty())
                evidence = tk::knowledge::evidence_from_json(slurp(rk_evidence));
            const auto verdict =
                tk::knowledge::check_constraints(slurp(rk_report), evidence, e, store);
            spit(rk_out, tk::knowledge::verdict_to_json(verdict));
        } else if (*cmd_eval) {
            auto preds = tk::eval::load_records_jsonl(ev_pred);
            auto gts = tk::eval::load_records_jsonl(ev_gt);
            // Mask paths resolve relative to each JSONL's directory.
            auto resolve = [](std::vector<tk::eval::DetectionRecord>& recs,
                              const std::string& jsonl_path) {
                const fs::path base = fs::path(jsonl_path).parent_path();
                for (auto& r : recs)
                    if (!r.mask_path.empty() && fs::path(r.mask_path).is_relative())
                        r.mask_path = (base / r.mask_path).string();
            };
            resolve(preds, ev_pred);
            resolve(gts, ev_gt);
            tk::eval::MetricReport report = tk::eval::evaluate(preds, gts, ev_iou);
            if (!ev_retrieval.empty()) {
                std::ifstream in(ev_retrieval);
                std::string line;
                std::size_t hits = 0, total = 0;
                while (std::getline(in, line)) {
                    if (line.empty()) continue;
                    const json j = json::parse(line);
                    tk::knowledge::EvidenceSet evs;
                    for (const auto& id : j["evidence"])
                        evs.push_back({id.get<std::string>(), 0.0});
                    std::vector<std::string> relevant;
                    for (const auto& id : j["relevant"])
                        relevant.push_back(id.get<std::string>());
                    hits += static_cast<std::size_t>(tk::eval::hit_at_k(evs, relevant, ev_k));
                    ++total;
                }
                if (total)
                    report.hit_at_k_percent =
                        100.0 * static_cast<double>(hits) / static_cast<double>(total);
            }
            spit(ev_out, report.to_json());
        } else if (*cmd_run) {
            const auto inputs = tk::pipeline::load_manifest_file(run_manifest);
            tk::pipeline::PipelineConfig run_cfg = cfg;
            run_cfg.seed = seed;
            const auto summary = tk::pipeline::run_pipeline(inputs, run_cfg, run_out);
            std::cout << summary.to_json() << "\n";
        } else if (*cmd_overlay) {
            const auto fmap = tk::grid::load_feature_map_file(ov_features);
            const auto bundles = tk::recal::bundles_from_json(slurp(ov_bundles));
            std::vector<tk::overlay::OverlayItem> items;
            for (std::size_t i = 0; i < bundles.size(); ++i) {
                tk::overlay::OverlayItem item;
                item.box = bundles[i].box;
                item.label = bundles[i].cls;
                item.confidence = bundles[i].confidence;
                if (i < ov_masks.size())
                    item.mask = tk::maskseg::read_mask_file(ov_masks[i]);
                items.push_back(std::move(item));
            }
            const auto canvas =
                tk::overlay::emit_overlay(fmap.image_w, fmap.image_h, items);
            tk::overlay::write_ppm_file(canvas, ov_out);
        }
    } catch (const std::exception& e) {
        std::cerr << "tm: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
