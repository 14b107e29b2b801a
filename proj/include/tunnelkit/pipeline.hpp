#pragma once
// End-to-end orchestration: intake -> anchor -> recalibrate -> NMS ->
// segment -> geometry -> entity -> retrieval -> report request, batched over
// a manifest, with per-proposal failure isolation and per-stage persistence.

#include <optional>
#include <string>
#include <vector>

#include "tunnelkit/entity.hpp"
#include "tunnelkit/knowledge.hpp"
#include "tunnelkit/recalibrate.hpp"

namespace tk::pipeline {

struct PipelineConfig {
    recal::RecalConfig recal;
    double tau_seg = 0.6;
    double mm_per_pixel = 1.0;
    std::string registry_path;
    std::string zone_map_path;   // optional
    std::string rule_set_path;   // optional
    std::string template_path;   // optional
    std::string knowledge_base_path; // optional
    int retrieval_k = 3;
    std::string segmenter_provider = "reference"; // reference | external
    std::string exchange_dir;                     // for the external provider
    std::string instruction =
        "Draft an inspection explanation and an advisory suggestion for this defect.";
    std::uint64_t seed = 0;
};

// Flat JSON config; the recalibration keys are K, r, tau, top_m, neg_count,
// nms_iou with the standard defaults.
PipelineConfig load_pipeline_config(const std::string& json_text);
PipelineConfig load_pipeline_config_file(const std::string& path);

struct PipelineInput {
    std::string id;
    std::string features_path;
    std::string proposals_path;
    std::string retry_path; // optional second provider response
    std::string section_id;
    std::string time;
};

std::vector<PipelineInput> load_manifest_file(const std::string& path);

struct StageError {
    std::string image;
    int proposal_index = -1; // -1 for image-level failures
    std::string stage;
    std::string error;
};

struct RunSummary {
    std::size_t images = 0;
    std::size_t proposals_accepted = 0;
    std::size_t proposals_rejected = 0;
    std::size_t retries_planned = 0;
    std::size_t entities = 0;
    std::size_t fallback_requests = 0;
    std::uint64_t seed = 0; // provenance only; the pipeline is deterministic
    std::vector<StageError> errors;

    std::string to_json() const;
};

// Processes every input; one bad proposal never aborts its image, one bad
// image never aborts the batch. All stage outputs are written under
// out_dir/{intake,bundles,masks,geometry,entities,requests,overlays} plus
// detections.jsonl, errors.jsonl and run_summary.json. Mask paths in
// detections.jsonl are relative to out_dir so identical runs are byte
// identical regardless of where they live.
RunSummary run_pipeline(const std::vector<PipelineInput>& inputs,
                        const PipelineConfig& cfg, const std::string& out_dir);

} // namespace tk::pipeline
