#pragma once
// Cross-model recalibration: anchor-neighborhood prototype, cosine support
// retrieval over the key-patch field, thresholded Top-M selection, negative
// point sampling, support-box derivation and category-wise NMS.

#include <optional>
#include <string>
#include <vector>

#include "tunnelkit/core.hpp"
#include "tunnelkit/feature_grid.hpp"
#include "tunnelkit/intake.hpp"

namespace tk::recal {

struct RecalConfig {
    int K = 24;
    int r = 5;            // prototype window side, odd
    double tau = 0.6;     // similarity threshold
    int top_m = 5;        // max positive prompts
    int neg_count = 5;    // max negative prompts
    double nms_iou = 0.5;

    // Throws std::invalid_argument on any violated invariant.
    void validate() const;
};

RecalConfig recal_config_from_json(const std::string& json_text);
std::string recal_config_to_json(const RecalConfig& cfg);

// KxK cosine scores in [-1,1]; exactly 0 where either vector has zero norm.
struct SimilarityField {
    int K = 0;
    std::vector<double> scores; // row-major (m, n)

    double at(const grid::CellIndex& c) const {
        return scores[static_cast<std::size_t>(c.m - 1) * K + (c.n - 1)];
    }
};

struct SupportEntry {
    grid::CellIndex cell;
    double score;
};

// Descending score, ties by row-major cell order, at most top_m entries, all
// scores >= tau.
using SupportSet = std::vector<SupportEntry>;

struct PromptBundle {
    std::string cls;
    std::vector<Point> pos;    // centers of support cells
    std::vector<Point> neg;    // centers of lowest-similarity non-target cells
    Box box;                   // recalibrated support box (or proposal fallback)
    std::vector<float> prototype;
    double confidence = 0.0;   // mean support score; 0 when support is empty

    bool empty_support() const { return pos.empty(); }
};

// Mean of cell vectors in the r x r window centered at `cell`, clipped to the
// grid. r must be odd.
std::vector<float> build_prototype(const grid::KeyPatchField& field,
                                   const grid::CellIndex& cell, int r);

SimilarityField similarity_field(const std::vector<float>& query,
                                 const grid::KeyPatchField& field);

SupportSet select_support(const SimilarityField& sim, double tau, int top_m);

PromptBundle make_prompts(const SupportSet& support, const grid::KeyPatchField& field,
                          const SimilarityField& sim, const intake::Proposal& proposal,
                          const RecalConfig& cfg);

// Tight bounding box of the support cells' pixel regions, intersected with
// the image; the proposal box when support is empty.
Box recalibrated_box(const SupportSet& support, const grid::KeyPatchField& field,
                     const Box& fallback);

double iou(const Box& a, const Box& b);

// Greedy duplicate suppression: confidence descending (ties by input order),
// keep a bundle iff its box IoU with every kept bundle is < iou_thresh.
// Caller groups bundles per class.
std::vector<PromptBundle> nms(const std::vector<PromptBundle>& bundles,
                              double iou_thresh);

// Full per-proposal recalibration (prototype -> similarity -> support ->
// prompts -> support box).
PromptBundle recalibrate_proposal(const intake::Proposal& proposal,
                                  const grid::KeyPatchField& field,
                                  const RecalConfig& cfg);

std::string bundle_to_json(const PromptBundle& b);
std::string bundles_to_json(const std::vector<PromptBundle>& bs);
PromptBundle bundle_from_json(const std::string& text);
std::vector<PromptBundle> bundles_from_json(const std::string& text);

} // namespace tk::recal
