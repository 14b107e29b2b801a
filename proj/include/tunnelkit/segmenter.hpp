#pragma once
// Segmenter provider contract plus the two shipped providers: a deterministic
// in-process reference segmenter (cell-resolution region growth, used as the
// desk-scale stand-in for a promptable segmentation model) and a
// file-exchange provider for external segmenters.

#include <memory>
#include <optional>
#include <string>

#include "tunnelkit/feature_grid.hpp"
#include "tunnelkit/mask.hpp"
#include "tunnelkit/recalibrate.hpp"

namespace tk::maskseg {

struct SegmentRequest {
    std::string image_ref; // image path or feature-map reference
    recal::PromptBundle bundle;
    std::uint32_t image_w = 0;
    std::uint32_t image_h = 0;

    bool valid() const { return !bundle.pos.empty() || bundle.box.valid(); }
};

// Request JSON written on the provider channel: {"image": <path>, "bundle":
// <PromptBundle JSON>}. The provenance digest is FNV-1a64 over this text.
std::string request_to_json(const SegmentRequest& req);
std::string request_digest(const SegmentRequest& req);

class SegmenterProvider {
public:
    virtual ~SegmenterProvider() = default;
    virtual std::string id() const = 0;
    // Errors: "provider unavailable" when the channel cannot answer,
    // "provider contract violation" when the answer breaks the contract.
    virtual Mask run(const SegmentRequest& req) = 0;
};

// Contract-checked dispatch: runs the provider, verifies mask dims against
// the request and stamps provenance.
Mask segment(const SegmentRequest& req, SegmenterProvider& provider);

// Deterministic reference segmentation at cell resolution: score every cell
// against the bundle prototype, grow 4-connected regions of cells >= tau_seg
// from each positive-prompt cell, drop regions holding a negative-prompt
// cell, then rasterize cell regions to pixels. Requires nonempty positives.
Mask reference_segment(const grid::KeyPatchField& field,
                       const recal::PromptBundle& bundle, double tau_seg);

class ReferenceSegmenter : public SegmenterProvider {
public:
    ReferenceSegmenter(const grid::KeyPatchField& field, double tau_seg)
        : field_(&field), tau_seg_(tau_seg) {}
    std::string id() const override { return "reference"; }
    // Bundles without positive points fall back to rasterizing the request
    // box (box-only prompting); reference_segment itself stays strict.
    Mask run(const SegmentRequest& req) override;

private:
    const grid::KeyPatchField* field_;
    double tau_seg_;
};

// File-exchange channel: the request JSON is written to
// <dir>/<digest>.request.json and the provider's PGM answer is expected at
// <dir>/<digest>.response.pgm. A missing answer is "provider unavailable".
class FileExchangeSegmenter : public SegmenterProvider {
public:
    explicit FileExchangeSegmenter(std::string exchange_dir)
        : dir_(std::move(exchange_dir)) {}
    std::string id() const override { return "external"; }
    Mask run(const SegmentRequest& req) override;

private:
    std::string dir_;
};

} // namespace tk::maskseg
