#pragma once
// Binary instance masks: raster type, PGM (P5) I/O and connected-component
// post-processing.

#include <cstdint>
#include <string>
#include <vector>

#include "tunnelkit/core.hpp"

namespace tk::maskseg {

struct Provenance {
    std::string provider_id;
    std::string request_digest;
};

struct Mask {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::uint8_t> raster; // row-major, values in {0,1}
    Provenance provenance;

    std::uint8_t at(std::uint32_t x, std::uint32_t y) const {
        return raster[static_cast<std::size_t>(y) * width + x];
    }
    void set(std::uint32_t x, std::uint32_t y, std::uint8_t v) {
        raster[static_cast<std::size_t>(y) * width + x] = v;
    }
    std::size_t foreground_count() const;
    bool empty_foreground() const { return foreground_count() == 0; }
};

inline bool same_raster(const Mask& a, const Mask& b) {
    return a.width == b.width && a.height == b.height && a.raster == b.raster;
}

Mask make_mask(std::uint32_t width, std::uint32_t height);

// Binary PGM, P5, maxval 255, foreground 255 / background 0, written as
// "P5\n<w> <h>\n255\n<raster>". Anything else reads as "not a mask".
std::string write_mask(const Mask& mask);
Mask read_mask(const std::string& bytes);
void write_mask_file(const Mask& mask, const std::string& path);
Mask read_mask_file(const std::string& path);

// Label 4-connected foreground components; returns label raster (0 =
// background, components numbered from 1 in top-left scan order) and the
// component count.
std::vector<std::uint32_t> label_components(const Mask& mask, std::uint32_t* count);

// Keep only the 4-connected components containing a positive prompt point;
// with no prompts, keep the largest component (ties by top-left scan order).
Mask keep_prompted_component(const Mask& mask, const std::vector<Point>& pos_points);

// Pixel IoU between two foreground rasters of equal dims.
double mask_iou(const Mask& a, const Mask& b);

// Tight bounding box of the foreground (pixel-edge coordinates); throws
// Error("empty region") on a blank mask.
Box mask_bbox(const Mask& mask);

} // namespace tk::maskseg
