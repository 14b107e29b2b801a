#pragma once
// Rasterized inspection overlays (binary PPM): mask tint, box outline and a
// small bitmap-font entity label, drawn in confidence order.

#include <cstdint>
#include <string>
#include <vector>

#include "tunnelkit/core.hpp"
#include "tunnelkit/mask.hpp"

namespace tk::overlay {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
};

struct OverlayItem {
    maskseg::Mask mask; // may be empty (zero dims) when only a box is drawn
    Box box;
    std::string label;
    double confidence = 0.0;
};

struct Canvas {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<Rgb> pixels;
};

Canvas make_canvas(std::uint32_t width, std::uint32_t height, Rgb background);

// Items are drawn in descending confidence (ties by input order) so the
// result is deterministic for overlapping masks.
Canvas emit_overlay(std::uint32_t width, std::uint32_t height,
                    const std::vector<OverlayItem>& items);

std::string write_ppm(const Canvas& canvas);
void write_ppm_file(const Canvas& canvas, const std::string& path);

} // namespace tk::overlay
