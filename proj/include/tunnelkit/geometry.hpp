#pragma once
// Mask geometry: Zhang-Suen skeletonization, exact Euclidean distance
// transform, crack length / width profiles, area and shape descriptors, all
// scaled by a task-level mm-per-pixel calibration.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tunnelkit/core.hpp"
#include "tunnelkit/mask.hpp"

namespace tk::geometry {

struct Calibration {
    double mm_per_pixel = 1.0;

    void validate() const {
        if (!(mm_per_pixel > 0.0) || !std::isfinite(mm_per_pixel))
            throw std::invalid_argument("mm_per_pixel must be positive and finite");
    }
};

struct PixelCoord {
    std::uint32_t x = 0;
    std::uint32_t y = 0;
};

inline bool operator==(const PixelCoord& a, const PixelCoord& b) {
    return a.x == b.x && a.y == b.y;
}

struct Skeleton {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<PixelCoord> pixels; // scan order
    // 8-adjacency edges as (index, index) pairs into `pixels`, i < j.
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;

    bool empty() const { return pixels.empty(); }
};

struct GeometryAttrs {
    std::optional<double> length_mm;
    std::optional<double> width_mm; // representative (95th percentile)
    std::vector<double> width_profile_mm;
    std::optional<double> area_mm2;
    std::optional<double> max_diameter_mm;
    std::optional<double> compactness;
};

// Zhang-Suen iterative thinning to fixpoint. Throws Error("empty region") on
// an empty mask. Note the classic scheme can erase small blobs (a 2x2 square
// thins to nothing); callers treat an empty skeleton as "no crack axis".
Skeleton skeletonize(const maskseg::Mask& mask);

// Exact squared Euclidean distance (int64) from every pixel to the nearest
// background pixel center. The ring just outside the image counts as
// background, so the transform is finite on full-foreground masks.
std::vector<std::int64_t> squared_edt(const maskseg::Mask& mask);

// Total minimum-spanning weight of the skeleton adjacency graph (1 per
// orthogonal step, sqrt(2) per diagonal step), summed per component, scaled.
double path_length(const Skeleton& sk, const Calibration& cal);

// Per skeleton pixel: (2*EDT - 1) * mm_per_pixel; representative is the
// nearest-rank 95th percentile.
std::pair<std::vector<double>, double> width_profile(const maskseg::Mask& mask,
                                                     const Skeleton& sk,
                                                     const Calibration& cal);

double region_area(const maskseg::Mask& mask, const Calibration& cal);

// (max_diameter_mm, compactness): max pairwise distance between boundary
// pixel centers, and 4*pi*A/P^2 with P the count of exposed pixel edges.
std::pair<double, double> shape_descriptors(const maskseg::Mask& mask,
                                            const Calibration& cal);

// All attributes computable for the mask: length/width via the skeleton,
// area/diameter/compactness via the region. Multi-component masks sum area
// and length, concatenate width profiles and take the largest per-component
// diameter.
GeometryAttrs measure_mask(const maskseg::Mask& mask, const Calibration& cal);

std::string attrs_to_json(const GeometryAttrs& attrs);
GeometryAttrs attrs_from_json(const std::string& text);

} // namespace tk::geometry
