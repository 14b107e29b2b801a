#pragma once
// Dense feature maps, the KxK pooled key-patch field with explicit pixel
// centers, and anchor-to-cell projection.
//
// DFM1 binary layout (little-endian): magic "DFM1", u32 grid_h, u32 grid_w,
// u32 dim, u32 image_w, u32 image_h, then grid_h*grid_w*dim float32 values in
// row-major (u, v, channel) order.

#include <cstdint>
#include <string>
#include <vector>

#include "tunnelkit/core.hpp"
#include "tunnelkit/intake.hpp"

namespace tk::grid {

struct DenseFeatureMap {
    std::uint32_t grid_h = 0;
    std::uint32_t grid_w = 0;
    std::uint32_t dim = 0;
    std::uint32_t image_w = 0;
    std::uint32_t image_h = 0;
    std::vector<float> values; // grid_h * grid_w * dim, row-major

    const float* at(std::uint32_t u, std::uint32_t v) const { // 1-based
        return values.data() + ((static_cast<std::size_t>(u - 1) * grid_w + (v - 1)) * dim);
    }
};

// 1-based grid cell index, row m in [1,K], column n in [1,K].
struct CellIndex {
    int m = 1;
    int n = 1;
};

inline bool operator==(const CellIndex& a, const CellIndex& b) {
    return a.m == b.m && a.n == b.n;
}
inline bool operator<(const CellIndex& a, const CellIndex& b) {
    return a.m < b.m || (a.m == b.m && a.n < b.n); // row-major order
}

struct KeyPatchField {
    int K = 0;
    std::uint32_t dim = 0;
    double image_w = 0.0;
    double image_h = 0.0;
    std::vector<float> vectors;       // K*K*dim, row-major (m, n, channel)
    std::vector<std::size_t> counts;  // features pooled into each cell

    const float* at(const CellIndex& c) const {
        return vectors.data() +
               ((static_cast<std::size_t>(c.m - 1) * K + (c.n - 1)) * dim);
    }
    // Eq-exact patch center: ((n - 1/2) W / K, (m - 1/2) H / K).
    Point center(const CellIndex& c) const {
        return {(c.n - 0.5) * image_w / K, (c.m - 0.5) * image_h / K};
    }
    // Pixel region owned by a cell (half-open; image edge closes the last
    // cell).
    Box cell_region(const CellIndex& c) const {
        return {(c.n - 1) * image_w / K, (c.m - 1) * image_h / K,
                c.n * image_w / K, c.m * image_h / K};
    }
};

struct Anchor {
    Point p;
};

Anchor anchor_of(const intake::Proposal& proposal);

// DFM1 I/O. Errors: "not a feature map" (bad magic or header), "truncated"
// (byte count mismatch), "corrupt values" (non-finite payload).
DenseFeatureMap load_feature_map(const std::string& bytes);
DenseFeatureMap load_feature_map_file(const std::string& path);
std::string save_feature_map(const DenseFeatureMap& map);
void save_feature_map_file(const DenseFeatureMap& map, const std::string& path);

// Average-pool the dense map onto a KxK field. Cells that receive no feature
// copy the nearest feature vector by center distance (row-major tie-break).
// Accumulation is double, storage float.
KeyPatchField pool_key_patches(const DenseFeatureMap& map, int K);

// Eq. 8 projection: n* = clip(floor(ax/W*K)+1, 1, K), same for m* with H.
CellIndex locate_cell(const Anchor& anchor, double image_w, double image_h, int K);

} // namespace tk::grid
