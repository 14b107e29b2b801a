#include "tunnelkit/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace tk::geometry {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kSqrt2 = 1.41421356237309504880;

// 1D lower-envelope pass of the Felzenszwalb-Huttenlocher squared distance
// transform. f holds int64 values (0 or "infinity"), d receives the result.
constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max() / 4;

void edt_1d(const std::vector<std::int64_t>& f, std::vector<std::int64_t>& d) {
    const int n = static_cast<int>(f.size());
    d.assign(f.size(), 0);
    std::vector<int> v(f.size(), 0);
    std::vector<double> z(f.size() + 1, 0.0);
    // kInf is a large finite sentinel, so the envelope arithmetic needs no
    // infinity branches; values derived from an infinite site clamp back to
    // kInf below, keeping finite distances exact integers.
    auto intersect = [&](int q, int p) {
        return ((static_cast<double>(f[q]) + static_cast<double>(q) * q) -
                (static_cast<double>(f[p]) + static_cast<double>(p) * p)) /
               (2.0 * q - 2.0 * p);
    };
    int k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (int q = 1; q < n; ++q) {
        double s = intersect(q, v[k]);
        while (s <= z[k]) {
            --k;
            s = intersect(q, v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const std::int64_t dx = static_cast<std::int64_t>(q) - v[k];
        d[q] = (f[v[k]] >= kInf) ? kInf : dx * dx + f[v[k]];
    }
}

} // namespace

Skeleton skeletonize(const maskseg::Mask& mask) {
    if (mask.empty_foreground()) throw Error("empty region", "skeletonize");
    const int w = static_cast<int>(mask.width);
    const int h = static_cast<int>(mask.height);
    std::vector<std::uint8_t> img(mask.raster.begin(), mask.raster.end());

    auto px = [&](int x, int y) -> int {
        if (x < 0 || y < 0 || x >= w || y >= h) return 0;
        return img[static_cast<std::size_t>(y) * w + x];
    };

    std::vector<std::size_t> to_delete;
    bool changed = true;
    while (changed) {
        changed = false;
        for (int phase = 0; phase < 2; ++phase) {
            to_delete.clear();
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    if (!px(x, y)) continue;
                    // Clockwise ring from north: P2..P9.
                    const int p2 = px(x, y - 1), p3 = px(x + 1, y - 1);
                    const int p4 = px(x + 1, y), p5 = px(x + 1, y + 1);
                    const int p6 = px(x, y + 1), p7 = px(x - 1, y + 1);
                    const int p8 = px(x - 1, y), p9 = px(x - 1, y - 1);
                    const int b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9;
                    if (b < 2 || b > 6) continue;
                    const int ring[9] = {p2, p3, p4, p5, p6, p7, p8, p9, p2};
                    int a = 0;
                    for (int i = 0; i < 8; ++i)
                        if (ring[i] == 0 && ring[i + 1] == 1) ++a;
                    if (a != 1) continue;
                    if (phase == 0) {
                        if (p2 * p4 * p6 != 0) continue;
                        if (p4 * p6 * p8 != 0) continue;
                    } else {
                        if (p2 * p4 * p8 != 0) continue;
                        if (p2 * p6 * p8 != 0) continue;
                    }
                    to_delete.push_back(static_cast<std::size_t>(y) * w + x);
                }
            }
            for (std::size_t i : to_delete) img[i] = 0;
            if (!to_delete.empty()) changed = true;
        }
    }

    Skeleton sk;
    sk.width = mask.width;
    sk.height = mask.height;
    std::vector<std::int64_t> index(img.size(), -1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (px(x, y)) {
                index[static_cast<std::size_t>(y) * w + x] =
                    static_cast<std::int64_t>(sk.pixels.size());
                sk.pixels.push_back({static_cast<std::uint32_t>(x),
                                     static_cast<std::uint32_t>(y)});
            }
    // Edges toward already-scanned pixels only, so each pair appears once.
    for (std::uint32_t j = 0; j < sk.pixels.size(); ++j) {
        const int x = static_cast<int>(sk.pixels[j].x);
        const int y = static_cast<int>(sk.pixels[j].y);
        const int off[4][2] = {{-1, -1}, {0, -1}, {1, -1}, {-1, 0}};
        for (const auto& o : off) {
            const int nx = x + o[0], ny = y + o[1];
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            const std::int64_t i = index[static_cast<std::size_t>(ny) * w + nx];
            if (i >= 0)
                sk.edges.push_back({static_cast<std::uint32_t>(i), j});
        }
    }
    return sk;
}

std::vector<std::int64_t> squared_edt(const maskseg::Mask& mask) {
    // Pad with a one-pixel background ring so distances stay finite.
    const int w = static_cast<int>(mask.width) + 2;
    const int h = static_cast<int>(mask.height) + 2;
    std::vector<std::int64_t> f(static_cast<std::size_t>(w) * h, 0);
    for (std::uint32_t y = 0; y < mask.height; ++y)
        for (std::uint32_t x = 0; x < mask.width; ++x)
            f[static_cast<std::size_t>(y + 1) * w + (x + 1)] =
                mask.at(x, y) ? kInf : 0;

    // Pass 1: rows.
    std::vector<std::int64_t> row(w), rowd;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) row[static_cast<std::size_t>(x)] = f[static_cast<std::size_t>(y) * w + x];
        edt_1d(row, rowd);
        for (int x = 0; x < w; ++x) f[static_cast<std::size_t>(y) * w + x] = rowd[static_cast<std::size_t>(x)];
    }
    // Pass 2: columns.
    std::vector<std::int64_t> col(h), cold;
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) col[static_cast<std::size_t>(y)] = f[static_cast<std::size_t>(y) * w + x];
        edt_1d(col, cold);
        for (int y = 0; y < h; ++y) f[static_cast<std::size_t>(y) * w + x] = cold[static_cast<std::size_t>(y)];
    }

    std::vector<std::int64_t> out(static_cast<std::size_t>(mask.width) * mask.height, 0);
    for (std::uint32_t y = 0; y < mask.height; ++y)
        for (std::uint32_t x = 0; x < mask.width; ++x)
            out[static_cast<std::size_t>(y) * mask.width + x] =
                f[static_cast<std::size_t>(y + 1) * w + (x + 1)];
    return out;
}

namespace {

struct DisjointSet {
    std::vector<std::uint32_t> parent;
    explicit DisjointSet(std::size_t n) : parent(n) {
        std::iota(parent.begin(), parent.end(), 0u);
    }
    std::uint32_t find(std::uint32_t a) {
        while (parent[a] != a) {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        return a;
    }
    bool unite(std::uint32_t a, std::uint32_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        parent[b] = a;
        return true;
    }
};

} // namespace

double path_length(const Skeleton& sk, const Calibration& cal) {
    cal.validate();
    if (sk.empty()) return 0.0;
    // Kruskal with orthogonal edges first keeps corner triangles at weight 2
    // instead of 1 + sqrt(2); the remaining tie-break is edge scan order.
    std::vector<std::size_t> order(sk.edges.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto diag = [&](std::size_t e) {
        const auto& a = sk.pixels[sk.edges[e].first];
        const auto& b = sk.pixels[sk.edges[e].second];
        return a.x != b.x && a.y != b.y;
    };
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return !diag(a) && diag(b); });
    DisjointSet ds(sk.pixels.size());
    double total = 0.0;
    for (std::size_t e : order) {
        if (ds.unite(sk.edges[e].first, sk.edges[e].second))
            total += diag(e) ? kSqrt2 : 1.0;
    }
    return total * cal.mm_per_pixel;
}

std::pair<std::vector<double>, double> width_profile(const maskseg::Mask& mask,
                                                     const Skeleton& sk,
                                                     const Calibration& cal) {
    cal.validate();
    std::vector<double> profile;
    if (sk.empty()) return {profile, 0.0};
    const std::vector<std::int64_t> d2 = squared_edt(mask);
    profile.reserve(sk.pixels.size());
    for (const auto& p : sk.pixels) {
        const double d =
            std::sqrt(static_cast<double>(d2[static_cast<std::size_t>(p.y) * mask.width + p.x]));
        profile.push_back((2.0 * d - 1.0) * cal.mm_per_pixel);
    }
    std::vector<double> sorted(profile);
    std::sort(sorted.begin(), sorted.end());
    const std::size_t rank = static_cast<std::size_t>(
        std::ceil(0.95 * static_cast<double>(sorted.size())));
    const double representative = sorted[std::max<std::size_t>(rank, 1) - 1];
    return {profile, representative};
}

double region_area(const maskseg::Mask& mask, const Calibration& cal) {
    cal.validate();
    const std::size_t n = mask.foreground_count();
    if (n == 0) throw Error("empty region", "region_area");
    return static_cast<double>(n) * cal.mm_per_pixel * cal.mm_per_pixel;
}

namespace {

// Exposed pixel edges: foreground sides adjacent to background or the border.
std::size_t exposed_perimeter(const maskseg::Mask& mask) {
    std::size_t p = 0;
    auto bg = [&](std::int64_t x, std::int64_t y) {
        if (x < 0 || y < 0 || x >= mask.width || y >= mask.height) return true;
        return mask.at(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y)) == 0;
    };
    for (std::uint32_t y = 0; y < mask.height; ++y)
        for (std::uint32_t x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            p += bg(static_cast<std::int64_t>(x) - 1, y);
            p += bg(static_cast<std::int64_t>(x) + 1, y);
            p += bg(x, static_cast<std::int64_t>(y) - 1);
            p += bg(x, static_cast<std::int64_t>(y) + 1);
        }
    return p;
}

std::vector<PixelCoord> boundary_pixels(const maskseg::Mask& mask,
                                        const std::vector<std::uint32_t>& labels,
                                        std::uint32_t label) {
    std::vector<PixelCoord> out;
    auto bg = [&](std::int64_t x, std::int64_t y) {
        if (x < 0 || y < 0 || x >= mask.width || y >= mask.height) return true;
        return mask.at(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y)) == 0;
    };
    for (std::uint32_t y = 0; y < mask.height; ++y)
        for (std::uint32_t x = 0; x < mask.width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * mask.width + x;
            if (!mask.raster[i]) continue;
            if (label != 0 && labels[i] != label) continue;
            if (bg(static_cast<std::int64_t>(x) - 1, y) ||
                bg(static_cast<std::int64_t>(x) + 1, y) ||
                bg(x, static_cast<std::int64_t>(y) - 1) ||
                bg(x, static_cast<std::int64_t>(y) + 1))
                out.push_back({x, y});
        }
    return out;
}

double max_pairwise(const std::vector<PixelCoord>& pts) {
    double best = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j) {
            const double dx = static_cast<double>(pts[i].x) - pts[j].x;
            const double dy = static_cast<double>(pts[i].y) - pts[j].y;
            best = std::max(best, dx * dx + dy * dy);
        }
    return std::sqrt(best);
}

} // namespace

std::pair<double, double> shape_descriptors(const maskseg::Mask& mask,
                                            const Calibration& cal) {
    cal.validate();
    const std::size_t area_px = mask.foreground_count();
    if (area_px == 0) throw Error("empty region", "shape_descriptors");
    const std::vector<std::uint32_t> none; // whole-mask boundary
    const double diameter = max_pairwise(boundary_pixels(mask, none, 0)) * cal.mm_per_pixel;
    const std::size_t p = exposed_perimeter(mask);
    const double compactness =
        4.0 * kPi * static_cast<double>(area_px) / (static_cast<double>(p) * p);
    return {diameter, compactness};
}

GeometryAttrs measure_mask(const maskseg::Mask& mask, const Calibration& cal) {
    cal.validate();
    if (mask.empty_foreground()) throw Error("empty region", "measure_mask");

    GeometryAttrs attrs;
    attrs.area_mm2 = region_area(mask, cal);

    const Skeleton sk = skeletonize(mask);
    if (!sk.empty()) {
        attrs.length_mm = path_length(sk, cal);
        auto [profile, rep] = width_profile(mask, sk, cal);
        attrs.width_profile_mm = std::move(profile);
        attrs.width_mm = rep;
    }

    std::uint32_t count = 0;
    const std::vector<std::uint32_t> labels = maskseg::label_components(mask, &count);
    double diameter = 0.0;
    for (std::uint32_t l = 1; l <= count; ++l)
        diameter = std::max(diameter, max_pairwise(boundary_pixels(mask, labels, l)));
    attrs.max_diameter_mm = diameter * cal.mm_per_pixel;

    const std::size_t p = exposed_perimeter(mask);
    attrs.compactness = 4.0 * kPi * static_cast<double>(mask.foreground_count()) /
                        (static_cast<double>(p) * p);
    return attrs;
}

std::string attrs_to_json(const GeometryAttrs& attrs) {
    std::string out = "{";
    bool first = true;
    auto emit = [&](const char* key, const std::optional<double>& v) {
        if (!v) return;
        if (!first) out += ",";
        first = false;
        out += "\"";
        out += key;
        out += "\":";
        out += format_fixed3(quantize3(*v));
    };
    emit("length_mm", attrs.length_mm);
    emit("width_mm", attrs.width_mm);
    if (!attrs.width_profile_mm.empty()) {
        if (!first) out += ",";
        first = false;
        out += "\"width_profile_mm\":[";
        for (std::size_t i = 0; i < attrs.width_profile_mm.size(); ++i) {
            if (i) out += ",";
            out += format_fixed3(quantize3(attrs.width_profile_mm[i]));
        }
        out += "]";
    }
    emit("area_mm2", attrs.area_mm2);
    emit("max_diameter_mm", attrs.max_diameter_mm);
    emit("compactness", attrs.compactness);
    out += "}";
    return out;
}

GeometryAttrs attrs_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw Error("invalid attrs", "not a JSON object");
    GeometryAttrs attrs;
    if (j.contains("length_mm")) attrs.length_mm = j["length_mm"].get<double>();
    if (j.contains("width_mm")) attrs.width_mm = j["width_mm"].get<double>();
    if (j.contains("width_profile_mm"))
        for (const auto& v : j["width_profile_mm"])
            attrs.width_profile_mm.push_back(v.get<double>());
    if (j.contains("area_mm2")) attrs.area_mm2 = j["area_mm2"].get<double>();
    if (j.contains("max_diameter_mm"))
        attrs.max_diameter_mm = j["max_diameter_mm"].get<double>();
    if (j.contains("compactness")) attrs.compactness = j["compactness"].get<double>();
    return attrs;
}

} // namespace tk::geometry
