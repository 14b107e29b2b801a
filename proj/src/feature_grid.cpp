#include "tunnelkit/feature_grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace tk::grid {

namespace {

constexpr char kMagic[4] = {'D', 'F', 'M', '1'};

std::uint32_t read_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}

void write_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

float read_f32_le(const unsigned char* p) {
    std::uint32_t u = read_u32_le(p);
    float f;
    std::memcpy(&f, &u, sizeof(f));
    return f;
}

void write_f32_le(std::string& out, float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, sizeof(u));
    write_u32_le(out, u);
}

} // namespace

Anchor anchor_of(const intake::Proposal& proposal) {
    return Anchor{proposal.box.center()};
}

DenseFeatureMap load_feature_map(const std::string& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw Error("not a feature map", "bad magic");
    if (bytes.size() < 24) throw Error("truncated", "header incomplete");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    DenseFeatureMap m;
    m.grid_h = read_u32_le(p + 4);
    m.grid_w = read_u32_le(p + 8);
    m.dim = read_u32_le(p + 12);
    m.image_w = read_u32_le(p + 16);
    m.image_h = read_u32_le(p + 20);
    if (m.grid_h == 0 || m.grid_w == 0 || m.dim == 0 || m.image_w == 0 || m.image_h == 0)
        throw Error("not a feature map", "zero header field");
    const std::size_t n =
        static_cast<std::size_t>(m.grid_h) * m.grid_w * m.dim;
    if (bytes.size() != 24 + n * 4)
        throw Error("truncated", "payload byte count does not match header");
    m.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        m.values[i] = read_f32_le(p + 24 + i * 4);
        if (!std::isfinite(m.values[i])) throw Error("corrupt values", "non-finite value");
    }
    return m;
}

DenseFeatureMap load_feature_map_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("not a feature map", "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return load_feature_map(ss.str());
}

std::string save_feature_map(const DenseFeatureMap& map) {
    std::string out;
    out.reserve(24 + map.values.size() * 4);
    out.append(kMagic, 4);
    write_u32_le(out, map.grid_h);
    write_u32_le(out, map.grid_w);
    write_u32_le(out, map.dim);
    write_u32_le(out, map.image_w);
    write_u32_le(out, map.image_h);
    for (float f : map.values) write_f32_le(out, f);
    return out;
}

void save_feature_map_file(const DenseFeatureMap& map, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io error", "cannot write " + path);
    std::string bytes = save_feature_map(map);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

KeyPatchField pool_key_patches(const DenseFeatureMap& map, int K) {
    if (K < 1) throw std::invalid_argument("pool_key_patches: K must be >= 1");

    KeyPatchField field;
    field.K = K;
    field.dim = map.dim;
    field.image_w = static_cast<double>(map.image_w);
    field.image_h = static_cast<double>(map.image_h);
    const std::size_t cells = static_cast<std::size_t>(K) * K;
    field.vectors.assign(cells * map.dim, 0.0f);
    field.counts.assign(cells, 0);

    std::vector<double> acc(cells * map.dim, 0.0);

    auto cell_of_pixel = [&](double px, double py) -> std::size_t {
        int n = static_cast<int>(std::floor(px / field.image_w * K)) + 1;
        int m = static_cast<int>(std::floor(py / field.image_h * K)) + 1;
        n = std::clamp(n, 1, K);
        m = std::clamp(m, 1, K);
        return static_cast<std::size_t>(m - 1) * K + (n - 1);
    };

    // Feature (u,v) (1-based) sits at pixel ((v-1/2) W/gw, (u-1/2) H/gh).
    for (std::uint32_t u = 1; u <= map.grid_h; ++u) {
        for (std::uint32_t v = 1; v <= map.grid_w; ++v) {
            const double px = (v - 0.5) * field.image_w / map.grid_w;
            const double py = (u - 0.5) * field.image_h / map.grid_h;
            const std::size_t cell = cell_of_pixel(px, py);
            const float* f = map.at(u, v);
            double* a = acc.data() + cell * map.dim;
            for (std::uint32_t d = 0; d < map.dim; ++d) a[d] += f[d];
            ++field.counts[cell];
        }
    }

    for (std::size_t c = 0; c < cells; ++c) {
        if (field.counts[c] == 0) continue;
        const double inv = 1.0 / static_cast<double>(field.counts[c]);
        for (std::uint32_t d = 0; d < map.dim; ++d)
            field.vectors[c * map.dim + d] =
                static_cast<float>(acc[c * map.dim + d] * inv);
    }

    // Empty cells (K larger than the feature grid): nearest feature vector by
    // center distance, ties broken by row-major feature order.
    for (std::size_t c = 0; c < cells; ++c) {
        if (field.counts[c] != 0) continue;
        const int m = static_cast<int>(c) / K + 1;
        const int n = static_cast<int>(c) % K + 1;
        const Point cc = field.center(CellIndex{m, n});
        double best = std::numeric_limits<double>::infinity();
        const float* best_vec = nullptr;
        for (std::uint32_t u = 1; u <= map.grid_h; ++u) {
            for (std::uint32_t v = 1; v <= map.grid_w; ++v) {
                const double px = (v - 0.5) * field.image_w / map.grid_w;
                const double py = (u - 0.5) * field.image_h / map.grid_h;
                const double d2 = (px - cc.x) * (px - cc.x) + (py - cc.y) * (py - cc.y);
                if (d2 < best) {
                    best = d2;
                    best_vec = map.at(u, v);
                }
            }
        }
        std::copy(best_vec, best_vec + map.dim, field.vectors.begin() + c * map.dim);
    }
    return field;
}

CellIndex locate_cell(const Anchor& anchor, double image_w, double image_h, int K) {
    int n = static_cast<int>(std::floor(anchor.p.x / image_w * K)) + 1;
    int m = static_cast<int>(std::floor(anchor.p.y / image_h * K)) + 1;
    return CellIndex{std::clamp(m, 1, K), std::clamp(n, 1, K)};
}

} // namespace tk::grid
