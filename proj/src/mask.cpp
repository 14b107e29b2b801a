#include "tunnelkit/mask.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>

namespace tk::maskseg {

std::size_t Mask::foreground_count() const {
    std::size_t n = 0;
    for (std::uint8_t v : raster) n += (v != 0);
    return n;
}

Mask make_mask(std::uint32_t width, std::uint32_t height) {
    Mask m;
    m.width = width;
    m.height = height;
    m.raster.assign(static_cast<std::size_t>(width) * height, 0);
    return m;
}

std::string write_mask(const Mask& mask) {
    std::string out = "P5\n" + std::to_string(mask.width) + " " +
                      std::to_string(mask.height) + "\n255\n";
    out.reserve(out.size() + mask.raster.size());
    for (std::uint8_t v : mask.raster)
        out.push_back(static_cast<char>(v ? 255 : 0));
    return out;
}

Mask read_mask(const std::string& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
        throw Error("not a mask", "expected P5 magic");
    std::size_t pos = 2;
    auto skip_ws = [&]() {
        while (pos < bytes.size() &&
               std::isspace(static_cast<unsigned char>(bytes[pos])))
            ++pos;
    };
    auto read_uint = [&]() -> std::uint64_t {
        skip_ws();
        if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos])))
            throw Error("not a mask", "malformed header");
        std::uint64_t v = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            v = v * 10 + static_cast<std::uint64_t>(bytes[pos] - '0');
            ++pos;
        }
        return v;
    };
    const std::uint64_t w = read_uint();
    const std::uint64_t h = read_uint();
    const std::uint64_t maxval = read_uint();
    if (maxval != 255) throw Error("not a mask", "maxval must be 255");
    if (w == 0 || h == 0) throw Error("not a mask", "zero dimension");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
        throw Error("not a mask", "malformed header");
    ++pos; // single whitespace byte before raster
    const std::size_t expect = static_cast<std::size_t>(w) * h;
    if (bytes.size() - pos != expect)
        throw Error("not a mask", "raster byte count mismatch");
    Mask m = make_mask(static_cast<std::uint32_t>(w), static_cast<std::uint32_t>(h));
    for (std::size_t i = 0; i < expect; ++i) {
        const unsigned char c = static_cast<unsigned char>(bytes[pos + i]);
        if (c != 0 && c != 255) throw Error("not a mask", "non-binary pixel value");
        m.raster[i] = (c == 255) ? 1 : 0;
    }
    return m;
}

void write_mask_file(const Mask& mask, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io error", "cannot write " + path);
    const std::string bytes = write_mask(mask);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Mask read_mask_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("not a mask", "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return read_mask(ss.str());
}

std::vector<std::uint32_t> label_components(const Mask& mask, std::uint32_t* count) {
    std::vector<std::uint32_t> labels(mask.raster.size(), 0);
    std::uint32_t next = 0;
    std::deque<std::pair<std::uint32_t, std::uint32_t>> work;
    for (std::uint32_t y = 0; y < mask.height; ++y) {
        for (std::uint32_t x = 0; x < mask.width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * mask.width + x;
            if (!mask.raster[i] || labels[i]) continue;
            labels[i] = ++next;
            work.push_back({x, y});
            while (!work.empty()) {
                auto [cx, cy] = work.front();
                work.pop_front();
                const int dx[4] = {1, -1, 0, 0};
                const int dy[4] = {0, 0, 1, -1};
                for (int k = 0; k < 4; ++k) {
                    const std::int64_t nx = static_cast<std::int64_t>(cx) + dx[k];
                    const std::int64_t ny = static_cast<std::int64_t>(cy) + dy[k];
                    if (nx < 0 || ny < 0 || nx >= mask.width || ny >= mask.height)
                        continue;
                    const std::size_t ni = static_cast<std::size_t>(ny) * mask.width +
                                           static_cast<std::size_t>(nx);
                    if (mask.raster[ni] && !labels[ni]) {
                        labels[ni] = next;
                        work.push_back({static_cast<std::uint32_t>(nx),
                                        static_cast<std::uint32_t>(ny)});
                    }
                }
            }
        }
    }
    if (count) *count = next;
    return labels;
}

Mask keep_prompted_component(const Mask& mask, const std::vector<Point>& pos_points) {
    std::uint32_t count = 0;
    const std::vector<std::uint32_t> labels = label_components(mask, &count);
    if (count == 0) return mask;

    std::vector<bool> keep(count + 1, false);
    if (pos_points.empty()) {
        // Largest component; first label wins ties (labels follow scan order).
        std::vector<std::size_t> sizes(count + 1, 0);
        for (std::uint32_t l : labels)
            if (l) ++sizes[l];
        std::uint32_t best = 1;
        for (std::uint32_t l = 2; l <= count; ++l)
            if (sizes[l] > sizes[best]) best = l;
        keep[best] = true;
    } else {
        for (const Point& p : pos_points) {
            const std::int64_t x = static_cast<std::int64_t>(std::floor(p.x));
            const std::int64_t y = static_cast<std::int64_t>(std::floor(p.y));
            if (x < 0 || y < 0 || x >= mask.width || y >= mask.height) continue;
            const std::uint32_t l =
                labels[static_cast<std::size_t>(y) * mask.width + static_cast<std::size_t>(x)];
            if (l) keep[l] = true;
        }
    }

    Mask out = make_mask(mask.width, mask.height);
    out.provenance = mask.provenance;
    for (std::size_t i = 0; i < labels.size(); ++i)
        out.raster[i] = (labels[i] && keep[labels[i]]) ? 1 : 0;
    return out;
}

Box mask_bbox(const Mask& mask) {
    std::uint32_t x1 = mask.width, y1 = mask.height, x2 = 0, y2 = 0;
    bool any = false;
    for (std::uint32_t y = 0; y < mask.height; ++y)
        for (std::uint32_t x = 0; x < mask.width; ++x)
            if (mask.at(x, y)) {
                any = true;
                x1 = std::min(x1, x);
                y1 = std::min(y1, y);
                x2 = std::max(x2, x);
                y2 = std::max(y2, y);
            }
    if (!any) throw Error("empty region", "mask_bbox");
    return Box{static_cast<double>(x1), static_cast<double>(y1),
               static_cast<double>(x2 + 1), static_cast<double>(y2 + 1)};
}

double mask_iou(const Mask& a, const Mask& b) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("mask_iou: dimension mismatch");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.raster.size(); ++i) {
        const bool fa = a.raster[i] != 0, fb = b.raster[i] != 0;
        inter += (fa && fb);
        uni += (fa || fb);
    }
    return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

} // namespace tk::maskseg
