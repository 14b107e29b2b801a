#include "tunnelkit/overlay.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

namespace tk::overlay {

namespace {

// 5x7 glyphs for A-Z, 0-9 and a few separators; each row is 5 bits, MSB left.
struct Glyph {
    char c;
    std::uint8_t rows[7];
};

constexpr Glyph kFont[] = {
    {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
    {'D', {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
    {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
    {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
    {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
    {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
    {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11}},
    {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}},
    {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
    {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
};

const Glyph* find_glyph(char c) {
    for (const auto& g : kFont)
        if (g.c == c) return &g;
    return nullptr;
}

// Small deterministic palette cycled by draw index.
constexpr Rgb kPalette[] = {
    {220, 60, 60}, {60, 140, 220}, {60, 180, 90}, {220, 160, 40},
    {160, 80, 200}, {40, 190, 190},
};

void put(Canvas& c, std::int64_t x, std::int64_t y, Rgb color) {
    if (x < 0 || y < 0 || x >= c.width || y >= c.height) return;
    c.pixels[static_cast<std::size_t>(y) * c.width + static_cast<std::size_t>(x)] = color;
}

void tint(Canvas& c, std::int64_t x, std::int64_t y, Rgb color) {
    if (x < 0 || y < 0 || x >= c.width || y >= c.height) return;
    Rgb& p = c.pixels[static_cast<std::size_t>(y) * c.width + static_cast<std::size_t>(x)];
    p.r = static_cast<std::uint8_t>((p.r + 2 * color.r) / 3);
    p.g = static_cast<std::uint8_t>((p.g + 2 * color.g) / 3);
    p.b = static_cast<std::uint8_t>((p.b + 2 * color.b) / 3);
}

void draw_box(Canvas& c, const Box& b, Rgb color) {
    const auto x1 = static_cast<std::int64_t>(std::lround(b.x1));
    const auto y1 = static_cast<std::int64_t>(std::lround(b.y1));
    const auto x2 = static_cast<std::int64_t>(std::lround(b.x2)) - 1;
    const auto y2 = static_cast<std::int64_t>(std::lround(b.y2)) - 1;
    for (std::int64_t x = x1; x <= x2; ++x) {
        put(c, x, y1, color);
        put(c, x, y2, color);
    }
    for (std::int64_t y = y1; y <= y2; ++y) {
        put(c, x1, y, color);
        put(c, x2, y, color);
    }
}

void draw_label(Canvas& c, std::int64_t x, std::int64_t y, const std::string& text,
                Rgb color) {
    std::int64_t cx = x;
    for (char raw : text) {
        const char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
        const Glyph* g = find_glyph(ch);
        if (!g) {
            cx += 6;
            continue;
        }
        for (int row = 0; row < 7; ++row)
            for (int col = 0; col < 5; ++col)
                if (g->rows[row] & (0x10 >> col)) put(c, cx + col, y + row, color);
        cx += 6;
    }
}

} // namespace

Canvas make_canvas(std::uint32_t width, std::uint32_t height, Rgb background) {
    Canvas c;
    c.width = width;
    c.height = height;
    c.pixels.assign(static_cast<std::size_t>(width) * height, background);
    return c;
}

Canvas emit_overlay(std::uint32_t width, std::uint32_t height,
                    const std::vector<OverlayItem>& items) {
    Canvas canvas = make_canvas(width, height, Rgb{32, 32, 32});

    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return items[a].confidence > items[b].confidence;
    });

    std::size_t color_idx = 0;
    for (std::size_t idx : order) {
        const OverlayItem& item = items[idx];
        const Rgb color = kPalette[color_idx++ % (sizeof(kPalette) / sizeof(kPalette[0]))];
        if (item.mask.width == width && item.mask.height == height)
            for (std::uint32_t y = 0; y < height; ++y)
                for (std::uint32_t x = 0; x < width; ++x)
                    if (item.mask.at(x, y)) tint(canvas, x, y, color);
        if (item.box.valid()) draw_box(canvas, item.box, color);
        if (!item.label.empty()) {
            const auto lx = static_cast<std::int64_t>(std::lround(item.box.x1)) + 2;
            const auto ly = static_cast<std::int64_t>(std::lround(item.box.y1)) + 2;
            draw_label(canvas, lx, ly, item.label, Rgb{255, 255, 255});
        }
    }
    return canvas;
}

std::string write_ppm(const Canvas& canvas) {
    std::string out = "P6\n" + std::to_string(canvas.width) + " " +
                      std::to_string(canvas.height) + "\n255\n";
    out.reserve(out.size() + canvas.pixels.size() * 3);
    for (const Rgb& p : canvas.pixels) {
        out.push_back(static_cast<char>(p.r));
        out.push_back(static_cast<char>(p.g));
        out.push_back(static_cast<char>(p.b));
    }
    return out;
}

void write_ppm_file(const Canvas& canvas, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io error", "cannot write " + path);
    const std::string bytes = write_ppm(canvas);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

} // namespace tk::overlay
