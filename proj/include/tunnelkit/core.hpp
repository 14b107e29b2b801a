#pragma once
// Shared primitives: pixel points, boxes, typed errors, canonical number
// formatting and the FNV-1a digest used for provenance ids.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tk {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

inline bool operator==(const Point& a, const Point& b) { return a.x == b.x && a.y == b.y; }
inline bool operator<(const Point& a, const Point& b) {
    return a.y < b.y || (a.y == b.y && a.x < b.x);
}

// Axis-aligned box, (x1,y1) top-left, (x2,y2) bottom-right, pixel units.
struct Box {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    bool valid() const { return x1 < x2 && y1 < y2; }
    Point center() const { return {(x1 + x2) / 2.0, (y1 + y2) / 2.0}; }
    bool contains(const Point& p) const {
        return p.x >= x1 && p.x <= x2 && p.y >= y1 && p.y <= y2;
    }
};

inline bool operator==(const Box& a, const Box& b) {
    return a.x1 == b.x1 && a.y1 == b.y1 && a.x2 == b.x2 && a.y2 == b.y2;
}

// Error with a stable machine-checkable code ("truncated", "not a mask", ...)
// plus a human detail string. Tests match on code(), not on what().
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& detail)
        : std::runtime_error(detail.empty() ? code : code + ": " + detail),
          code_(std::move(code)) {}
    explicit Error(std::string code) : Error(std::move(code), "") {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

// Fixed three-decimal formatting. Values already quantized to 3 decimals
// reproduce themselves, which is what makes entity JSON round-trips byte
// exact.
std::string format_fixed3(double v);

// Quantize to the value format_fixed3 prints (half away from zero).
double quantize3(double v);

// FNV-1a 64-bit over raw bytes; stable across platforms.
std::uint64_t fnv1a64(std::string_view bytes);
std::string fnv1a64_hex(std::string_view bytes);

} // namespace tk
