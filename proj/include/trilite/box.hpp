#pragma once

#include <cstdint>

namespace trilite {

// Pixel box, half-open: covers [x0, x1) x [y0, y1).
struct Box {
    std::int64_t x0 = 0;
    std::int64_t y0 = 0;
    std::int64_t x1 = 0;
    std::int64_t y1 = 0;

    std::int64_t width() const noexcept { return x1 - x0; }
    std::int64_t height() const noexcept { return y1 - y0; }
    std::int64_t area() const noexcept { return width() * height(); }
    bool valid() const noexcept { return x0 < x1 && y0 < y1; }
    bool within(std::int64_t image_width, std::int64_t image_height) const noexcept {
        return valid() && x0 >= 0 && y0 >= 0 && x1 <= image_width && y1 <= image_height;
    }
    bool contains(const Box& other) const noexcept {
        return x0 <= other.x0 && y0 <= other.y0 && x1 >= other.x1 && y1 >= other.y1;
    }

    friend bool operator==(const Box&, const Box&) = default;
};

} // namespace trilite
