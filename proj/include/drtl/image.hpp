#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace drtl {

// Intensity image, HWC interleaved, values in [0,1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> px;

    Image() = default;
    Image(int h, int w, int c, float fill = 0.f)
        : height(h), width(w), channels(c), px(static_cast<size_t>(h) * w * c, fill) {}

    float& at(int y, int x, int c) {
        return px[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    float at(int y, int x, int c) const {
        return px[(static_cast<size_t>(y) * width + x) * channels + c];
    }

    size_t size() const { return px.size(); }

    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }

    void clamp01() {
        for (float& v : px) v = std::min(1.f, std::max(0.f, v));
    }

    void validate(const char* where = "image") const {
        if (height < 8 || width < 8)
            throw std::invalid_argument(std::string(where) + ": dimensions must be >= 8");
        if (channels != 1 && channels != 3)
            throw std::invalid_argument(std::string(where) + ": channels must be 1 or 3");
        if (px.size() != static_cast<size_t>(height) * width * channels)
            throw std::invalid_argument(std::string(where) + ": buffer size mismatch");
        for (float v : px)
            if (!std::isfinite(v) || v < 0.f || v > 1.f)
                throw std::invalid_argument(std::string(where) + ": intensity outside [0,1]");
    }
};

inline uint8_t to_byte(float v) {
    const float c = std::min(1.f, std::max(0.f, v));
    return static_cast<uint8_t>(std::lround(c * 255.f));
}

inline float from_byte(uint8_t b) { return static_cast<float>(b) / 255.f; }

// snap to the 8-bit grid; synthesized datasets are persisted as 8-bit PNG, so
// anything that must replay bit-exactly against stored files works on
// quantized inputs
inline Image quantize8(const Image& img) {
    Image out = img;
    for (float& v : out.px) v = from_byte(to_byte(v));
    return out;
}

}  // namespace drtl
