#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "semicon/tensor.hpp"

namespace semicon {

// Square RGB float raster, channels-last, values nominally in [0, 1].
struct Image {
    int side = 0;
    std::vector<float> px;

    Image() = default;
    explicit Image(int s, float fill = 0.0f)
        : side(s), px(static_cast<std::size_t>(s) * s * 3, fill) {}

    float& at(int y, int x, int c) { return px[(static_cast<std::size_t>(y) * side + x) * 3 + c]; }
    float at(int y, int x, int c) const {
        return px[(static_cast<std::size_t>(y) * side + x) * 3 + c];
    }

    bool operator==(const Image&) const = default;
};

Image image_from_rgb8(std::span<const std::uint8_t> rgb, int side);

// Bilinear resampling of the source window [x0, x0 + w) x [y0, y0 + h) onto an
// out_side x out_side grid using half-pixel centers. A full-window resample to
// the same side reproduces the input exactly.
Image resample(const Image& src, double x0, double y0, double w, double h, int out_side);

inline Image resize_bilinear(const Image& src, int out_side) {
    return resample(src, 0.0, 0.0, src.side, src.side, out_side);
}

// Stack equally sized images into a channel-major (3, N, side, side) tensor.
Tensor to_tensor(std::span<const Image> images);

}  // namespace semicon
