#include "semicon/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace semicon {

Image image_from_rgb8(std::span<const std::uint8_t> rgb, int side) {
    if (rgb.size() != static_cast<std::size_t>(side) * side * 3) {
        throw std::invalid_argument("image_from_rgb8: buffer does not match side " +
                                    std::to_string(side));
    }
    Image img(side);
    for (std::size_t i = 0; i < rgb.size(); ++i) img.px[i] = static_cast<float>(rgb[i]) / 255.0f;
    return img;
}

Image resample(const Image& src, double x0, double y0, double w, double h, int out_side) {
    if (src.side <= 0 || out_side <= 0) throw std::invalid_argument("resample: empty image");
    Image out(out_side);
    const double sx = w / out_side;
    const double sy = h / out_side;
    const int last = src.side - 1;
    for (int oy = 0; oy < out_side; ++oy) {
        const double fy = std::clamp(y0 + (oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(last));
        const int y_lo = static_cast<int>(fy);
        const int y_hi = std::min(y_lo + 1, last);
        const float ty = static_cast<float>(fy - y_lo);
        for (int ox = 0; ox < out_side; ++ox) {
            const double fx =
                std::clamp(x0 + (ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(last));
            const int x_lo = static_cast<int>(fx);
            const int x_hi = std::min(x_lo + 1, last);
            const float tx = static_cast<float>(fx - x_lo);
            for (int c = 0; c < 3; ++c) {
                const float top = src.at(y_lo, x_lo, c) * (1.0f - tx) + src.at(y_lo, x_hi, c) * tx;
                const float bot = src.at(y_hi, x_lo, c) * (1.0f - tx) + src.at(y_hi, x_hi, c) * tx;
                out.at(oy, ox, c) = top * (1.0f - ty) + bot * ty;
            }
        }
    }
    return out;
}

Tensor to_tensor(std::span<const Image> images) {
    if (images.empty()) throw std::invalid_argument("to_tensor: empty batch");
    const int side = images.front().side;
    const int n = static_cast<int>(images.size());
    Tensor t(3, n, side, side);
    const std::size_t hw = static_cast<std::size_t>(side) * side;
    for (int i = 0; i < n; ++i) {
        if (images[i].side != side) throw std::invalid_argument("to_tensor: mixed image sizes");
        const float* src = images[i].px.data();
        for (std::size_t p = 0; p < hw; ++p) {
            for (int c = 0; c < 3; ++c) {
                t.data[(static_cast<std::size_t>(c) * n + i) * hw + p] = src[p * 3 + c];
            }
        }
    }
    return t;
}

}  // namespace semicon
