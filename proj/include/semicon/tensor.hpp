#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace semicon {

// Dense float activation stored channel-major: [c][n][h][w].
// Fully connected activations use h == w == 1, i.e. a (features x batch)
// matrix, so every layer sees one contiguous plane per channel.
struct Tensor {
    int c = 0;
    int n = 0;
    int h = 1;
    int w = 1;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int channels, int batch, int height = 1, int width = 1, float fill = 0.0f)
        : c(channels), n(batch), h(height), w(width),
          data(static_cast<std::size_t>(channels) * batch * height * width, fill) {}

    std::size_t size() const { return data.size(); }
    std::size_t spatial() const { return static_cast<std::size_t>(h) * w; }
    std::size_t plane() const { return static_cast<std::size_t>(n) * h * w; }

    float* channel(int ci) { return data.data() + ci * plane(); }
    const float* channel(int ci) const { return data.data() + ci * plane(); }

    float& at(int ci, int ni, int y = 0, int x = 0) {
        return data[((static_cast<std::size_t>(ci) * n + ni) * h + y) * w + x];
    }
    float at(int ci, int ni, int y = 0, int x = 0) const {
        return data[((static_cast<std::size_t>(ci) * n + ni) * h + y) * w + x];
    }

    bool same_shape(const Tensor& o) const { return c == o.c && n == o.n && h == o.h && w == o.w; }

    std::string shape_string() const {
        return "(" + std::to_string(c) + "," + std::to_string(n) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }

    void fill(float v) { std::fill(data.begin(), data.end(), v); }
};

inline void add_inplace(Tensor& dst, const Tensor& src) {
    if (!dst.same_shape(src)) {
        throw std::invalid_argument("tensor shape mismatch: " + dst.shape_string() + " vs " +
                                    src.shape_string());
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace semicon
