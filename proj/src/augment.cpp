#include "semicon/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace semicon::augment {
namespace {

void require_probability(double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw std::invalid_argument(std::string(name) + " must lie in [0, 1]");
    }
}

float luminance(const Image& img, int y, int x) {
    return 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) + 0.114f * img.at(y, x, 2);
}

Image random_resized_crop(const Image& src, const AugmentPolicy& policy, Rng& rng) {
    if (policy.crop_scale_min >= 1.0 && policy.crop_scale_max >= 1.0) return src;
    const double area = static_cast<double>(src.side) * src.side;
    std::uniform_real_distribution<double> scale_dist(policy.crop_scale_min, policy.crop_scale_max);
    std::uniform_real_distribution<double> log_ratio(std::log(3.0 / 4.0), std::log(4.0 / 3.0));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double target = area * scale_dist(rng);
        const double ratio = std::exp(log_ratio(rng));
        const double w = std::sqrt(target * ratio);
        const double h = std::sqrt(target / ratio);
        if (w <= src.side && h <= src.side) {
            const double x0 = unit(rng) * (src.side - w);
            const double y0 = unit(rng) * (src.side - h);
            return resample(src, x0, y0, w, h, src.side);
        }
    }
    // Square fallback at the sampled scale.
    const double w = std::sqrt(area * scale_dist(rng));
    const double x0 = 0.5 * (src.side - w);
    return resample(src, x0, x0, w, w, src.side);
}

void flip_horizontal(Image& img) {
    for (int y = 0; y < img.side; ++y) {
        for (int x = 0; x < img.side / 2; ++x) {
            for (int c = 0; c < 3; ++c) std::swap(img.at(y, x, c), img.at(y, img.side - 1 - x, c));
        }
    }
}

void color_jitter(Image& img, const AugmentPolicy& policy, Rng& rng) {
    auto factor = [&rng](double strength) {
        std::uniform_real_distribution<double> d(std::max(0.0, 1.0 - strength), 1.0 + strength);
        return static_cast<float>(d(rng));
    };
    if (policy.brightness > 0) {
        const float f = factor(policy.brightness);
        for (auto& v : img.px) v = std::clamp(v * f, 0.0f, 1.0f);
    }
    if (policy.contrast > 0) {
        const float f = factor(policy.contrast);
        double mean = 0.0;
        for (int y = 0; y < img.side; ++y) {
            for (int x = 0; x < img.side; ++x) mean += luminance(img, y, x);
        }
        const float m = static_cast<float>(mean / (static_cast<double>(img.side) * img.side));
        for (auto& v : img.px) v = std::clamp(m + (v - m) * f, 0.0f, 1.0f);
    }
    if (policy.saturation > 0) {
        const float f = factor(policy.saturation);
        for (int y = 0; y < img.side; ++y) {
            for (int x = 0; x < img.side; ++x) {
                const float g = luminance(img, y, x);
                for (int c = 0; c < 3; ++c) {
                    img.at(y, x, c) = std::clamp(g + (img.at(y, x, c) - g) * f, 0.0f, 1.0f);
                }
            }
        }
    }
}

void to_grayscale(Image& img) {
    for (int y = 0; y < img.side; ++y) {
        for (int x = 0; x < img.side; ++x) {
            const float g = luminance(img, y, x);
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = g;
        }
    }
}

// Separable Gaussian blur; kernel radius scales with the image (~5% of the side).
void gaussian_blur(Image& img, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::lround(0.05 * img.side)));
    std::vector<float> kernel(2 * radius + 1);
    float total = 0.0f;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
        total += kernel[i + radius];
    }
    for (auto& k : kernel) k /= total;
    Image tmp(img.side);
    const int last = img.side - 1;
    for (int y = 0; y < img.side; ++y) {
        for (int x = 0; x < img.side; ++x) {
            for (int c = 0; c < 3; ++c) {
                float acc = 0.0f;
                for (int i = -radius; i <= radius; ++i) {
                    acc += kernel[i + radius] * img.at(y, std::clamp(x + i, 0, last), c);
                }
                tmp.at(y, x, c) = acc;
            }
        }
    }
    for (int y = 0; y < img.side; ++y) {
        for (int x = 0; x < img.side; ++x) {
            for (int c = 0; c < 3; ++c) {
                float acc = 0.0f;
                for (int i = -radius; i <= radius; ++i) {
                    acc += kernel[i + radius] * tmp.at(std::clamp(y + i, 0, last), x, c);
                }
                img.at(y, x, c) = acc;
            }
        }
    }
}

}  // namespace

void AugmentPolicy::validate() const {
    if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0)) {
        throw std::invalid_argument("crop scale range must satisfy 0 < min <= max <= 1");
    }
    require_probability(flip_probability, "flip probability");
    require_probability(jitter_probability, "jitter probability");
    require_probability(grayscale_probability, "grayscale probability");
    require_probability(blur_probability, "blur probability");
    if (brightness < 0 || contrast < 0 || saturation < 0) {
        throw std::invalid_argument("jitter strengths must be non-negative");
    }
    if (!(blur_sigma_min > 0.0 && blur_sigma_min <= blur_sigma_max)) {
        throw std::invalid_argument("blur sigma range must satisfy 0 < min <= max");
    }
}

AugmentPolicy AugmentPolicy::identity() {
    AugmentPolicy p;
    p.crop_scale_min = p.crop_scale_max = 1.0;
    p.flip_probability = 0.0;
    p.jitter_probability = 0.0;
    p.brightness = p.contrast = p.saturation = 0.0;
    p.grayscale_probability = 0.0;
    p.blur_probability = 0.0;
    return p;
}

Image augment_image(const Image& image, const AugmentPolicy& policy, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Image out = random_resized_crop(image, policy, rng);
    if (unit(rng) < policy.flip_probability) flip_horizontal(out);
    if (unit(rng) < policy.jitter_probability) color_jitter(out, policy, rng);
    if (unit(rng) < policy.grayscale_probability) to_grayscale(out);
    if (unit(rng) < policy.blur_probability) {
        std::uniform_real_distribution<double> sigma(policy.blur_sigma_min, policy.blur_sigma_max);
        gaussian_blur(out, sigma(rng));
    }
    for (auto& v : out.px) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

std::pair<Image, Image> two_views(const Image& image, const AugmentPolicy& policy, Rng& rng) {
    Image first = augment_image(image, policy, rng);
    Image second = augment_image(image, policy, rng);
    return {std::move(first), std::move(second)};
}

}  // namespace semicon::augment
