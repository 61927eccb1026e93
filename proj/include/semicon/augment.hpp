#pragma once

#include <utility>

#include "semicon/image.hpp"
#include "semicon/rng.hpp"

namespace semicon::augment {

// Stochastic view policy. Defaults follow the SimSiam recipe.
struct AugmentPolicy {
    double crop_scale_min = 0.2;  // fraction of image area kept by the random crop
    double crop_scale_max = 1.0;
    double flip_probability = 0.5;
    double jitter_probability = 0.8;
    double brightness = 0.4;
    double contrast = 0.4;
    double saturation = 0.4;
    double grayscale_probability = 0.2;
    double blur_probability = 0.5;
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 2.0;

    void validate() const;

    // Every knob disabled; views equal the input.
    static AugmentPolicy identity();
};

Image augment_image(const Image& image, const AugmentPolicy& policy, Rng& rng);

// Two independently sampled views of the same image.
std::pair<Image, Image> two_views(const Image& image, const AugmentPolicy& policy, Rng& rng);

}  // namespace semicon::augment
