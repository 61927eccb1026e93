#include <doctest.h>

#include <numeric>

#include "semicon/augment.hpp"

using namespace semicon;
using namespace semicon::augment;

namespace {

Image gradient_image(int side) {
    Image im(side);
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            im.at(y, x, 0) = static_cast<float>(x) / (side - 1);
            im.at(y, x, 1) = static_cast<float>(y) / (side - 1);
            im.at(y, x, 2) = 0.25f + 0.5f * static_cast<float>((x + y) % 2);
        }
    }
    return im;
}

double mean(const Image& im) { return std::accumulate(im.px.begin(), im.px.end(), 0.0) / im.px.size(); }

}  // namespace

TEST_CASE("identity policy returns the input") {
    const auto im = gradient_image(16);
    Rng rng(1);
    const auto [a, b] = two_views(im, AugmentPolicy::identity(), rng);
    CHECK(a == im);
    CHECK(b == im);
}

TEST_CASE("certain flip mirrors both views") {
    const auto im = gradient_image(12);
    auto policy = AugmentPolicy::identity();
    policy.flip_probability = 1.0;
    Rng rng(2);
    const auto [a, b] = two_views(im, policy, rng);
    for (int y = 0; y < 12; ++y) {
        for (int x = 0; x < 12; ++x) {
            for (int c = 0; c < 3; ++c) {
                CHECK(a.at(y, x, c) == im.at(y, 11 - x, c));
                CHECK(b.at(y, x, c) == im.at(y, 11 - x, c));
            }
        }
    }
}

TEST_CASE("same generator state gives the same views") {
    const auto im = gradient_image(32);
    Rng r1(77), r2(77);
    const auto p = two_views(im, AugmentPolicy{}, r1);
    const auto q = two_views(im, AugmentPolicy{}, r2);
    CHECK(p.first == q.first);
    CHECK(p.second == q.second);
    CHECK_FALSE(p.first == p.second);
}

TEST_CASE("views keep size and range") {
    const auto im = gradient_image(32);
    Rng rng(3);
    AugmentPolicy strong;
    strong.brightness = 0.9;
    strong.contrast = 0.9;
    strong.saturation = 0.9;
    for (int t = 0; t < 200; ++t) {
        const auto [a, b] = two_views(im, t % 2 ? strong : AugmentPolicy{}, rng);
        CHECK(a.side == 32);
        CHECK(b.side == 32);
        for (float v : a.px) {
            REQUIRE(v >= 0.0f);
            REQUIRE(v <= 1.0f);
        }
    }
}

TEST_CASE("mean pixel stays near the source") {
    const auto im = gradient_image(32);
    const double source = mean(im);
    Rng rng(4);
    double total = 0.0;
    for (int t = 0; t < 1000; ++t) total += mean(augment_image(im, AugmentPolicy{}, rng));
    CHECK(std::abs(total / 1000 - source) < 0.5);
    CHECK(std::abs(total / 1000 - source) < 0.1);
}

TEST_CASE("invalid policies are rejected") {
    AugmentPolicy p;
    p.flip_probability = 1.5;
    CHECK_THROWS(p.validate());
    p = AugmentPolicy{};
    p.crop_scale_min = 0.0;
    CHECK_THROWS(p.validate());
    p = AugmentPolicy{};
    p.crop_scale_max = 1.2;
    CHECK_THROWS(p.validate());
    CHECK_NOTHROW(AugmentPolicy{}.validate());
}
