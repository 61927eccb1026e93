#include <doctest.h>

#include <functional>
#include <random>

#include "semicon/nn.hpp"
#include "semicon/optim.hpp"

using namespace semicon;
using namespace semicon::nn;

namespace {

Tensor random_tensor(int c, int n, int h, int w, std::mt19937_64& g, float scale = 1.0f) {
    Tensor t(c, n, h, w);
    std::normal_distribution<float> d(0.0f, scale);
    for (auto& v : t.data) v = d(g);
    return t;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a.data[i]) * b.data[i];
    return s;
}

// Compares the directional derivative of <layer(x), dy> along a random
// direction with the analytic backward pass, for the input and every
// parameter. Float arithmetic and ReLU/max kinks make any single step size
// unreliable, so the closest of three central differences is used.
double best_error(const std::function<double(double)>& objective, double analytic) {
    double best = INFINITY;
    for (double h : {1e-2, 1e-3, 1e-4}) {
        const double numeric = (objective(h) - objective(-h)) / (2 * h);
        best = std::min(best, std::abs(numeric - analytic) / std::max(1.0, std::abs(analytic)));
    }
    return best;
}

void check_layer(Layer& layer, const Tensor& x, std::mt19937_64& g, double tol = 1e-3) {
    Cache cache;
    const Tensor y = layer.forward(x, cache, Mode::Train);
    const Tensor dy = random_tensor(y.c, y.n, y.h, y.w, g);
    std::vector<Parameter*> params;
    layer.collect_parameters(params);
    zero_grad(params);
    const Tensor dx = layer.backward(dy, cache);
    REQUIRE(dx.same_shape(x));

    auto objective = [&](const Tensor& input) {
        Cache c;
        return dot(layer.forward(input, c, Mode::Train), dy);
    };

    const Tensor v = random_tensor(x.c, x.n, x.h, x.w, g);
    auto along_input = [&](double h) {
        Tensor moved = x;
        for (std::size_t i = 0; i < x.size(); ++i) moved.data[i] += static_cast<float>(h * v.data[i]);
        return objective(moved);
    };
    CHECK(best_error(along_input, dot(dx, v)) <= tol);

    for (Parameter* p : params) {
        const Tensor dir = random_tensor(p->value.c, p->value.n, p->value.h, p->value.w, g);
        const Tensor keep = p->value;
        auto along_param = [&](double h) {
            for (std::size_t i = 0; i < keep.size(); ++i) {
                p->value.data[i] = keep.data[i] + static_cast<float>(h * dir.data[i]);
            }
            const double out = objective(x);
            p->value = keep;
            return out;
        };
        INFO(p->name);
        CHECK(best_error(along_param, dot(p->grad, dir)) <= tol);
    }
}

}  // namespace

TEST_CASE("linear layer gradients") {
    std::mt19937_64 g(1);
    Rng rng(1);
    Linear with_bias("fc", 7, 5, true, rng);
    check_layer(with_bias, random_tensor(7, 6, 1, 1, g), g);
    Linear no_bias("fc", 4, 3, false, rng);
    check_layer(no_bias, random_tensor(4, 9, 1, 1, g), g);
}

TEST_CASE("convolution gradients") {
    std::mt19937_64 g(2);
    Rng rng(2);
    Conv2d conv("conv", 3, 4, 3, 1, 1, true, rng);
    check_layer(conv, random_tensor(3, 2, 6, 6, g), g);
    Conv2d strided("conv", 2, 3, 3, 2, 1, false, rng);
    check_layer(strided, random_tensor(2, 3, 7, 7, g), g);
    Conv2d pointwise("conv", 3, 2, 1, 2, 0, false, rng);
    check_layer(pointwise, random_tensor(3, 2, 6, 6, g), g);
}

TEST_CASE("batch norm gradients") {
    std::mt19937_64 g(3);
    BatchNorm bn("bn", 3);
    check_layer(bn, random_tensor(3, 4, 3, 3, g, 2.0f), g);
    BatchNorm plain("bn", 5, false);
    check_layer(plain, random_tensor(5, 8, 1, 1, g), g);
}

TEST_CASE("pooling and activation gradients") {
    std::mt19937_64 g(4);
    MaxPool2 pool;
    check_layer(pool, random_tensor(2, 2, 6, 6, g), g);
    GlobalAvgPool gap;
    check_layer(gap, random_tensor(3, 2, 4, 4, g), g);
    ReLU relu;
    check_layer(relu, random_tensor(3, 4, 2, 2, g), g);
}

TEST_CASE("residual block gradients") {
    std::mt19937_64 g(5);
    Rng rng(5);
    ResidualBlock same("res", 3, 3, 1, rng);
    check_layer(same, random_tensor(3, 3, 4, 4, g), g);
    ResidualBlock down("res", 2, 4, 2, rng);
    check_layer(down, random_tensor(2, 3, 6, 6, g), g);
}

TEST_CASE("batch norm modes") {
    std::mt19937_64 g(6);
    BatchNorm bn("bn", 2, true, 1.0f);
    const Tensor x = random_tensor(2, 16, 1, 1, g, 3.0f);
    Cache c;
    const Tensor y = bn.forward(x, c, Mode::Train);
    for (int ch = 0; ch < 2; ++ch) {
        double mean = 0.0, var = 0.0;
        for (int i = 0; i < 16; ++i) mean += y.at(ch, i);
        mean /= 16;
        for (int i = 0; i < 16; ++i) var += (y.at(ch, i) - mean) * (y.at(ch, i) - mean);
        CHECK(std::abs(mean) < 1e-5);
        CHECK(var / 16 == doctest::Approx(1.0).epsilon(1e-3));
    }
    // momentum 1: running statistics equal the last batch (unbiased variance),
    // so eval output matches train output up to the variance correction
    Cache e;
    const Tensor ye = bn.forward(x, e, Mode::Eval);
    for (std::size_t i = 0; i < y.size(); ++i) {
        CHECK(ye.data[i] == doctest::Approx(y.data[i] * std::sqrt(15.0 / 16.0)).epsilon(1e-3));
    }
    Cache one;
    CHECK_THROWS(bn.forward(random_tensor(2, 1, 1, 1, g), one, Mode::Train));
    CHECK_NOTHROW(bn.forward(random_tensor(2, 1, 1, 1, g), one, Mode::Eval));
}

TEST_CASE("maxpool routes the gradient to the maximum") {
    Tensor x(1, 1, 2, 2);
    x.data = {1.0f, 4.0f, 3.0f, 2.0f};
    MaxPool2 pool;
    Cache c;
    const Tensor y = pool.forward(x, c, Mode::Train);
    CHECK(y.data == std::vector<float>{4.0f});
    Tensor dy(1, 1, 1, 1, 2.5f);
    const Tensor dx = pool.backward(dy, c);
    CHECK(dx.data == std::vector<float>{0.0f, 2.5f, 0.0f, 0.0f});
}

TEST_CASE("sgd with momentum and decoupled decay flags") {
    Parameter w{"w", Tensor(2, 1), Tensor(2, 1), true};
    Parameter b{"b", Tensor(1, 1), Tensor(1, 1), false};
    w.value.data = {1.0f, -2.0f};
    b.value.data = {0.5f};
    optim::Sgd sgd({&w, &b}, {0.1, 0.01, 0.9});
    w.grad.data = {0.5f, 0.0f};
    b.grad.data = {1.0f};
    sgd.step();
    // buf = g + wd * w for decayed parameters, g otherwise
    CHECK(w.value.data[0] == doctest::Approx(1.0 - 0.1 * (0.5 + 0.01)));
    CHECK(w.value.data[1] == doctest::Approx(-2.0 - 0.1 * (0.0 - 0.02)));
    CHECK(b.value.data[0] == doctest::Approx(0.5 - 0.1));
    const double w0 = w.value.data[0];
    sgd.step();
    const double buf = 0.9 * (0.5 + 0.01) + (0.5 + 0.01 * w0);
    CHECK(w.value.data[0] == doctest::Approx(w0 - 0.1 * buf).epsilon(1e-5));
    CHECK_THROWS(optim::Sgd({&w}, {-1.0, 0.0, 0.9}));
}
