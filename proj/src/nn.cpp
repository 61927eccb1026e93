#include "semicon/nn.hpp"

#include <Eigen/Core>

#include <malloc.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace semicon {
namespace {

// Activation buffers are large and short-lived. Serving them from the heap
// instead of fresh mmap regions avoids page-faulting every training step.
[[maybe_unused]] const bool kAllocatorTuned = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
}();

}  // namespace

namespace nn {
namespace {

// Upper bound on the im2col scratch buffer, in floats; small enough to stay
// cache-resident across the GEMM.
constexpr std::size_t kColumnBudget = std::size_t{1} << 17;

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatView = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstMatView = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

MatView view(float* data, int rows, int cols, int ld) {
    return MatView(data, rows, cols, Eigen::OuterStride<>(ld));
}
ConstMatView view(const float* data, int rows, int cols, int ld) {
    return ConstMatView(data, rows, cols, Eigen::OuterStride<>(ld));
}

Parameter make_param(std::string name, int c, int n, bool decay) {
    Parameter p;
    p.name = std::move(name);
    p.value = Tensor(c, n);
    p.grad = Tensor(c, n);
    p.decay = decay;
    return p;
}

// Unfolds images [n0, n0 + count) of x into a (C*k*k) x (count*Ho*Wo) matrix.
void im2col(const Tensor& x, int n0, int count, int k, int stride, int pad, int ho, int wo,
            float* col) {
    const std::size_t cols = static_cast<std::size_t>(count) * ho * wo;
    for (int ci = 0; ci < x.c; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                float* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * cols;
                for (int nl = 0; nl < count; ++nl) {
                    const float* img = x.data.data() +
                                       (static_cast<std::size_t>(ci) * x.n + n0 + nl) * x.h * x.w;
                    for (int oy = 0; oy < ho; ++oy) {
                        float* out = row + (static_cast<std::size_t>(nl) * ho + oy) * wo;
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= x.h) {
                            std::fill(out, out + wo, 0.0f);
                            continue;
                        }
                        const float* src = img + static_cast<std::size_t>(iy) * x.w;
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            out[ox] = (ix >= 0 && ix < x.w) ? src[ix] : 0.0f;
                        }
                    }
                }
            }
        }
    }
}

void col2im(const float* col, int n0, int count, int k, int stride, int pad, int ho, int wo,
            Tensor& dx) {
    const std::size_t cols = static_cast<std::size_t>(count) * ho * wo;
    for (int ci = 0; ci < dx.c; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const float* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * cols;
                for (int nl = 0; nl < count; ++nl) {
                    float* img = dx.data.data() +
                                 (static_cast<std::size_t>(ci) * dx.n + n0 + nl) * dx.h * dx.w;
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= dx.h) continue;
                        const float* in = row + (static_cast<std::size_t>(nl) * ho + oy) * wo;
                        float* dst = img + static_cast<std::size_t>(iy) * dx.w;
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            if (ix >= 0 && ix < dx.w) dst[ix] += in[ox];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride,
               int pad, bool bias, Rng& rng)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), pad_(pad),
      has_bias_(bias) {
    weight_ = make_param(name + ".weight", out_, in_ * kernel_ * kernel_, true);
    // Kaiming normal, fan-out, ReLU gain.
    const double stddev = std::sqrt(2.0 / (static_cast<double>(out_) * kernel_ * kernel_));
    std::normal_distribution<double> normal(0.0, stddev);
    for (auto& v : weight_.value.data) v = static_cast<float>(normal(rng));
    if (has_bias_) bias_ = make_param(name + ".bias", out_, 1, false);
}

Tensor Conv2d::forward(const Tensor& x, Cache& cache, Mode mode) {
    if (x.c != in_) {
        throw std::invalid_argument("Conv2d: expected " + std::to_string(in_) +
                                    " input channels, got " + std::to_string(x.c));
    }
    const int ho = (x.h + 2 * pad_ - kernel_) / stride_ + 1;
    const int wo = (x.w + 2 * pad_ - kernel_) / stride_ + 1;
    const int kdim = in_ * kernel_ * kernel_;
    const std::size_t hwo = static_cast<std::size_t>(ho) * wo;
    Tensor y(out_, x.n, ho, wo);

    const std::size_t per_image = static_cast<std::size_t>(kdim) * hwo;
    const int chunk = static_cast<int>(std::max<std::size_t>(1, kColumnBudget / per_image));
    std::vector<float> col;
    for (int n0 = 0; n0 < x.n; n0 += chunk) {
        const int count = std::min(chunk, x.n - n0);
        const int cols = static_cast<int>(count * hwo);
        col.resize(static_cast<std::size_t>(kdim) * cols);
        im2col(x, n0, count, kernel_, stride_, pad_, ho, wo, col.data());
        view(y.data.data() + n0 * hwo, out_, cols, static_cast<int>(y.plane())).noalias() =
            view(weight_.value.data.data(), out_, kdim, kdim) * view(col.data(), kdim, cols, cols);
    }
    if (has_bias_) {
        for (int co = 0; co < out_; ++co) {
            float* dst = y.channel(co);
            const float b = bias_.value.data[co];
            for (std::size_t i = 0; i < y.plane(); ++i) dst[i] += b;
        }
    }
    cache.mode = mode;
    cache.input = x;
    return y;
}

Tensor Conv2d::backward(const Tensor& dy, const Cache& cache) {
    const Tensor& x = cache.input;
    const int ho = dy.h;
    const int wo = dy.w;
    const int kdim = in_ * kernel_ * kernel_;
    const std::size_t hwo = static_cast<std::size_t>(ho) * wo;
    Tensor dx(x.c, x.n, x.h, x.w);

    const std::size_t per_image = static_cast<std::size_t>(kdim) * hwo;
    const int chunk = static_cast<int>(std::max<std::size_t>(1, kColumnBudget / per_image));
    std::vector<float> col;
    std::vector<float> dcol;
    for (int n0 = 0; n0 < x.n; n0 += chunk) {
        const int count = std::min(chunk, x.n - n0);
        const int cols = static_cast<int>(count * hwo);
        col.resize(static_cast<std::size_t>(kdim) * cols);
        dcol.resize(col.size());
        im2col(x, n0, count, kernel_, stride_, pad_, ho, wo, col.data());
        const float* dy_chunk = dy.data.data() + n0 * hwo;
        const int ldy = static_cast<int>(dy.plane());
        const auto g = view(dy_chunk, out_, cols, ldy);
        view(weight_.grad.data.data(), out_, kdim, kdim).noalias() +=
            g * view(col.data(), kdim, cols, cols).transpose();
        view(dcol.data(), kdim, cols, cols).noalias() =
            view(weight_.value.data.data(), out_, kdim, kdim).transpose() * g;
        col2im(dcol.data(), n0, count, kernel_, stride_, pad_, ho, wo, dx);
    }
    if (has_bias_) {
        for (int co = 0; co < out_; ++co) {
            const float* g = dy.channel(co);
            double acc = 0.0;
            for (std::size_t i = 0; i < dy.plane(); ++i) acc += g[i];
            bias_.grad.data[co] += static_cast<float>(acc);
        }
    }
    return dx;
}

void Conv2d::collect_parameters(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
}

std::string Conv2d::describe() const {
    return "Conv2d(" + std::to_string(in_) + "->" + std::to_string(out_) + ", k=" +
           std::to_string(kernel_) + ", s=" + std::to_string(stride_) + ")";
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(std::string name, int in_features, int out_features, bool bias, Rng& rng)
    : in_(in_features), out_(out_features), has_bias_(bias) {
    weight_ = make_param(name + ".weight", out_, in_, true);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
    std::uniform_real_distribution<double> uniform(-bound, bound);
    for (auto& v : weight_.value.data) v = static_cast<float>(uniform(rng));
    if (has_bias_) {
        bias_ = make_param(name + ".bias", out_, 1, false);
        for (auto& v : bias_.value.data) v = static_cast<float>(uniform(rng));
    }
}

Tensor Linear::forward(const Tensor& x, Cache& cache, Mode mode) {
    if (x.c != in_ || x.h != 1 || x.w != 1) {
        throw std::invalid_argument("Linear: expected (" + std::to_string(in_) +
                                    ",N,1,1) input, got " + x.shape_string());
    }
    Tensor y(out_, x.n);
    view(y.data.data(), out_, x.n, x.n).noalias() =
        view(weight_.value.data.data(), out_, in_, in_) * view(x.data.data(), in_, x.n, x.n);
    if (has_bias_) {
        for (int o = 0; o < out_; ++o) {
            float* row = y.channel(o);
            for (int i = 0; i < x.n; ++i) row[i] += bias_.value.data[o];
        }
    }
    cache.mode = mode;
    cache.input = x;
    return y;
}

Tensor Linear::backward(const Tensor& dy, const Cache& cache) {
    const Tensor& x = cache.input;
    const int n = x.n;
    const auto g = view(dy.data.data(), out_, n, n);
    view(weight_.grad.data.data(), out_, in_, in_).noalias() +=
        g * view(x.data.data(), in_, n, n).transpose();
    Tensor dx(in_, n);
    view(dx.data.data(), in_, n, n).noalias() =
        view(weight_.value.data.data(), out_, in_, in_).transpose() * g;
    if (has_bias_) {
        for (int o = 0; o < out_; ++o) {
            const float* g = dy.channel(o);
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc += g[i];
            bias_.grad.data[o] += static_cast<float>(acc);
        }
    }
    return dx;
}

void Linear::collect_parameters(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
}

std::string Linear::describe() const {
    return "Linear(" + std::to_string(in_) + "->" + std::to_string(out_) + ")";
}

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(std::string name, int channels, bool affine, float momentum, float eps)
    : name_(std::move(name)), channels_(channels), affine_(affine), momentum_(momentum), eps_(eps),
      running_mean_(channels, 1, 1, 1, 0.0f), running_var_(channels, 1, 1, 1, 1.0f) {
    if (affine_) {
        gamma_ = make_param(name_ + ".gamma", channels, 1, false);
        gamma_.value.fill(1.0f);
        beta_ = make_param(name_ + ".beta", channels, 1, false);
    }
}

Tensor BatchNorm::forward(const Tensor& x, Cache& cache, Mode mode) {
    if (x.c != channels_) {
        throw std::invalid_argument("BatchNorm " + name_ + ": expected " +
                                    std::to_string(channels_) + " channels, got " +
                                    std::to_string(x.c));
    }
    const std::size_t m = x.plane();
    if (mode == Mode::Train && m < 2) {
        throw std::invalid_argument("BatchNorm " + name_ +
                                    ": training mode needs more than one value per channel");
    }
    Tensor y(x.c, x.n, x.h, x.w);
    Tensor xhat(x.c, x.n, x.h, x.w);
    std::vector<float> inv_std(channels_);
    for (int ci = 0; ci < channels_; ++ci) {
        const float* src = x.channel(ci);
        double mean = 0.0;
        double var = 0.0;
        if (mode == Mode::Train) {
            for (std::size_t i = 0; i < m; ++i) mean += src[i];
            mean /= static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i) {
                const double d = src[i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(m);
            const double unbiased = var * static_cast<double>(m) / static_cast<double>(m - 1);
            running_mean_.data[ci] =
                static_cast<float>((1.0 - momentum_) * running_mean_.data[ci] + momentum_ * mean);
            running_var_.data[ci] =
                static_cast<float>((1.0 - momentum_) * running_var_.data[ci] + momentum_ * unbiased);
        } else {
            mean = running_mean_.data[ci];
            var = running_var_.data[ci];
        }
        const float inv = static_cast<float>(1.0 / std::sqrt(var + eps_));
        inv_std[ci] = inv;
        const float g = affine_ ? gamma_.value.data[ci] : 1.0f;
        const float b = affine_ ? beta_.value.data[ci] : 0.0f;
        const float mu = static_cast<float>(mean);
        float* xh = xhat.channel(ci);
        float* dst = y.channel(ci);
        for (std::size_t i = 0; i < m; ++i) {
            xh[i] = (src[i] - mu) * inv;
            dst[i] = g * xh[i] + b;
        }
    }
    cache.mode = mode;
    cache.aux = std::move(xhat);
    cache.stats = std::move(inv_std);
    return y;
}

Tensor BatchNorm::backward(const Tensor& dy, const Cache& cache) {
    const Tensor& xhat = cache.aux;
    const std::size_t m = dy.plane();
    Tensor dx(dy.c, dy.n, dy.h, dy.w);
    for (int ci = 0; ci < channels_; ++ci) {
        const float* g = dy.channel(ci);
        const float* xh = xhat.channel(ci);
        double sum_dy = 0.0;
        double sum_dy_xhat = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            sum_dy += g[i];
            sum_dy_xhat += static_cast<double>(g[i]) * xh[i];
        }
        if (affine_) {
            gamma_.grad.data[ci] += static_cast<float>(sum_dy_xhat);
            beta_.grad.data[ci] += static_cast<float>(sum_dy);
        }
        const float gamma = affine_ ? gamma_.value.data[ci] : 1.0f;
        const float inv = cache.stats[ci];
        float* dst = dx.channel(ci);
        if (cache.mode == Mode::Train) {
            const float scale = gamma * inv / static_cast<float>(m);
            const float mean_dy = static_cast<float>(sum_dy);
            const float mean_dy_xhat = static_cast<float>(sum_dy_xhat);
            const float mf = static_cast<float>(m);
            for (std::size_t i = 0; i < m; ++i) {
                dst[i] = scale * (mf * g[i] - mean_dy - xh[i] * mean_dy_xhat);
            }
        } else {
            const float scale = gamma * inv;
            for (std::size_t i = 0; i < m; ++i) dst[i] = scale * g[i];
        }
    }
    return dx;
}

void BatchNorm::collect_parameters(std::vector<Parameter*>& out) {
    if (affine_) {
        out.push_back(&gamma_);
        out.push_back(&beta_);
    }
}

void BatchNorm::collect_buffers(std::vector<Buffer>& out) {
    out.push_back({name_ + ".running_mean", &running_mean_});
    out.push_back({name_ + ".running_var", &running_var_});
}

std::string BatchNorm::describe() const {
    return std::string("BatchNorm(") + std::to_string(channels_) + (affine_ ? "" : ", no-affine") +
           ")";
}

// ---------------------------------------------------------------------------
// ReLU / pooling

Tensor ReLU::forward(const Tensor& x, Cache& cache, Mode mode) {
    Tensor y = x;
    for (auto& v : y.data) v = v > 0.0f ? v : 0.0f;
    cache.mode = mode;
    cache.aux = y;
    return y;
}

Tensor ReLU::backward(const Tensor& dy, const Cache& cache) {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) {
        if (cache.aux.data[i] <= 0.0f) dx.data[i] = 0.0f;
    }
    return dx;
}

Tensor MaxPool2::forward(const Tensor& x, Cache& cache, Mode mode) {
    const int ho = x.h / 2;
    const int wo = x.w / 2;
    if (ho == 0 || wo == 0) {
        throw std::invalid_argument("MaxPool2: input too small " + x.shape_string());
    }
    Tensor y(x.c, x.n, ho, wo);
    cache.index.resize(y.size());
    std::size_t out = 0;
    for (int ci = 0; ci < x.c; ++ci) {
        for (int ni = 0; ni < x.n; ++ni) {
            const std::size_t base = (static_cast<std::size_t>(ci) * x.n + ni) * x.h * x.w;
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox, ++out) {
                    std::size_t best = base + static_cast<std::size_t>(2 * oy) * x.w + 2 * ox;
                    float best_v = x.data[best];
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            const std::size_t idx =
                                base + static_cast<std::size_t>(2 * oy + dy) * x.w + 2 * ox + dx;
                            if (x.data[idx] > best_v) {
                                best_v = x.data[idx];
                                best = idx;
                            }
                        }
                    }
                    y.data[out] = best_v;
                    cache.index[out] = static_cast<std::uint32_t>(best);
                }
            }
        }
    }
    cache.mode = mode;
    cache.shape = {x.c, x.n, x.h, x.w};
    return y;
}

Tensor MaxPool2::backward(const Tensor& dy, const Cache& cache) {
    Tensor dx(cache.shape[0], cache.shape[1], cache.shape[2], cache.shape[3]);
    for (std::size_t i = 0; i < dy.size(); ++i) dx.data[cache.index[i]] += dy.data[i];
    return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& x, Cache& cache, Mode mode) {
    Tensor y(x.c, x.n);
    const std::size_t hw = x.spatial();
    for (int ci = 0; ci < x.c; ++ci) {
        for (int ni = 0; ni < x.n; ++ni) {
            const float* src = x.data.data() + (static_cast<std::size_t>(ci) * x.n + ni) * hw;
            double acc = 0.0;
            for (std::size_t i = 0; i < hw; ++i) acc += src[i];
            y.at(ci, ni) = static_cast<float>(acc / static_cast<double>(hw));
        }
    }
    cache.mode = mode;
    cache.shape = {x.c, x.n, x.h, x.w};
    return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy, const Cache& cache) {
    Tensor dx(cache.shape[0], cache.shape[1], cache.shape[2], cache.shape[3]);
    const std::size_t hw = dx.spatial();
    const float scale = 1.0f / static_cast<float>(hw);
    for (int ci = 0; ci < dx.c; ++ci) {
        for (int ni = 0; ni < dx.n; ++ni) {
            float* dst = dx.data.data() + (static_cast<std::size_t>(ci) * dx.n + ni) * hw;
            const float g = dy.at(ci, ni) * scale;
            for (std::size_t i = 0; i < hw; ++i) dst[i] = g;
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Containers

Tensor Sequential::forward(const Tensor& x, Cache& cache, Mode mode) {
    cache.mode = mode;
    cache.children.resize(layers_.size());
    if (layers_.empty()) return x;
    Tensor cur = layers_[0]->forward(x, cache.children[0], mode);
    for (std::size_t i = 1; i < layers_.size(); ++i) {
        cur = layers_[i]->forward(cur, cache.children[i], mode);
    }
    return cur;
}

Tensor Sequential::backward(const Tensor& dy, const Cache& cache) {
    if (layers_.empty()) return dy;
    Tensor cur = layers_.back()->backward(dy, cache.children.back());
    for (std::size_t i = layers_.size() - 1; i-- > 0;) {
        cur = layers_[i]->backward(cur, cache.children[i]);
    }
    return cur;
}

void Sequential::collect_parameters(std::vector<Parameter*>& out) {
    for (auto& l : layers_) l->collect_parameters(out);
}

void Sequential::collect_buffers(std::vector<Buffer>& out) {
    for (auto& l : layers_) l->collect_buffers(out);
}

std::string Sequential::describe() const {
    std::string s = "Sequential[";
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (i) s += ", ";
        s += layers_[i]->describe();
    }
    return s + "]";
}

ResidualBlock::ResidualBlock(const std::string& name, int in_channels, int out_channels,
                             int stride, Rng& rng) {
    body_.add(std::make_unique<Conv2d>(name + ".conv1", in_channels, out_channels, 3, stride, 1,
                                       false, rng));
    body_.add(std::make_unique<BatchNorm>(name + ".bn1", out_channels));
    body_.add(std::make_unique<ReLU>());
    body_.add(std::make_unique<Conv2d>(name + ".conv2", out_channels, out_channels, 3, 1, 1, false,
                                       rng));
    body_.add(std::make_unique<BatchNorm>(name + ".bn2", out_channels));
    if (stride != 1 || in_channels != out_channels) {
        shortcut_.add(std::make_unique<Conv2d>(name + ".down", in_channels, out_channels, 1, stride,
                                               0, false, rng));
        shortcut_.add(std::make_unique<BatchNorm>(name + ".down_bn", out_channels));
    }
}

Tensor ResidualBlock::forward(const Tensor& x, Cache& cache, Mode mode) {
    cache.mode = mode;
    cache.children.resize(2);
    Tensor out = body_.forward(x, cache.children[0], mode);
    if (shortcut_.empty()) {
        add_inplace(out, x);
    } else {
        add_inplace(out, shortcut_.forward(x, cache.children[1], mode));
    }
    for (auto& v : out.data) v = v > 0.0f ? v : 0.0f;
    cache.aux = out;
    return out;
}

Tensor ResidualBlock::backward(const Tensor& dy, const Cache& cache) {
    Tensor g = dy;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (cache.aux.data[i] <= 0.0f) g.data[i] = 0.0f;
    }
    Tensor dx = body_.backward(g, cache.children[0]);
    if (shortcut_.empty()) {
        add_inplace(dx, g);
    } else {
        add_inplace(dx, shortcut_.backward(g, cache.children[1]));
    }
    return dx;
}

void ResidualBlock::collect_parameters(std::vector<Parameter*>& out) {
    body_.collect_parameters(out);
    shortcut_.collect_parameters(out);
}

void ResidualBlock::collect_buffers(std::vector<Buffer>& out) {
    body_.collect_buffers(out);
    shortcut_.collect_buffers(out);
}

std::string ResidualBlock::describe() const {
    return "Residual(" + body_.describe() + (shortcut_.empty() ? "" : " + " + shortcut_.describe()) +
           ")";
}

void zero_grad(const std::vector<Parameter*>& params) {
    for (auto* p : params) p->grad.fill(0.0f);
}

}  // namespace nn
}  // namespace semicon
