#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "semicon/rng.hpp"
#include "semicon/tensor.hpp"

// Minimal layer library with explicit forward/backward passes.
//
// Layers never keep per-call state in members: everything backward needs is
// written into the caller-owned Cache. Several forward passes (two views plus
// the labeled positives) can therefore be in flight before any backward runs,
// and parameter gradients from all of them accumulate into Parameter::grad.
namespace semicon::nn {

enum class Mode { Train, Eval };

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool decay = true;
};

struct Buffer {
    std::string name;
    Tensor* value = nullptr;
};

struct Cache {
    std::array<int, 4> shape{};
    Tensor input;
    Tensor aux;
    std::vector<float> stats;
    std::vector<std::uint32_t> index;
    Mode mode = Mode::Train;
    std::vector<Cache> children;
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x, Cache& cache, Mode mode) = 0;
    // Returns dL/dx and accumulates parameter gradients.
    virtual Tensor backward(const Tensor& dy, const Cache& cache) = 0;
    virtual void collect_parameters(std::vector<Parameter*>& /*out*/) {}
    virtual void collect_buffers(std::vector<Buffer>& /*out*/) {}
    virtual std::string describe() const = 0;
};

using LayerPtr = std::unique_ptr<Layer>;

class Conv2d final : public Layer {
public:
    Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int pad,
           bool bias, Rng& rng);

    Tensor forward(const Tensor& x, Cache& cache, Mode mode) override;
    Tensor backward(const Tensor& dy, const Cache& cache) override;
    void collect_parameters(std::vector<Parameter*>& out) override;
    std::string describe() const override;

private:
    int in_, out_, kernel_, stride_, pad_;
    bool has_bias_;
    Parameter weight_;  // out x (in * k * k)
    Parameter bias_;
};

class Linear final : public Layer {
public:
    Linear(std::string name, int in_features, int out_features, bool bias, Rng& rng);

    Tensor forward(const Tensor& x, Cache& cache, Mode mode) override;
    Tensor backward(const Tensor& dy, const Cache& cache) override;
    void collect_parameters(std::vector<Parameter*>& out) override;
    std::string describe() const override;

    Parameter& weight() { return weight_; }
    Parameter& bias() { return bias_; }

private:
    int in_, out_;
    bool has_bias_;
    Parameter weight_;  // out x in
    Parameter bias_;
};

// Batch normalization over every element of a channel plane (batch and
// spatial positions). Train mode normalizes with batch statistics and updates
// the running estimates; eval mode uses the running estimates.
class BatchNorm final : public Layer {
public:
    BatchNorm(std::string name, int channels, bool affine = true, float momentum = 0.1f,
              float eps = 1e-5f);

    Tensor forward(const Tensor& x, Cache& cache, Mode mode) override;
    Tensor backward(const Tensor& dy, const Cache& cache) override;
    void collect_parameters(std::vector<Parameter*>& out) override;
    void collect_buffers(std::vector<Buffer>& out) override;
    std::string describe() const override;

private:
    std::string name_;
    int channels_;
    bool affine_;
    float momentum_, eps_;
    Parameter gamma_;
    Parameter beta_;
    Tensor running_mean_;
    Tensor running_var_;
};

class ReLU final : public Layer {
public:
    Tensor forward(const Tensor& x, Cache& cache, Mode mode) override;
    Tensor backward(const Tensor& dy, const Cache& cache) override;
    std::string describe() const override { return "ReLU"; }
};

// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
class MaxPool2 final : public Layer {
public:
    Tensor forward(const Tensor& x, Cache& cache, Mode mode) override;
    Tensor backward(const Tensor& dy, const Cache& cache) override;
    std::string describe() const override { return "MaxPool2"; }
};

class GlobalAvgPool final : public Layer {
public:
    Tensor forward(const Tensor& x, Cache& cache, Mode mode) override;
    Tensor backward(const Tensor& dy, const Cache& cache) override;
    std::string describe() const override { return "GlobalAvgPool"; }
};

class Sequential final : public Layer {
public:
    Sequential() = default;
    explicit Sequential(std::vector<LayerPtr> layers) : layers_(std::move(layers)) {}

    void add(LayerPtr layer) { layers_.push_back(std::move(layer)); }
    std::size_t size() const { return layers_.size(); }
    bool empty() const { return layers_.empty(); }

    Tensor forward(const Tensor& x, Cache& cache, Mode mode) override;
    Tensor backward(const Tensor& dy, const Cache& cache) override;
    void collect_parameters(std::vector<Parameter*>& out) override;
    void collect_buffers(std::vector<Buffer>& out) override;
    std::string describe() const override;

private:
    std::vector<LayerPtr> layers_;
};

// conv3x3-BN-ReLU-conv3x3-BN plus an identity or 1x1-conv-BN shortcut, then ReLU.
class ResidualBlock final : public Layer {
public:
    ResidualBlock(const std::string& name, int in_channels, int out_channels, int stride, Rng& rng);

    Tensor forward(const Tensor& x, Cache& cache, Mode mode) override;
    Tensor backward(const Tensor& dy, const Cache& cache) override;
    void collect_parameters(std::vector<Parameter*>& out) override;
    void collect_buffers(std::vector<Buffer>& out) override;
    std::string describe() const override;

private:
    Sequential body_;
    Sequential shortcut_;  // empty means identity
};

void zero_grad(const std::vector<Parameter*>& params);

}  // namespace semicon::nn
