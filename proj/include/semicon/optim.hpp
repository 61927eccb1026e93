#pragma once

#include <vector>

#include "semicon/nn.hpp"

namespace semicon::optim {

struct SgdConfig {
    double learning_rate = 0.1;
    double weight_decay = 1e-4;
    double momentum = 0.9;
    void validate() const;
};

// SGD with heavy-ball momentum: buf = m * buf + (g + wd * w); w -= lr * buf.
// Weight decay applies only to parameters flagged for it.
class Sgd {
public:
    Sgd(std::vector<nn::Parameter*> params, SgdConfig cfg);

    void step();
    void set_learning_rate(double lr) { cfg_.learning_rate = lr; }
    const SgdConfig& config() const { return cfg_; }

    std::vector<Tensor>& momentum_buffers() { return buffers_; }
    const std::vector<Tensor>& momentum_buffers() const { return buffers_; }

private:
    std::vector<nn::Parameter*> params_;
    SgdConfig cfg_;
    std::vector<Tensor> buffers_;
};

}  // namespace semicon::optim
