#include "semicon/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace semicon::optim {

void SgdConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("learning rate must be positive");
    }
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
}

Sgd::Sgd(std::vector<nn::Parameter*> params, SgdConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    buffers_.reserve(params_.size());
    for (const auto* p : params_) buffers_.emplace_back(p->value.c, p->value.n, p->value.h, p->value.w);
}

void Sgd::step() {
    const float lr = static_cast<float>(cfg_.learning_rate);
    const float mom = static_cast<float>(cfg_.momentum);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        nn::Parameter& p = *params_[i];
        const float wd = p.decay ? static_cast<float>(cfg_.weight_decay) : 0.0f;
        float* w = p.value.data.data();
        const float* g = p.grad.data.data();
        float* buf = buffers_[i].data.data();
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            buf[j] = mom * buf[j] + (g[j] + wd * w[j]);
            w[j] -= lr * buf[j];
        }
    }
}

}  // namespace semicon::optim
