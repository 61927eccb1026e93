#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semicon/losses.hpp"
#include "semicon/nn.hpp"
#include "semicon/types.hpp"

namespace semicon::model {

enum class Architecture { SmallConv, ResNetLike };
enum class FeatureTap { Projector, Encoder };

std::string to_string(Architecture a);
Architecture parse_architecture(const std::string& s);
std::string to_string(FeatureTap t);
FeatureTap parse_feature_tap(const std::string& s);

struct EncoderConfig {
    Architecture architecture = Architecture::SmallConv;
    int feature_dim = 128;  // d
    int input_side = 32;
    int base_width = 8;
    void validate() const;
};

// Channel-major (d, N, 1, 1) activations <-> N x d rows.
Matrix to_matrix(const Tensor& t);
Tensor from_matrix(const Matrix& m);

// Everything a backward pass through one forward call needs.
struct Pass {
    nn::Cache encoder, projector, predictor;
    Tensor h;  // encoder output (d, N, 1, 1)
    Tensor z;  // projector output
    Tensor p;  // predictor output; empty when the predictor was skipped
};

// Encoder -> projector -> predictor. Gradients enter only at p (the
// predictor path) or at z / h as explicitly supplied by the caller; z is
// never differentiated through the SimSiam targets.
class SimSiamNet {
public:
    SimSiamNet(const EncoderConfig& cfg, std::uint64_t seed);

    const EncoderConfig& config() const { return cfg_; }

    Pass forward(const Tensor& images, nn::Mode mode, bool with_predictor = true);
    // Encoder only; pass.z and pass.p stay empty.
    Pass encode(const Tensor& images, nn::Mode mode);

    // dp feeds the predictor; dz and dh (optional) are added at the projector
    // and encoder outputs.
    void backward(const Pass& pass, const Tensor* dp, const Tensor* dz, const Tensor* dh = nullptr);
    // Gradient at the encoder output only (projector and predictor untouched).
    void backward_encoder(const Pass& pass, const Tensor& dh);

    ViewEmbeddings forward_views(const Tensor& view1, const Tensor& view2, nn::Mode mode);
    FeatureBatch encode_features(const Tensor& images, FeatureTap tap, nn::Mode mode);

    std::vector<nn::Parameter*> parameters();
    std::vector<nn::Parameter*> encoder_parameters();
    std::vector<nn::Parameter*> projector_parameters();
    std::vector<nn::Parameter*> predictor_parameters();
    std::vector<nn::Buffer> buffers();
    std::string describe() const;

private:
    EncoderConfig cfg_;
    nn::Sequential encoder_;
    nn::Sequential projector_;
    nn::Sequential predictor_;
};

// Model weights, optimizer momentum, uncertainty weights and progress.
struct Checkpoint {
    std::uint64_t config_hash = 0;
    int epoch = 0;
    loss::UncertaintyWeights weights;
    std::vector<Tensor> parameters;
    std::vector<Tensor> buffers;
    std::vector<Tensor> momentum;
    nlohmann::json metrics = nlohmann::json::object();
};

Checkpoint capture(SimSiamNet& net, const std::vector<Tensor>& momentum,
                   const loss::UncertaintyWeights& weights, int epoch, std::uint64_t config_hash);
void restore(const Checkpoint& ckpt, SimSiamNet& net, std::vector<Tensor>* momentum);

// Binary blob at `path` plus `<path>.json` with epoch, hash and metrics.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Throws when the stored hash differs from `expected_hash` (if given).
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<std::uint64_t> expected_hash = std::nullopt);

std::string hash_hex(std::uint64_t h);

}  // namespace semicon::model
