#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semicon/augment.hpp"
#include "semicon/datagen.hpp"
#include "semicon/losses.hpp"
#include "semicon/model.hpp"
#include "semicon/optim.hpp"

namespace semicon {

enum class LossMode { Loss1, Loss2, Loss12, SupervisedBaseline };

std::string to_string(LossMode m);
LossMode parse_loss_mode(const std::string& s);

struct DataConfig {
    std::string root;  // dataset directory with manifest.csv; empty means generate in memory
    data::SynthConfig synth;
    int label_threshold = 1;
    int block_side = 4;
    data::SplitConfig split;
    int resize = 32;
    bool upsample_balance = true;  // false: replicate by upsample_factor
    int upsample_factor = 16;
    std::uint64_t seed = 7;
};

struct ProbeConfig {
    int epochs = 50;
    int batch = 64;
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0;
};

struct BaselineConfig {
    int epochs = 16;
    int batch = 64;
    optim::SgdConfig optimizer{0.05, 1e-4, 0.9};
};

struct RunConfig {
    DataConfig data;
    model::EncoderConfig model;
    model::FeatureTap feature_tap = model::FeatureTap::Projector;
    augment::AugmentPolicy augment;
    optim::SgdConfig optimizer;
    int batch_unlabeled = 512;
    int batch_labeled = 16;
    int epochs = 200;
    LossMode loss_mode = LossMode::Loss12;
    std::uint64_t seed = 0;
    double temperature = 0.1;
    int subgroup_size = 16;
    loss::Reduction supcon_reduction = loss::Reduction::Sum;
    bool augment_positives = true;
    bool simsiam_include_positives = false;
    // Labeled positives get their own forward pass (own batch-norm
    // statistics) instead of riding along with the unlabeled view 1.
    bool separate_positive_pass = false;
    ProbeConfig probe;
    BaselineConfig baseline;
    std::vector<std::uint64_t> ablation_seeds{0, 1, 2};
    std::string output_dir;

    void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig from_json(const nlohmann::json& j);  // unknown keys are rejected

// Applies "dotted.key=value" to a config JSON; the key must already exist.
void apply_override(nlohmann::json& j, const std::string& assignment);

// defaults < file < overrides
RunConfig resolve_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

// FNV-1a over the settings that shape the learned weights (data, model,
// augmentation, optimizer, batches, loss mode, seed, temperature, k).
// Epoch budget, output location, probe and ablation settings are excluded
// so that a run can be resumed with a longer schedule.
std::uint64_t config_hash(const RunConfig& cfg);

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace semicon
