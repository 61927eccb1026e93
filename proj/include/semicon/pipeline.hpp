#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "semicon/config.hpp"
#include "semicon/datagen.hpp"
#include "semicon/losses.hpp"
#include "semicon/metrics.hpp"
#include "semicon/model.hpp"
#include "semicon/pseudolabel.hpp"

namespace semicon::pipeline {

// Splits ready for training. train_upsampled replicates the train
// positives; truth holds every known label by tile id, including the
// labels withheld from the unlabeled pool when the data was generated here.
struct PreparedData {
    data::SplitResult splits;
    data::TileDataset train_upsampled;
    std::unordered_map<std::string, data::Label> truth;
};

// Generated in memory from cfg.data, or read from cfg.data.root.
PreparedData prepare_data(const RunConfig& cfg);
// Generator + tiling only (no split); labels are ground truth.
data::TileDataset generate_tiles(const RunConfig& cfg);
data::TileDataset upsample_train(const RunConfig& cfg, const data::TileDataset& train);

struct StepInfo {
    int epoch = 0;
    std::size_t step = 0;
    const data::TileDataset* unlabeled = nullptr;
    const std::vector<std::size_t>* unlabeled_indices = nullptr;  // batch rows -> dataset index
    const pseudo::PseudoNegativeSet* pseudo_negatives = nullptr;  // source indices are dataset indices
    loss::LossReport report;
};

struct PretrainOptions {
    std::filesystem::path run_dir;  // empty: nothing is written
    bool resume = false;
    std::function<void(const StepInfo&)> on_step;
};

struct PretrainResult {
    std::unique_ptr<model::SimSiamNet> net;
    loss::UncertaintyWeights weights;
    int epochs_completed = 0;
    std::size_t steps = 0;
    std::size_t skipped_steps = 0;  // non-finite losses; no update applied
    std::vector<loss::LossReport> log;
};

std::size_t steps_per_epoch(std::size_t unlabeled, int batch);

// Added to the negative cosine before uncertainty weighting in loss1+2 mode.
inline constexpr double kCosineShift = 2.0;

// SimSiam / SupCon / fused pretraining per cfg.loss_mode (not the baseline).
PretrainResult pretrain(const RunConfig& cfg, const PreparedData& data, const PretrainOptions& options);

// Affine classifier on frozen encoder features (eval mode, un-augmented).
struct LinearHead {
    Matrix weight;          // 2 x d
    Eigen::VectorXd bias;   // 2
    int best_epoch = 0;
    metrics::MetricsReport validation;

    std::vector<int> predict(const Matrix& features) const;
    nlohmann::json to_json() const;
    static LinearHead from_json(const nlohmann::json& j);
};

Matrix extract_features(model::SimSiamNet& net, const data::TileDataset& ds, int resize);

// Cross-entropy probe on (upsampled) train features; per-epoch validation;
// keeps the epoch with the best validation balanced accuracy, then higher
// macro F1, then the earlier epoch.
LinearHead linear_probe(model::SimSiamNet& net, const data::TileDataset& train,
                        const data::TileDataset& val, const RunConfig& cfg, const std::string& arm);

// Probe on features directly (train labels / val labels given per row).
LinearHead fit_linear_head(const Matrix& train_x, const std::vector<int>& train_y, const Matrix& val_x,
                           const std::vector<int>& val_y, const ProbeConfig& cfg, std::uint64_t seed,
                           const std::string& arm);

struct BaselineResult {
    std::unique_ptr<model::SimSiamNet> net;
    LinearHead head;
};

// Encoder + linear layer trained end to end with cross-entropy on the
// upsampled train split; best epoch by validation balanced accuracy.
BaselineResult train_supervised_baseline(const RunConfig& cfg, const PreparedData& data);

std::vector<int> labels_of(const data::TileDataset& ds);

metrics::MetricsReport evaluate(model::SimSiamNet& net, const LinearHead& head, const data::TileDataset& split,
                                int resize, const std::string& arm, int epoch);

struct ArmResult {
    LossMode mode;
    std::uint64_t seed = 0;
    metrics::MetricsReport val;
    metrics::MetricsReport test;
    std::size_t unlabeled_images = 0;
    std::size_t labeled_images = 0;
};

struct AblationSummaryRow {
    LossMode mode;
    double mean_macro_f1 = 0.0;
    double mean_balanced_accuracy = 0.0;
    int rank = 0;
};

struct AblationResult {
    std::vector<ArmResult> arms;
    std::vector<AblationSummaryRow> summary;  // in arm order, ranked by balanced accuracy
};

inline constexpr LossMode kArms[] = {LossMode::SupervisedBaseline, LossMode::Loss1, LossMode::Loss2,
                                     LossMode::Loss12};

std::string backbone_name(const RunConfig& cfg);

// Runs every arm for every ablation seed on shared data. Writes per-seed run
// directories, metrics.csv and ablation.csv under out_dir when it is non-empty.
AblationResult run_ablation(const RunConfig& cfg, const std::filesystem::path& out_dir);

// Markdown summary of a completed ablation or single run directory.
std::string report(const std::filesystem::path& run_dir);

}  // namespace semicon::pipeline
