#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "semicon/pseudolabel.hpp"
#include "semicon/types.hpp"

namespace semicon::loss {

enum class Reduction { Sum, Mean };

// Unit-row embeddings with binary class tags and the derived index sets:
// A(i) is every other row, P(i) the other rows sharing i's label. Anchors
// with an empty P(i) are excluded from the loss.
struct SupConBatch {
    Matrix embeddings;
    std::vector<int> labels;
    double temperature = 0.1;
    std::vector<std::vector<std::size_t>> positives;  // P(i)

    std::size_t size() const { return labels.size(); }
    std::size_t valid_anchors() const;
    void validate() const;
};

SupConBatch make_supcon_batch(Matrix unit_embeddings, std::vector<int> labels, double temperature);

// Positives (label 1, normalized here) followed by pseudo-negatives (label 0).
SupConBatch build_supcon_batch(const FeatureBatch& positives,
                               const pseudo::PseudoNegativeSet& pseudo_negatives,
                               double temperature);

// Mean over rows of -cos(p_i, z_i). z is a constant: only dp is produced.
double negative_cosine(const Matrix& p, const Matrix& z, Matrix* dp = nullptr);

struct SimSiamGrad {
    Matrix dp1, dp2;  // gradients w.r.t. z1, z2 are zero by construction
};

// 0.5 * D(p1, z2) + 0.5 * D(p2, z1).
double simsiam_loss(const ViewEmbeddings& e, SimSiamGrad* grad = nullptr);

// Supervised contrastive loss with the log outside the positive average,
// summed (or averaged) over valid anchors. Optional gradient w.r.t. the
// embedding rows.
double supcon_loss(const SupConBatch& batch, Reduction reduction = Reduction::Sum,
                   Matrix* grad = nullptr);

// Trainable log-variances weighting the two objectives.
struct UncertaintyWeights {
    double v1 = 0.0;
    double v2 = 0.0;
};

struct TotalLossGrad {
    double d_loss1 = 0.0;
    double d_loss2 = 0.0;
    double d_v1 = 0.0;
    double d_v2 = 0.0;
};

// (exp(-v1) * loss1 + v1) + (exp(-v2) * loss2 + v2)
double total_loss(double loss1, double loss2, const UncertaintyWeights& w,
                  TotalLossGrad* grad = nullptr);

// Back-propagates through row normalization u = x / |x|.
Matrix normalize_rows_backward(const Matrix& raw, const Matrix& d_unit);

// Mean softmax cross-entropy over rows; labels index the columns.
double softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels,
                             Matrix* dlogits = nullptr);

struct LossReport {
    std::size_t step = 0;
    double loss_cosine = 0.0;
    double loss_super = 0.0;
    double loss_total = 0.0;
    double v1 = 0.0;
    double v2 = 0.0;
};

// Per-step CSV log: step,loss_cosine,loss_super,loss_total,v1,v2
class TrainingLog {
public:
    TrainingLog(const std::filesystem::path& path, bool append);
    void append(const LossReport& report);

    static std::string format_row(const LossReport& report);
    static std::vector<LossReport> read(const std::filesystem::path& path);

private:
    std::ofstream out_;
};

}  // namespace semicon::loss
