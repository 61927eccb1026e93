#include "semicon/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

namespace semicon::loss {
namespace {

constexpr double kUnitTolerance = 1e-6;

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument(std::string(what) + ": operand shapes differ");
    }
}

}  // namespace

std::size_t SupConBatch::valid_anchors() const {
    return static_cast<std::size_t>(std::count_if(positives.begin(), positives.end(),
                                                  [](const auto& p) { return !p.empty(); }));
}

void SupConBatch::validate() const {
    if (!(temperature > 0.0)) throw std::invalid_argument("SupCon temperature must be positive");
    if (size() < 2) throw std::invalid_argument("SupCon batch needs at least two rows");
    if (static_cast<std::size_t>(embeddings.rows()) != size() || positives.size() != size()) {
        throw std::invalid_argument("SupCon batch rows, labels and index sets disagree");
    }
    for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
        const double norm = embeddings.row(i).norm();
        if (!(std::abs(norm - 1.0) <= kUnitTolerance)) {
            throw std::invalid_argument("SupCon row " + std::to_string(i) + " is not unit-normalized");
        }
    }
    if (valid_anchors() == 0) {
        throw std::invalid_argument("degenerate batch: no anchor has a same-class partner");
    }
}

SupConBatch make_supcon_batch(Matrix unit_embeddings, std::vector<int> labels, double temperature) {
    SupConBatch batch;
    batch.embeddings = std::move(unit_embeddings);
    batch.labels = std::move(labels);
    batch.temperature = temperature;
    batch.positives.resize(batch.labels.size());
    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
        for (std::size_t j = 0; j < batch.labels.size(); ++j) {
            if (j != i && batch.labels[j] == batch.labels[i]) batch.positives[i].push_back(j);
        }
    }
    batch.validate();
    return batch;
}

SupConBatch build_supcon_batch(const FeatureBatch& positives,
                               const pseudo::PseudoNegativeSet& pseudo_negatives,
                               double temperature) {
    if (positives.rows() == 0) throw std::invalid_argument("build_supcon_batch: no positive features");
    if (pseudo_negatives.size() == 0) {
        throw std::invalid_argument("build_supcon_batch: empty pseudo-negative set");
    }
    const FeatureBatch pos = pseudo::normalize_rows(positives);
    if (pos.vectors.cols() != pseudo_negatives.vectors.cols()) {
        throw std::invalid_argument("build_supcon_batch: feature dimensions differ");
    }
    const auto n_pos = pos.vectors.rows();
    const auto n_neg = pseudo_negatives.vectors.rows();
    Matrix all(n_pos + n_neg, pos.vectors.cols());
    all.topRows(n_pos) = pos.vectors;
    all.bottomRows(n_neg) = pseudo_negatives.vectors;
    std::vector<int> labels(static_cast<std::size_t>(n_pos), 1);
    labels.resize(static_cast<std::size_t>(n_pos + n_neg), 0);
    return make_supcon_batch(std::move(all), std::move(labels), temperature);
}

double negative_cosine(const Matrix& p, const Matrix& z, Matrix* dp) {
    require_same_shape(p, z, "negative_cosine");
    if (p.rows() == 0) throw std::invalid_argument("negative_cosine: empty batch");
    const double inv_n = 1.0 / static_cast<double>(p.rows());
    if (dp) dp->setZero(p.rows(), p.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const double np = p.row(i).norm();
        const double nz = z.row(i).norm();
        if (!(np > 0.0) || !(nz > 0.0)) {
            throw std::invalid_argument("negative_cosine: zero vector in row " + std::to_string(i));
        }
        const auto p_hat = p.row(i) / np;
        const auto z_hat = z.row(i) / nz;
        const double cos = p_hat.dot(z_hat);
        total -= cos;
        if (dp) dp->row(i) = -inv_n * (z_hat - cos * p_hat) / np;
    }
    return total * inv_n;
}

double simsiam_loss(const ViewEmbeddings& e, SimSiamGrad* grad) {
    e.validate();
    Matrix dp1;
    Matrix dp2;
    const double d12 = negative_cosine(e.p1, e.z2, grad ? &dp1 : nullptr);
    const double d21 = negative_cosine(e.p2, e.z1, grad ? &dp2 : nullptr);
    if (grad) {
        grad->dp1 = 0.5 * dp1;
        grad->dp2 = 0.5 * dp2;
    }
    return 0.5 * d12 + 0.5 * d21;
}

double supcon_loss(const SupConBatch& batch, Reduction reduction, Matrix* grad) {
    batch.validate();
    const Matrix& z = batch.embeddings;
    const auto m = z.rows();
    const double inv_tau = 1.0 / batch.temperature;
    const Matrix logits = (z * z.transpose()) * inv_tau;
    const double scale =
        reduction == Reduction::Mean ? 1.0 / static_cast<double>(batch.valid_anchors()) : 1.0;
    if (grad) grad->setZero(m, z.cols());

    double total = 0.0;
    std::vector<double> weight(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto& pos = batch.positives[static_cast<std::size_t>(i)];
        if (pos.empty()) continue;
        double peak = -std::numeric_limits<double>::infinity();
        for (Eigen::Index a = 0; a < m; ++a) {
            if (a != i) peak = std::max(peak, logits(i, a));
        }
        double denom = 0.0;
        for (Eigen::Index a = 0; a < m; ++a) {
            if (a != i) denom += std::exp(logits(i, a) - peak);
        }
        const double lse = peak + std::log(denom);
        double mean_pos = 0.0;
        for (std::size_t p : pos) mean_pos += logits(i, static_cast<Eigen::Index>(p));
        mean_pos /= static_cast<double>(pos.size());
        total += lse - mean_pos;

        if (grad) {
            // dL_i/ds_ia = softmax_ia - [a in P(i)] / |P(i)|
            for (Eigen::Index a = 0; a < m; ++a) {
                weight[static_cast<std::size_t>(a)] =
                    a == i ? 0.0 : std::exp(logits(i, a) - lse);
            }
            const double share = 1.0 / static_cast<double>(pos.size());
            for (std::size_t p : pos) weight[p] -= share;
            for (Eigen::Index a = 0; a < m; ++a) {
                const double w = weight[static_cast<std::size_t>(a)] * inv_tau * scale;
                if (w == 0.0) continue;
                grad->row(i) += w * z.row(a);
                grad->row(a) += w * z.row(i);
            }
        }
    }
    return total * scale;
}

double total_loss(double loss1, double loss2, const UncertaintyWeights& w, TotalLossGrad* grad) {
    if (!std::isfinite(loss1) || !std::isfinite(loss2) || !std::isfinite(w.v1) ||
        !std::isfinite(w.v2)) {
        throw std::invalid_argument("total_loss: non-finite input");
    }
    const double a1 = std::exp(-w.v1);
    const double a2 = std::exp(-w.v2);
    if (grad) {
        grad->d_loss1 = a1;
        grad->d_loss2 = a2;
        grad->d_v1 = 1.0 - a1 * loss1;
        grad->d_v2 = 1.0 - a2 * loss2;
    }
    return (a1 * loss1 + w.v1) + (a2 * loss2 + w.v2);
}

Matrix normalize_rows_backward(const Matrix& raw, const Matrix& d_unit) {
    require_same_shape(raw, d_unit, "normalize_rows_backward");
    Matrix out(raw.rows(), raw.cols());
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
        const double norm = raw.row(i).norm();
        if (!(norm > 0.0)) throw std::invalid_argument("normalize_rows_backward: zero row");
        const auto u = raw.row(i) / norm;
        out.row(i) = (d_unit.row(i) - d_unit.row(i).dot(u) * u) / norm;
    }
    return out;
}

double softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels, Matrix* dlogits) {
    if (static_cast<std::size_t>(logits.rows()) != labels.size() || labels.empty()) {
        throw std::invalid_argument("softmax_cross_entropy: logits and labels disagree");
    }
    const double inv_n = 1.0 / static_cast<double>(labels.size());
    if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= logits.cols()) throw std::invalid_argument("softmax_cross_entropy: bad label");
        const double peak = logits.row(i).maxCoeff();
        const double lse = peak + std::log((logits.row(i).array() - peak).exp().sum());
        total += lse - logits(i, y);
        if (dlogits) {
            dlogits->row(i) = (logits.row(i).array() - lse).exp().matrix() * inv_n;
            (*dlogits)(i, y) -= inv_n;
        }
    }
    return total * inv_n;
}

TrainingLog::TrainingLog(const std::filesystem::path& path, bool append) {
    const bool fresh = !append || !std::filesystem::exists(path);
    out_.open(path, fresh ? std::ios::trunc : std::ios::app);
    if (!out_) throw std::runtime_error("cannot open training log " + path.string());
    if (fresh) out_ << "step,loss_cosine,loss_super,loss_total,v1,v2\n";
}

void TrainingLog::append(const LossReport& report) {
    out_ << format_row(report) << '\n';
    out_.flush();
}

std::string TrainingLog::format_row(const LossReport& r) {
    auto num = [](double v) { return std::isnan(v) ? std::string("nan") : fmt::format("{}", v); };
    return fmt::format("{},{},{},{},{},{}", r.step, num(r.loss_cosine), num(r.loss_super),
                       num(r.loss_total), num(r.v1), num(r.v2));
}

std::vector<LossReport> TrainingLog::read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open training log " + path.string());
    std::string line;
    std::getline(in, line);
    std::vector<LossReport> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string f;
        std::vector<std::string> fields;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (fields.size() != 6) throw std::runtime_error("malformed training log row: " + line);
        auto num = [](const std::string& s) {
            return s == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
        };
        rows.push_back({std::stoul(fields[0]), num(fields[1]), num(fields[2]), num(fields[3]),
                        num(fields[4]), num(fields[5])});
    }
    return rows;
}

}  // namespace semicon::loss
