#include "semicon/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "semicon/augment.hpp"
#include "semicon/image.hpp"
#include "semicon/optim.hpp"
#include "semicon/rng.hpp"

namespace semicon::pipeline {
namespace fs = std::filesystem;
namespace {

constexpr int kInferenceChunk = 256;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

std::vector<Image> load_all(const data::TileDataset& ds, int resize) {
    const auto idx = iota_indices(ds.size());
    return data::load_batch(ds, idx, resize);
}

bool already_upsampled(const data::TileDataset& train) {
    std::set<std::string> ids;
    for (const auto& e : train.entries()) {
        if (!ids.insert(e.tile_id).second) return true;
    }
    return false;
}

void require_labeled(const data::TileDataset& ds, const char* what) {
    if (ds.empty() || !ds.is_labeled()) {
        throw std::invalid_argument(std::string(what) + " split carries no labels");
    }
}

// Cycles through a set of indices in per-round shuffled order; position p of
// the infinite stream depends only on (seed, p).
class CyclicSampler {
public:
    CyclicSampler(std::vector<std::size_t> items, std::uint64_t seed) : items_(std::move(items)), seed_(seed) {}

    std::size_t at(std::size_t position) {
        const std::size_t round = position / items_.size();
        if (round != round_ || order_.empty()) {
            order_ = items_;
            Rng rng = make_rng(seed_, streams::kPositiveOrder, round);
            std::shuffle(order_.begin(), order_.end(), rng);
            round_ = round;
        }
        return order_[position % items_.size()];
    }

private:
    std::vector<std::size_t> items_;
    std::uint64_t seed_;
    std::size_t round_ = 0;
    std::vector<std::size_t> order_;
};

bool all_finite(const Tensor& t) {
    return std::all_of(t.data.begin(), t.data.end(), [](float v) { return std::isfinite(v); });
}

Matrix rows_of(const Matrix& m, const std::vector<std::size_t>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::vector<int> predict_logits(const Matrix& logits) {
    std::vector<int> pred(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) pred[static_cast<std::size_t>(i)] = logits(i, 1) > logits(i, 0) ? 1 : 0;
    return pred;
}

bool better(const metrics::MetricsReport& cand, const metrics::MetricsReport& best) {
    if (cand.balanced_accuracy != best.balanced_accuracy) return cand.balanced_accuracy > best.balanced_accuracy;
    return cand.macro_f1 > best.macro_f1;
}

std::string split_name(const data::TileDataset& ds) { return std::string(data::to_string(ds.split())); }

}  // namespace

// ---------------------------------------------------------------- data ----

data::TileDataset generate_tiles(const RunConfig& cfg) {
    const auto region = data::generate_synthetic_region(cfg.data.synth, cfg.data.seed);
    data::TilingOptions opt;
    opt.tile = cfg.data.synth.tile;
    opt.label_threshold = cfg.data.label_threshold;
    opt.block_side = cfg.data.block_side;
    return data::tile_region(region.raster, region.mask, opt);
}

data::TileDataset upsample_train(const RunConfig& cfg, const data::TileDataset& train) {
    if (already_upsampled(train)) return train;
    return data::upsample_minority(train, cfg.data.upsample_balance
                                              ? data::UpsampleTarget::balance()
                                              : data::UpsampleTarget::by_factor(cfg.data.upsample_factor));
}

PreparedData prepare_data(const RunConfig& cfg) {
    PreparedData out;
    if (cfg.data.root.empty()) {
        const data::TileDataset tiles = generate_tiles(cfg);
        for (const auto& e : tiles.entries()) out.truth[e.tile_id] = *e.label;
        data::SplitConfig split = cfg.data.split;
        split.seed = cfg.data.seed;
        out.splits = data::split_dataset(tiles, split);
    } else {
        const auto entries = data::load_entries(cfg.data.root);
        for (const auto& e : entries) {
            if (e.split == data::Split::Unsplit) {
                throw std::invalid_argument("dataset " + cfg.data.root + " is not split; run `split` first");
            }
            if (e.label) out.truth[e.tile_id] = *e.label;
        }
        out.splits = data::group_by_split(entries);
    }
    if (out.splits.train.count(data::Label::Positive) == 0) {
        throw std::invalid_argument("train split holds no positive tiles");
    }
    out.train_upsampled = upsample_train(cfg, out.splits.train);
    return out;
}

std::vector<int> labels_of(const data::TileDataset& ds) {
    std::vector<int> y;
    y.reserve(ds.size());
    for (const auto& e : ds.entries()) {
        if (!e.label) throw std::invalid_argument("tile " + e.tile_id + " has no label");
        y.push_back(*e.label == data::Label::Positive ? 1 : 0);
    }
    return y;
}

// ------------------------------------------------------------ pretrain ----

std::size_t steps_per_epoch(std::size_t unlabeled, int batch) {
    if (batch <= 0) throw std::invalid_argument("batch must be positive");
    const std::size_t steps = unlabeled / static_cast<std::size_t>(batch);
    if (steps == 0) {
        throw std::invalid_argument(fmt::format("unlabeled pool of {} tiles cannot fill one batch of {}",
                                                unlabeled, batch));
    }
    return steps;
}

PretrainResult pretrain(const RunConfig& cfg, const PreparedData& data, const PretrainOptions& options) {
    cfg.validate();
    if (cfg.loss_mode == LossMode::SupervisedBaseline) {
        throw std::invalid_argument("pretrain does not run the supervised baseline");
    }
    const bool use1 = cfg.loss_mode != LossMode::Loss2;
    const bool use2 = cfg.loss_mode != LossMode::Loss1;
    const bool fused = cfg.loss_mode == LossMode::Loss12;
    const bool joint_positives = cfg.simsiam_include_positives && use1;
    const bool need_positives = use2 || joint_positives;
    const auto X = static_cast<std::size_t>(cfg.batch_unlabeled);
    const auto Y = static_cast<std::size_t>(cfg.batch_labeled);
    const int side = cfg.model.input_side;

    const data::TileDataset& unlabeled = data.splits.unlabeled;
    const std::size_t spe = steps_per_epoch(unlabeled.size(), cfg.batch_unlabeled);
    const auto unlabeled_images = load_all(unlabeled, side);

    std::vector<std::size_t> positive_idx = data.train_upsampled.indices_with(data::Label::Positive);
    std::vector<Image> positive_images;
    if (need_positives) {
        if (positive_idx.size() < Y) {
            throw std::invalid_argument(fmt::format(
                "only {} labeled positives for a positive batch of {}; upsample the train split",
                positive_idx.size(), Y));
        }
        positive_images = data::load_batch(data.train_upsampled, positive_idx, side);
    }
    CyclicSampler positives(iota_indices(positive_idx.size()), cfg.seed);

    PretrainResult result;
    result.net = std::make_unique<model::SimSiamNet>(cfg.model, cfg.seed);
    model::SimSiamNet& net = *result.net;
    nn::Parameter v1{"uncertainty.v1", Tensor(1, 1), Tensor(1, 1), false};
    nn::Parameter v2{"uncertainty.v2", Tensor(1, 1), Tensor(1, 1), false};
    auto params = net.parameters();
    if (fused) {
        params.push_back(&v1);
        params.push_back(&v2);
    }
    optim::Sgd sgd(params, cfg.optimizer);
    const std::uint64_t hash = config_hash(cfg);

    int start_epoch = 1;
    const fs::path ckpt_dir = options.run_dir.empty() ? fs::path{} : options.run_dir / "checkpoints";
    const fs::path log_path = options.run_dir.empty() ? fs::path{} : options.run_dir / "train_log.csv";
    if (!options.run_dir.empty()) {
        fs::create_directories(ckpt_dir);
        write_text(options.run_dir / "config.json", to_json(cfg).dump(2) + "\n");
        if (options.resume && fs::exists(ckpt_dir / "last.ckpt")) {
            const auto ckpt = model::load_checkpoint(ckpt_dir / "last.ckpt", hash);
            model::restore(ckpt, net, &sgd.momentum_buffers());
            v1.value.data[0] = static_cast<float>(ckpt.weights.v1);
            v2.value.data[0] = static_cast<float>(ckpt.weights.v2);
            start_epoch = ckpt.epoch + 1;
            const std::size_t keep = static_cast<std::size_t>(ckpt.epoch) * spe;
            if (fs::exists(log_path)) {
                for (const auto& row : loss::TrainingLog::read(log_path)) {
                    if (row.step <= keep) result.log.push_back(row);
                }
            }
            result.epochs_completed = ckpt.epoch;
            result.steps = keep;
            spdlog::info("resuming {} at epoch {}", options.run_dir.string(), start_epoch);
        }
    }
    std::optional<loss::TrainingLog> log;
    if (!log_path.empty()) {
        log.emplace(log_path, false);
        for (const auto& row : result.log) log->append(row);
    }

    const augment::AugmentPolicy& policy = cfg.augment;
    const pseudo::PseudoConfig pseudo_cfg{cfg.subgroup_size};

    for (int epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
        auto order = iota_indices(unlabeled.size());
        Rng order_rng = make_rng(cfg.seed, streams::kEpochOrder, static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), order_rng);
        double epoch_cos = 0.0, epoch_sup = 0.0;
        std::size_t counted = 0;

        for (std::size_t s = 0; s < spe; ++s) {
            const std::size_t step = static_cast<std::size_t>(epoch - 1) * spe + s + 1;
            Rng rng = make_rng(cfg.seed, streams::kStep, step);
            std::vector<std::size_t> batch_idx(order.begin() + static_cast<std::ptrdiff_t>(s * X),
                                               order.begin() + static_cast<std::ptrdiff_t>((s + 1) * X));

            std::vector<std::size_t> pos_rows;
            if (need_positives) {
                for (std::size_t j = 0; j < Y; ++j) pos_rows.push_back(positives.at((step - 1) * Y + j));
            }

            // Positives ride in the same forward pass as view 1 unless asked
            // otherwise, so that batch normalization sees one population.
            const bool own_pass = use2 && cfg.separate_positive_pass && !joint_positives;
            std::vector<Image> view1, view2, pos_view;
            view1.reserve(X + pos_rows.size());
            for (std::size_t i : batch_idx) {
                if (use1) {
                    auto [a, b] = augment::two_views(unlabeled_images[i], policy, rng);
                    view1.push_back(std::move(a));
                    view2.push_back(std::move(b));
                } else {
                    view1.push_back(augment::augment_image(unlabeled_images[i], policy, rng));
                }
            }
            for (std::size_t r : pos_rows) {
                if (joint_positives) {
                    auto [a, b] = augment::two_views(positive_images[r], policy, rng);
                    view1.push_back(std::move(a));
                    view2.push_back(std::move(b));
                } else {
                    (own_pass ? pos_view : view1)
                        .push_back(cfg.augment_positives ? augment::augment_image(positive_images[r], policy, rng)
                                                         : positive_images[r]);
                }
            }

            model::Pass pa = net.forward(to_tensor(view1), nn::Mode::Train, use1);
            model::Pass pb;
            if (use1) pb = net.forward(to_tensor(view2), nn::Mode::Train, true);
            model::Pass pc;
            if (own_pass) pc = net.forward(to_tensor(pos_view), nn::Mode::Train, false);
            const bool tap_encoder = cfg.feature_tap == model::FeatureTap::Encoder;

            loss::LossReport report;
            report.step = step;
            report.v1 = fused ? v1.value.data[0] : kNaN;
            report.v2 = fused ? v2.value.data[0] : kNaN;
            report.loss_cosine = kNaN;
            report.loss_super = kNaN;

            pseudo::PseudoNegativeSet pseudo_set;
            bool have_pseudo = false;
            const bool finite = all_finite(pa.h) && all_finite(pa.z) &&
                                (!use1 || (all_finite(pa.p) && all_finite(pb.z) && all_finite(pb.p))) &&
                                (!own_pass || (all_finite(pc.h) && all_finite(pc.z)));
            if (!finite) {
                report.loss_total = kNaN;
                ++result.skipped_steps;
                spdlog::warn("step {}: non-finite activations, update skipped", step);
            } else {
                const auto n1 = static_cast<Eigen::Index>(view2.size());  // rows in the SimSiam path
                const Matrix z1 = model::to_matrix(pa.z);
                loss::SimSiamGrad sg;
                double l1 = 0.0;
                if (use1) {
                    const Matrix p1 = model::to_matrix(pa.p);
                    const ViewEmbeddings e{z1.topRows(n1), model::to_matrix(pb.z), p1.topRows(n1),
                                           model::to_matrix(pb.p)};
                    l1 = loss::simsiam_loss(e, &sg);
                    report.loss_cosine = l1;
                }

                // gradient at the feature tap, one row per view-1 image
                const Matrix f1 = tap_encoder ? model::to_matrix(pa.h) : z1;
                Matrix df1 = Matrix::Zero(f1.rows(), f1.cols());
                Matrix df_pos;
                double l2 = 0.0;
                if (use2) {
                    const auto nx = static_cast<Eigen::Index>(X);
                    const auto ny = static_cast<Eigen::Index>(Y);
                    FeatureBatch f_un{f1.topRows(nx), false, batch_idx};
                    FeatureBatch f_pos{own_pass ? model::to_matrix(tap_encoder ? pc.h : pc.z) : Matrix(f1.bottomRows(ny)),
                                       false, {}};
                    for (std::size_t r : pos_rows) f_pos.source_indices.push_back(positive_idx[r]);
                    pseudo_set = pseudo::synthesize_pseudo_negatives(f_un, f_pos, pseudo_cfg, rng);
                    have_pseudo = true;
                    const auto sc = loss::build_supcon_batch(f_pos, pseudo_set, cfg.temperature);
                    Matrix g;
                    l2 = loss::supcon_loss(sc, cfg.supcon_reduction, &g);
                    report.loss_super = l2;
                    df_pos = loss::normalize_rows_backward(f_pos.vectors, g.topRows(ny));
                    if (!own_pass) df1.bottomRows(ny) = df_pos;
                    const Matrix dneg = loss::normalize_rows_backward(rows_of(f_un.vectors, pseudo_set.rows),
                                                                      g.bottomRows(g.rows() - ny));
                    for (std::size_t r = 0; r < pseudo_set.rows.size(); ++r) {
                        df1.row(static_cast<Eigen::Index>(pseudo_set.rows[r])) += dneg.row(static_cast<Eigen::Index>(r));
                    }
                }

                double a1 = 1.0, a2 = 1.0;
                loss::TotalLossGrad tg;
                if (fused) {
                    // The negative cosine lies in [-1, 1]; exp(-v1) * l1 + v1 has no lower
                    // bound in v1 when l1 < 0, so the weighted term sees l1 + 2 >= 1.
                    report.loss_total =
                        loss::total_loss(l1 + kCosineShift, l2, {v1.value.data[0], v2.value.data[0]}, &tg);
                    a1 = tg.d_loss1;
                    a2 = tg.d_loss2;
                } else {
                    report.loss_total = use1 ? l1 : l2;
                }

                nn::zero_grad(params);
                std::optional<Tensor> dp1, dfeat;
                if (use1) {
                    Matrix padded = Matrix::Zero(z1.rows(), z1.cols());
                    padded.topRows(n1) = a1 * sg.dp1;
                    dp1 = model::from_matrix(padded);
                }
                if (use2) dfeat = model::from_matrix(a2 * df1);
                const Tensor* dz = use2 && !tap_encoder ? &*dfeat : nullptr;
                const Tensor* dh = use2 && tap_encoder ? &*dfeat : nullptr;
                net.backward(pa, dp1 ? &*dp1 : nullptr, dz, dh);
                if (use1) {
                    const Tensor dp2 = model::from_matrix(a1 * sg.dp2);
                    net.backward(pb, &dp2, nullptr);
                }
                if (use2 && own_pass) {
                    const Tensor d = model::from_matrix(a2 * df_pos);
                    net.backward(pc, nullptr, tap_encoder ? nullptr : &d, tap_encoder ? &d : nullptr);
                }
                if (fused) {
                    v1.grad.data[0] = static_cast<float>(tg.d_v1);
                    v2.grad.data[0] = static_cast<float>(tg.d_v2);
                }
                sgd.step();
                if (use1) epoch_cos += l1;
                if (use2) epoch_sup += l2;
                ++counted;
            }

            if (options.on_step) {
                options.on_step(StepInfo{epoch, step, &unlabeled, &batch_idx,
                                         have_pseudo ? &pseudo_set : nullptr, report});
            }
            result.log.push_back(report);
            if (log) log->append(report);
            ++result.steps;
        }

        result.epochs_completed = epoch;
        if (!options.run_dir.empty()) {
            auto ckpt = model::capture(net, sgd.momentum_buffers(), {v1.value.data[0], v2.value.data[0]}, epoch, hash);
            const double n = counted > 0 ? static_cast<double>(counted) : kNaN;
            ckpt.metrics = {{"steps", result.steps},
                            {"mean_loss_cosine", use1 ? epoch_cos / n : kNaN},
                            {"mean_loss_super", use2 ? epoch_sup / n : kNaN}};
            model::save_checkpoint(ckpt_dir / "last.ckpt", ckpt);
        }
    }
    result.weights = {v1.value.data[0], v2.value.data[0]};
    if (!options.run_dir.empty()) {
        auto ckpt = model::capture(net, sgd.momentum_buffers(), result.weights, result.epochs_completed, hash);
        ckpt.metrics = {{"steps", result.steps}, {"skipped_steps", result.skipped_steps}};
        model::save_checkpoint(ckpt_dir / "final.ckpt", ckpt);
    }
    return result;
}

// --------------------------------------------------------------- probe ----

std::vector<int> LinearHead::predict(const Matrix& features) const {
    if (features.cols() != weight.cols()) throw std::invalid_argument("linear head: feature dimension mismatch");
    Matrix logits = features * weight.transpose();
    logits.rowwise() += bias.transpose();
    return predict_logits(logits);
}

nlohmann::json LinearHead::to_json() const {
    nlohmann::json w = nlohmann::json::array();
    for (Eigen::Index r = 0; r < weight.rows(); ++r) {
        w.push_back(std::vector<double>(weight.row(r).data(), weight.row(r).data() + weight.cols()));
    }
    return {{"weight", w},
            {"bias", std::vector<double>(bias.data(), bias.data() + bias.size())},
            {"best_epoch", best_epoch},
            {"validation", metrics::MetricsCsv::format_row(validation)}};
}

LinearHead LinearHead::from_json(const nlohmann::json& j) {
    LinearHead h;
    const auto rows = j.at("weight").get<std::vector<std::vector<double>>>();
    if (rows.size() != 2 || rows[0].size() != rows[1].size() || rows[0].empty()) {
        throw std::invalid_argument("linear head JSON: weight must be 2 x d");
    }
    h.weight.resize(2, static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < rows[r].size(); ++c) h.weight(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    const auto b = j.at("bias").get<std::vector<double>>();
    if (b.size() != 2) throw std::invalid_argument("linear head JSON: bias must have 2 entries");
    h.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), 2);
    h.best_epoch = j.at("best_epoch").get<int>();
    return h;
}

Matrix extract_features(model::SimSiamNet& net, const data::TileDataset& ds, int resize) {
    const auto images = load_all(ds, resize);
    Matrix out(static_cast<Eigen::Index>(images.size()), net.config().feature_dim);
    for (std::size_t start = 0; start < images.size(); start += kInferenceChunk) {
        const std::size_t n = std::min<std::size_t>(kInferenceChunk, images.size() - start);
        const auto pass = net.encode(to_tensor(std::span<const Image>(images.data() + start, n)), nn::Mode::Eval);
        out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n)) = model::to_matrix(pass.h);
    }
    return out;
}

LinearHead fit_linear_head(const Matrix& train_x, const std::vector<int>& train_y, const Matrix& val_x,
                           const std::vector<int>& val_y, const ProbeConfig& cfg, std::uint64_t seed,
                           const std::string& arm) {
    if (train_x.rows() == 0 || static_cast<std::size_t>(train_x.rows()) != train_y.size()) {
        throw std::invalid_argument("probe: train features and labels disagree");
    }
    if (val_x.rows() == 0 || static_cast<std::size_t>(val_x.rows()) != val_y.size()) {
        throw std::invalid_argument("probe: validation features and labels disagree");
    }
    const Eigen::Index d = train_x.cols();
    // Standardize with train statistics; folded into the affine map afterwards.
    const Eigen::RowVectorXd mean = train_x.colwise().mean();
    Eigen::RowVectorXd scale = ((train_x.rowwise() - mean).array().square().colwise().mean()).sqrt();
    for (Eigen::Index c = 0; c < d; ++c) {
        if (!(scale(c) > 1e-12)) scale(c) = 1.0;
    }
    const Matrix xs = (train_x.rowwise() - mean).array().rowwise() / scale.array();
    const Matrix vs = (val_x.rowwise() - mean).array().rowwise() / scale.array();

    Matrix w = Matrix::Zero(2, d);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(2);
    Matrix w_mom = Matrix::Zero(2, d);
    Eigen::VectorXd b_mom = Eigen::VectorXd::Zero(2);

    LinearHead best;
    bool have_best = false;
    auto order = iota_indices(static_cast<std::size_t>(xs.rows()));
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng rng = make_rng(seed, streams::kProbe, static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), order.size() - start);
            Matrix xb(static_cast<Eigen::Index>(n), d);
            std::vector<int> yb(n);
            for (std::size_t i = 0; i < n; ++i) {
                xb.row(static_cast<Eigen::Index>(i)) = xs.row(static_cast<Eigen::Index>(order[start + i]));
                yb[i] = train_y[order[start + i]];
            }
            Matrix logits = xb * w.transpose();
            logits.rowwise() += b.transpose();
            Matrix dlogits;
            loss::softmax_cross_entropy(logits, yb, &dlogits);
            const Matrix gw = dlogits.transpose() * xb + cfg.weight_decay * w;
            const Eigen::VectorXd gb = dlogits.colwise().sum().transpose();
            w_mom = cfg.momentum * w_mom + gw;
            b_mom = cfg.momentum * b_mom + gb;
            w -= cfg.learning_rate * w_mom;
            b -= cfg.learning_rate * b_mom;
        }
        Matrix val_logits = vs * w.transpose();
        val_logits.rowwise() += b.transpose();
        const auto report = metrics::make_report(arm, "val", epoch, metrics::confusion(val_y, predict_logits(val_logits)));
        if (!have_best || better(report, best.validation)) {
            best.weight = w.array().rowwise() / scale.array();
            best.bias = b - best.weight * mean.transpose();
            best.best_epoch = epoch;
            best.validation = report;
            have_best = true;
        }
    }
    return best;
}

LinearHead linear_probe(model::SimSiamNet& net, const data::TileDataset& train, const data::TileDataset& val,
                        const RunConfig& cfg, const std::string& arm) {
    require_labeled(train, "train");
    require_labeled(val, "validation");
    const Matrix train_x = extract_features(net, train, cfg.data.resize);
    const Matrix val_x = extract_features(net, val, cfg.data.resize);
    return fit_linear_head(train_x, labels_of(train), val_x, labels_of(val), cfg.probe, cfg.seed, arm);
}

// ------------------------------------------------------------ baseline ----

BaselineResult train_supervised_baseline(const RunConfig& cfg, const PreparedData& data) {
    cfg.validate();
    const data::TileDataset& train = data.train_upsampled;
    const data::TileDataset& val = data.splits.val;
    require_labeled(train, "train");
    require_labeled(val, "validation");
    const int side = cfg.model.input_side;
    const auto images = load_all(train, side);
    const auto labels = labels_of(train);
    const auto val_labels = labels_of(val);

    BaselineResult result;
    result.net = std::make_unique<model::SimSiamNet>(cfg.model, cfg.seed);
    model::SimSiamNet& net = *result.net;
    Rng init = make_rng(cfg.seed, streams::kBaseline);
    nn::Linear head("baseline.head", cfg.model.feature_dim, 2, true, init);
    auto params = net.encoder_parameters();
    head.collect_parameters(params);
    optim::Sgd sgd(params, cfg.baseline.optimizer);

    auto snapshot_encoder = [&net] {
        std::vector<Tensor> s;
        for (auto* p : net.encoder_parameters()) s.push_back(p->value);
        for (const auto& b : net.buffers()) s.push_back(*b.value);
        return s;
    };
    auto head_weights = [&head] {
        const Tensor& wt = head.weight().value;
        Matrix w(2, wt.n);
        for (int r = 0; r < 2; ++r) {
            for (int c = 0; c < wt.n; ++c) w(r, c) = wt.data[static_cast<std::size_t>(r) * wt.n + c];
        }
        Eigen::VectorXd b(2);
        b << head.bias().value.data[0], head.bias().value.data[1];
        return std::make_pair(w, b);
    };

    std::vector<Tensor> best_state;
    bool have_best = false;
    auto order = iota_indices(train.size());
    const auto B = static_cast<std::size_t>(cfg.baseline.batch);
    std::size_t step = 0;
    for (int epoch = 1; epoch <= cfg.baseline.epochs; ++epoch) {
        Rng order_rng = make_rng(cfg.seed, streams::kBaseline, static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), order_rng);
        for (std::size_t start = 0; start + 2 <= order.size(); start += B) {
            const std::size_t n = std::min(B, order.size() - start);
            if (n < 2) break;
            Rng rng = make_rng(cfg.seed, streams::kBaselineStep, ++step);
            std::vector<Image> batch;
            std::vector<int> y;
            for (std::size_t i = 0; i < n; ++i) {
                batch.push_back(augment::augment_image(images[order[start + i]], cfg.augment, rng));
                y.push_back(labels[order[start + i]]);
            }
            const auto pass = net.encode(to_tensor(batch), nn::Mode::Train);
            nn::Cache head_cache;
            const Tensor logits = head.forward(pass.h, head_cache, nn::Mode::Train);
            if (!all_finite(logits)) {
                spdlog::warn("baseline step {}: non-finite logits, update skipped", step);
                continue;
            }
            Matrix dlogits;
            loss::softmax_cross_entropy(model::to_matrix(logits), y, &dlogits);
            nn::zero_grad(params);
            const Tensor dh = head.backward(model::from_matrix(dlogits), head_cache);
            net.backward_encoder(pass, dh);
            sgd.step();
        }
        const Matrix vx = extract_features(net, val, side);
        auto [w, b] = head_weights();
        LinearHead candidate{w, b, epoch, {}};
        candidate.validation = metrics::make_report(to_string(LossMode::SupervisedBaseline), "val", epoch,
                                                    metrics::confusion(val_labels, candidate.predict(vx)));
        if (!have_best || better(candidate.validation, result.head.validation)) {
            result.head = candidate;
            best_state = snapshot_encoder();
            have_best = true;
        }
    }
    // Restore the encoder of the selected epoch.
    std::size_t i = 0;
    for (auto* p : net.encoder_parameters()) p->value = best_state[i++];
    for (const auto& b : net.buffers()) *b.value = best_state[i++];
    return result;
}

// ------------------------------------------------------------ evaluate ----

metrics::MetricsReport evaluate(model::SimSiamNet& net, const LinearHead& head, const data::TileDataset& split,
                                int resize, const std::string& arm, int epoch) {
    require_labeled(split, "evaluation");
    const Matrix x = extract_features(net, split, resize);
    return metrics::make_report(arm, split_name(split), epoch, metrics::confusion(labels_of(split), head.predict(x)));
}

// ------------------------------------------------------------ ablation ----

std::string backbone_name(const RunConfig& cfg) {
    return fmt::format("{}-d{}", model::to_string(cfg.model.architecture), cfg.model.feature_dim);
}

AblationResult run_ablation(const RunConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    AblationResult result;
    std::optional<metrics::MetricsCsv> all_metrics;
    std::ofstream arms_csv;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_text(out_dir / "config.json", to_json(cfg).dump(2) + "\n");
        all_metrics.emplace(out_dir / "metrics.csv", false);
        arms_csv.open(out_dir / "ablation.csv", std::ios::trunc);
        arms_csv << "seed,arm,backbone,unlabeled_images,labeled_images,val_macro_f1,val_balanced_accuracy,"
                    "test_macro_f1,test_balanced_accuracy\n";
    }

    for (std::uint64_t seed : cfg.ablation_seeds) {
        RunConfig seed_cfg = cfg;
        seed_cfg.seed = seed;
        if (cfg.data.root.empty()) seed_cfg.data.seed = cfg.data.seed + seed;
        const PreparedData data = prepare_data(seed_cfg);
        const fs::path seed_dir = out_dir.empty() ? fs::path{} : out_dir / fmt::format("seed_{}", seed);
        std::optional<metrics::MetricsCsv> seed_metrics;
        if (!seed_dir.empty()) {
            fs::create_directories(seed_dir);
            seed_metrics.emplace(seed_dir / "metrics.csv", false);
        }
        spdlog::info("ablation seed {}: {} unlabeled, {} train ({} after upsampling), {} val, {} test", seed,
                     data.splits.unlabeled.size(), data.splits.train.size(), data.train_upsampled.size(),
                     data.splits.val.size(), data.splits.test.size());

        for (LossMode mode : kArms) {
            RunConfig arm_cfg = seed_cfg;
            arm_cfg.loss_mode = mode;
            const std::string arm = to_string(mode);
            const fs::path arm_dir = seed_dir.empty() ? fs::path{} : seed_dir / arm;
            ArmResult ar;
            ar.mode = mode;
            ar.seed = seed;
            ar.labeled_images = data.train_upsampled.size();
            std::unique_ptr<model::SimSiamNet> net;
            LinearHead head;
            if (mode == LossMode::SupervisedBaseline) {
                auto base = train_supervised_baseline(arm_cfg, data);
                net = std::move(base.net);
                head = std::move(base.head);
                if (!arm_dir.empty()) {
                    fs::create_directories(arm_dir);
                    write_text(arm_dir / "config.json", to_json(arm_cfg).dump(2) + "\n");
                }
            } else {
                ar.unlabeled_images = data.splits.unlabeled.size();
                auto pre = pretrain(arm_cfg, data, {arm_dir, false, {}});
                net = std::move(pre.net);
                head = linear_probe(*net, data.train_upsampled, data.splits.val, arm_cfg, arm);
            }
            if (!arm_dir.empty()) write_text(arm_dir / "probe.json", head.to_json().dump(2) + "\n");
            ar.val = head.validation;
            ar.test = evaluate(*net, head, data.splits.test, arm_cfg.data.resize, arm, head.best_epoch);
            spdlog::info("seed {} {:>20}: val BA {:.4f}, test BA {:.4f}, test macro F1 {:.4f}", seed, arm,
                         ar.val.balanced_accuracy, ar.test.balanced_accuracy, ar.test.macro_f1);
            if (seed_metrics) {
                seed_metrics->append(ar.val);
                seed_metrics->append(ar.test);
            }
            if (all_metrics) {
                for (auto rep : {ar.val, ar.test}) {
                    rep.arm = fmt::format("{}@seed{}", arm, seed);
                    all_metrics->append(rep);
                }
                arms_csv << fmt::format("{},{},{},{},{},{:.17g},{:.17g},{:.17g},{:.17g}\n", seed, arm,
                                        backbone_name(cfg), ar.unlabeled_images, ar.labeled_images,
                                        ar.val.macro_f1, ar.val.balanced_accuracy, ar.test.macro_f1,
                                        ar.test.balanced_accuracy);
                arms_csv.flush();
            }
            result.arms.push_back(std::move(ar));
        }
    }

    for (LossMode mode : kArms) {
        AblationSummaryRow row;
        row.mode = mode;
        std::size_t n = 0;
        for (const auto& a : result.arms) {
            if (a.mode != mode) continue;
            row.mean_macro_f1 += a.test.macro_f1;
            row.mean_balanced_accuracy += a.test.balanced_accuracy;
            ++n;
        }
        row.mean_macro_f1 /= static_cast<double>(n);
        row.mean_balanced_accuracy /= static_cast<double>(n);
        result.summary.push_back(row);
    }
    for (auto& row : result.summary) {
        row.rank = 1;
        for (const auto& other : result.summary) {
            if (other.mean_balanced_accuracy > row.mean_balanced_accuracy) ++row.rank;
        }
    }
    if (!out_dir.empty()) {
        std::ofstream summary(out_dir / "ablation_summary.csv", std::ios::trunc);
        summary << "arm,backbone,seeds,mean_test_macro_f1,mean_test_balanced_accuracy,rank\n";
        for (const auto& row : result.summary) {
            summary << fmt::format("{},{},{},{:.17g},{:.17g},{}\n", to_string(row.mode), backbone_name(cfg),
                                   cfg.ablation_seeds.size(), row.mean_macro_f1, row.mean_balanced_accuracy,
                                   row.rank);
        }
    }
    return result;
}

// -------------------------------------------------------------- report ----

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

std::string fixed(double v) { return fmt::format("{:.3f}", v); }

}  // namespace

std::string report(const fs::path& run_dir) {
    const fs::path summary_path = run_dir / "ablation_summary.csv";
    const fs::path arms_path = run_dir / "ablation.csv";
    const fs::path metrics_path = run_dir / "metrics.csv";
    std::string out;
    if (fs::exists(summary_path) && fs::exists(arms_path)) {
        const auto summary = read_csv(summary_path);
        const auto arms = read_csv(arms_path);
        // Mean image counts per arm over seeds.
        std::map<std::string, std::pair<double, double>> counts;
        std::map<std::string, int> seen;
        for (std::size_t i = 1; i < arms.size(); ++i) {
            auto& c = counts[arms[i][1]];
            c.first += std::stod(arms[i][3]);
            c.second += std::stod(arms[i][4]);
            ++seen[arms[i][1]];
        }
        out += fmt::format("# Ablation summary ({} seed(s))\n\n", summary.size() > 1 ? summary[1][2] : "0");
        out += "| Backbone | Loss mode | Unlabeled images | Labeled images | Macro F1 | Balanced accuracy | Rank |\n";
        out += "|---|---|---|---|---|---|---|\n";
        std::vector<std::pair<int, std::string>> ranking;
        for (std::size_t i = 1; i < summary.size(); ++i) {
            const auto& r = summary[i];
            const auto& c = counts[r[0]];
            const double n = std::max(1, seen[r[0]]);
            out += fmt::format("| {} | {} | {:.0f} | {:.0f} | {} | {} | {} |\n", r[1], r[0], c.first / n,
                               c.second / n, fixed(std::stod(r[3])), fixed(std::stod(r[4])), r[5]);
            ranking.emplace_back(std::stoi(r[5]), r[0]);
        }
        std::stable_sort(ranking.begin(), ranking.end());
        out += "\nRanking by mean test balanced accuracy: ";
        for (std::size_t i = 0; i < ranking.size(); ++i) out += (i ? " > " : "") + ranking[i].second;
        out += "\n";
        return out;
    }
    if (!fs::exists(metrics_path)) {
        throw std::runtime_error("no metrics.csv or ablation results in " + run_dir.string());
    }
    const auto rows = metrics::MetricsCsv::read(metrics_path);
    out += "# Run summary\n\n| Arm | Split | Epoch | TP | FP | TN | FN | Macro F1 | Balanced accuracy |\n";
    out += "|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : rows) {
        out += fmt::format("| {} | {} | {} | {} | {} | {} | {} | {} | {} |\n", r.arm, r.split, r.epoch, r.cm.tp,
                           r.cm.fp, r.cm.tn, r.cm.fn, fixed(r.macro_f1), fixed(r.balanced_accuracy));
    }
    return out;
}

}  // namespace semicon::pipeline
