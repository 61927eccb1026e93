#include "semicon/model.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>

#include "semicon/rng.hpp"

namespace semicon::model {
namespace {

constexpr char kMagic[8] = {'S', 'E', 'M', 'I', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

void collect(nn::Layer& layer, std::vector<nn::Parameter*>& out) { layer.collect_parameters(out); }

template <typename T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint truncated");
    return v;
}

void put_tensors(std::ostream& out, const std::vector<Tensor>& ts) {
    put<std::uint64_t>(out, ts.size());
    for (const auto& t : ts) {
        put<std::int32_t>(out, t.c);
        put<std::int32_t>(out, t.n);
        put<std::int32_t>(out, t.h);
        put<std::int32_t>(out, t.w);
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
}

std::vector<Tensor> get_tensors(std::istream& in) {
    const auto count = get<std::uint64_t>(in);
    if (count > (1u << 20)) throw std::runtime_error("checkpoint corrupt: tensor count");
    std::vector<Tensor> ts;
    ts.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const int c = get<std::int32_t>(in);
        const int n = get<std::int32_t>(in);
        const int h = get<std::int32_t>(in);
        const int w = get<std::int32_t>(in);
        if (c < 0 || n < 0 || h < 0 || w < 0) throw std::runtime_error("checkpoint corrupt: shape");
        Tensor t(c, n, h, w);
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.size() * sizeof(float)));
        if (!in) throw std::runtime_error("checkpoint truncated");
        ts.push_back(std::move(t));
    }
    return ts;
}

void copy_checked(const Tensor& src, Tensor& dst, const std::string& what) {
    if (!src.same_shape(dst)) {
        throw std::runtime_error("checkpoint mismatch for " + what + ": stored " + src.shape_string() +
                                 ", model " + dst.shape_string());
    }
    dst.data = src.data;
}

}  // namespace

std::string to_string(Architecture a) {
    return a == Architecture::SmallConv ? "small-conv" : "resnet-like";
}

Architecture parse_architecture(const std::string& s) {
    if (s == "small-conv") return Architecture::SmallConv;
    if (s == "resnet-like") return Architecture::ResNetLike;
    throw std::invalid_argument("unknown architecture '" + s + "' (small-conv, resnet-like)");
}

std::string to_string(FeatureTap t) { return t == FeatureTap::Projector ? "projector" : "encoder"; }

FeatureTap parse_feature_tap(const std::string& s) {
    if (s == "projector") return FeatureTap::Projector;
    if (s == "encoder") return FeatureTap::Encoder;
    throw std::invalid_argument("unknown feature tap '" + s + "' (projector, encoder)");
}

void EncoderConfig::validate() const {
    if (feature_dim < 8) throw std::invalid_argument("feature dimension d must be at least 8");
    if (input_side < 16) throw std::invalid_argument("input side must be at least 16 pixels");
    if (base_width < 1) throw std::invalid_argument("base width must be positive");
}

Matrix to_matrix(const Tensor& t) {
    if (t.h != 1 || t.w != 1) throw std::invalid_argument("to_matrix: expected (d,N,1,1), got " + t.shape_string());
    Matrix m(t.n, t.c);
    for (int c = 0; c < t.c; ++c) {
        const float* row = t.channel(c);
        for (int i = 0; i < t.n; ++i) m(i, c) = row[i];
    }
    return m;
}

Tensor from_matrix(const Matrix& m) {
    Tensor t(static_cast<int>(m.cols()), static_cast<int>(m.rows()));
    for (int c = 0; c < t.c; ++c) {
        float* row = t.channel(c);
        for (int i = 0; i < t.n; ++i) row[i] = static_cast<float>(m(i, c));
    }
    return t;
}

SimSiamNet::SimSiamNet(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = make_rng(seed, streams::kInit);
    const int w = cfg_.base_width;
    const int d = cfg_.feature_dim;
    using std::make_unique;

    if (cfg_.architecture == Architecture::SmallConv) {
        // Stride-2 stem, then three conv-BN-ReLU-pool blocks.
        encoder_.add(make_unique<nn::Conv2d>("encoder.stem", 3, w, 3, 2, 1, false, rng));
        encoder_.add(make_unique<nn::BatchNorm>("encoder.stem_bn", w));
        encoder_.add(make_unique<nn::ReLU>());
        const int widths[] = {w, 2 * w, 4 * w, d};
        for (int b = 1; b <= 3; ++b) {
            const std::string name = fmt::format("encoder.block{}", b);
            encoder_.add(make_unique<nn::Conv2d>(name + ".conv", widths[b - 1], widths[b], 3, 1, 1,
                                                 false, rng));
            encoder_.add(make_unique<nn::BatchNorm>(name + ".bn", widths[b]));
            encoder_.add(make_unique<nn::ReLU>());
            encoder_.add(make_unique<nn::MaxPool2>());
        }
    } else {
        encoder_.add(make_unique<nn::Conv2d>("encoder.stem", 3, w, 3, 1, 1, false, rng));
        encoder_.add(make_unique<nn::BatchNorm>("encoder.stem_bn", w));
        encoder_.add(make_unique<nn::ReLU>());
        encoder_.add(make_unique<nn::ResidualBlock>("encoder.layer1", w, w, 1, rng));
        encoder_.add(make_unique<nn::ResidualBlock>("encoder.layer2", w, 2 * w, 2, rng));
        encoder_.add(make_unique<nn::ResidualBlock>("encoder.layer3", 2 * w, 4 * w, 2, rng));
        encoder_.add(make_unique<nn::ResidualBlock>("encoder.layer4", 4 * w, d, 2, rng));
    }
    encoder_.add(make_unique<nn::GlobalAvgPool>());

    projector_.add(make_unique<nn::Linear>("projector.fc1", d, d, false, rng));
    projector_.add(make_unique<nn::BatchNorm>("projector.bn1", d));
    projector_.add(make_unique<nn::ReLU>());
    projector_.add(make_unique<nn::Linear>("projector.fc2", d, d, false, rng));
    projector_.add(make_unique<nn::BatchNorm>("projector.bn2", d));
    projector_.add(make_unique<nn::ReLU>());
    projector_.add(make_unique<nn::Linear>("projector.fc3", d, d, false, rng));
    projector_.add(make_unique<nn::BatchNorm>("projector.bn3", d, false));

    const int hidden = d / 4;
    predictor_.add(make_unique<nn::Linear>("predictor.fc1", d, hidden, false, rng));
    predictor_.add(make_unique<nn::BatchNorm>("predictor.bn1", hidden));
    predictor_.add(make_unique<nn::ReLU>());
    predictor_.add(make_unique<nn::Linear>("predictor.fc2", hidden, d, true, rng));
}

Pass SimSiamNet::encode(const Tensor& images, nn::Mode mode) {
    if (images.c != 3 || images.h != cfg_.input_side || images.w != cfg_.input_side) {
        throw std::invalid_argument(fmt::format("model expects (3,N,{0},{0}) images, got {1}",
                                                cfg_.input_side, images.shape_string()));
    }
    Pass pass;
    pass.h = encoder_.forward(images, pass.encoder, mode);
    return pass;
}

Pass SimSiamNet::forward(const Tensor& images, nn::Mode mode, bool with_predictor) {
    Pass pass = encode(images, mode);
    pass.z = projector_.forward(pass.h, pass.projector, mode);
    if (with_predictor) pass.p = predictor_.forward(pass.z, pass.predictor, mode);
    return pass;
}

void SimSiamNet::backward(const Pass& pass, const Tensor* dp, const Tensor* dz, const Tensor* dh) {
    if (!dp && !dz) {
        if (dh) encoder_.backward(*dh, pass.encoder);
        return;
    }
    Tensor grad_z;
    if (dp) {
        if (pass.p.size() == 0) throw std::logic_error("backward through a skipped predictor");
        grad_z = predictor_.backward(*dp, pass.predictor);
        if (dz) add_inplace(grad_z, *dz);
    } else {
        grad_z = *dz;
    }
    Tensor grad_h = projector_.backward(grad_z, pass.projector);
    if (dh) add_inplace(grad_h, *dh);
    encoder_.backward(grad_h, pass.encoder);
}

void SimSiamNet::backward_encoder(const Pass& pass, const Tensor& dh) {
    encoder_.backward(dh, pass.encoder);
}

ViewEmbeddings SimSiamNet::forward_views(const Tensor& view1, const Tensor& view2, nn::Mode mode) {
    if (view1.n != view2.n) throw std::invalid_argument("forward_views: view batch sizes differ");
    const Pass a = forward(view1, mode);
    const Pass b = forward(view2, mode);
    ViewEmbeddings e{to_matrix(a.z), to_matrix(b.z), to_matrix(a.p), to_matrix(b.p)};
    e.validate();
    return e;
}

FeatureBatch SimSiamNet::encode_features(const Tensor& images, FeatureTap tap, nn::Mode mode) {
    const Pass pass = forward(images, mode, false);
    return make_feature_batch(to_matrix(tap == FeatureTap::Projector ? pass.z : pass.h));
}

std::vector<nn::Parameter*> SimSiamNet::parameters() {
    std::vector<nn::Parameter*> out;
    collect(encoder_, out);
    collect(projector_, out);
    collect(predictor_, out);
    return out;
}

std::vector<nn::Parameter*> SimSiamNet::encoder_parameters() {
    std::vector<nn::Parameter*> out;
    collect(encoder_, out);
    return out;
}

std::vector<nn::Parameter*> SimSiamNet::projector_parameters() {
    std::vector<nn::Parameter*> out;
    collect(projector_, out);
    return out;
}

std::vector<nn::Parameter*> SimSiamNet::predictor_parameters() {
    std::vector<nn::Parameter*> out;
    collect(predictor_, out);
    return out;
}

std::vector<nn::Buffer> SimSiamNet::buffers() {
    std::vector<nn::Buffer> out;
    encoder_.collect_buffers(out);
    projector_.collect_buffers(out);
    predictor_.collect_buffers(out);
    return out;
}

std::string SimSiamNet::describe() const {
    return "encoder: " + encoder_.describe() + "\nprojector: " + projector_.describe() +
           "\npredictor: " + predictor_.describe();
}

Checkpoint capture(SimSiamNet& net, const std::vector<Tensor>& momentum,
                   const loss::UncertaintyWeights& weights, int epoch, std::uint64_t config_hash) {
    Checkpoint ckpt;
    ckpt.config_hash = config_hash;
    ckpt.epoch = epoch;
    ckpt.weights = weights;
    for (auto* p : net.parameters()) ckpt.parameters.push_back(p->value);
    for (const auto& b : net.buffers()) ckpt.buffers.push_back(*b.value);
    ckpt.momentum = momentum;
    return ckpt;
}

void restore(const Checkpoint& ckpt, SimSiamNet& net, std::vector<Tensor>* momentum) {
    auto params = net.parameters();
    auto bufs = net.buffers();
    if (ckpt.parameters.size() != params.size() || ckpt.buffers.size() != bufs.size()) {
        throw std::runtime_error("checkpoint does not match the model architecture");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        copy_checked(ckpt.parameters[i], params[i]->value, params[i]->name);
    }
    for (std::size_t i = 0; i < bufs.size(); ++i) copy_checked(ckpt.buffers[i], *bufs[i].value, bufs[i].name);
    if (momentum) {
        if (momentum->size() != ckpt.momentum.size()) {
            throw std::runtime_error("checkpoint optimizer state does not match");
        }
        for (std::size_t i = 0; i < momentum->size(); ++i) {
            copy_checked(ckpt.momentum[i], (*momentum)[i], "momentum");
        }
    }
}

std::string hash_hex(std::uint64_t h) { return fmt::format("{:016x}", h); }

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
        out.write(kMagic, sizeof(kMagic));
        put(out, kFormatVersion);
        put(out, ckpt.config_hash);
        put<std::int32_t>(out, ckpt.epoch);
        put(out, ckpt.weights.v1);
        put(out, ckpt.weights.v2);
        put_tensors(out, ckpt.parameters);
        put_tensors(out, ckpt.buffers);
        put_tensors(out, ckpt.momentum);
        if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);

    nlohmann::json meta = {{"epoch", ckpt.epoch},
                           {"config_hash", hash_hex(ckpt.config_hash)},
                           {"v1", ckpt.weights.v1},
                           {"v2", ckpt.weights.v2},
                           {"metrics", ckpt.metrics}};
    std::ofstream side(path.string() + ".json", std::ios::trunc);
    side << meta.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error(path.string() + " is not a checkpoint");
    }
    if (get<std::uint32_t>(in) != kFormatVersion) throw std::runtime_error("unsupported checkpoint version");
    Checkpoint ckpt;
    ckpt.config_hash = get<std::uint64_t>(in);
    if (expected_hash && *expected_hash != ckpt.config_hash) {
        throw std::runtime_error("config mismatch: checkpoint " + path.string() + " has config hash " +
                                 hash_hex(ckpt.config_hash) + ", run config has " +
                                 hash_hex(*expected_hash));
    }
    ckpt.epoch = get<std::int32_t>(in);
    ckpt.weights.v1 = get<double>(in);
    ckpt.weights.v2 = get<double>(in);
    ckpt.parameters = get_tensors(in);
    ckpt.buffers = get_tensors(in);
    ckpt.momentum = get_tensors(in);

    const auto sidecar = std::filesystem::path(path.string() + ".json");
    if (std::filesystem::exists(sidecar)) {
        std::ifstream side(sidecar);
        const auto meta = nlohmann::json::parse(side);
        if (meta.contains("metrics")) ckpt.metrics = meta["metrics"];
    }
    return ckpt;
}

}  // namespace semicon::model
