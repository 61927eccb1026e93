#include "semicon/config.hpp"

#include <fstream>
#include <stdexcept>

namespace semicon {
namespace {

using nlohmann::json;

bool compatible(const json& want, const json& got) {
    if (want.is_number()) return got.is_number();
    if (want.is_array()) return got.is_array();
    return want.type() == got.type();
}

// Recursively overlays `patch` onto `base`; every key in `patch` must already
// exist in `base` with a compatible type.
void merge_strict(json& base, const json& patch, const std::string& prefix) {
    if (!patch.is_object()) throw std::invalid_argument("config section '" + prefix + "' must be an object");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) throw std::invalid_argument("unknown config key '" + key + "'");
        json& slot = base[it.key()];
        if (slot.is_object()) {
            merge_strict(slot, it.value(), key);
        } else if (!compatible(slot, it.value())) {
            throw std::invalid_argument("config key '" + key + "' expects a " + slot.type_name() +
                                        ", got " + it.value().type_name());
        } else {
            slot = it.value();
        }
    }
}

std::string reduction_name(loss::Reduction r) { return r == loss::Reduction::Sum ? "sum" : "mean"; }

loss::Reduction parse_reduction(const std::string& s) {
    if (s == "sum") return loss::Reduction::Sum;
    if (s == "mean") return loss::Reduction::Mean;
    throw std::invalid_argument("unknown supcon reduction '" + s + "' (sum, mean)");
}

json sgd_json(const optim::SgdConfig& o) {
    return {{"learning_rate", o.learning_rate}, {"weight_decay", o.weight_decay}, {"momentum", o.momentum}};
}

optim::SgdConfig sgd_from(const json& j) {
    return {j.at("learning_rate").get<double>(), j.at("weight_decay").get<double>(),
            j.at("momentum").get<double>()};
}

}  // namespace

std::string to_string(LossMode m) {
    switch (m) {
        case LossMode::Loss1: return "loss1";
        case LossMode::Loss2: return "loss2";
        case LossMode::Loss12: return "loss1+2";
        case LossMode::SupervisedBaseline: return "supervised-baseline";
    }
    return "?";
}

LossMode parse_loss_mode(const std::string& s) {
    if (s == "loss1") return LossMode::Loss1;
    if (s == "loss2") return LossMode::Loss2;
    if (s == "loss1+2") return LossMode::Loss12;
    if (s == "supervised-baseline") return LossMode::SupervisedBaseline;
    throw std::invalid_argument("unknown loss mode '" + s + "' (loss1, loss2, loss1+2, supervised-baseline)");
}

void RunConfig::validate() const {
    data.synth.validate();
    model.validate();
    augment.validate();
    optimizer.validate();
    baseline.optimizer.validate();
    if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
    if (batch_unlabeled < 2 || batch_labeled < 1) throw std::invalid_argument("batch sizes must be positive");
    if (subgroup_size < 2) throw std::invalid_argument("subgroup size k must be at least 2");
    if ((loss_mode == LossMode::Loss2 || loss_mode == LossMode::Loss12) && batch_unlabeled < subgroup_size) {
        throw std::invalid_argument("unlabeled batch must be at least k when the supervised loss is active");
    }
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    if (data.resize != model.input_side) {
        throw std::invalid_argument("data.resize must equal model.input_side");
    }
    if (data.block_side < 1 || data.label_threshold < 1) {
        throw std::invalid_argument("block side and label threshold must be positive");
    }
    if (!data.upsample_balance && data.upsample_factor < 1) {
        throw std::invalid_argument("upsample factor must be at least 1");
    }
    if (probe.epochs < 1 || probe.batch < 1 || !(probe.learning_rate > 0.0)) {
        throw std::invalid_argument("probe epochs, batch and learning rate must be positive");
    }
    if (baseline.epochs < 1 || baseline.batch < 2) {
        throw std::invalid_argument("baseline epochs must be positive and batch at least 2");
    }
    if (ablation_seeds.empty()) throw std::invalid_argument("ablation needs at least one seed");
}

nlohmann::json to_json(const RunConfig& c) {
    const auto& s = c.data.synth;
    const auto& sp = c.data.split;
    const auto& a = c.augment;
    return {
        {"data",
         {{"root", c.data.root},
          {"synth",
           {{"canvas", s.canvas},
            {"tile", s.tile},
            {"positive_ratio", s.positive_ratio},
            {"structure_min", s.structure_min},
            {"structure_max", s.structure_max},
            {"texture_seed", s.texture_seed},
            {"octaves", s.octaves},
            {"noise_amplitude", s.noise_amplitude},
            {"rock_density", s.rock_density}}},
          {"label_threshold", c.data.label_threshold},
          {"block_side", c.data.block_side},
          {"split",
           {{"train", sp.train},
            {"val", sp.val},
            {"test", sp.test},
            {"unlabeled_fraction", sp.unlabeled_fraction},
            {"enrich_positive_blocks", sp.enrich_positive_blocks},
            {"stratify", sp.stratify}}},
          {"resize", c.data.resize},
          {"upsample", c.data.upsample_balance ? "balance" : "factor"},
          {"upsample_factor", c.data.upsample_factor},
          {"seed", c.data.seed}}},
        {"model",
         {{"architecture", model::to_string(c.model.architecture)},
          {"feature_dim", c.model.feature_dim},
          {"input_side", c.model.input_side},
          {"base_width", c.model.base_width},
          {"feature_tap", model::to_string(c.feature_tap)}}},
        {"augment",
         {{"crop_scale_min", a.crop_scale_min},
          {"crop_scale_max", a.crop_scale_max},
          {"flip_probability", a.flip_probability},
          {"jitter_probability", a.jitter_probability},
          {"brightness", a.brightness},
          {"contrast", a.contrast},
          {"saturation", a.saturation},
          {"grayscale_probability", a.grayscale_probability},
          {"blur_probability", a.blur_probability},
          {"blur_sigma_min", a.blur_sigma_min},
          {"blur_sigma_max", a.blur_sigma_max}}},
        {"optimizer", sgd_json(c.optimizer)},
        {"batch", {{"unlabeled", c.batch_unlabeled}, {"labeled", c.batch_labeled}}},
        {"epochs", c.epochs},
        {"loss_mode", to_string(c.loss_mode)},
        {"seed", c.seed},
        {"temperature", c.temperature},
        {"subgroup_size", c.subgroup_size},
        {"supcon_reduction", reduction_name(c.supcon_reduction)},
        {"augment_positives", c.augment_positives},
        {"simsiam_include_positives", c.simsiam_include_positives},
        {"separate_positive_pass", c.separate_positive_pass},
        {"probe",
         {{"epochs", c.probe.epochs},
          {"batch", c.probe.batch},
          {"learning_rate", c.probe.learning_rate},
          {"momentum", c.probe.momentum},
          {"weight_decay", c.probe.weight_decay}}},
        {"baseline",
         {{"epochs", c.baseline.epochs}, {"batch", c.baseline.batch}, {"optimizer", sgd_json(c.baseline.optimizer)}}},
        {"ablation", {{"seeds", c.ablation_seeds}}},
        {"output_dir", c.output_dir},
    };
}

RunConfig from_json(const nlohmann::json& patch) {
    json j = to_json(RunConfig{});
    merge_strict(j, patch, "");

    RunConfig c;
    const json& d = j.at("data");
    c.data.root = d.at("root").get<std::string>();
    const json& s = d.at("synth");
    c.data.synth.canvas = s.at("canvas").get<int>();
    c.data.synth.tile = s.at("tile").get<int>();
    c.data.synth.positive_ratio = s.at("positive_ratio").get<double>();
    c.data.synth.structure_min = s.at("structure_min").get<int>();
    c.data.synth.structure_max = s.at("structure_max").get<int>();
    c.data.synth.texture_seed = s.at("texture_seed").get<std::uint64_t>();
    c.data.synth.octaves = s.at("octaves").get<int>();
    c.data.synth.noise_amplitude = s.at("noise_amplitude").get<double>();
    c.data.synth.rock_density = s.at("rock_density").get<double>();
    c.data.label_threshold = d.at("label_threshold").get<int>();
    c.data.block_side = d.at("block_side").get<int>();
    const json& sp = d.at("split");
    c.data.split.train = sp.at("train").get<double>();
    c.data.split.val = sp.at("val").get<double>();
    c.data.split.test = sp.at("test").get<double>();
    c.data.split.unlabeled_fraction = sp.at("unlabeled_fraction").get<double>();
    c.data.split.enrich_positive_blocks = sp.at("enrich_positive_blocks").get<int>();
    c.data.split.stratify = sp.at("stratify").get<bool>();
    c.data.resize = d.at("resize").get<int>();
    const auto upsample = d.at("upsample").get<std::string>();
    if (upsample != "balance" && upsample != "factor") {
        throw std::invalid_argument("data.upsample must be 'balance' or 'factor'");
    }
    c.data.upsample_balance = upsample == "balance";
    c.data.upsample_factor = d.at("upsample_factor").get<int>();
    c.data.seed = d.at("seed").get<std::uint64_t>();
    c.data.split.seed = c.data.seed;

    const json& m = j.at("model");
    c.model.architecture = model::parse_architecture(m.at("architecture").get<std::string>());
    c.model.feature_dim = m.at("feature_dim").get<int>();
    c.model.input_side = m.at("input_side").get<int>();
    c.model.base_width = m.at("base_width").get<int>();
    c.feature_tap = model::parse_feature_tap(m.at("feature_tap").get<std::string>());

    const json& a = j.at("augment");
    c.augment.crop_scale_min = a.at("crop_scale_min").get<double>();
    c.augment.crop_scale_max = a.at("crop_scale_max").get<double>();
    c.augment.flip_probability = a.at("flip_probability").get<double>();
    c.augment.jitter_probability = a.at("jitter_probability").get<double>();
    c.augment.brightness = a.at("brightness").get<double>();
    c.augment.contrast = a.at("contrast").get<double>();
    c.augment.saturation = a.at("saturation").get<double>();
    c.augment.grayscale_probability = a.at("grayscale_probability").get<double>();
    c.augment.blur_probability = a.at("blur_probability").get<double>();
    c.augment.blur_sigma_min = a.at("blur_sigma_min").get<double>();
    c.augment.blur_sigma_max = a.at("blur_sigma_max").get<double>();

    c.optimizer = sgd_from(j.at("optimizer"));
    c.batch_unlabeled = j.at("batch").at("unlabeled").get<int>();
    c.batch_labeled = j.at("batch").at("labeled").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.loss_mode = parse_loss_mode(j.at("loss_mode").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    c.temperature = j.at("temperature").get<double>();
    c.subgroup_size = j.at("subgroup_size").get<int>();
    c.supcon_reduction = parse_reduction(j.at("supcon_reduction").get<std::string>());
    c.augment_positives = j.at("augment_positives").get<bool>();
    c.simsiam_include_positives = j.at("simsiam_include_positives").get<bool>();
    c.separate_positive_pass = j.at("separate_positive_pass").get<bool>();

    const json& p = j.at("probe");
    c.probe.epochs = p.at("epochs").get<int>();
    c.probe.batch = p.at("batch").get<int>();
    c.probe.learning_rate = p.at("learning_rate").get<double>();
    c.probe.momentum = p.at("momentum").get<double>();
    c.probe.weight_decay = p.at("weight_decay").get<double>();

    const json& b = j.at("baseline");
    c.baseline.epochs = b.at("epochs").get<int>();
    c.baseline.batch = b.at("batch").get<int>();
    c.baseline.optimizer = sgd_from(b.at("optimizer"));

    c.ablation_seeds = j.at("ablation").at("seeds").get<std::vector<std::uint64_t>>();
    c.output_dir = j.at("output_dir").get<std::string>();
    return c;
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw std::invalid_argument("override '" + assignment + "' must look like key=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);

    json* slot = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!slot->is_object() || !slot->contains(part)) {
            throw std::invalid_argument("override names unknown config key '" + key + "'");
        }
        slot = &(*slot)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    if (slot->is_object()) throw std::invalid_argument("override key '" + key + "' names a section");

    json value;
    if (slot->is_string()) {
        value = text;
    } else {
        value = json::parse(text, nullptr, false);
        if (value.is_discarded() || !compatible(*slot, value)) {
            throw std::invalid_argument("override '" + key + "' expects a " + std::string(slot->type_name()) +
                                        ", got '" + text + "'");
        }
    }
    *slot = std::move(value);
}

RunConfig resolve_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
    json j = to_json(RunConfig{});
    if (!file.empty()) {
        std::ifstream in(file);
        if (!in) throw std::runtime_error("cannot read config file " + file.string());
        json loaded;
        try {
            loaded = json::parse(in);
        } catch (const json::parse_error& e) {
            throw std::invalid_argument("config file " + file.string() + " is not valid JSON: " + e.what());
        }
        merge_strict(j, loaded, "");
    }
    for (const auto& o : overrides) apply_override(j, o);
    RunConfig cfg = from_json(j);
    cfg.validate();
    return cfg;
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t config_hash(const RunConfig& cfg) {
    json j = to_json(cfg);
    for (const char* key : {"epochs", "output_dir", "probe", "ablation", "baseline"}) j.erase(key);
    const std::string text = j.dump();
    return fnv1a(text.data(), text.size());
}

}  // namespace semicon
