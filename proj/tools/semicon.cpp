// semicon: data generation, pretraining, probing and ablation from one binary.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "semicon/config.hpp"
#include "semicon/datagen.hpp"
#include "semicon/pipeline.hpp"
#include "semicon/pseudolabel.hpp"

namespace fs = std::filesystem;
using namespace semicon;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool dry_run = false;
};

// Exclusive advisory lock on <dir>/.lock for the lifetime of the command.
class RunLock {
public:
    explicit RunLock(const fs::path& dir) {
        fs::create_directories(dir);
        const auto path = dir / ".lock";
        fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
        if (fd_ < 0) throw std::runtime_error("cannot create lock file " + path.string());
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            throw std::runtime_error("run directory " + dir.string() + " is in use by another process");
        }
    }
    ~RunLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    int fd_ = -1;
};

void add_common(CLI::App* app, Common& c, bool with_out = true) {
    app->add_option("-c,--config", c.config, "JSON run configuration");
    app->add_option("-s,--set", c.overrides, "override a config key, e.g. optimizer.learning_rate=0.05");
    app->add_option("--seed", c.seed, "seed for this command");
    if (with_out) app->add_option("-o,--out", c.out, "output directory");
    app->add_flag("--dry-run", c.dry_run, "validate and print the plan without writing anything");
}

RunConfig load_config(const Common& c, const fs::path& fallback = {}) {
    fs::path file = c.config;
    if (!file.empty() && !fs::exists(file)) throw UsageError("config file not found: " + file.string());
    if (file.empty()) file = fallback;
    return resolve_config(file, c.overrides);
}

fs::path output_dir(const Common& c, const std::string& verb, const RunConfig& cfg) {
    if (!c.out.empty()) return c.out;
    if (!cfg.output_dir.empty()) return cfg.output_dir;
    const char* root = std::getenv("SEMICON_OUTPUT_ROOT");
    return fs::path(root && *root ? root : "runs") / fmt::format("{}-{}", verb, model::hash_hex(config_hash(cfg)).substr(0, 8));
}

void write_config(const fs::path& dir, const RunConfig& cfg) {
    std::ofstream out(dir / "config.json", std::ios::trunc);
    out << to_json(cfg).dump(2) << '\n';
}

void print_plan(const std::string& verb, const fs::path& out, const RunConfig& cfg, const std::string& extra) {
    std::cout << "plan: " << verb << "\n"
              << "output: " << out.string() << "\n"
              << "config hash: " << model::hash_hex(config_hash(cfg)) << "\n";
    if (!extra.empty()) std::cout << extra << "\n";
    std::cout << "resolved config:\n" << to_json(cfg).dump(2) << "\n";
}

std::vector<const data::TileDataset*> parts_of(const data::SplitResult& s) {
    return {&s.train, &s.val, &s.test, &s.unlabeled};
}

// ---------------------------------------------------------------- verbs ----

int cmd_gen_data(const Common& c) {
    RunConfig cfg = load_config(c);
    if (c.seed) cfg.data.seed = *c.seed;
    const fs::path out = output_dir(c, "gen-data", cfg);
    if (c.dry_run) {
        print_plan("gen-data", out, cfg,
                   fmt::format("canvas {0}x{0}, tile {1}, target positive ratio {2}", cfg.data.synth.canvas,
                               cfg.data.synth.tile, cfg.data.synth.positive_ratio));
        return 0;
    }
    RunLock lock(out);
    const auto region = data::generate_synthetic_region(cfg.data.synth, cfg.data.seed);
    data::TilingOptions opt{cfg.data.synth.tile, cfg.data.label_threshold, cfg.data.block_side};
    const auto tiles = data::tile_region(region.raster, region.mask, opt);
    const data::TileDataset* parts[] = {&tiles};
    data::write_dataset(out, parts);
    std::ofstream log(out / "structures.csv", std::ios::trunc);
    log << "structure,x0,y0,x1,y1,pixels,tiles\n";
    for (std::size_t i = 0; i < region.placements.size(); ++i) {
        const auto& p = region.placements[i];
        std::string touched;
        for (std::size_t t = 0; t < p.tiles.size(); ++t) touched += (t ? ";" : "") + std::to_string(p.tiles[t]);
        log << fmt::format("{},{},{},{},{},{},{}\n", i, p.x0, p.y0, p.x1, p.y1, p.pixels, touched);
    }
    write_config(out, cfg);
    spdlog::info("wrote {} tiles ({} positive) to {}", tiles.size(), tiles.count(data::Label::Positive), out.string());
    return 0;
}

int cmd_split(const Common& c, const std::string& data_dir) {
    RunConfig cfg = load_config(c);
    if (c.seed) cfg.data.seed = *c.seed;
    const fs::path out = output_dir(c, "split", cfg);
    if (c.dry_run) {
        print_plan("split", out, cfg, "input: " + data_dir);
        return 0;
    }
    const auto entries = data::load_entries(data_dir);
    const auto all = data::unsplit_dataset(entries);
    data::SplitConfig split = cfg.data.split;
    split.seed = cfg.data.seed;
    const auto result = data::split_dataset(all, split);
    RunLock lock(out);
    data::write_dataset(out, parts_of(result));
    write_config(out, cfg);
    spdlog::info("train {} / val {} / test {} / unlabeled {}", result.train.size(), result.val.size(),
                 result.test.size(), result.unlabeled.size());
    return 0;
}

int cmd_upsample(const Common& c, const std::string& data_dir, std::optional<int> factor) {
    RunConfig cfg = load_config(c);
    if (factor) {
        cfg.data.upsample_balance = false;
        cfg.data.upsample_factor = *factor;
        cfg.validate();
    }
    const fs::path out = output_dir(c, "upsample", cfg);
    if (c.dry_run) {
        print_plan("upsample", out, cfg, "input: " + data_dir);
        return 0;
    }
    auto groups = data::group_by_split(data::load_entries(data_dir));
    groups.train = pipeline::upsample_train(cfg, groups.train);
    RunLock lock(out);
    data::write_dataset(out, parts_of(groups));
    write_config(out, cfg);
    spdlog::info("train now holds {} positive entries", groups.train.count(data::Label::Positive));
    return 0;
}

int cmd_pretrain(const Common& c, const std::string& data_dir, bool resume) {
    RunConfig cfg = load_config(c);
    if (c.seed) cfg.seed = *c.seed;
    if (!data_dir.empty()) cfg.data.root = data_dir;
    cfg.validate();
    const fs::path out = output_dir(c, "pretrain", cfg);
    if (c.dry_run) {
        print_plan("pretrain", out, cfg,
                   fmt::format("loss mode {}, {} epochs, unlabeled batch {}, positive batch {}",
                               to_string(cfg.loss_mode), cfg.epochs, cfg.batch_unlabeled, cfg.batch_labeled));
        return 0;
    }
    RunLock lock(out);
    const auto data = pipeline::prepare_data(cfg);
    if (cfg.loss_mode == LossMode::SupervisedBaseline) {
        auto base = pipeline::train_supervised_baseline(cfg, data);
        write_config(out, cfg);
        auto ckpt = model::capture(*base.net, {}, {}, cfg.baseline.epochs, config_hash(cfg));
        fs::create_directories(out / "checkpoints");
        model::save_checkpoint(out / "checkpoints" / "final.ckpt", ckpt);
        std::ofstream(out / "probe.json") << base.head.to_json().dump(2) << '\n';
        metrics::MetricsCsv(out / "metrics.csv", false).append(base.head.validation);
        return 0;
    }
    const auto result = pipeline::pretrain(cfg, data, {out, resume, {}});
    spdlog::info("{} steps over {} epochs ({} skipped)", result.steps, result.epochs_completed, result.skipped_steps);
    return 0;
}

RunConfig run_config(const Common& c, const fs::path& run) {
    if (!fs::exists(run / "config.json")) throw UsageError(run.string() + " holds no config.json");
    RunConfig cfg = load_config(c, run / "config.json");
    if (c.seed) cfg.seed = *c.seed;
    return cfg;
}

int cmd_probe(const Common& c, const fs::path& run) {
    RunConfig cfg = run_config(c, run);
    if (c.dry_run) {
        print_plan("probe", run, cfg, fmt::format("{} probe epochs on {}", cfg.probe.epochs, (run / "checkpoints/final.ckpt").string()));
        return 0;
    }
    RunLock lock(run);
    const auto ckpt = model::load_checkpoint(run / "checkpoints" / "final.ckpt", config_hash(cfg));
    model::SimSiamNet net(cfg.model, cfg.seed);
    model::restore(ckpt, net, nullptr);
    const auto data = pipeline::prepare_data(cfg);
    const auto head = pipeline::linear_probe(net, data.train_upsampled, data.splits.val, cfg, to_string(cfg.loss_mode));
    std::ofstream(run / "probe.json") << head.to_json().dump(2) << '\n';
    metrics::MetricsCsv(run / "metrics.csv", false).append(head.validation);
    std::cout << metrics::MetricsCsv::header() << '\n' << metrics::MetricsCsv::format_row(head.validation) << '\n';
    return 0;
}

int cmd_eval(const Common& c, const fs::path& run, const std::string& split) {
    RunConfig cfg = run_config(c, run);
    const auto which = data::parse_split(split);
    if (which == data::Split::Unlabeled || which == data::Split::Unsplit) {
        throw UsageError("eval needs a labeled split (train, val, test)");
    }
    if (c.dry_run) {
        print_plan("eval", run, cfg, "split: " + split);
        return 0;
    }
    RunLock lock(run);
    std::ifstream probe_in(run / "probe.json");
    if (!probe_in) throw std::runtime_error(run.string() + " has no probe.json; run `probe` first");
    const auto head = pipeline::LinearHead::from_json(nlohmann::json::parse(probe_in));
    const auto ckpt = model::load_checkpoint(run / "checkpoints" / "final.ckpt", config_hash(cfg));
    model::SimSiamNet net(cfg.model, cfg.seed);
    model::restore(ckpt, net, nullptr);
    const auto data = pipeline::prepare_data(cfg);
    const data::TileDataset& ds = which == data::Split::Train ? data.splits.train
                                  : which == data::Split::Val ? data.splits.val
                                                              : data.splits.test;
    const auto rep = pipeline::evaluate(net, head, ds, cfg.data.resize, to_string(cfg.loss_mode), head.best_epoch);
    metrics::MetricsCsv(run / "metrics.csv", true).append(rep);
    std::cout << metrics::MetricsCsv::header() << '\n' << metrics::MetricsCsv::format_row(rep) << '\n';
    return 0;
}

int cmd_ablate(const Common& c) {
    RunConfig cfg = load_config(c);
    if (c.seed) cfg.ablation_seeds = {*c.seed};
    const fs::path out = output_dir(c, "ablate", cfg);
    if (c.dry_run) {
        std::string arms;
        for (auto m : pipeline::kArms) arms += (arms.empty() ? "" : ", ") + to_string(m);
        print_plan("ablate", out, cfg, fmt::format("arms: {}; seeds: {}; {} pretrain epochs", arms,
                                                   fmt::join(cfg.ablation_seeds, ","), cfg.epochs));
        return 0;
    }
    RunLock lock(out);
    pipeline::run_ablation(cfg, out);
    std::cout << pipeline::report(out);
    return 0;
}

int cmd_purity(std::size_t pool, std::size_t positives, std::size_t draw) {
    const auto est = pseudo::purity_exact(pool, positives, draw);
    std::cout << "n,p_exact,p_at_most\n";
    for (std::size_t n = 0; n < est.pmf.size(); ++n) {
        std::cout << fmt::format("{},{:.6f},{:.6f}\n", n, est.pmf[n], est.cumulative[n]);
    }
    std::cout << fmt::format("≤1,{:.3f}\n", est.at_most(1));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semi-supervised contrastive learning for imbalanced tile collections"};
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error")->capture_default_str();

    Common common;
    std::string data_dir;
    std::string run_dir;
    std::string split = "test";
    std::optional<int> factor;
    bool resume = false;
    std::size_t pool = 0, positives = 0, draw = 0;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic tile dataset");
    add_common(gen, common);
    auto* spl = app.add_subcommand("split", "block-level train/val/test/unlabeled split");
    add_common(spl, common);
    spl->add_option("-d,--data", data_dir, "unsplit dataset directory")->required();
    auto* ups = app.add_subcommand("upsample", "replicate train positives");
    add_common(ups, common);
    ups->add_option("-d,--data", data_dir, "split dataset directory")->required();
    ups->add_option("--factor", factor, "replication factor (default: balance classes)");
    auto* pre = app.add_subcommand("pretrain", "contrastive pretraining");
    add_common(pre, common);
    pre->add_option("-d,--data", data_dir, "split dataset directory (default: generate in memory)");
    pre->add_flag("--resume", resume, "continue from the run directory's last checkpoint");
    auto* prb = app.add_subcommand("probe", "linear probe on a pretrained run");
    add_common(prb, common, false);
    prb->add_option("-r,--run", run_dir, "run directory")->required();
    auto* evl = app.add_subcommand("eval", "evaluate a probed run on a split");
    add_common(evl, common, false);
    evl->add_option("-r,--run", run_dir, "run directory")->required();
    evl->add_option("--split", split, "train, val or test")->capture_default_str();
    auto* abl = app.add_subcommand("ablate", "run all loss-mode arms and the supervised baseline");
    add_common(abl, common);
    auto* pur = app.add_subcommand("purity", "hypergeometric purity table");
    pur->add_option("--pool", pool, "pool size N")->required();
    pur->add_option("--positives", positives, "positives K")->required();
    pur->add_option("--draw", draw, "draw size m")->required();
    auto* rep = app.add_subcommand("report", "markdown summary of a run directory");
    rep->add_option("-r,--run", run_dir, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    spdlog::set_level(spdlog::level::from_str(log_level));
    spdlog::set_pattern("[%l] %v");

    try {
        if (*gen) return cmd_gen_data(common);
        if (*spl) return cmd_split(common, data_dir);
        if (*ups) return cmd_upsample(common, data_dir, factor);
        if (*pre) return cmd_pretrain(common, data_dir, resume);
        if (*prb) return cmd_probe(common, run_dir);
        if (*evl) return cmd_eval(common, run_dir, split);
        if (*abl) return cmd_ablate(common);
        if (*pur) return cmd_purity(pool, positives, draw);
        if (*rep) {
            std::cout << pipeline::report(run_dir);
            return 0;
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
