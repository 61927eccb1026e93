#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "semicon/config.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "semicon_cli_test";

struct Result {
    int status = -1;
    std::string out;
};

// Runs the CLI with stderr folded into the captured output.
Result run(const std::string& args) {
    const std::string cmd = fmt::format("'{}' --log-level warn {} 2>&1", SEMICON_CLI, args);
    Result r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
    const int raw = ::pclose(pipe);
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// relative path -> FNV-1a of the bytes, for every regular file under root
std::map<std::string, std::uint64_t> tree_hashes(const fs::path& root) {
    std::map<std::string, std::uint64_t> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        const std::string bytes = slurp(e.path());
        out[fs::relative(e.path(), root).string()] = semicon::fnv1a(bytes.data(), bytes.size());
    }
    return out;
}

fs::path tiny_config() {
    fs::create_directories(kRoot);
    const fs::path p = kRoot / "tiny.json";
    std::ofstream(p) << R"({
  "data": {"synth": {"canvas": 256, "tile": 16, "positive_ratio": 0.08, "structure_min": 5, "structure_max": 9},
           "label_threshold": 4, "block_side": 2,
           "split": {"train": 0.4, "val": 0.2, "test": 0.4, "unlabeled_fraction": 0.5,
                     "enrich_positive_blocks": 4, "stratify": true},
           "resize": 16, "seed": 3},
  "model": {"feature_dim": 16, "input_side": 16, "base_width": 4},
  "batch": {"unlabeled": 32, "labeled": 4},
  "subgroup_size": 8,
  "epochs": 1,
  "probe": {"epochs": 3},
  "baseline": {"epochs": 2, "batch": 16},
  "ablation": {"seeds": [0]}
})";
    return p;
}

struct Scratch {
    Scratch() { fs::remove_all(kRoot); }
    ~Scratch() { fs::remove_all(kRoot); }
};

}  // namespace

TEST_CASE("purity prints the hypergeometric table") {
    const auto r = run("purity --pool 505 --positives 5 --draw 16");
    CHECK(r.status == 0);
    CHECK(r.out.find("n,p_exact,p_at_most") != std::string::npos);
    CHECK(r.out.find("≤1,0.991") != std::string::npos);
    CHECK(r.out.find("0,0.85") != std::string::npos);
}

TEST_CASE("usage errors exit 2, invariant violations exit 1") {
    Scratch s;
    CHECK(run("").status == 2);
    CHECK(run("frobnicate").status == 2);
    CHECK(run("purity --pool 10").status == 2);
    const auto missing = run("gen-data --config /nonexistent/cfg.json -o " + (kRoot / "x").string());
    CHECK(missing.status == 2);
    CHECK(missing.out.find("config file not found") != std::string::npos);
    CHECK(missing.out.find("Usage") != std::string::npos);
    CHECK_FALSE(fs::exists(kRoot / "x"));

    const auto cfg = tiny_config().string();
    const auto bad_key = run(fmt::format("gen-data -c {} -s no.such.key=1 --dry-run", cfg));
    CHECK(bad_key.status == 1);
    CHECK(bad_key.out.find("no.such.key") != std::string::npos);
    const auto bad_value = run(fmt::format("pretrain -c {} -s epochs=0 --dry-run", cfg));
    CHECK(bad_value.status == 1);
    CHECK(bad_value.out.find("epochs must be at least 1") != std::string::npos);
    const auto bad_ratio = run(fmt::format("gen-data -c {} -s data.synth.positive_ratio=0.9 -o {}", cfg,
                                           (kRoot / "y").string()));
    CHECK(bad_ratio.status == 1);
    CHECK(bad_ratio.out.find("positive ratio") != std::string::npos);
    CHECK(run(fmt::format("eval -c {} -r {} --split unlabeled", cfg, kRoot.string())).status == 2);
}

TEST_CASE("dry runs write nothing") {
    Scratch s;
    const auto cfg = tiny_config().string();
    const fs::path out = kRoot / "dry";
    for (const char* verb : {"gen-data", "pretrain", "ablate"}) {
        INFO(verb);
        const auto r = run(fmt::format("{} -c {} -o {} --dry-run", verb, cfg, out.string()));
        CHECK(r.status == 0);
        CHECK(r.out.find("plan: " + std::string(verb)) != std::string::npos);
        CHECK(r.out.find("config hash: ") != std::string::npos);
        CHECK_FALSE(fs::exists(out));
    }
    const auto r = run(fmt::format("pretrain -c {} -o {} -s loss_mode=loss2 -s temperature=0.3 --dry-run", cfg,
                                   out.string()));
    CHECK(r.out.find("\"temperature\": 0.3") != std::string::npos);
    CHECK(r.out.find("loss mode loss2") != std::string::npos);
}

TEST_CASE("gen-data, split and upsample are reproducible") {
    Scratch s;
    const auto cfg = tiny_config().string();
    const fs::path a = kRoot / "gen_a", b = kRoot / "gen_b";
    REQUIRE(run(fmt::format("gen-data -c {} --seed 7 -o {}", cfg, a.string())).status == 0);
    REQUIRE(run(fmt::format("gen-data -c {} --seed 7 -o {}", cfg, b.string())).status == 0);
    const auto ha = tree_hashes(a);
    CHECK(ha.count("manifest.csv") == 1);
    CHECK(ha.count("structures.csv") == 1);
    CHECK(ha.size() > 100);
    CHECK(ha == tree_hashes(b));

    const fs::path c = kRoot / "gen_c";
    REQUIRE(run(fmt::format("gen-data -c {} --seed 8 -o {}", cfg, c.string())).status == 0);
    CHECK(slurp(a / "structures.csv") != slurp(c / "structures.csv"));

    const fs::path sa = kRoot / "split_a", sb = kRoot / "split_b";
    REQUIRE(run(fmt::format("split -c {} -d {} -o {}", cfg, a.string(), sa.string())).status == 0);
    REQUIRE(run(fmt::format("split -c {} -d {} -o {}", cfg, a.string(), sb.string())).status == 0);
    CHECK(tree_hashes(sa) == tree_hashes(sb));
    const std::string manifest = slurp(sa / "manifest.csv");
    for (const char* split : {",train", ",val", ",test", ",unlabeled"}) CHECK(manifest.find(split) != std::string::npos);

    const fs::path ua = kRoot / "up_a", ub = kRoot / "up_b";
    REQUIRE(run(fmt::format("upsample -c {} -d {} -o {}", cfg, sa.string(), ua.string())).status == 0);
    REQUIRE(run(fmt::format("upsample -c {} -d {} -o {}", cfg, sa.string(), ub.string())).status == 0);
    CHECK(tree_hashes(ua) == tree_hashes(ub));
    CHECK(slurp(ua / "manifest.csv").size() > manifest.size());

    const auto unsplit = run(fmt::format("pretrain -c {} -d {} -o {}", cfg, a.string(), (kRoot / "p").string()));
    CHECK(unsplit.status == 1);
    CHECK(unsplit.out.find("not split") != std::string::npos);
}

TEST_CASE("pretrain, probe and eval are reproducible") {
    Scratch s;
    const auto cfg = tiny_config().string();
    const fs::path data = kRoot / "data", split = kRoot / "split";
    REQUIRE(run(fmt::format("gen-data -c {} -o {}", cfg, data.string())).status == 0);
    REQUIRE(run(fmt::format("split -c {} -d {} -o {}", cfg, data.string(), split.string())).status == 0);

    std::map<std::string, std::uint64_t> first;
    for (const char* name : {"run_a", "run_b"}) {
        const fs::path dir = kRoot / name;
        REQUIRE(run(fmt::format("pretrain -c {} -d {} -o {} -s epochs=2", cfg, split.string(), dir.string())).status == 0);
        const auto probe = run(fmt::format("probe -r {}", dir.string()));
        REQUIRE(probe.status == 0);
        CHECK(probe.out.find("loss1+2,val,") != std::string::npos);
        const auto eval = run(fmt::format("eval -r {} --split test", dir.string()));
        REQUIRE(eval.status == 0);
        CHECK(eval.out.find("loss1+2,test,") != std::string::npos);
        auto hashes = tree_hashes(dir);
        CHECK(hashes.count("train_log.csv") == 1);
        CHECK(hashes.count("checkpoints/final.ckpt") == 1);
        CHECK(hashes.count("metrics.csv") == 1);
        if (first.empty()) {
            first = hashes;
        } else {
            CHECK(hashes == first);
        }
    }
    CHECK(slurp(kRoot / "run_a" / "train_log.csv") == slurp(kRoot / "run_b" / "train_log.csv"));

    // resume extends the run with a longer schedule
    const fs::path dir = kRoot / "run_a";
    REQUIRE(run(fmt::format("pretrain -c {} -d {} -o {} -s epochs=3 --resume", cfg, split.string(), dir.string()))
                .status == 0);
    CHECK(slurp(dir / "train_log.csv").size() > slurp(kRoot / "run_b" / "train_log.csv").size());

    const auto no_probe = run(fmt::format("eval -r {}", (kRoot / "split").string()));
    CHECK(no_probe.status == 1);
    CHECK(no_probe.out.find("run `probe` first") != std::string::npos);
    CHECK(run(fmt::format("probe -r {}", (kRoot / "nothing").string())).status == 2);
}

TEST_CASE("ablate and report") {
    Scratch s;
    const auto cfg = tiny_config().string();
    const fs::path a = kRoot / "abl_a", b = kRoot / "abl_b";
    const auto ra = run(fmt::format("ablate -c {} -o {}", cfg, a.string()));
    REQUIRE(ra.status == 0);
    REQUIRE(run(fmt::format("ablate -c {} -o {}", cfg, b.string())).status == 0);
    for (const char* f : {"metrics.csv", "ablation.csv", "ablation_summary.csv", "seed_0/metrics.csv",
                          "seed_0/loss1/train_log.csv", "seed_0/loss1+2/checkpoints/final.ckpt"}) {
        INFO(f);
        REQUIRE(fs::exists(a / f));
        CHECK(slurp(a / f) == slurp(b / f));
    }
    const std::string metrics = slurp(a / "metrics.csv");
    for (const char* arm : {"supervised-baseline@seed0,test", "loss1@seed0,test", "loss2@seed0,test",
                            "loss1+2@seed0,test"}) {
        CHECK(metrics.find(arm) != std::string::npos);
    }

    const auto rep1 = run(fmt::format("report -r {}", a.string()));
    const auto rep2 = run(fmt::format("report -r {}", a.string()));
    CHECK(rep1.status == 0);
    CHECK(rep1.out == rep2.out);
    CHECK(rep1.out.find("| Backbone | Loss mode | Unlabeled images | Labeled images | Macro F1 | Balanced accuracy |") !=
          std::string::npos);
    std::size_t rows = 0;
    for (std::size_t pos = rep1.out.find("| small-conv-d16 |"); pos != std::string::npos;
         pos = rep1.out.find("| small-conv-d16 |", pos + 1)) {
        ++rows;
    }
    CHECK(rows == 4);
    CHECK(ra.out.find("Ranking by mean test balanced accuracy") != std::string::npos);

    const auto missing = run(fmt::format("report -r {}", (kRoot / "nothing").string()));
    CHECK(missing.status == 1);
    CHECK(missing.out.find("no metrics.csv") != std::string::npos);
}
