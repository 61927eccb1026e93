#include <doctest.h>

#include <filesystem>
#include <map>
#include <numeric>

#include "semicon/datagen.hpp"

using namespace semicon;
using namespace semicon::data;
namespace fs = std::filesystem;

namespace {

std::shared_ptr<const TilePixels> constant_tile(int side, std::uint8_t v) {
    auto t = std::make_shared<TilePixels>();
    t->side = side;
    t->rgb.assign(static_cast<std::size_t>(side) * side * 3, v);
    return t;
}

// n tiles, each in its own block unless blocks_of is given
TileDataset synthetic_labeled(std::size_t pos, std::size_t neg, int tiles_per_block = 1) {
    std::vector<ManifestEntry> entries;
    for (std::size_t i = 0; i < pos + neg; ++i) {
        ManifestEntry e;
        e.tile_id = "t" + std::to_string(i);
        e.path = "tiles/unsplit/" + e.tile_id + ".png";
        e.block_id = static_cast<int>(i) / tiles_per_block;
        e.label = i < pos ? Label::Positive : Label::Negative;
        e.pixels = constant_tile(4, static_cast<std::uint8_t>(1 + i % 250));
        entries.push_back(std::move(e));
    }
    return TileDataset(std::move(entries), Split::Unsplit);
}

SynthConfig small_synth(double ratio) {
    SynthConfig c;
    c.canvas = 2048;
    c.tile = 64;
    c.positive_ratio = ratio;
    return c;
}

std::set<int> blocks(const TileDataset& d) { return d.block_ids(); }

bool disjoint(const std::set<int>& a, const std::set<int>& b) {
    for (int x : a) {
        if (b.count(x)) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("generator hits the requested positive count") {
    const auto region = generate_synthetic_region(small_synth(0.01), 3);
    CHECK(region.total_tiles == 1024);
    CHECK(region.positive_tiles >= 7);
    CHECK(region.positive_tiles <= 13);

    // recount from the placement log, independent of the tiler
    std::set<int> touched;
    for (const auto& p : region.placements) touched.insert(p.tiles.begin(), p.tiles.end());
    CHECK(touched.size() == region.positive_tiles);

    const auto ds = tile_region(region.raster, region.mask, {64, 1, 4});
    CHECK(ds.size() == 1024);
    CHECK(ds.count(Label::Positive) == region.positive_tiles);
}

TEST_CASE("zero ratio places nothing") {
    const auto region = generate_synthetic_region(small_synth(0.0), 1);
    CHECK(region.placements.empty());
    CHECK(region.positive_tiles == 0);
    const auto ds = tile_region(region.raster, region.mask, {64, 1, 4});
    CHECK(ds.count(Label::Positive) == 0);
}

TEST_CASE("generator is deterministic per seed") {
    const auto a = generate_synthetic_region(small_synth(0.02), 9);
    const auto b = generate_synthetic_region(small_synth(0.02), 9);
    const auto c = generate_synthetic_region(small_synth(0.02), 10);
    CHECK(a.raster == b.raster);
    CHECK(a.mask.bits == b.mask.bits);
    CHECK_FALSE(a.raster == c.raster);
}

TEST_CASE("generator rejects bad configurations") {
    auto c = small_synth(0.01);
    c.canvas = 32;
    CHECK_THROWS(generate_synthetic_region(c, 0));
    c = small_synth(0.6);
    CHECK_THROWS(generate_synthetic_region(c, 0));
    c = small_synth(0.01);
    c.structure_max = 64;
    CHECK_THROWS(generate_synthetic_region(c, 0));
}

TEST_CASE("realized positive fraction over seeds") {
    double sum = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto region = generate_synthetic_region(small_synth(0.01), seed);
        const double f = static_cast<double>(region.positive_tiles) / static_cast<double>(region.total_tiles);
        CHECK(f >= 0.008);
        CHECK(f <= 0.012);
        sum += f;
    }
    const double mean = sum / 20.0;
    CHECK(mean >= 0.008);
    CHECK(mean <= 0.012);
}

TEST_CASE("tiling grid, labels and blocks") {
    Raster r{512, 512, std::vector<std::uint8_t>(512 * 512 * 3, 90)};
    StructureMask none{512, 512, std::vector<std::uint8_t>(512 * 512, 0)};
    StructureMask all{512, 512, std::vector<std::uint8_t>(512 * 512, 1)};
    const auto neg = tile_region(r, none, {64, 1, 4});
    CHECK(neg.size() == 64);
    CHECK(neg.count(Label::Positive) == 0);
    const auto pos = tile_region(r, all, {64, 1, 4});
    CHECK(pos.count(Label::Positive) == 64);
    CHECK(pos.block_ids().size() == 4);

    std::set<std::string> ids;
    for (const auto& e : pos.entries()) {
        ids.insert(e.tile_id);
        CHECK(e.pixels->side == 64);
    }
    CHECK(ids.size() == 64);

    // a 3-pixel speck: positive at threshold 1, negative at threshold 4
    StructureMask speck = none;
    for (int x = 10; x < 13; ++x) speck.bits[static_cast<std::size_t>(5) * 512 + x] = 1;
    CHECK(tile_region(r, speck, {64, 1, 4}).count(Label::Positive) == 1);
    CHECK(tile_region(r, speck, {64, 4, 4}).count(Label::Positive) == 0);

    // missing-data tiles are dropped
    Raster holes = r;
    for (int y = 0; y < 64; ++y) {
        std::fill_n(holes.rgb.begin() + static_cast<std::ptrdiff_t>(y) * 512 * 3, 64 * 3, 0);
    }
    CHECK(tile_region(holes, none, {64, 1, 4}).size() == 63);

    CHECK_THROWS(tile_region(Raster{}, StructureMask{}, {64, 1, 4}));
}

TEST_CASE("split counts follow the requested proportions") {
    const auto ds = synthetic_labeled(71 + 65 + 193, 5830 - 71 - 65 - 193);
    SplitConfig cfg;
    cfg.seed = 4;
    const auto s = split_dataset(ds, cfg);
    CHECK(s.train.size() == 4465);
    CHECK(s.val.size() == 675);
    CHECK(s.test.size() == 690);
    CHECK(s.unlabeled.empty());

    SplitConfig all_train;
    all_train.train = 1;
    all_train.val = 0;
    all_train.test = 0;
    const auto t = split_dataset(ds, all_train);
    CHECK(t.train.size() == 5830);
    CHECK(t.val.empty());

    SplitConfig bad;
    bad.train = 0.5;
    CHECK_THROWS(split_dataset(ds, bad));
    CHECK_THROWS(split_dataset(synthetic_labeled(1, 1), SplitConfig{}));
}

TEST_CASE("split is by block, withholds labels and is deterministic") {
    const auto region = generate_synthetic_region(small_synth(0.03), 5);
    const auto ds = tile_region(region.raster, region.mask, {64, 1, 4});
    SplitConfig cfg;
    cfg.unlabeled_fraction = 0.5;
    cfg.enrich_positive_blocks = 3;
    cfg.stratify = true;
    cfg.seed = 2;
    const auto a = split_dataset(ds, cfg);
    const auto b = split_dataset(ds, cfg);
    CHECK(disjoint(blocks(a.train), blocks(a.val)));
    CHECK(disjoint(blocks(a.train), blocks(a.test)));
    CHECK(disjoint(blocks(a.val), blocks(a.test)));
    for (const auto* part : {&a.train, &a.val, &a.test}) {
        CHECK(disjoint(blocks(*part), blocks(a.unlabeled)));
        for (const auto& e : part->entries()) CHECK(e.label.has_value());
    }
    for (const auto& e : a.unlabeled.entries()) CHECK_FALSE(e.label.has_value());
    CHECK(a.train.size() + a.val.size() + a.test.size() + a.unlabeled.size() == ds.size());
    CHECK(a.train.size() + a.val.size() + a.test.size() > 0);
    CHECK(a.train.count(Label::Positive) + a.val.count(Label::Positive) + a.test.count(Label::Positive) > 0);
    for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].same_record(b.train[i]));
    for (std::size_t i = 0; i < a.test.size(); ++i) CHECK(a.test[i].same_record(b.test[i]));
}

TEST_CASE("upsampling replicates positives only") {
    const auto train = synthetic_labeled(193, 4272);
    const auto up = upsample_minority(train, UpsampleTarget::by_factor(16));
    CHECK(up.count(Label::Positive) == 3088);
    CHECK(up.count(Label::Negative) == 4272);

    const auto same = upsample_minority(train, UpsampleTarget::by_factor(1));
    CHECK(same.size() == train.size());

    const auto few = synthetic_labeled(10, 1000);
    const auto bal = upsample_minority(few, UpsampleTarget::balance());
    CHECK(bal.count(Label::Positive) == 1000);
    std::map<std::string, int> copies;
    for (const auto& e : bal.entries()) {
        if (e.label == Label::Positive) ++copies[e.tile_id];
    }
    CHECK(copies.size() == 10);
    for (const auto& [id, n] : copies) CHECK(n == 100);

    // copies share the source pixels
    std::map<std::string, const TilePixels*> source;
    for (const auto& e : few.entries()) source[e.tile_id] = e.pixels.get();
    for (const auto& e : bal.entries()) CHECK(e.pixels.get() == source[e.tile_id]);

    CHECK_THROWS(upsample_minority(synthetic_labeled(0, 5), UpsampleTarget::balance()));
}

TEST_CASE("load_batch scales and resizes") {
    std::vector<ManifestEntry> entries(2);
    entries[0].tile_id = "a";
    entries[0].pixels = constant_tile(256, 51);
    auto ramp = std::make_shared<TilePixels>();
    ramp->side = 8;
    for (int i = 0; i < 8 * 8 * 3; ++i) ramp->rgb.push_back(static_cast<std::uint8_t>(i));
    entries[1].tile_id = "b";
    entries[1].pixels = ramp;
    const TileDataset ds(entries, Split::Train);

    const std::size_t first[] = {0};
    const auto big = load_batch(ds, first, 128);
    REQUIRE(big.size() == 1);
    CHECK(big[0].side == 128);
    for (float v : big[0].px) CHECK(v == doctest::Approx(51.0 / 255.0).epsilon(1e-6));

    const std::size_t second[] = {1};
    const auto same = load_batch(ds, second, 8);
    for (int i = 0; i < 8 * 8 * 3; ++i) CHECK(same[0].px[i] == doctest::Approx(i / 255.0).epsilon(1e-6));
    CHECK(ds.access_count() == 2);

    const std::size_t bad[] = {2};
    CHECK_THROWS(load_batch(ds, bad, 8));
}

TEST_CASE("manifest and dataset round trip") {
    const auto region = generate_synthetic_region(small_synth(0.02), 8);
    const auto ds = tile_region(region.raster, region.mask, {64, 1, 4});
    SplitConfig cfg;
    cfg.unlabeled_fraction = 0.6;
    cfg.seed = 1;
    const auto s = split_dataset(ds, cfg);

    const auto root = fs::temp_directory_path() / "semicon_test_dataset";
    fs::remove_all(root);
    const TileDataset* parts[] = {&s.train, &s.val, &s.test, &s.unlabeled};
    write_dataset(root, parts);

    std::vector<ManifestEntry> all;
    for (const auto* p : parts) all.insert(all.end(), p->entries().begin(), p->entries().end());
    const auto records = read_manifest(root / "manifest.csv");
    REQUIRE(records.size() == all.size());
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(records[i].same_record(all[i]));

    const auto loaded = load_entries(root);
    REQUIRE(loaded.size() == all.size());
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(loaded[i].pixels->rgb == all[i].pixels->rgb);
    const auto grouped = group_by_split(loaded);
    CHECK(grouped.train.size() == s.train.size());
    CHECK(grouped.unlabeled.size() == s.unlabeled.size());

    // the unsplit tiling cannot be grouped
    CHECK_THROWS(group_by_split(ds.entries()));
    fs::remove_all(root);
}
