#include "semicon/datagen.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "semicon/rng.hpp"

namespace semicon::data {

std::string_view to_string(Split split) {
    switch (split) {
        case Split::Unsplit: return "unsplit";
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
        case Split::Unlabeled: return "unlabeled";
    }
    return "unsplit";
}

Split parse_split(std::string_view text) {
    if (text == "unsplit") return Split::Unsplit;
    if (text == "train") return Split::Train;
    if (text == "val") return Split::Val;
    if (text == "test") return Split::Test;
    if (text == "unlabeled") return Split::Unlabeled;
    throw std::invalid_argument("unknown split '" + std::string(text) + "'");
}

std::string_view label_token(std::optional<Label> label) {
    if (!label) return "-";
    return *label == Label::Positive ? "pos" : "neg";
}

std::optional<Label> parse_label(std::string_view token) {
    if (token == "pos") return Label::Positive;
    if (token == "neg") return Label::Negative;
    if (token == "-") return std::nullopt;
    throw std::invalid_argument("unknown label '" + std::string(token) + "'");
}

void SynthConfig::validate() const {
    if (tile <= 0) throw std::invalid_argument("tile size must be positive");
    if (canvas < tile) {
        throw std::invalid_argument("canvas of " + std::to_string(canvas) +
                                    " px cannot hold one tile of " + std::to_string(tile) + " px");
    }
    if (!(positive_ratio >= 0.0 && positive_ratio <= 0.5)) {
        throw std::invalid_argument("positive ratio must lie in [0, 0.5]");
    }
    if (structure_min < 3 || structure_max < structure_min) {
        throw std::invalid_argument("structure size range must satisfy 3 <= min <= max");
    }
    if (structure_max >= tile) {
        throw std::invalid_argument("structure size must be smaller than the tile size");
    }
    if (octaves < 1) throw std::invalid_argument("octave count must be at least 1");
    if (noise_amplitude < 0.0) throw std::invalid_argument("noise amplitude must be >= 0");
    if (rock_density < 0.0) throw std::invalid_argument("rock density must be >= 0");
}

namespace {

using Rgb = std::array<float, 3>;

float smoothstep(float t) { return t * t * (3.0f - 2.0f * t); }

// Multi-octave value noise normalized to [0, 1].
std::vector<float> value_noise(int size, int octaves, int base_cell, Rng& rng) {
    std::vector<float> out(static_cast<std::size_t>(size) * size, 0.0f);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    float amp = 1.0f;
    float total = 0.0f;
    for (int o = 0; o < octaves; ++o) {
        const int cell = std::max(2, base_cell >> o);
        const int g = size / cell + 2;
        std::vector<float> lattice(static_cast<std::size_t>(g) * g);
        for (auto& v : lattice) v = unit(rng);
        for (int y = 0; y < size; ++y) {
            const int iy = y / cell;
            const float ty = smoothstep(static_cast<float>(y % cell) / cell);
            for (int x = 0; x < size; ++x) {
                const int ix = x / cell;
                const float tx = smoothstep(static_cast<float>(x % cell) / cell);
                const float a = lattice[iy * g + ix];
                const float b = lattice[iy * g + ix + 1];
                const float c = lattice[(iy + 1) * g + ix];
                const float d = lattice[(iy + 1) * g + ix + 1];
                const float top = a + (b - a) * tx;
                const float bot = c + (d - c) * tx;
                out[static_cast<std::size_t>(y) * size + x] += amp * (top + (bot - top) * ty);
            }
        }
        total += amp;
        amp *= 0.5f;
    }
    for (auto& v : out) v /= total;
    return out;
}

Rgb lerp(const Rgb& a, const Rgb& b, float t) {
    return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 1L, 255L)); }

struct Footprint {
    int x0, y0, x1, y1;
    std::vector<std::array<int, 3>> pixels;  // x, y, is_outline
};

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
    const double dx = bx - ax;
    const double dy = by - ay;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double qx = ax + t * dx - px;
    const double qy = ay + t * dy - py;
    return std::sqrt(qx * qx + qy * qy);
}

// Closed polygon of 4-6 jittered vertices: filled interior plus an outline band.
Footprint make_polygon(double cx, double cy, double diameter, Rng& rng) {
    std::uniform_int_distribution<int> vertex_count(4, 6);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int nv = vertex_count(rng);
    const double rotation = unit(rng) * 2.0 * std::numbers::pi;
    const double thickness = 1.4 + unit(rng) * 0.8;
    std::vector<std::array<double, 2>> verts(nv);
    for (int i = 0; i < nv; ++i) {
        const double angle = rotation + 2.0 * std::numbers::pi * (i + 0.3 * (unit(rng) - 0.5)) / nv;
        const double radius = 0.5 * diameter * (0.75 + 0.25 * unit(rng));
        verts[i] = {cx + radius * std::cos(angle), cy + radius * std::sin(angle)};
    }
    Footprint fp;
    const double r = 0.5 * diameter + thickness;
    fp.x0 = static_cast<int>(std::floor(cx - r));
    fp.y0 = static_cast<int>(std::floor(cy - r));
    fp.x1 = static_cast<int>(std::ceil(cx + r));
    fp.y1 = static_cast<int>(std::ceil(cy + r));
    for (int y = fp.y0; y <= fp.y1; ++y) {
        for (int x = fp.x0; x <= fp.x1; ++x) {
            const double px = x + 0.5;
            const double py = y + 0.5;
            bool inside = false;
            double edge = 1e9;
            for (int i = 0, j = nv - 1; i < nv; j = i++) {
                const auto& a = verts[i];
                const auto& b = verts[j];
                if ((a[1] > py) != (b[1] > py) &&
                    px < (b[0] - a[0]) * (py - a[1]) / (b[1] - a[1]) + a[0]) {
                    inside = !inside;
                }
                edge = std::min(edge, segment_distance(px, py, a[0], a[1], b[0], b[1]));
            }
            const bool outline = edge <= 0.5 * thickness;
            if (inside || outline) fp.pixels.push_back({x, y, outline ? 1 : 0});
        }
    }
    return fp;
}

}  // namespace

SyntheticRegion generate_synthetic_region(const SynthConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const int size = cfg.canvas;
    const int tiles_per_row = size / cfg.tile;
    const int usable = tiles_per_row * cfg.tile;  // tiled area; excess is cropped later

    SyntheticRegion region;
    region.raster.width = region.raster.height = size;
    region.raster.rgb.assign(static_cast<std::size_t>(size) * size * 3, 0);
    region.mask.width = region.mask.height = size;
    region.mask.bits.assign(static_cast<std::size_t>(size) * size, 0);
    region.total_tiles = static_cast<std::size_t>(tiles_per_row) * tiles_per_row;

    Rng texture_rng = make_rng(mix_seed(seed, cfg.texture_seed), streams::kGenerator);
    Rng rng = make_rng(seed, streams::kGenerator);

    const int base_cell = std::max(8, size / 12);
    const auto height = value_noise(size, cfg.octaves, base_cell, texture_rng);
    const auto moisture = value_noise(size, std::max(1, cfg.octaves - 2), base_cell * 2, texture_rng);

    const Rgb soil{104, 82, 62};
    const Rgb ochre{170, 132, 92};
    const Rgb scrub{98, 106, 72};
    const Rgb rock{186, 174, 156};
    const float amp = static_cast<float>(cfg.noise_amplitude);
    std::normal_distribution<float> grain(0.0f, 1.0f);
    auto& rgb = region.raster.rgb;
    for (std::size_t i = 0; i < height.size(); ++i) {
        const float h = std::clamp((height[i] - 0.5f) * (1.0f + 2.0f * amp) + 0.5f, 0.0f, 1.0f);
        const float m = std::clamp((moisture[i] - 0.5f) * 2.0f + 0.5f, 0.0f, 1.0f);
        const Rgb base = lerp(lerp(soil, ochre, h), lerp(scrub, rock, h), m);
        const float shared = grain(texture_rng) * 14.0f * amp;
        for (int c = 0; c < 3; ++c) {
            rgb[i * 3 + c] = to_byte(base[c] + shared + grain(texture_rng) * 4.0f * amp);
        }
    }

    // Clutter: small dark or pale blobs scattered independently of structures.
    const auto rocks = static_cast<std::size_t>(cfg.rock_density * size * size);
    std::uniform_int_distribution<int> coord(0, size - 1);
    std::uniform_int_distribution<int> radius_dist(1, 2);
    std::bernoulli_distribution pale(0.5);
    for (std::size_t r = 0; r < rocks; ++r) {
        const int cx = coord(rng);
        const int cy = coord(rng);
        const int radius = radius_dist(rng);
        const Rgb color = pale(rng) ? Rgb{200, 190, 170} : Rgb{62, 56, 50};
        for (int y = std::max(0, cy - radius); y <= std::min(size - 1, cy + radius); ++y) {
            for (int x = std::max(0, cx - radius); x <= std::min(size - 1, cx + radius); ++x) {
                if ((x - cx) * (x - cx) + (y - cy) * (y - cy) > radius * radius) continue;
                const std::size_t i = static_cast<std::size_t>(y) * size + x;
                for (int c = 0; c < 3; ++c) rgb[i * 3 + c] = to_byte(color[c] + grain(rng) * 6.0f);
            }
        }
    }

    const auto target =
        static_cast<std::size_t>(std::llround(cfg.positive_ratio * region.total_tiles));
    std::vector<std::uint8_t> positive(region.total_tiles, 0);
    std::uniform_real_distribution<double> size_dist(cfg.structure_min, cfg.structure_max);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t max_attempts = 1000 + 400 * target;
    std::size_t since_accept = 0;
    for (std::size_t attempt = 0; region.positive_tiles < target && attempt < max_attempts;
         ++attempt) {
        ++since_accept;
        const double diameter = size_dist(rng);
        const double margin = 0.5 * diameter + 4.0;
        if (usable <= 2 * margin) break;
        const double cx = margin + unit(rng) * (usable - 2 * margin);
        const double cy = margin + unit(rng) * (usable - 2 * margin);
        Footprint fp = make_polygon(cx, cy, diameter, rng);

        bool overlaps = false;
        for (const auto& p : region.placements) {
            if (fp.x0 - 2 <= p.x1 && p.x0 <= fp.x1 + 2 && fp.y0 - 2 <= p.y1 && p.y0 <= fp.y1 + 2) {
                overlaps = true;
                break;
            }
        }
        if (overlaps) continue;

        std::vector<int> touched;
        for (const auto& px : fp.pixels) {
            touched.push_back((px[1] / cfg.tile) * tiles_per_row + px[0] / cfg.tile);
        }
        std::sort(touched.begin(), touched.end());
        touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
        std::size_t fresh = 0;
        for (int t : touched) fresh += positive[t] ? 0 : 1;
        // Prefer placements that land exactly on the target count.
        if (region.positive_tiles + fresh > target && since_accept < 200) continue;

        since_accept = 0;
        for (const auto& px : fp.pixels) {
            const std::size_t i = static_cast<std::size_t>(px[1]) * size + px[0];
            region.mask.bits[i] = 1;
            for (int c = 0; c < 3; ++c) {
                float v;
                if (px[2]) {
                    v = 224.0f - 8.0f * c + grain(rng) * 6.0f;
                } else {
                    const float texture = ((px[0] + px[1]) % 2 == 0) ? 0.55f : 0.72f;
                    v = rgb[i * 3 + c] * texture;
                }
                rgb[i * 3 + c] = to_byte(v);
            }
        }
        for (int t : touched) {
            if (!positive[t]) {
                positive[t] = 1;
                ++region.positive_tiles;
            }
        }
        region.placements.push_back(
            {fp.x0, fp.y0, fp.x1, fp.y1, fp.pixels.size(), std::move(touched)});
    }
    return region;
}

// ---------------------------------------------------------------------------
// TileDataset

TileDataset::TileDataset() : accesses_(std::make_shared<std::atomic<std::size_t>>(0)) {}

TileDataset::TileDataset(std::vector<ManifestEntry> entries, Split split)
    : entries_(std::move(entries)), split_(split),
      accesses_(std::make_shared<std::atomic<std::size_t>>(0)) {}

std::size_t TileDataset::count(Label label) const {
    return static_cast<std::size_t>(std::count_if(
        entries_.begin(), entries_.end(), [&](const auto& e) { return e.label == label; }));
}

double TileDataset::class_ratio() const {
    const auto neg = count(Label::Negative);
    return neg == 0 ? 0.0 : static_cast<double>(count(Label::Positive)) / static_cast<double>(neg);
}

std::set<int> TileDataset::block_ids() const {
    std::set<int> ids;
    for (const auto& e : entries_) ids.insert(e.block_id);
    return ids;
}

std::vector<std::size_t> TileDataset::indices_with(Label label) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].label == label) out.push_back(i);
    }
    return out;
}

bool TileDataset::is_labeled() const {
    return !entries_.empty() &&
           std::all_of(entries_.begin(), entries_.end(), [](const auto& e) { return e.label.has_value(); });
}

namespace {

std::string tile_path(Split split, const std::string& tile_id) {
    return "tiles/" + std::string(to_string(split)) + "/" + tile_id + ".png";
}

}  // namespace

TileDataset tile_region(const Raster& raster, const StructureMask& mask,
                        const TilingOptions& options) {
    if (raster.width <= 0 || raster.height <= 0 || raster.rgb.empty()) {
        throw std::invalid_argument("tile_region: empty raster");
    }
    if (mask.width != raster.width || mask.height != raster.height) {
        throw std::invalid_argument("tile_region: mask does not match raster dimensions");
    }
    if (options.tile <= 0 || options.block_side <= 0 || options.label_threshold < 1) {
        throw std::invalid_argument("tile_region: invalid tiling options");
    }
    const int rows = raster.height / options.tile;
    const int cols = raster.width / options.tile;
    if (rows == 0 || cols == 0) throw std::invalid_argument("tile_region: raster smaller than a tile");
    const int blocks_per_row = (cols + options.block_side - 1) / options.block_side;

    std::vector<ManifestEntry> entries;
    entries.reserve(static_cast<std::size_t>(rows) * cols);
    char id[32];
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            auto pixels = std::make_shared<TilePixels>();
            pixels->side = options.tile;
            pixels->rgb.resize(static_cast<std::size_t>(options.tile) * options.tile * 3);
            int mask_count = 0;
            bool any_data = false;
            for (int y = 0; y < options.tile; ++y) {
                const std::size_t row = static_cast<std::size_t>(r * options.tile + y) * raster.width;
                const std::size_t start = (row + static_cast<std::size_t>(c) * options.tile) * 3;
                std::copy_n(raster.rgb.begin() + static_cast<std::ptrdiff_t>(start), options.tile * 3,
                            pixels->rgb.begin() + static_cast<std::ptrdiff_t>(y) * options.tile * 3);
                for (int x = 0; x < options.tile; ++x) {
                    mask_count += mask.bits[row + static_cast<std::size_t>(c) * options.tile + x];
                }
            }
            for (auto v : pixels->rgb) {
                if (v != 0) {
                    any_data = true;
                    break;
                }
            }
            if (!any_data) continue;  // defective tile: missing data

            std::snprintf(id, sizeof(id), "tile_r%04d_c%04d", r, c);
            ManifestEntry e;
            e.tile_id = id;
            e.path = tile_path(Split::Unsplit, e.tile_id);
            e.block_id = (r / options.block_side) * blocks_per_row + c / options.block_side;
            e.label = mask_count >= options.label_threshold ? Label::Positive : Label::Negative;
            e.split = Split::Unsplit;
            e.pixels = std::move(pixels);
            entries.push_back(std::move(e));
        }
    }
    return TileDataset(std::move(entries), Split::Unsplit);
}

SplitResult split_dataset(const TileDataset& dataset, const SplitConfig& cfg) {
    const double sum = cfg.train + cfg.val + cfg.test;
    if (cfg.train < 0 || cfg.val < 0 || cfg.test < 0 || std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("split fractions must be non-negative and sum to 1");
    }
    if (cfg.unlabeled_fraction < 0.0 || cfg.unlabeled_fraction >= 1.0) {
        throw std::invalid_argument("unlabeled fraction must lie in [0, 1)");
    }

    std::map<int, bool> block_positive;
    for (const auto& e : dataset.entries()) {
        auto& flag = block_positive[e.block_id];
        flag = flag || e.label == Label::Positive;
    }
    std::vector<int> blocks;
    for (const auto& [id, _] : block_positive) blocks.push_back(id);
    Rng rng = make_rng(cfg.seed, streams::kSplit);
    std::shuffle(blocks.begin(), blocks.end(), rng);

    const std::size_t total = blocks.size();
    const auto unlabeled_count =
        static_cast<std::size_t>(std::llround(cfg.unlabeled_fraction * static_cast<double>(total)));
    std::size_t labeled_count = total - unlabeled_count;

    // Labeled pool: forced positive-bearing blocks first, then shuffled order.
    std::vector<int> labeled;
    std::unordered_set<int> taken;
    if (cfg.enrich_positive_blocks > 0) {
        for (int b : blocks) {
            if (static_cast<int>(labeled.size()) >= cfg.enrich_positive_blocks) break;
            if (block_positive[b]) {
                labeled.push_back(b);
                taken.insert(b);
            }
        }
    }
    labeled_count = std::max(labeled_count, labeled.size());
    for (int b : blocks) {
        if (labeled.size() >= labeled_count) break;
        if (!taken.count(b)) {
            labeled.push_back(b);
            taken.insert(b);
        }
    }

    const int requested = (cfg.train > 0) + (cfg.val > 0) + (cfg.test > 0);
    if (static_cast<int>(labeled.size()) < requested) {
        throw std::invalid_argument("split_dataset: " + std::to_string(labeled.size()) +
                                    " labeled blocks cannot fill " + std::to_string(requested) +
                                    " splits");
    }

    std::map<int, Split> assignment;
    for (int b : blocks) {
        if (!taken.count(b)) assignment[b] = Split::Unlabeled;
    }
    std::sort(labeled.begin(), labeled.end());
    std::shuffle(labeled.begin(), labeled.end(), rng);
    auto assign_group = [&](const std::vector<int>& group) {
        const double n = static_cast<double>(group.size());
        const auto n_train = static_cast<std::size_t>(std::llround(cfg.train * n));
        const auto n_train_val = static_cast<std::size_t>(std::llround((cfg.train + cfg.val) * n));
        for (std::size_t i = 0; i < group.size(); ++i) {
            assignment[group[i]] =
                i < n_train ? Split::Train : (i < n_train_val ? Split::Val : Split::Test);
        }
    };
    if (cfg.stratify) {
        std::vector<int> pos;
        std::vector<int> neg;
        for (int b : labeled) (block_positive[b] ? pos : neg).push_back(b);
        assign_group(pos);
        assign_group(neg);
    } else {
        assign_group(labeled);
    }

    std::array<std::vector<ManifestEntry>, 4> parts;
    for (const auto& src : dataset.entries()) {
        ManifestEntry e = src;
        e.split = assignment.at(e.block_id);
        if (e.split == Split::Unlabeled) e.label.reset();
        e.path = tile_path(e.split, e.tile_id);
        const int slot = e.split == Split::Train ? 0 : e.split == Split::Val ? 1 : e.split == Split::Test ? 2 : 3;
        parts[slot].push_back(std::move(e));
    }
    return SplitResult{TileDataset(std::move(parts[0]), Split::Train),
                       TileDataset(std::move(parts[1]), Split::Val),
                       TileDataset(std::move(parts[2]), Split::Test),
                       TileDataset(std::move(parts[3]), Split::Unlabeled)};
}

TileDataset upsample_minority(const TileDataset& train, UpsampleTarget target) {
    const auto positives = train.indices_with(Label::Positive);
    if (positives.empty()) throw std::invalid_argument("upsample_minority: no positive tiles");
    std::size_t want = 0;
    if (target.kind == UpsampleTarget::Kind::Factor) {
        if (target.factor < 1) throw std::invalid_argument("upsample factor must be >= 1");
        want = positives.size() * static_cast<std::size_t>(target.factor);
    } else {
        want = std::max(positives.size(), train.count(Label::Negative));
    }
    std::vector<ManifestEntry> entries = train.entries();
    std::size_t have = positives.size();
    while (have < want) {
        for (std::size_t idx : positives) {
            if (have >= want) break;
            entries.push_back(train[idx]);
            ++have;
        }
    }
    return TileDataset(std::move(entries), train.split());
}

std::vector<Image> load_batch(const TileDataset& dataset, std::span<const std::size_t> indices,
                              int resize) {
    if (resize <= 0) throw std::invalid_argument("load_batch: resize must be positive");
    std::vector<Image> out;
    out.reserve(indices.size());
    for (std::size_t idx : indices) {
        if (idx >= dataset.size()) {
            throw std::out_of_range("load_batch: index " + std::to_string(idx) + " outside dataset of " +
                                    std::to_string(dataset.size()));
        }
        const auto& pixels = dataset[idx].pixels;
        if (!pixels) throw std::runtime_error("load_batch: tile " + dataset[idx].tile_id + " has no pixels");
        Image img = image_from_rgb8(pixels->rgb, pixels->side);
        out.push_back(resize == img.side ? std::move(img) : resize_bilinear(img, resize));
    }
    dataset.record_access(indices.size());
    return out;
}

// ---------------------------------------------------------------------------
// Persistence

void write_png(const std::filesystem::path& path, const TilePixels& tile) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(tile.side);
    image.height = static_cast<png_uint_32>(tile.side);
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, tile.rgb.data(), 0, nullptr)) {
        throw std::runtime_error("failed to write " + path.string() + ": " + image.message);
    }
}

TilePixels read_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw std::runtime_error("failed to read " + path.string() + ": " + image.message);
    }
    if (image.width != image.height) {
        png_image_free(&image);
        throw std::runtime_error(path.string() + " is not a square tile");
    }
    image.format = PNG_FORMAT_RGB;
    TilePixels tile;
    tile.side = static_cast<int>(image.width);
    tile.rgb.resize(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, tile.rgb.data(), 0, nullptr)) {
        throw std::runtime_error("failed to decode " + path.string() + ": " + image.message);
    }
    return tile;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "tile_id,path,block_id,label,split\n";
    for (const auto& e : entries) {
        out << e.tile_id << ',' << e.path << ',' << e.block_id << ',' << label_token(e.label) << ','
            << to_string(e.split) << '\n';
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "tile_id,path,block_id,label,split") {
        throw std::runtime_error(path.string() + ": unexpected manifest header '" + line + "'");
    }
    std::vector<ManifestEntry> entries;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 5) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": expected 5 fields");
        }
        ManifestEntry e;
        e.tile_id = fields[0];
        e.path = fields[1];
        e.block_id = std::stoi(fields[2]);
        e.label = parse_label(fields[3]);
        e.split = parse_split(fields[4]);
        entries.push_back(std::move(e));
    }
    return entries;
}

void write_dataset(const std::filesystem::path& root, std::span<const TileDataset* const> parts) {
    std::vector<ManifestEntry> all;
    std::unordered_set<std::string> written;
    for (const TileDataset* part : parts) {
        for (const auto& e : part->entries()) {
            if (written.insert(e.path).second) {
                if (!e.pixels) throw std::runtime_error("write_dataset: tile " + e.tile_id + " has no pixels");
                const auto file = root / e.path;
                std::filesystem::create_directories(file.parent_path());
                write_png(file, *e.pixels);
            }
            all.push_back(e);
        }
    }
    std::filesystem::create_directories(root);
    write_manifest(root / "manifest.csv", all);
}

std::vector<ManifestEntry> load_entries(const std::filesystem::path& root) {
    auto entries = read_manifest(root / "manifest.csv");
    std::map<std::string, std::shared_ptr<const TilePixels>> cache;
    for (auto& e : entries) {
        auto it = cache.find(e.path);
        if (it == cache.end()) {
            it = cache.emplace(e.path, std::make_shared<const TilePixels>(read_png(root / e.path))).first;
        }
        e.pixels = it->second;
    }
    return entries;
}

SplitResult group_by_split(std::span<const ManifestEntry> entries) {
    std::array<std::vector<ManifestEntry>, 4> parts;
    for (const auto& e : entries) {
        switch (e.split) {
            case Split::Train: parts[0].push_back(e); break;
            case Split::Val: parts[1].push_back(e); break;
            case Split::Test: parts[2].push_back(e); break;
            case Split::Unlabeled: parts[3].push_back(e); break;
            case Split::Unsplit:
                throw std::invalid_argument("group_by_split: tile " + e.tile_id + " is not split");
        }
    }
    return SplitResult{TileDataset(std::move(parts[0]), Split::Train),
                       TileDataset(std::move(parts[1]), Split::Val),
                       TileDataset(std::move(parts[2]), Split::Test),
                       TileDataset(std::move(parts[3]), Split::Unlabeled)};
}

TileDataset unsplit_dataset(std::span<const ManifestEntry> entries) {
    return TileDataset(std::vector<ManifestEntry>(entries.begin(), entries.end()), Split::Unsplit);
}

}  // namespace semicon::data
