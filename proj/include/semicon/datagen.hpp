#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "semicon/image.hpp"

namespace semicon::data {

enum class Label { Negative, Positive };
enum class Split { Unsplit, Train, Val, Test, Unlabeled };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);
std::string_view label_token(std::optional<Label> label);  // "pos", "neg" or "-"
std::optional<Label> parse_label(std::string_view token);

struct Raster {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // row-major, 3 channels

    bool operator==(const Raster&) const = default;
};

struct StructureMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;  // 1 where a structure pixel lies
};

struct SynthConfig {
    int canvas = 2048;  // side of the square canvas, pixels
    int tile = 64;
    double positive_ratio = 0.01;  // target fraction of positive tiles
    int structure_min = 10;        // polygon diameter range, pixels
    int structure_max = 18;
    std::uint64_t texture_seed = 0;
    int octaves = 5;
    double noise_amplitude = 0.5;
    double rock_density = 0.002;  // clutter blobs per pixel

    void validate() const;
};

struct StructurePlacement {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive bounding box
    std::size_t pixels = 0;
    std::vector<int> tiles;  // row-major tile indices the footprint touches
};

struct SyntheticRegion {
    Raster raster;
    StructureMask mask;
    std::vector<StructurePlacement> placements;
    std::size_t total_tiles = 0;
    std::size_t positive_tiles = 0;  // tiles with at least one structure pixel
};

// Procedural terrain with sparsely placed closed-polygon structures. Structures
// are added until the count of touched tiles reaches
// round(positive_ratio * total_tiles).
SyntheticRegion generate_synthetic_region(const SynthConfig& cfg, std::uint64_t seed);

struct TilePixels {
    int side = 0;
    std::vector<std::uint8_t> rgb;
};

struct ManifestEntry {
    std::string tile_id;
    std::string path;  // relative to the dataset root
    int block_id = 0;
    std::optional<Label> label;
    Split split = Split::Unsplit;
    std::shared_ptr<const TilePixels> pixels;  // not part of the manifest record

    bool same_record(const ManifestEntry& o) const {
        return tile_id == o.tile_id && path == o.path && block_id == o.block_id &&
               label == o.label && split == o.split;
    }
};

// Immutable view over one split. Copies share the access counter, which
// records every load_batch call so tests can audit split usage.
class TileDataset {
public:
    TileDataset();
    TileDataset(std::vector<ManifestEntry> entries, Split split);

    const std::vector<ManifestEntry>& entries() const { return entries_; }
    const ManifestEntry& operator[](std::size_t i) const { return entries_[i]; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    Split split() const { return split_; }

    std::size_t count(Label label) const;
    // Positives per negative; 0 when there are no negatives.
    double class_ratio() const;
    std::set<int> block_ids() const;
    std::vector<std::size_t> indices_with(Label label) const;
    bool is_labeled() const;

    std::size_t access_count() const { return accesses_->load(); }
    void record_access(std::size_t n) const { accesses_->fetch_add(n); }

private:
    std::vector<ManifestEntry> entries_;
    Split split_ = Split::Unsplit;
    std::shared_ptr<std::atomic<std::size_t>> accesses_;
};

struct TilingOptions {
    int tile = 64;
    int label_threshold = 1;  // minimum structure pixels for a positive tile
    int block_side = 4;       // tiles per block edge
};

// Non-overlapping tiling; all-zero (missing data) tiles are dropped.
TileDataset tile_region(const Raster& raster, const StructureMask& mask,
                        const TilingOptions& options);

struct SplitConfig {
    // Defaults reproduce the 4,465 / 675 / 690 labeled proportions.
    double train = 4465.0 / 5830.0;
    double val = 675.0 / 5830.0;
    double test = 690.0 / 5830.0;
    double unlabeled_fraction = 0.0;  // share of blocks whose labels are withheld
    int enrich_positive_blocks = 0;   // positive-bearing blocks forced into the labeled pool
    bool stratify = false;            // split positive-bearing and other blocks separately
    std::uint64_t seed = 0;
};

struct SplitResult {
    TileDataset train;
    TileDataset val;
    TileDataset test;
    TileDataset unlabeled;
};

// Block-level assignment: every tile of a block lands in the same split.
SplitResult split_dataset(const TileDataset& dataset, const SplitConfig& cfg);

struct UpsampleTarget {
    enum class Kind { Factor, Balance };
    Kind kind = Kind::Balance;
    int factor = 1;

    static UpsampleTarget by_factor(int f) { return {Kind::Factor, f}; }
    static UpsampleTarget balance() { return {Kind::Balance, 1}; }
};

// Replicates positive manifest entries round-robin, truncated to the exact
// target count. Negatives are untouched; copies share pixels with the source.
TileDataset upsample_minority(const TileDataset& train, UpsampleTarget target);

// Decodes, scales to [0, 1] and bilinearly resizes the selected tiles.
std::vector<Image> load_batch(const TileDataset& dataset, std::span<const std::size_t> indices,
                              int resize);

// --- persistence -----------------------------------------------------------

void write_png(const std::filesystem::path& path, const TilePixels& tile);
TilePixels read_png(const std::filesystem::path& path);

// CSV: tile_id,path,block_id,label,split
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

// Writes every tile PNG (once per path) plus manifest.csv under root.
void write_dataset(const std::filesystem::path& root, std::span<const TileDataset* const> parts);

// Reads root/manifest.csv, decodes the PNGs it references and groups entries
// by split.
std::vector<ManifestEntry> load_entries(const std::filesystem::path& root);
SplitResult group_by_split(std::span<const ManifestEntry> entries);
TileDataset unsplit_dataset(std::span<const ManifestEntry> entries);

}  // namespace semicon::data
