#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nusg/tensor.hpp"

namespace nusg::data {

namespace fs = std::filesystem;

struct SampleRecord {
    fs::path image_path;
    fs::path mask_path;
    std::string stem;
};

struct ScanResult {
    std::vector<SampleRecord> records;  // sorted by stem
    std::vector<fs::path> unmatched;    // files without a partner, sorted
};

/// Pairs root/images/<stem>.{png,jpg,jpeg} with root/masks/<stem>.png.
/// Throws if no pair is found.
ScanResult scan_dataset(const fs::path& root);

/// One path per line.
void write_manifest(const fs::path& path, const std::vector<fs::path>& unmatched);

/// Seeded Fisher-Yates shuffle, then the first round(fraction * N) records
/// train. Needs N >= 2 and 0 < fraction < 1.
std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> split(const std::vector<SampleRecord>& records,
                                                                      double fraction, uint64_t seed);

inline constexpr std::array<float, 3> kMean{0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kStd{0.229f, 0.224f, 0.225f};

/// image: 3 x H x W, RGB in [0,1] then normalized per channel.
/// mask: 1 x H x W in {0,1}.
struct Sample {
    Tensor32 image;
    Tensor32 mask;
};

/// Bilinear resize for the image, nearest for the mask; mask pixels >= 128
/// become 1.
Sample load_sample(const SampleRecord& record, int height, int width);

/// Reads an 8-bit image as RGB at its source size, 3 x H x W in [0,1].
Tensor32 read_rgb(const fs::path& path);
Tensor32 normalize_image(const Tensor32& rgb01, int height, int width);

struct AugmentPolicy {
    bool hflip = true;
    double p_hflip = 0.5;
    bool vflip = true;
    double p_vflip = 0.5;
    bool zoom = true;
    double p_zoom = 0.5;
    double zoom_min = 1.0;
    double zoom_max = 1.3;
    bool rotate = true;
    double p_rotate = 0.5;
    double max_degrees = 15.0;

    static AugmentPolicy none();
    void validate() const;
};

/// Applies the same geometry to image (bilinear, replicated border) and mask
/// (nearest, zero border, re-binarized). Image values are clamped per channel
/// to the range seen before augmentation.
Sample augment(const Sample& in, const AugmentPolicy& policy, std::mt19937_64& rng);

/// Deterministic per-sample stream keyed on (seed, index, epoch).
std::mt19937_64 sample_rng(uint64_t seed, uint64_t index, uint64_t epoch);

struct Batch {
    Tensor32 images;  // N x 3 x H x W
    Tensor32 masks;   // N x 1 x H x W
};

/// Stacks samples in order. `indices` select entries of `samples`.
Batch make_batch(const std::vector<Sample>& samples, const std::vector<size_t>& indices);

}  // namespace nusg::data
