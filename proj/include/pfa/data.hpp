#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pfa/tensor.hpp"

namespace pfa {

/// One training example: RGB image in [0,1] and a strictly binary mask,
/// sharing H and W.
struct Sample {
    Tensor<float> image;  // [3,H,W]
    Tensor<float> mask;   // [1,H,W], values in {0,1}
    std::string id;
};

/// Augmentation knobs. All defaults are harness choices, not published
/// values; jitters are multiplicative half-ranges.
struct AugmentConfig {
    double rotate_max_deg = 15.0;
    double crop_fraction = 0.9;  // in (0,1]
    double brightness = 0.2;
    double saturation = 0.2;
    double contrast = 0.2;
    double hflip_prob = 0.5;
    std::uint64_t seed = 0;
};

// Binary NetPBM, 8-bit, maxval 255. P6 carries images, P5 masks/maps.
Tensor<float> read_ppm(const std::string& path);               // [3,H,W] in [0,1]
Tensor<float> read_pgm(const std::string& path);               // [1,H,W] in [0,1], raw values
void write_ppm(const std::string& path, const Tensor<float>& image);
void write_pgm(const std::string& path, const Tensor<float>& map);

/// Reads an image/mask pair; the mask is binarized at >= 0.5. Dimension
/// mismatch, malformed headers and non-255 maxval raise distinct IoErrors.
Sample load_sample(const std::string& image_path, const std::string& mask_path,
                   const std::string& id = "");
void save_sample(const Sample& sample, const std::string& image_path,
                 const std::string& mask_path);

/// Deterministic synthetic scenes: 1-3 non-overlapping solid shapes
/// (ellipse / rectangle / triangle) in uniform random colors over a smooth
/// two-color gradient plus low-amplitude noise. The mask is the exact shape
/// union; its foreground fraction is kept in [0.05, 0.5] by rejection.
/// Sample i depends only on (seed, i).
std::vector<Sample> synth_dataset(std::uint64_t seed, int count, int height = 64, int width = 64);

/// Photometric jitter touches the image only; rotation (bilinear image /
/// nearest mask, edge-replicated image corners, zero mask corners), random
/// crop-and-resize-back, and horizontal flip move image and mask identically.
/// Deterministic per (cfg.seed, index); H and W never change.
Sample augment(const Sample& sample, const AugmentConfig& cfg, std::uint64_t index);

// Dataset directory layout: images/<id>.ppm, masks/<id>.pgm, manifest.txt
// with one id per line (load order == manifest order).
void save_dataset(const std::string& dir, const std::vector<Sample>& samples);
std::vector<Sample> load_dataset(const std::string& dir);

}  // namespace pfa
