#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "skinnet/objective.hpp"
#include "skinnet/random.hpp"
#include "skinnet/tensor.hpp"

namespace skinnet {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// H x W RGB image, interleaved (y, x, channel), values in [0,1].
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w, float fill = 0.f) : height(h), width(w), pixels(h * w * 3, fill) {}

    float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
    float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
    bool operator==(const Image&) const = default;
};

struct Sample {
    std::string id;
    Image image;
    Mask mask;
};

enum class Normalization { standardize, minmax, none };

Normalization parse_normalization(std::string_view name);
std::string_view to_string(Normalization mode);

struct AugmentationConfig {
    double rotation_deg = 25.0;  // angle drawn from [-r, r]
    double hflip_prob = 0.5;
    double vflip_prob = 0.5;
    double color_shift = 0.1;  // per-channel additive shift from [-c, c]
    double translation = 0.1;  // fraction of the extent, [-t, t] per axis
    double scale_min = 0.9;
    double scale_max = 1.1;

    /// Every transform off: augment() returns its input unchanged.
    static AugmentationConfig identity();
    void validate() const;
};

// PNG input/output (8-bit only).
Image read_png_rgb(const std::filesystem::path& path);
/// Grayscale 8-bit mask; pixels >= 128 are lesion.
Mask read_png_mask(const std::filesystem::path& path);
void write_png_rgb(const std::filesystem::path& path, const Image& image);
/// Lesion = 255, background = 0.
void write_png_mask(const std::filesystem::path& path, const Mask& mask);

/// Pairs `<id>.png` with `<id>_segmentation.png` anywhere below `dir`
/// ("_superpixels.png" files are ignored). Samples come back sorted by id.
std::vector<Sample> load_dataset(const std::filesystem::path& dir);

/// Writes samples in the layout load_dataset() reads.
void save_dataset(const std::filesystem::path& dir, std::span<const Sample> samples);

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);
Mask resize_nearest(const Mask& mask, std::size_t height, std::size_t width);
Image normalize(const Image& image, Normalization mode);

/// Resizes to size x size (bilinear image, nearest mask) and normalizes.
Sample preprocess(const Sample& sample, std::size_t size, Normalization mode = Normalization::standardize);

/// One random draw per transform. Geometry is applied identically to image
/// and mask with nearest-neighbour sampling and zero fill; the colour shift
/// touches the image only and is clamped to [0,1].
Sample augment(const Sample& sample, const AugmentationConfig& cfg, Rng& rng);

/// (2,H,W): channel 0 background, channel 1 lesion.
template <typename Real>
Tensor<Real> one_hot(const Mask& mask);

/// (B,3,H,W) image batch and (B,2,H,W) one-hot targets.
template <typename Real>
Tensor<Real> image_batch(std::span<const Sample> samples);
template <typename Real>
Tensor<Real> target_batch(std::span<const Sample> samples);

struct FoldSplit {
    std::vector<std::vector<std::string>> folds;
};

/// Seeded permutation dealt round-robin into k folds.
FoldSplit kfold_split(std::span<const std::string> ids, int k, std::uint64_t seed);

/// Textured skin-like background with one darker elliptical lesion per image.
std::vector<Sample> synthetic_dataset(std::size_t count, std::size_t size, std::uint64_t seed);

}  // namespace skinnet
