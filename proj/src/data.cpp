#include "skinnet/data.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

namespace skinnet {

Normalization parse_normalization(std::string_view name) {
    if (name == "standardize") return Normalization::standardize;
    if (name == "minmax") return Normalization::minmax;
    if (name == "none") return Normalization::none;
    throw std::invalid_argument("unknown normalization mode '" + std::string(name) + "'");
}

std::string_view to_string(Normalization mode) {
    switch (mode) {
        case Normalization::standardize: return "standardize";
        case Normalization::minmax: return "minmax";
        case Normalization::none: return "none";
    }
    return "none";
}

AugmentationConfig AugmentationConfig::identity() {
    AugmentationConfig cfg;
    cfg.rotation_deg = 0;
    cfg.hflip_prob = 0;
    cfg.vflip_prob = 0;
    cfg.color_shift = 0;
    cfg.translation = 0;
    cfg.scale_min = 1;
    cfg.scale_max = 1;
    return cfg;
}

void AugmentationConfig::validate() const {
    const double values[] = {rotation_deg, hflip_prob, vflip_prob, color_shift, translation, scale_min, scale_max};
    for (double v : values)
        if (!std::isfinite(v)) throw std::invalid_argument("AugmentationConfig: non-finite value");
    if (hflip_prob < 0 || hflip_prob > 1 || vflip_prob < 0 || vflip_prob > 1)
        throw std::invalid_argument("AugmentationConfig: flip probabilities must lie in [0,1]");
    if (rotation_deg < 0 || color_shift < 0 || translation < 0)
        throw std::invalid_argument("AugmentationConfig: ranges must be non-negative");
    if (!(scale_min > 0) || scale_max < scale_min)
        throw std::invalid_argument("AugmentationConfig: need 0 < scale_min <= scale_max");
}

std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    static constexpr std::string_view kMaskSuffix = "_segmentation";
    static constexpr std::string_view kSuperpixelSuffix = "_superpixels";

    std::map<std::string, fs::path> images, masks;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
        const std::string stem = entry.path().stem().string();
        if (stem.ends_with(kSuperpixelSuffix)) continue;
        auto& target = stem.ends_with(kMaskSuffix) ? masks : images;
        const std::string id = stem.ends_with(kMaskSuffix) ? stem.substr(0, stem.size() - kMaskSuffix.size()) : stem;
        if (!target.emplace(id, entry.path()).second) throw DataError("duplicate file for id '" + id + "'");
    }

    std::vector<Sample> samples;
    for (const auto& [id, image_path] : images) {
        auto it = masks.find(id);
        if (it == masks.end()) throw DataError("image '" + id + "' has no " + id + "_segmentation.png");
        Sample s{id, read_png_rgb(image_path), read_png_mask(it->second)};
        if (s.image.height != s.mask.height || s.image.width != s.mask.width)
            throw DataError("image and mask extents differ for '" + id + "'");
        samples.push_back(std::move(s));
    }
    for (const auto& [id, path] : masks)
        if (!images.contains(id)) throw DataError("mask '" + path.filename().string() + "' has no image");
    return samples;
}

void save_dataset(const std::filesystem::path& dir, std::span<const Sample> samples) {
    std::filesystem::create_directories(dir);
    for (const auto& s : samples) {
        write_png_rgb(dir / (s.id + ".png"), s.image);
        write_png_mask(dir / (s.id + "_segmentation.png"), s.mask);
    }
}

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width) {
    if (image.height == height && image.width == width) return image;
    Image out(height, width);
    const double sy = static_cast<double>(image.height) / static_cast<double>(height);
    const double sx = static_cast<double>(image.width) / static_cast<double>(width);
    for (std::size_t y = 0; y < height; ++y) {
        const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height - 1));
        const auto y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, image.height - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < width; ++x) {
            const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width - 1));
            const auto x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, image.width - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < 3; ++c) {
                const double top = (1 - wx) * image.at(y0, x0, c) + wx * image.at(y0, x1, c);
                const double bottom = (1 - wx) * image.at(y1, x0, c) + wx * image.at(y1, x1, c);
                out.at(y, x, c) = static_cast<float>((1 - wy) * top + wy * bottom);
            }
        }
    }
    return out;
}

Mask resize_nearest(const Mask& mask, std::size_t height, std::size_t width) {
    Mask out(height, width);
    for (std::size_t y = 0; y < height; ++y) {
        const std::size_t sy = std::min(y * mask.height / height, mask.height - 1);
        for (std::size_t x = 0; x < width; ++x) out.at(y, x) = mask.at(sy, std::min(x * mask.width / width, mask.width - 1));
    }
    return out;
}

Image normalize(const Image& image, Normalization mode) {
    if (mode == Normalization::none || image.pixels.empty()) return image;
    Image out = image;
    const std::size_t n = image.height * image.width;

    if (mode == Normalization::standardize) {
        for (std::size_t c = 0; c < 3; ++c) {
            double mean = 0;
            for (std::size_t i = 0; i < n; ++i) mean += image.pixels[i * 3 + c];
            mean /= static_cast<double>(n);
            double var = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = image.pixels[i * 3 + c] - mean;
                var += d * d;
            }
            const double std_dev = std::sqrt(std::max(var / static_cast<double>(n), 1e-6));
            for (std::size_t i = 0; i < n; ++i)
                out.pixels[i * 3 + c] = static_cast<float>((image.pixels[i * 3 + c] - mean) / std_dev);
        }
    }

    // Joint min-max over all channels back into [0,1].
    const auto [lo, hi] = std::minmax_element(out.pixels.begin(), out.pixels.end());
    const double min = *lo, range = *hi - *lo;
    for (auto& v : out.pixels) v = range > 1e-12 ? static_cast<float>((v - min) / range) : 0.f;
    return out;
}

Sample preprocess(const Sample& sample, std::size_t size, Normalization mode) {
    if (size < 16) throw std::invalid_argument("preprocess: size must be >= 16");
    if (sample.image.height != sample.mask.height || sample.image.width != sample.mask.width)
        throw DataError("preprocess: image and mask extents differ for '" + sample.id + "'");
    return Sample{sample.id, normalize(resize_bilinear(sample.image, size, size), mode),
                  resize_nearest(sample.mask, size, size)};
}

Sample augment(const Sample& sample, const AugmentationConfig& cfg, Rng& rng) {
    const double angle = uniform(rng, -cfg.rotation_deg, cfg.rotation_deg) * std::numbers::pi / 180.0;
    const bool hflip = bernoulli(rng, cfg.hflip_prob);
    const bool vflip = bernoulli(rng, cfg.vflip_prob);
    double shift[3];
    for (auto& s : shift) s = uniform(rng, -cfg.color_shift, cfg.color_shift);
    const double tx = uniform(rng, -cfg.translation, cfg.translation) * static_cast<double>(sample.image.width);
    const double ty = uniform(rng, -cfg.translation, cfg.translation) * static_cast<double>(sample.image.height);
    const double scale = uniform(rng, cfg.scale_min, cfg.scale_max);

    const std::size_t H = sample.image.height, W = sample.image.width;
    Sample out{sample.id, Image(H, W), Mask(H, W)};
    const double cx = (static_cast<double>(W) - 1) / 2, cy = (static_cast<double>(H) - 1) / 2;
    const double cos_a = std::cos(angle), sin_a = std::sin(angle);

    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            // Inverse map: output pixel -> source pixel.
            const double u = (static_cast<double>(x) - cx - tx) / scale;
            const double v = (static_cast<double>(y) - cy - ty) / scale;
            const double fx = std::floor(cx + cos_a * u + sin_a * v + 0.5);
            const double fy = std::floor(cy - sin_a * u + cos_a * v + 0.5);
            if (fx < 0 || fy < 0 || fx >= static_cast<double>(W) || fy >= static_cast<double>(H)) continue;
            std::size_t sx = static_cast<std::size_t>(fx), sy = static_cast<std::size_t>(fy);
            if (hflip) sx = W - 1 - sx;
            if (vflip) sy = H - 1 - sy;
            out.mask.at(y, x) = sample.mask.at(sy, sx);
            for (std::size_t c = 0; c < 3; ++c) out.image.at(y, x, c) = sample.image.at(sy, sx, c);
        }
    }
    if (cfg.color_shift > 0) {
        for (std::size_t i = 0; i < H * W; ++i)
            for (std::size_t c = 0; c < 3; ++c) {
                float& p = out.image.pixels[i * 3 + c];
                p = std::clamp(static_cast<float>(p + shift[c]), 0.f, 1.f);
            }
    }
    return out;
}

template <typename Real>
Tensor<Real> one_hot(const Mask& mask) {
    if (!mask.is_binary()) throw std::invalid_argument("one_hot: mask is not binary");
    Tensor<Real> out({2, mask.height, mask.width});
    const std::size_t plane = mask.height * mask.width;
    for (std::size_t i = 0; i < plane; ++i) {
        out[i] = mask.data[i] ? Real(0) : Real(1);
        out[plane + i] = mask.data[i] ? Real(1) : Real(0);
    }
    return out;
}

template <typename Real>
Tensor<Real> image_batch(std::span<const Sample> samples) {
    if (samples.empty()) throw std::invalid_argument("image_batch: empty batch");
    const std::size_t H = samples[0].image.height, W = samples[0].image.width, plane = H * W;
    Tensor<Real> out({samples.size(), 3, H, W});
    for (std::size_t b = 0; b < samples.size(); ++b) {
        const Image& img = samples[b].image;
        if (img.height != H || img.width != W) throw ShapeError("image_batch: samples differ in size");
        for (std::size_t i = 0; i < plane; ++i)
            for (std::size_t c = 0; c < 3; ++c) out[(b * 3 + c) * plane + i] = static_cast<Real>(img.pixels[i * 3 + c]);
    }
    return out;
}

template <typename Real>
Tensor<Real> target_batch(std::span<const Sample> samples) {
    if (samples.empty()) throw std::invalid_argument("target_batch: empty batch");
    const std::size_t H = samples[0].mask.height, W = samples[0].mask.width, plane = H * W;
    Tensor<Real> out({samples.size(), 2, H, W});
    for (std::size_t b = 0; b < samples.size(); ++b) {
        if (samples[b].mask.height != H || samples[b].mask.width != W)
            throw ShapeError("target_batch: samples differ in size");
        const Tensor<Real> hot = one_hot<Real>(samples[b].mask);
        std::copy(hot.data().begin(), hot.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * 2 * plane));
    }
    return out;
}

FoldSplit kfold_split(std::span<const std::string> ids, int k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("kfold_split: k must be >= 2");
    if (ids.size() < static_cast<std::size_t>(k))
        throw std::invalid_argument("kfold_split: " + std::to_string(ids.size()) + " ids cannot fill " +
                                    std::to_string(k) + " folds");
    std::vector<std::string> order(ids.begin(), ids.end());
    Rng rng(seed);
    shuffle(order, rng);
    FoldSplit split;
    split.folds.resize(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < order.size(); ++i) split.folds[i % static_cast<std::size_t>(k)].push_back(order[i]);
    return split;
}

std::vector<Sample> synthetic_dataset(std::size_t count, std::size_t size, std::uint64_t seed) {
    if (size < 8) throw std::invalid_argument("synthetic_dataset: size must be >= 8");
    std::vector<Sample> samples;
    samples.reserve(count);
    const double S = static_cast<double>(size);
    for (std::size_t n = 0; n < count; ++n) {
        Rng rng(mix_seed(seed, n, 0x5EED));
        Sample s{fmt::format("synthetic_{:04d}", n), Image(size, size), Mask(size, size)};

        const double skin[3] = {uniform(rng, 0.78, 0.92), uniform(rng, 0.58, 0.70), uniform(rng, 0.48, 0.60)};
        const double lesion[3] = {uniform(rng, 0.30, 0.50), uniform(rng, 0.18, 0.32), uniform(rng, 0.10, 0.22)};
        const double freq_x = uniform(rng, 2, 6) * 2 * std::numbers::pi / S;
        const double freq_y = uniform(rng, 2, 6) * 2 * std::numbers::pi / S;
        const double phase = uniform(rng, 0, 2 * std::numbers::pi);

        const double ecx = uniform(rng, 0.35, 0.65) * S, ecy = uniform(rng, 0.35, 0.65) * S;
        const double ra = uniform(rng, 0.15, 0.30) * S, rb = uniform(rng, 0.12, 0.25) * S;
        const double theta = uniform(rng, 0, std::numbers::pi);
        const double ct = std::cos(theta), st = std::sin(theta);

        for (std::size_t y = 0; y < size; ++y) {
            for (std::size_t x = 0; x < size; ++x) {
                const double dx = static_cast<double>(x) + 0.5 - ecx, dy = static_cast<double>(y) + 0.5 - ecy;
                const double u = (ct * dx + st * dy) / ra, v = (-st * dx + ct * dy) / rb;
                const bool inside = u * u + v * v <= 1.0;
                s.mask.at(y, x) = inside ? 1 : 0;
                const double texture = 0.04 * std::sin(freq_x * static_cast<double>(x) + phase) *
                                       std::cos(freq_y * static_cast<double>(y));
                const double noise = uniform(rng, -0.03, 0.03);
                for (std::size_t c = 0; c < 3; ++c) {
                    const double base = inside ? lesion[c] : skin[c];
                    s.image.at(y, x, c) = static_cast<float>(std::clamp(base + texture + noise, 0.0, 1.0));
                }
            }
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

template Tensor<float> one_hot<float>(const Mask&);
template Tensor<double> one_hot<double>(const Mask&);
template Tensor<float> image_batch<float>(std::span<const Sample>);
template Tensor<double> image_batch<double>(std::span<const Sample>);
template Tensor<float> target_batch<float>(std::span<const Sample>);
template Tensor<double> target_batch<double>(std::span<const Sample>);

}  // namespace skinnet
