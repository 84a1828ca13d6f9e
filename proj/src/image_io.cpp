#include <png.h>

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "skinnet/data.hpp"

namespace skinnet {

namespace {

// Bit depth and colour type straight from the IHDR chunk; the simplified
// libpng reader silently widens or narrows other depths.
void require_8bit(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::array<unsigned char, 26> head{};
    in.read(reinterpret_cast<char*>(head.data()), head.size());
    static constexpr unsigned char kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    if (in.gcount() != static_cast<std::streamsize>(head.size()) || std::memcmp(head.data(), kSignature, 8) != 0 ||
        std::memcmp(head.data() + 12, "IHDR", 4) != 0)
        throw DataError(path.string() + " is not a PNG file");
    if (head[24] != 8) throw DataError(path.string() + ": only 8-bit PNG is supported (bit depth " +
                                       std::to_string(head[24]) + ")");
}

std::vector<unsigned char> decode(const std::filesystem::path& path, png_uint_32 format, std::size_t& height,
                                  std::size_t& width) {
    require_8bit(path);
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw DataError(path.string() + ": " + image.message);
    image.format = format;
    std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        png_image_free(&image);
        throw DataError(path.string() + ": " + image.message);
    }
    height = image.height;
    width = image.width;
    return buffer;
}

void encode(const std::filesystem::path& path, png_uint_32 format, std::size_t height, std::size_t width,
            const std::vector<unsigned char>& buffer) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(width);
    image.height = static_cast<png_uint_32>(height);
    image.format = format;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr))
        throw DataError("cannot write " + path.string() + ": " + image.message);
}

unsigned char quantize(float v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
}

}  // namespace

Image read_png_rgb(const std::filesystem::path& path) {
    std::size_t h = 0, w = 0;
    const auto bytes = decode(path, PNG_FORMAT_RGB, h, w);
    Image img(h, w);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = static_cast<float>(bytes[i]) / 255.f;
    return img;
}

Mask read_png_mask(const std::filesystem::path& path) {
    std::size_t h = 0, w = 0;
    const auto bytes = decode(path, PNG_FORMAT_GRAY, h, w);
    Mask m(h, w);
    for (std::size_t i = 0; i < bytes.size(); ++i) m.data[i] = bytes[i] >= 128 ? 1 : 0;
    return m;
}

void write_png_rgb(const std::filesystem::path& path, const Image& image) {
    std::vector<unsigned char> bytes(image.pixels.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = quantize(image.pixels[i]);
    encode(path, PNG_FORMAT_RGB, image.height, image.width, bytes);
}

void write_png_mask(const std::filesystem::path& path, const Mask& mask) {
    std::vector<unsigned char> bytes(mask.data.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.data[i] ? 255 : 0;
    encode(path, PNG_FORMAT_GRAY, mask.height, mask.width, bytes);
}

}  // namespace skinnet
