#include "cfsm/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "cfsm/errors.hpp"

namespace cfsm {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

uint8_t to_byte(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

float Image::clamped(int y, int x, int c) const {
    y = std::clamp(y, 0, height - 1);
    x = std::clamp(x, 0, width - 1);
    return at(y, x, c);
}

void write_png(const std::filesystem::path& path, const Image& image) {
    if (image.channels != 1 && image.channels != 3) {
        throw ArgumentError("write_png: unsupported channel count " + std::to_string(image.channels));
    }
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw IoError("cannot open for writing: " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng init failed for " + path.string());
    }
    std::vector<uint8_t> row(static_cast<size_t>(image.width) * image.channels);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png write failed: " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, image.width, image.height, 8,
                 image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // No timestamps or gamma chunks: files are byte-identical for identical pixels.
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y) {
        for (size_t i = 0; i < row.size(); ++i) {
            row[i] = to_byte(image.data[static_cast<size_t>(y) * row.size() + i]);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw IoError("cannot open image: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng init failed for " + path.string());
    }
    Image image;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png decode failed: " + path.string());
    }
    png_init_io(png, file.get());
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int c = static_cast<int>(png_get_channels(png, info));
    image = Image(h, w, c);
    std::vector<uint8_t> row(png_get_rowbytes(png, info));
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int i = 0; i < w * c; ++i) {
            image.data[static_cast<size_t>(y) * w * c + i] = static_cast<float>(row[i]) / 255.0f;
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

Image quantize_8bit(const Image& image) {
    Image out = image;
    for (auto& v : out.data) v = static_cast<float>(to_byte(v)) / 255.0f;
    return out;
}

double mean_abs_difference(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ArgumentError("mean_abs_difference: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) acc += std::abs(static_cast<double>(a.data[i]) - b.data[i]);
    return a.data.empty() ? 0.0 : acc / static_cast<double>(a.data.size());
}

Image tile_grid(const std::vector<Image>& tiles, int rows, int cols, int gap, float background) {
    const Image* proto = nullptr;
    for (const auto& t : tiles) {
        if (t.height > 0) {
            proto = &t;
            break;
        }
    }
    if (!proto) throw ArgumentError("tile_grid: no non-empty tiles");
    if (static_cast<int>(tiles.size()) > rows * cols) throw ArgumentError("tile_grid: too many tiles");
    const int th = proto->height, tw = proto->width, ch = proto->channels;
    Image grid(rows * th + (rows + 1) * gap, cols * tw + (cols + 1) * gap, ch, background);
    for (size_t i = 0; i < tiles.size(); ++i) {
        const Image& t = tiles[i];
        if (t.height == 0) continue;  // blank cell
        if (!t.same_shape(*proto)) throw ArgumentError("tile_grid: tiles differ in shape");
        const int r = static_cast<int>(i) / cols, c = static_cast<int>(i) % cols;
        const int oy = gap + r * (th + gap), ox = gap + c * (tw + gap);
        for (int y = 0; y < th; ++y)
            for (int x = 0; x < tw; ++x)
                for (int k = 0; k < ch; ++k) grid.at(oy + y, ox + x, k) = t.at(y, x, k);
    }
    return grid;
}

}  // namespace cfsm
