#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace cfsm {

// Interleaved H×W×C float image with values in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> data;

    Image() = default;
    Image(int h, int w, int c, float fill = 0.0f)
        : height(h), width(w), channels(c), data(static_cast<size_t>(h) * w * c, fill) {}

    float& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
    float at(int y, int x, int c) const { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }

    // Edge-clamped read, used by the filters.
    float clamped(int y, int x, int c) const;

    bool same_shape(const Image& other) const {
        return height == other.height && width == other.width && channels == other.channels;
    }
};

// 8-bit PNG I/O. Gray (1 channel) and RGB (3 channels) are supported.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

// Quantizes to the 8-bit grid used by write_png, so in-memory images match what a reload returns.
Image quantize_8bit(const Image& image);

double mean_abs_difference(const Image& a, const Image& b);

// Lays tiles (all of equal shape) out row-major with a `gap`-pixel border of `background`.
Image tile_grid(const std::vector<Image>& tiles, int rows, int cols, int gap = 1, float background = 1.0f);

}  // namespace cfsm
