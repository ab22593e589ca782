#pragma once

// Float images in [0,1] with 8-bit lossless PNG I/O.

#include <cstdint>
#include <string>
#include <vector>

namespace hrf::img {

struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;  // 1 (gray) or 3 (rgb)
    std::vector<double> data;  // row-major [y][x][c]

    double at(int x, int y, int c = 0) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double& at(int x, int y, int c = 0) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

Image make_image(int width, int height, int channels, double fill = 0.0);

// Values are clamped to [0,1] and quantized to 8 bits on write.
void write_png(const std::string& path, const Image& image);
Image read_png(const std::string& path);

std::uint32_t file_crc32(const std::string& path);

}  // namespace hrf::img
