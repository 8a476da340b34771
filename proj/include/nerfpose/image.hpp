#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace nerfpose {

// Row-major, channel-interleaved image of doubles. Colour images use three
// channels in [0, 1]; depth and opacity maps use one.
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, double fill = 0.0)
      : width_(width), height_(height), channels_(channels),
        data_(static_cast<std::size_t>(width) * height * channels, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }

  double& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

  // Bilinear sample of one channel at a continuous pixel position; the
  // position is clamped to the pixel-centre grid.
  double bilinear(double x, double y, int c = 0) const;

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool operator==(const Image& other) const = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

Image to_gray(const Image& rgb);

// 8-bit PNG (1 or 3 channels), values clamped to [0, 1].
void write_png(const Image& image, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);

// Raw little-endian float format: "IMGF", u32 height, width, channels, then
// height*width*channels f32 values.
void write_imgf(const Image& image, const std::filesystem::path& path);
Image read_imgf(const std::filesystem::path& path);

// Dispatches on the extension (.png or .imgf).
Image read_image(const std::filesystem::path& path);

}  // namespace nerfpose
