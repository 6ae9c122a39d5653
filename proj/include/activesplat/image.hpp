#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace activesplat {

/// Row-major, interleaved multi-channel image of doubles.
class Image {
public:
  Image() = default;
  Image(int width, int height, int channels, double fill = 0.0)
      : width_(width), height_(height), channels_(channels),
        data_(static_cast<std::size_t>(width) * height * channels, fill) {
    if (width < 0 || height < 0 || channels <= 0) {
      throw std::invalid_argument("Image: invalid dimensions");
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Image& other) const {
    return width_ == other.width_ && height_ == other.height_ && channels_ == other.channels_;
  }
  bool same_size(const Image& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }

  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  static Image nan_like(int width, int height, int channels = 1) {
    return Image(width, height, channels, std::numeric_limits<double>::quiet_NaN());
  }

private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  std::vector<double> data_;
};

/// Binary 8-bit PPM (P6). Values are clamped to [0,1] and rounded.
void write_ppm(const std::filesystem::path& path, const Image& rgb);
Image read_ppm(const std::filesystem::path& path);

/// Binary 8-bit PGM (P5) of a single-channel image in [0,1].
void write_pgm(const std::filesystem::path& path, const Image& gray);
/// Reads a PGM; values are returned normalized to [0,1].
Image read_pgm(const std::filesystem::path& path);

/// Depth files: 16-byte ASCII header "SSDEPTH W H\n" padded with spaces
/// before the newline, followed by row-major little-endian float32 values.
void write_depth(const std::filesystem::path& path, const Image& depth);
Image read_depth(const std::filesystem::path& path);

/// Header bytes used by write_depth, exposed for format tests.
std::string depth_header(int width, int height);

}  // namespace activesplat
