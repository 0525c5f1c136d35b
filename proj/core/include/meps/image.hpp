#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "meps/tensor.hpp"

namespace meps {

/// RGB image, channel-major planes, values nominally in [0, 1].
class Image {
 public:
  static constexpr std::size_t kChannels = 3;

  Image() = default;
  Image(std::size_t width, std::size_t height, float fill = 0.0f)
      : width_(width), height_(height), pixels_(kChannels * width * height, fill) {}

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t plane_size() const { return width_ * height_; }

  float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels_[(c * height_ + y) * width_ + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return pixels_[(c * height_ + y) * width_ + x]; }

  std::vector<float>& pixels() { return pixels_; }
  const std::vector<float>& pixels() const { return pixels_; }

  void clip();

  bool operator==(const Image&) const = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<float> pixels_;
};

/// Round-to-nearest 8-bit quantization after clipping to [0, 1].
std::uint8_t quantize(float v);

/// Decodes any PNG to 8-bit RGB (grayscale promoted, alpha dropped).
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
void write_png_gray(const std::filesystem::path& path, std::size_t width, std::size_t height,
                    const std::vector<std::uint8_t>& gray);

/// [1, 3, H, W] tensor view of an image.
template <typename T>
Tensor<T> image_to_tensor(const Image& image) {
  return Tensor<T>({1, Image::kChannels, image.height(), image.width()},
                   std::vector<T>(image.pixels().begin(), image.pixels().end()));
}

/// Batch item `index` of a [B, 3, H, W] tensor, clipped to [0, 1].
template <typename T>
Image tensor_to_image(const Tensor<T>& t, std::size_t index = 0) {
  if (t.rank() != 4 || t.dim(1) != Image::kChannels) {
    throw ShapeError("tensor_to_image expects [B,3,H,W], got " + shape_str(t.shape()));
  }
  Image img(t.dim(3), t.dim(2));
  const std::size_t n = img.pixels().size();
  for (std::size_t i = 0; i < n; ++i) img.pixels()[i] = static_cast<float>(t[index * n + i]);
  img.clip();
  return img;
}

}  // namespace meps
