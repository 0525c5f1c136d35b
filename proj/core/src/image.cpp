#include "meps/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace meps {

void Image::clip() {
  for (float& v : pixels_) v = std::clamp(v, 0.0f, 1.0f);
}

std::uint8_t quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + msg);
  }
  Image img(png.width, png.height);
  const std::size_t plane = img.plane_size();
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < Image::kChannels; ++c) {
      img.pixels()[c * plane + i] = static_cast<float>(buf[i * 3 + c]) / 255.0f;
    }
  }
  return img;
}

namespace {

void write_raw(const std::filesystem::path& path, std::size_t width, std::size_t height,
               png_uint_32 format, const std::vector<std::uint8_t>& bytes) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(width);
  png.height = static_cast<png_uint_32>(height);
  png.format = format;
  if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + png.message);
  }
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  const std::size_t plane = image.plane_size();
  std::vector<std::uint8_t> buf(plane * 3);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < Image::kChannels; ++c) buf[i * 3 + c] = quantize(image.pixels()[c * plane + i]);
  }
  write_raw(path, image.width(), image.height(), PNG_FORMAT_RGB, buf);
}

void write_png_gray(const std::filesystem::path& path, std::size_t width, std::size_t height,
                    const std::vector<std::uint8_t>& gray) {
  if (gray.size() != width * height) throw std::invalid_argument("write_png_gray: size mismatch");
  write_raw(path, width, height, PNG_FORMAT_GRAY, gray);
}

}  // namespace meps
