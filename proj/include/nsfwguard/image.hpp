#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace nsfwguard {

/// RGB image with values in [0,1], stored row-major as (y, x, channel).
class ImageTensor {
 public:
  static constexpr std::size_t kChannels = 3;

  ImageTensor() = default;
  ImageTensor(std::size_t height, std::size_t width, float fill = 0.0f);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return kChannels; }
  std::size_t size() const noexcept { return values_.size(); }

  float& at(std::size_t y, std::size_t x, std::size_t c) {
    return values_[(y * width_ + x) * kChannels + c];
  }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return values_[(y * width_ + x) * kChannels + c];
  }

  std::vector<float>& values() noexcept { return values_; }
  const std::vector<float>& values() const noexcept { return values_; }

  /// All values finite and inside [0,1].
  bool valid() const;

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<float> values_;
};

// Image tensor file: "NSFWGUARD-IMG v1\n", "h w c\n", then h*w*c
// little-endian float32 values in row-major order.
std::string encode_image_file(const ImageTensor& image);
/// Throws ParseError on malformed bytes (including out-of-range values).
ImageTensor decode_image_file(const std::string& bytes);

void write_image(const ImageTensor& image, const std::filesystem::path& path);
ImageTensor read_image(const std::filesystem::path& path);

}  // namespace nsfwguard
