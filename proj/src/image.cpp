#include "nsfwguard/image.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "binary_io.hpp"
#include "nsfwguard/error.hpp"

namespace nsfwguard {
namespace {

constexpr std::string_view kImageMagic = "NSFWGUARD-IMG v1";

}  // namespace

ImageTensor::ImageTensor(std::size_t height, std::size_t width, float fill)
    : height_(height), width_(width), values_(height * width * kChannels, fill) {}

bool ImageTensor::valid() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](float v) { return std::isfinite(v) && v >= 0.0f && v <= 1.0f; });
}

std::string encode_image_file(const ImageTensor& image) {
  std::string out(kImageMagic);
  out += '\n';
  out += std::to_string(image.height()) + ' ' + std::to_string(image.width()) + ' ' +
         std::to_string(image.channels()) + '\n';
  out.reserve(out.size() + image.size() * 4);
  for (float v : image.values()) detail::append_f32_le(out, v);
  return out;
}

ImageTensor decode_image_file(const std::string& bytes) {
  auto nl1 = bytes.find('\n');
  if (nl1 == std::string::npos || std::string_view(bytes).substr(0, nl1) != kImageMagic) {
    throw ParseError(1, "missing image header");
  }
  auto nl2 = bytes.find('\n', nl1 + 1);
  if (nl2 == std::string::npos) throw ParseError(2, "missing image dimensions");
  std::size_t dim[3] = {0, 0, 0};
  const char* p = bytes.data() + nl1 + 1;
  const char* end = bytes.data() + nl2;
  for (int i = 0; i < 3; ++i) {
    while (p < end && *p == ' ') ++p;
    auto [next, ec] = std::from_chars(p, end, dim[i]);
    if (ec != std::errc()) throw ParseError(2, "bad image dimensions");
    p = next;
  }
  if (p != end) throw ParseError(2, "trailing data in dimension line");
  if (dim[2] != ImageTensor::kChannels) throw ParseError(2, "image must have 3 channels");
  if (dim[0] == 0 || dim[1] == 0 || dim[0] > 8192 || dim[1] > 8192) {
    throw ParseError(2, "image dimensions out of range");
  }
  ImageTensor image(dim[0], dim[1]);
  const std::size_t payload = image.size() * 4;
  if (bytes.size() - (nl2 + 1) != payload) throw ParseError(3, "payload size mismatch");
  const char* data = bytes.data() + nl2 + 1;
  for (std::size_t i = 0; i < image.size(); ++i) image.values()[i] = detail::read_f32_le(data + 4 * i);
  if (!image.valid()) throw ParseError(3, "pixel values must be finite and within [0,1]");
  return image;
}

void write_image(const ImageTensor& image, const std::filesystem::path& path) {
  detail::write_file(path, encode_image_file(image));
}

ImageTensor read_image(const std::filesystem::path& path) {
  return decode_image_file(detail::read_file(path));
}

}  // namespace nsfwguard
