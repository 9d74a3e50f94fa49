#include "egoclust/image.hpp"

#include "egoclust/tensor.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>

namespace egoclust {

namespace {

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

Image from_interleaved(const std::uint8_t* rgb, std::size_t h, std::size_t w, double maxval) {
  Image img(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < Image::kChannels; ++c)
        img.at(c, y, x) = static_cast<float>(rgb[(y * w + x) * 3 + c] / maxval);
  return img;
}

std::vector<std::uint8_t> to_interleaved(const Image& img) {
  std::vector<std::uint8_t> out(img.pixels() * 3);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < Image::kChannels; ++c) out[(y * img.width + x) * 3 + c] = to_byte(img.at(c, y, x));
  return out;
}

std::string lower_extension(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext;
}

// Next whitespace-delimited PPM header token, skipping '#' comments.
std::string ppm_token(std::istream& in) {
  std::string token;
  int ch = 0;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(ch));
  }
  return token;
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw Error(path.string() + ": cannot read PNG (" + image.message + ")");
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string message = image.message;
    png_image_free(&image);
    throw Error(path.string() + ": cannot decode PNG (" + message + ")");
  }
  return from_interleaved(buffer.data(), image.height, image.width, 255.0);
}

void write_png(const Image& img, const std::filesystem::path& path) {
  if (img.empty()) throw Error("write_png: empty image");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  const auto rgb = to_interleaved(img);
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, rgb.data(), 0, nullptr)) {
    throw Error(path.string() + ": cannot write PNG (" + image.message + ")");
  }
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(path.string() + ": cannot open");
  if (ppm_token(in) != "P6") throw Error(path.string() + ": not a binary PPM (P6)");
  std::size_t w = 0;
  std::size_t h = 0;
  int maxval = 0;
  try {
    w = std::stoul(ppm_token(in));
    h = std::stoul(ppm_token(in));
    maxval = std::stoi(ppm_token(in));
  } catch (const std::exception&) {
    throw Error(path.string() + ": malformed PPM header");
  }
  if (w == 0 || h == 0 || maxval <= 0 || maxval > 65535) throw Error(path.string() + ": invalid PPM header values");
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  std::vector<std::uint8_t> raw(w * h * 3 * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw Error(path.string() + ": truncated PPM data");
  if (bytes_per == 1) return from_interleaved(raw.data(), h, w, maxval);
  Image img(h, w);
  for (std::size_t i = 0; i < w * h * 3; ++i) {
    const double v = (raw[2 * i] << 8 | raw[2 * i + 1]) / static_cast<double>(maxval);
    const std::size_t pixel = i / 3;
    img.at(i % 3, pixel / w, pixel % w) = static_cast<float>(v);
  }
  return img;
}

void write_ppm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path.string() + ": cannot open for writing");
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  const auto rgb = to_interleaved(img);
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!out) throw Error(path.string() + ": write failed");
}

Image read_image(const std::filesystem::path& path) {
  const auto ext = lower_extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".ppm") return read_ppm(path);
  throw Error(path.string() + ": unsupported image format '" + ext + "'");
}

}  // namespace egoclust
