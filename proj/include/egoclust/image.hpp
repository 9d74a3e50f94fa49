#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <random>
#include <utility>
#include <vector>

namespace egoclust {

/// Three-channel float image, CHW order, values in [0, 1].
struct Image {
  static constexpr std::size_t kChannels = 3;

  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), data(kChannels * h * w, fill) {}

  float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
  std::size_t pixels() const { return height * width; }
  bool empty() const { return data.empty(); }

  bool operator==(const Image&) const = default;
};

void clamp01(Image& img);
bool in_unit_range(const Image& img);
double mean_value(const Image& img);

struct AugmentPolicy {
  std::array<double, 2> crop_scale{0.2, 1.0};
  std::array<double, 2> crop_ratio{3.0 / 4.0, 4.0 / 3.0};
  double flip_p = 0.5;
  // brightness, contrast, saturation, hue
  std::array<double, 4> jitter{0.8, 0.8, 0.8, 0.2};
  double jitter_p = 0.8;
  double grayscale_p = 0.2;
  std::array<double, 2> blur_sigma{0.1, 2.0};
  double blur_p = 0.5;
  std::size_t output_size = 64;

  /// Throws on out-of-range probabilities, scales or sigmas.
  void validate() const;

  /// Every random branch disabled: full-image crop, no flip/jitter/gray/blur.
  static AugmentPolicy deterministic(std::size_t output_size);
  /// The reduced chain used for probe-time augmentation (crop + flip only).
  static AugmentPolicy crop_and_flip(std::size_t output_size);
};

Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w);
Image crop(const Image& img, std::size_t top, std::size_t left, std::size_t h, std::size_t w);

struct CropBox {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

CropBox sample_crop_box(std::size_t height, std::size_t width, const std::array<double, 2>& scale,
                        const std::array<double, 2>& ratio, std::mt19937_64& rng);

Image random_resized_crop(const Image& img, const AugmentPolicy& policy, std::mt19937_64& rng);

Image flip_horizontal(const Image& img);
Image horizontal_flip(const Image& img, double p, std::mt19937_64& rng);

Image adjust_brightness(const Image& img, double factor);
Image adjust_contrast(const Image& img, double factor);
Image adjust_saturation(const Image& img, double factor);
// Rotates hue by `shift` turns, shift in [-0.5, 0.5].
Image adjust_hue(const Image& img, double shift);
Image color_distort(const Image& img, const AugmentPolicy& policy, std::mt19937_64& rng);

Image grayscale(const Image& img);
Image to_grayscale(const Image& img, double p, std::mt19937_64& rng);

/// Normalized 1-D Gaussian taps, radius ceil(3 sigma).
std::vector<float> gaussian_kernel(double sigma);
/// Separable blur with reflect padding (edge sample not repeated).
Image gaussian_blur(const Image& img, double sigma);
Image random_gaussian_blur(const Image& img, const AugmentPolicy& policy, std::mt19937_64& rng);

/// One draw of crop -> flip -> color -> grayscale -> blur.
Image augment(const Image& img, const AugmentPolicy& policy, std::mt19937_64& rng);
/// Two independent draws of the augmentation chain from one source image.
std::pair<Image, Image> make_views(const Image& img, const AugmentPolicy& policy, std::mt19937_64& rng);

// ---- file I/O --------------------------------------------------------------

Image read_image(const std::filesystem::path& path);  // PNG or binary PPM (P6)
Image read_png(const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);
void write_png(const Image& img, const std::filesystem::path& path);
void write_ppm(const Image& img, const std::filesystem::path& path);

}  // namespace egoclust
