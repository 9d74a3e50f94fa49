#include "egoclust/image.hpp"

#include "egoclust/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace egoclust {

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool coin(std::mt19937_64& rng, double p) {
  // Always draw so the stream position does not depend on p.
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return u < p;
}

float luma(float r, float g, float b) {
  return static_cast<float>(0.299 * r + 0.587 * g + 0.114 * b);
}

void check_probability(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error(std::string("augment policy: ") + what + " must lie in [0,1]");
}

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
  return static_cast<std::size_t>(i);
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float d = mx - mn;
  v = mx;
  s = mx > 0.0f ? d / mx : 0.0f;
  if (d == 0.0f) {
    h = 0.0f;
    return;
  }
  if (mx == r) {
    h = (g - b) / d;
  } else if (mx == g) {
    h = 2.0f + (b - r) / d;
  } else {
    h = 4.0f + (r - g) / d;
  }
  h /= 6.0f;
  if (h < 0.0f) h += 1.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  const float h6 = h * 6.0f;
  const int sector = static_cast<int>(std::floor(h6)) % 6;
  const float f = h6 - std::floor(h6);
  const float p = v * (1.0f - s);
  const float q = v * (1.0f - s * f);
  const float t = v * (1.0f - s * (1.0f - f));
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

}  // namespace

void clamp01(Image& img) {
  for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
}

bool in_unit_range(const Image& img) {
  return std::all_of(img.data.begin(), img.data.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
}

double mean_value(const Image& img) {
  if (img.data.empty()) return 0.0;
  return std::accumulate(img.data.begin(), img.data.end(), 0.0) / static_cast<double>(img.data.size());
}

void AugmentPolicy::validate() const {
  if (!(crop_scale[0] > 0.0 && crop_scale[0] <= crop_scale[1] && crop_scale[1] <= 1.0)) {
    throw Error("augment policy: crop scale range must satisfy 0 < lo <= hi <= 1");
  }
  if (!(crop_ratio[0] > 0.0 && crop_ratio[0] <= crop_ratio[1])) {
    throw Error("augment policy: crop aspect range must be positive and ordered");
  }
  check_probability(flip_p, "flip probability");
  check_probability(jitter_p, "color jitter probability");
  check_probability(grayscale_p, "grayscale probability");
  check_probability(blur_p, "blur probability");
  for (double s : jitter) {
    if (s < 0.0) throw Error("augment policy: jitter strengths must be non-negative");
  }
  if (jitter[3] > 0.5) throw Error("augment policy: hue strength must be at most 0.5");
  if (!(blur_sigma[0] > 0.0 && blur_sigma[0] <= blur_sigma[1])) {
    throw Error("augment policy: blur sigma range must be positive and ordered");
  }
  if (output_size == 0) throw Error("augment policy: output size must be positive");
}

AugmentPolicy AugmentPolicy::deterministic(std::size_t output_size) {
  AugmentPolicy p;
  p.crop_scale = {1.0, 1.0};
  p.crop_ratio = {1.0, 1.0};
  p.flip_p = 0.0;
  p.jitter = {0.0, 0.0, 0.0, 0.0};
  p.jitter_p = 0.0;
  p.grayscale_p = 0.0;
  p.blur_p = 0.0;
  p.output_size = output_size;
  return p;
}

AugmentPolicy AugmentPolicy::crop_and_flip(std::size_t output_size) {
  AugmentPolicy p = deterministic(output_size);
  p.crop_scale = {0.2, 1.0};
  p.crop_ratio = {3.0 / 4.0, 4.0 / 3.0};
  p.flip_p = 0.5;
  return p;
}

Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w) {
  if (img.empty() || out_h == 0 || out_w == 0) throw Error("resize of empty image");
  Image out(out_h, out_w);
  const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < Image::kChannels; ++c) {
        const double top = img.at(c, y0, x0) * (1.0 - wx) + img.at(c, y0, x1) * wx;
        const double bottom = img.at(c, y1, x0) * (1.0 - wx) + img.at(c, y1, x1) * wx;
        out.at(c, y, x) = static_cast<float>(top * (1.0 - wy) + bottom * wy);
      }
    }
  }
  clamp01(out);
  return out;
}

Image crop(const Image& img, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0 || top + h > img.height || left + w > img.width) throw Error("crop box outside image");
  Image out(h, w);
  for (std::size_t c = 0; c < Image::kChannels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, top + y, left + x);
  return out;
}

CropBox sample_crop_box(std::size_t height, std::size_t width, const std::array<double, 2>& scale,
                        const std::array<double, 2>& ratio, std::mt19937_64& rng) {
  const double area = static_cast<double>(height * width);
  const double log_lo = std::log(ratio[0]);
  const double log_hi = std::log(ratio[1]);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * uniform(rng, scale[0], scale[1]);
    const double aspect = log_lo == log_hi ? ratio[0] : std::exp(uniform(rng, log_lo, log_hi));
    const auto w = static_cast<std::size_t>(std::lround(std::sqrt(target * aspect)));
    const auto h = static_cast<std::size_t>(std::lround(std::sqrt(target / aspect)));
    if (w >= 1 && h >= 1 && w <= width && h <= height) {
      const auto top = std::uniform_int_distribution<std::size_t>(0, height - h)(rng);
      const auto left = std::uniform_int_distribution<std::size_t>(0, width - w)(rng);
      return {top, left, h, w};
    }
  }
  // Fallback: centered crop with the aspect clamped into range.
  const double in_ratio = static_cast<double>(width) / static_cast<double>(height);
  std::size_t w = width;
  std::size_t h = height;
  if (in_ratio < ratio[0]) {
    h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(w) / ratio[0])));
  } else if (in_ratio > ratio[1]) {
    w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(h) * ratio[1])));
  }
  return {(height - h) / 2, (width - w) / 2, h, w};
}

Image random_resized_crop(const Image& img, const AugmentPolicy& policy, std::mt19937_64& rng) {
  if (img.height < 2 || img.width < 2) throw Error("random_resized_crop: source smaller than 2x2");
  const auto box = sample_crop_box(img.height, img.width, policy.crop_scale, policy.crop_ratio, rng);
  return resize_bilinear(crop(img, box.top, box.left, box.height, box.width), policy.output_size,
                         policy.output_size);
}

Image flip_horizontal(const Image& img) {
  Image out(img.height, img.width);
  for (std::size_t c = 0; c < Image::kChannels; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

Image horizontal_flip(const Image& img, double p, std::mt19937_64& rng) {
  return coin(rng, p) ? flip_horizontal(img) : img;
}

Image adjust_brightness(const Image& img, double factor) {
  Image out = img;
  for (auto& v : out.data) v = static_cast<float>(v * factor);
  clamp01(out);
  return out;
}

Image adjust_contrast(const Image& img, double factor) {
  double m = 0.0;
  for (std::size_t i = 0; i < img.pixels(); ++i) {
    m += luma(img.data[i], img.data[img.pixels() + i], img.data[2 * img.pixels() + i]);
  }
  m /= static_cast<double>(img.pixels());
  Image out = img;
  for (auto& v : out.data) v = static_cast<float>(factor * v + (1.0 - factor) * m);
  clamp01(out);
  return out;
}

Image adjust_saturation(const Image& img, double factor) {
  Image out = img;
  const std::size_t n = img.pixels();
  for (std::size_t i = 0; i < n; ++i) {
    const double gray = luma(img.data[i], img.data[n + i], img.data[2 * n + i]);
    for (std::size_t c = 0; c < Image::kChannels; ++c) {
      out.data[c * n + i] = static_cast<float>(factor * img.data[c * n + i] + (1.0 - factor) * gray);
    }
  }
  clamp01(out);
  return out;
}

Image adjust_hue(const Image& img, double shift) {
  Image out = img;
  const std::size_t n = img.pixels();
  for (std::size_t i = 0; i < n; ++i) {
    float h = 0, s = 0, v = 0;
    rgb_to_hsv(img.data[i], img.data[n + i], img.data[2 * n + i], h, s, v);
    h = static_cast<float>(h + shift);
    h -= std::floor(h);
    hsv_to_rgb(h, s, v, out.data[i], out.data[n + i], out.data[2 * n + i]);
  }
  clamp01(out);
  return out;
}

Image color_distort(const Image& img, const AugmentPolicy& policy, std::mt19937_64& rng) {
  if (!coin(rng, policy.jitter_p)) return img;
  std::array<int, 4> order{0, 1, 2, 3};
  std::shuffle(order.begin(), order.end(), rng);
  Image out = img;
  for (int op : order) {
    const double s = policy.jitter[op];
    if (s == 0.0) continue;
    switch (op) {
      case 0: out = adjust_brightness(out, uniform(rng, std::max(0.0, 1.0 - s), 1.0 + s)); break;
      case 1: out = adjust_contrast(out, uniform(rng, std::max(0.0, 1.0 - s), 1.0 + s)); break;
      case 2: out = adjust_saturation(out, uniform(rng, std::max(0.0, 1.0 - s), 1.0 + s)); break;
      case 3: out = adjust_hue(out, uniform(rng, -s, s)); break;
    }
  }
  return out;
}

Image grayscale(const Image& img) {
  Image out = img;
  const std::size_t n = img.pixels();
  for (std::size_t i = 0; i < n; ++i) {
    const float y = luma(img.data[i], img.data[n + i], img.data[2 * n + i]);
    out.data[i] = out.data[n + i] = out.data[2 * n + i] = y;
  }
  clamp01(out);
  return out;
}

Image to_grayscale(const Image& img, double p, std::mt19937_64& rng) {
  return coin(rng, p) ? grayscale(img) : img;
}

std::vector<float> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw Error("gaussian blur sigma must be positive");
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> taps;
  double total = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double w = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    taps.push_back(w);
    total += w;
  }
  std::vector<float> out;
  out.reserve(taps.size());
  for (double w : taps) out.push_back(static_cast<float>(w / total));
  return out;
}

Image gaussian_blur(const Image& img, double sigma) {
  const auto kernel = gaussian_kernel(sigma);
  const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  Image tmp(img.height, img.width);
  Image out(img.height, img.width);
  for (std::size_t c = 0; c < Image::kChannels; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < img.width; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          acc += kernel[k + radius] * img.at(c, y, reflect(static_cast<std::ptrdiff_t>(x) + k, img.width));
        }
        tmp.at(c, y, x) = static_cast<float>(acc);
      }
    }
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < img.width; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          acc += kernel[k + radius] * tmp.at(c, reflect(static_cast<std::ptrdiff_t>(y) + k, img.height), x);
        }
        out.at(c, y, x) = static_cast<float>(acc);
      }
    }
  }
  clamp01(out);
  return out;
}

Image random_gaussian_blur(const Image& img, const AugmentPolicy& policy, std::mt19937_64& rng) {
  if (!coin(rng, policy.blur_p)) return img;
  return gaussian_blur(img, uniform(rng, policy.blur_sigma[0], policy.blur_sigma[1]));
}

Image augment(const Image& img, const AugmentPolicy& policy, std::mt19937_64& rng) {
  Image out = random_resized_crop(img, policy, rng);
  out = horizontal_flip(out, policy.flip_p, rng);
  out = color_distort(out, policy, rng);
  out = to_grayscale(out, policy.grayscale_p, rng);
  out = random_gaussian_blur(out, policy, rng);
  return out;
}

std::pair<Image, Image> make_views(const Image& img, const AugmentPolicy& policy, std::mt19937_64& rng) {
  policy.validate();
  Image first = augment(img, policy, rng);
  Image second = augment(img, policy, rng);
  return {std::move(first), std::move(second)};
}

}  // namespace egoclust
