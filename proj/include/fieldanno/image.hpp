#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace fieldanno {

// Interleaved 8-bit RGB, row-major, no padding.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("image dimensions must be positive");
  }

  bool empty() const { return rgb.empty(); }

  std::uint8_t* pixel(int x, int y) {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  const std::uint8_t* pixel(int x, int y) const {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// Bilinear resampling with pixel-center alignment. Aspect ratio is not kept.
inline Image resize_bilinear(const Image& src, int width, int height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("target dimensions must be positive");
  if (src.width == width && src.height == height) return src;
  Image dst(width, height);
  const double sx = static_cast<double>(src.width) / width;
  const double sy = static_cast<double>(src.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      const auto* p00 = src.pixel(x0, y0);
      const auto* p01 = src.pixel(x1, y0);
      const auto* p10 = src.pixel(x0, y1);
      const auto* p11 = src.pixel(x1, y1);
      auto* out = dst.pixel(x, y);
      for (int c = 0; c < 3; ++c) {
        const double top = p00[c] + (p01[c] - p00[c]) * wx;
        const double bottom = p10[c] + (p11[c] - p10[c]) * wx;
        out[c] = static_cast<std::uint8_t>(std::lround(top + (bottom - top) * wy));
      }
    }
  }
  return dst;
}

inline Image mirror_horizontal(const Image& src) {
  Image dst = src;
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      std::copy_n(src.pixel(src.width - 1 - x, y), 3, dst.pixel(x, y));
  return dst;
}

inline Image mirror_vertical(const Image& src) {
  Image dst = src;
  for (int y = 0; y < src.height; ++y)
    std::copy_n(src.pixel(0, src.height - 1 - y), static_cast<std::size_t>(src.width) * 3,
                dst.pixel(0, y));
  return dst;
}

// Source (x, y) lands at (H-1-y, x).
inline Image rotate_pixels_cw(const Image& src) {
  Image dst(src.height, src.width);
  for (int y = 0; y < dst.height; ++y)
    for (int x = 0; x < dst.width; ++x)
      std::copy_n(src.pixel(y, src.height - 1 - x), 3, dst.pixel(x, y));
  return dst;
}

// Source (x, y) lands at (y, W-1-x).
inline Image rotate_pixels_ccw(const Image& src) {
  Image dst(src.height, src.width);
  for (int y = 0; y < dst.height; ++y)
    for (int x = 0; x < dst.width; ++x)
      std::copy_n(src.pixel(src.width - 1 - y, x), 3, dst.pixel(x, y));
  return dst;
}

inline Image rotate_pixels_180(const Image& src) { return mirror_vertical(mirror_horizontal(src)); }

struct JitterFactors {
  double saturation = 1.0;
  double brightness = 1.0;
  double exposure = 1.0;
};

// HSV-consistent colour adjustment, applied per pixel in this order:
//  - saturation: S <- min(1, S * saturation), hue and value held fixed
//  - brightness: V <- min(1, V * brightness), hue and saturation held fixed
//  - exposure:   every channel c <- 255 * (c / 255)^(1 / exposure)
// A factor of exactly 1 leaves its stage as a no-op.
inline Image color_jitter(const Image& src, const JitterFactors& f) {
  if (f.saturation < 0 || f.brightness < 0 || f.exposure <= 0)
    throw std::invalid_argument("jitter factors must be positive");
  Image dst = src;
  if (f.saturation == 1.0 && f.brightness == 1.0 && f.exposure == 1.0) return dst;
  const double gamma = 1.0 / f.exposure;
  for (std::size_t i = 0; i < dst.rgb.size(); i += 3) {
    double c[3] = {double(src.rgb[i]), double(src.rgb[i + 1]), double(src.rgb[i + 2])};
    const double hi = std::max({c[0], c[1], c[2]});
    const double lo = std::min({c[0], c[1], c[2]});
    if (f.saturation != 1.0 && hi > lo) {
      const double s = (hi - lo) / hi;
      const double k = std::min(1.0, s * f.saturation) / s;
      for (double& v : c) v = hi - k * (hi - v);
    }
    if (f.brightness != 1.0 && hi > 0) {
      const double value = hi / 255.0;
      const double k = std::min(1.0, value * f.brightness) / value;
      for (double& v : c) v *= k;
    }
    if (f.exposure != 1.0) {
      for (double& v : c) v = 255.0 * std::pow(std::max(v, 0.0) / 255.0, gamma);
    }
    for (int ch = 0; ch < 3; ++ch)
      dst.rgb[i + ch] = static_cast<std::uint8_t>(std::clamp(std::lround(c[ch]), 0L, 255L));
  }
  return dst;
}

}  // namespace fieldanno
