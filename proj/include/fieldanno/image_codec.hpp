#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fieldanno/image.hpp"

namespace fieldanno {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Image from_mat(const cv::Mat& mat) {
  if (mat.empty()) throw ImageIoError("empty image");
  cv::Mat rgb;
  switch (mat.channels()) {
    case 1: cv::cvtColor(mat, rgb, cv::COLOR_GRAY2RGB); break;
    case 3: cv::cvtColor(mat, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(mat, rgb, cv::COLOR_BGRA2RGB); break;
    default: throw ImageIoError("unsupported channel count " + std::to_string(mat.channels()));
  }
  if (rgb.depth() != CV_8U) rgb.convertTo(rgb, CV_8U);
  Image img(rgb.cols, rgb.rows);
  for (int y = 0; y < rgb.rows; ++y)
    std::copy_n(rgb.ptr<std::uint8_t>(y), static_cast<std::size_t>(rgb.cols) * 3, img.pixel(0, y));
  return img;
}

// BGR, as OpenCV expects for encoding and display.
inline cv::Mat to_mat(const Image& img) {
  cv::Mat rgb(img.height, img.width, CV_8UC3, const_cast<std::uint8_t*>(img.rgb.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

inline Image decode_image(const std::vector<std::uint8_t>& bytes) {
  const cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  const cv::Mat mat = cv::imdecode(raw, cv::IMREAD_COLOR);
  if (mat.empty()) throw ImageIoError("cannot decode image data");
  return from_mat(mat);
}

inline Image load_image(const std::filesystem::path& path) {
  const cv::Mat mat = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (mat.empty()) throw ImageIoError("cannot read image '" + path.string() + "'");
  return from_mat(mat);
}

// `ext` includes the dot, e.g. ".jpg" or ".png".
inline std::vector<std::uint8_t> encode_image(const Image& img, const std::string& ext, int jpeg_quality = 95) {
  std::vector<std::uint8_t> out;
  const std::vector<int> params = {cv::IMWRITE_JPEG_QUALITY, jpeg_quality};
  if (!cv::imencode(ext, to_mat(img), out, params)) throw ImageIoError("cannot encode image as " + ext);
  return out;
}

inline void write_bytes(const std::filesystem::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageIoError("cannot open '" + path.string() + "' for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  out.flush();
  if (!out) throw ImageIoError("write to '" + path.string() + "' failed");
}

inline void save_image(const std::filesystem::path& path, const Image& img, int jpeg_quality = 95) {
  const auto bytes = encode_image(img, path.extension().string(), jpeg_quality);
  write_bytes(path, bytes.data(), bytes.size());
}

inline bool is_image_file(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext == ".jpg" || ext == ".jpeg" || ext == ".png" || ext == ".bmp" || ext == ".tif" ||
         ext == ".tiff" || ext == ".webp";
}

}  // namespace fieldanno
