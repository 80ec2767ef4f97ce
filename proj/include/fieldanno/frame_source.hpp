#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <opencv2/videoio.hpp>

#include "fieldanno/image.hpp"
#include "fieldanno/image_codec.hpp"

namespace fieldanno {

class SourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Frame {
  Image pixels;
  std::string name;
  std::chrono::steady_clock::time_point captured_at;
};

class FrameSource {
 public:
  virtual ~FrameSource() = default;
  // nullopt once the source is exhausted.
  virtual std::optional<Frame> next() = 0;
  // Total frame count when known up front.
  virtual std::optional<std::size_t> size() const { return std::nullopt; }
  // Live sources drop frames that arrive while the consumer is busy.
  virtual bool live() const { return false; }
  virtual std::size_t dropped() const { return 0; }
  virtual std::string describe() const = 0;
};

class InMemorySource : public FrameSource {
 public:
  explicit InMemorySource(std::vector<Image> frames) : frames_(std::move(frames)) {}

  std::optional<Frame> next() override {
    if (pos_ >= frames_.size()) return std::nullopt;
    Frame f{frames_[pos_], "mem_" + std::to_string(pos_), std::chrono::steady_clock::now()};
    ++pos_;
    return f;
  }
  std::optional<std::size_t> size() const override { return frames_.size(); }
  std::string describe() const override { return "memory:" + std::to_string(frames_.size()); }

 private:
  std::vector<Image> frames_;
  std::size_t pos_ = 0;
};

// Every image file in a directory, in filename order. Replay is exhaustive.
class DirectorySource : public FrameSource {
 public:
  explicit DirectorySource(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir_, ec))
      throw SourceError("frame directory '" + dir_.string() + "' not found");
    for (const auto& e : std::filesystem::directory_iterator(dir_))
      if (e.is_regular_file() && is_image_file(e.path())) files_.push_back(e.path());
    std::sort(files_.begin(), files_.end());
  }

  std::optional<Frame> next() override {
    if (pos_ >= files_.size()) return std::nullopt;
    const auto& path = files_[pos_++];
    return Frame{load_image(path), path.filename().string(), std::chrono::steady_clock::now()};
  }
  std::optional<std::size_t> size() const override { return files_.size(); }
  std::string describe() const override { return "dir:" + dir_.string(); }

 private:
  std::filesystem::path dir_;
  std::vector<std::filesystem::path> files_;
  std::size_t pos_ = 0;
};

// Video file replay; every frame is delivered.
class VideoSource : public FrameSource {
 public:
  explicit VideoSource(const std::filesystem::path& file) : path_(file) {
    if (!std::filesystem::is_regular_file(file)) throw SourceError("video '" + file.string() + "' not found");
    if (!cap_.open(file.string())) throw SourceError("cannot open video '" + file.string() + "'");
  }

  std::optional<Frame> next() override {
    cv::Mat mat;
    if (!cap_.read(mat) || mat.empty()) return std::nullopt;
    return Frame{from_mat(mat), "video_" + std::to_string(index_++), std::chrono::steady_clock::now()};
  }
  std::string describe() const override { return "video:" + path_.string(); }

 private:
  std::filesystem::path path_;
  cv::VideoCapture cap_;
  std::size_t index_ = 0;
};

// Live camera. A capture thread keeps only the newest frame in a single
// slot, so next() never returns a frame older than one capture interval.
class CameraSource : public FrameSource {
 public:
  explicit CameraSource(int device) : device_(device) {
    if (!cap_.open(device)) throw SourceError("camera " + std::to_string(device) + " unavailable");
    worker_ = std::thread([this] { capture_loop(); });
  }

  ~CameraSource() override {
    stop_ = true;
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  std::optional<Frame> next() override {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [this] { return slot_.has_value() || finished_; });
    if (!slot_) return std::nullopt;
    auto f = std::move(*slot_);
    slot_.reset();
    return f;
  }
  bool live() const override { return true; }
  std::size_t dropped() const override { return dropped_; }
  std::string describe() const override { return "camera:" + std::to_string(device_); }

 private:
  void capture_loop() {
    std::size_t index = 0;
    while (!stop_) {
      cv::Mat mat;
      if (!cap_.read(mat) || mat.empty()) break;
      Frame f{from_mat(mat), "camera_" + std::to_string(index++), std::chrono::steady_clock::now()};
      {
        std::lock_guard lock(mu_);
        if (slot_) ++dropped_;
        slot_ = std::move(f);
      }
      cv_.notify_one();
    }
    std::lock_guard lock(mu_);
    finished_ = true;
    cv_.notify_all();
  }

  int device_;
  cv::VideoCapture cap_;
  std::thread worker_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::optional<Frame> slot_;
  bool finished_ = false;
  std::atomic<bool> stop_{false};
  std::atomic<std::size_t> dropped_{0};
};

// "camera:<n>", "dir:<path>", "video:<path>", or a bare value: an integer
// is a camera index, a directory replays its images, anything else is a
// video file.
inline std::unique_ptr<FrameSource> open_source(const std::string& spec) {
  auto all_digits = [](const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
  };
  auto rest = [&](std::size_t n) { return spec.substr(n); };
  if (spec.rfind("camera:", 0) == 0) {
    if (!all_digits(rest(7))) throw SourceError("camera index must be an integer");
    return std::make_unique<CameraSource>(std::stoi(rest(7)));
  }
  if (spec.rfind("dir:", 0) == 0) return std::make_unique<DirectorySource>(rest(4));
  if (spec.rfind("video:", 0) == 0) return std::make_unique<VideoSource>(rest(6));
  if (all_digits(spec)) return std::make_unique<CameraSource>(std::stoi(spec));
  if (std::filesystem::is_directory(spec)) return std::make_unique<DirectorySource>(spec);
  if (std::filesystem::is_regular_file(spec)) return std::make_unique<VideoSource>(spec);
  throw SourceError("frame source '" + spec + "' not found");
}

}  // namespace fieldanno
