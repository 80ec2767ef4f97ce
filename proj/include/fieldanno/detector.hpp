#pragma once

#include <algorithm>
#include <chrono>
#include <future>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "fieldanno/annotation_format.hpp"
#include "fieldanno/image.hpp"

namespace fieldanno {

struct Detection {
  NormalizedBox box;
  double confidence = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct DetectorConfig {
  double confidence_threshold = 0.25;
  double nms_iou_threshold = 0.45;
  std::string backend_id = "mock";
  std::string model_path;  // artifact for neural backends
  int input_width = 640;
  int input_height = 640;
  double deadline_ms = 0;  // 0 disables the deadline

  void validate() const {
    if (!(confidence_threshold >= 0 && confidence_threshold <= 1))
      throw std::invalid_argument("confidence_threshold must lie in [0, 1]");
    if (!(nms_iou_threshold > 0 && nms_iou_threshold < 1))
      throw std::invalid_argument("nms_iou_threshold must lie in (0, 1)");
    if (deadline_ms < 0) throw std::invalid_argument("deadline_ms must be non-negative");
  }
};

struct InputShape {
  int width = 640;
  int height = 640;
  int channels = 3;
  friend bool operator==(const InputShape&, const InputShape&) = default;
};

struct BackendDescriptor {
  std::string id;
  std::string model_label;
  InputShape expected_input;
};

// One of the twelve architecture x labelling x initialisation scenarios.
struct Scenario {
  std::string id;           // e.g. "v8-SP"
  std::string model_label;  // e.g. "yolov8-single-pretrained"
  int yolo_version = 8;
  bool single_class = true;
  bool pretrained = true;
};

inline std::vector<Scenario> scenario_matrix() {
  std::vector<Scenario> out;
  for (int version : {5, 8, 12}) {
    for (bool single : {true, false}) {
      for (bool pretrained : {true, false}) {
        Scenario s;
        s.yolo_version = version;
        s.single_class = single;
        s.pretrained = pretrained;
        s.id = "v" + std::to_string(version) + "-" + (single ? "S" : "M") + (pretrained ? "P" : "S");
        s.model_label = "yolov" + std::to_string(version) + "-" + (single ? "single" : "multi") + "-" +
                        (pretrained ? "pretrained" : "scratch");
        out.push_back(std::move(s));
      }
    }
  }
  return out;
}

class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TimeoutError : public std::runtime_error {
 public:
  explicit TimeoutError(double elapsed_ms)
      : std::runtime_error("inference exceeded deadline after " + std::to_string(elapsed_ms) + " ms"),
        elapsed_ms_(elapsed_ms) {}
  double elapsed_ms() const { return elapsed_ms_; }

 private:
  double elapsed_ms_;
};

// ---------------------------------------------------------------------------
// Post-processing kernels

inline double iou(const NormalizedBox& a, const NormalizedBox& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
  if (iw <= 0 || ih <= 0) return 0.0;
  // areas from the same edge arithmetic, so identical boxes give exactly 1
  const double area_a = (a.right() - a.left()) * (a.bottom() - a.top());
  const double area_b = (b.right() - b.left()) * (b.bottom() - b.top());
  const double inter = iw * ih;
  const double uni = area_a + area_b - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

inline std::vector<Detection> filter_confidence(const std::vector<Detection>& dets, double threshold) {
  std::vector<Detection> out;
  std::copy_if(dets.begin(), dets.end(), std::back_inserter(out),
               [&](const Detection& d) { return d.confidence >= threshold; });
  return out;
}

// Confidence descending; ties by smaller cx, then smaller cy.
inline bool nms_before(const Detection& a, const Detection& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.box.cx != b.box.cx) return a.box.cx < b.box.cx;
  return a.box.cy < b.box.cy;
}

// Greedy suppression. With `per_class` only same-class boxes suppress each
// other; otherwise suppression is class-agnostic.
inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold, bool per_class = false) {
  std::stable_sort(dets.begin(), dets.end(), nms_before);
  std::vector<Detection> kept;
  std::vector<bool> removed(dets.size(), false);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (removed[i]) continue;
    kept.push_back(dets[i]);
    for (std::size_t j = i + 1; j < dets.size(); ++j) {
      if (removed[j]) continue;
      if (per_class && dets[j].box.class_id != dets[i].box.class_id) continue;
      if (iou(dets[i].box, dets[j].box) >= iou_threshold) removed[j] = true;
    }
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Backends

class Backend {
 public:
  virtual ~Backend() = default;
  virtual const BackendDescriptor& descriptor() const = 0;
  // Raw detections before confidence filtering and NMS.
  virtual std::vector<Detection> infer(const Image& input) = 0;
};

struct DetectResult {
  std::vector<Detection> detections;
  double latency_ms = 0;
};

// Owns a backend and serialises calls into it. When a deadline is set the
// backend runs on a worker; a late call surfaces as TimeoutError and the
// next detect() waits for the abandoned call to drain first.
class Detector {
 public:
  Detector(std::unique_ptr<Backend> backend, DetectorConfig cfg, bool per_class_nms = false)
      : backend_(std::move(backend)), cfg_(std::move(cfg)), per_class_(per_class_nms) {
    if (!backend_) throw BackendError("backend unavailable");
    cfg_.validate();
  }

  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;

  ~Detector() {
    if (inflight_.valid()) inflight_.wait();
  }

  const BackendDescriptor& descriptor() const { return backend_->descriptor(); }
  const DetectorConfig& config() const { return cfg_; }
  bool per_class_nms() const { return per_class_; }

  std::vector<Detection> postprocess(const std::vector<Detection>& raw) const {
    return nms(filter_confidence(raw, cfg_.confidence_threshold), cfg_.nms_iou_threshold, per_class_);
  }

  DetectResult detect(const Image& image) {
    std::lock_guard lock(mu_);
    const auto& shape = backend_->descriptor().expected_input;
    if (image.width != shape.width || image.height != shape.height)
      throw std::invalid_argument("image is " + std::to_string(image.width) + "x" +
                                  std::to_string(image.height) + ", backend expects " +
                                  std::to_string(shape.width) + "x" + std::to_string(shape.height));
    if (inflight_.valid()) inflight_.wait();

    using Clock = std::chrono::steady_clock;
    const auto start = Clock::now();
    auto elapsed_ms = [&] {
      return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    };
    if (cfg_.deadline_ms <= 0) {
      auto dets = run_backend(image);
      return {std::move(dets), elapsed_ms()};
    }

    // The worker needs its own copy of the frame in case we abandon it.
    auto frame = std::make_shared<Image>(image);
    std::packaged_task<std::vector<Detection>()> task([this, frame] { return run_backend(*frame); });
    auto result = task.get_future();
    std::thread worker(std::move(task));
    const auto deadline = std::chrono::duration<double, std::milli>(cfg_.deadline_ms);
    if (result.wait_for(deadline) == std::future_status::timeout) {
      const double late = elapsed_ms();
      auto straggler = std::make_shared<std::thread>(std::move(worker));
      inflight_ = std::async(std::launch::deferred, [straggler] { straggler->join(); });
      throw TimeoutError(late);
    }
    worker.join();
    auto dets = result.get();
    return {std::move(dets), elapsed_ms()};
  }

 private:
  std::vector<Detection> run_backend(const Image& image) {
    try {
      return postprocess(backend_->infer(image));
    } catch (const BackendError&) {
      throw;
    } catch (const std::exception& e) {
      throw BackendError(std::string("inference failure: ") + e.what());
    }
  }

  std::unique_ptr<Backend> backend_;
  DetectorConfig cfg_;
  bool per_class_;
  std::mutex mu_;
  std::future<void> inflight_;
};

}  // namespace fieldanno
