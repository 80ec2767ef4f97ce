#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/dnn.hpp>

#include "fieldanno/detector.hpp"
#include "fieldanno/image_codec.hpp"

namespace fieldanno {

enum class YoloHead {
  kAnchorFree,   // [4 + classes, N]: cx cy w h scores...  (v8 and later)
  kObjectness,   // [N, 5 + classes]: cx cy w h obj scores... (v5)
};

// Converts one raw output tensor into normalized detections. Coordinates
// are in input pixels; boxes are clipped to the frame and degenerate ones
// dropped. Entries scoring below `min_confidence` are skipped.
inline std::vector<Detection> decode_yolo_output(const float* data, int rows, int cols, YoloHead head,
                                                 int input_width, int input_height, double min_confidence) {
  std::vector<Detection> out;
  const bool anchor_free = head == YoloHead::kAnchorFree;
  const int attrs = anchor_free ? rows : cols;
  const int count = anchor_free ? cols : rows;
  const int first_score = anchor_free ? 4 : 5;
  if (attrs <= first_score) throw BackendError("model output has too few attributes per box");
  auto at = [&](int box, int attr) -> double {
    return anchor_free ? data[static_cast<std::size_t>(attr) * cols + box]
                       : data[static_cast<std::size_t>(box) * cols + attr];
  };
  for (int i = 0; i < count; ++i) {
    int best = first_score;
    for (int a = first_score + 1; a < attrs; ++a)
      if (at(i, a) > at(i, best)) best = a;
    double conf = at(i, best);
    if (!anchor_free) conf *= at(i, 4);
    if (conf < min_confidence) continue;
    const double cx = at(i, 0), cy = at(i, 1), w = at(i, 2), h = at(i, 3);
    const double x1 = std::clamp(cx - w / 2, 0.0, double(input_width));
    const double x2 = std::clamp(cx + w / 2, 0.0, double(input_width));
    const double y1 = std::clamp(cy - h / 2, 0.0, double(input_height));
    const double y2 = std::clamp(cy + h / 2, 0.0, double(input_height));
    if (x2 <= x1 || y2 <= y1) continue;
    Detection d;
    d.box.class_id = static_cast<ClassId>(best - first_score);
    d.box.cx = (x1 + x2) / 2 / input_width;
    d.box.cy = (y1 + y2) / 2 / input_height;
    d.box.w = (x2 - x1) / input_width;
    d.box.h = (y2 - y1) / input_height;
    d.confidence = std::clamp(conf, 0.0, 1.0);
    out.push_back(d);
  }
  return out;
}

// Exported YOLO model run through OpenCV's DNN module.
class OnnxBackend : public Backend {
 public:
  OnnxBackend(const std::filesystem::path& model, BackendDescriptor desc, double min_confidence = 0.001)
      : desc_(std::move(desc)), min_confidence_(min_confidence) {
    if (!std::filesystem::is_regular_file(model)) throw BackendError("model '" + model.string() + "' not found");
    try {
      net_ = cv::dnn::readNet(model.string());
    } catch (const cv::Exception& e) {
      throw BackendError("cannot load model '" + model.string() + "': " + e.what());
    }
    if (net_.empty()) throw BackendError("cannot load model '" + model.string() + "'");
  }

  const BackendDescriptor& descriptor() const override { return desc_; }

  std::vector<Detection> infer(const Image& input) override {
    const auto& shape = desc_.expected_input;
    cv::Mat blob = cv::dnn::blobFromImage(to_mat(input), 1.0 / 255.0, cv::Size(shape.width, shape.height),
                                          cv::Scalar(), /*swapRB=*/true, /*crop=*/false);
    net_.setInput(blob);
    cv::Mat out = net_.forward();
    if (out.dims != 3 || out.size[0] != 1) throw BackendError("unexpected model output rank");
    const int rows = out.size[1];
    const int cols = out.size[2];
    const auto head = rows < cols ? YoloHead::kAnchorFree : YoloHead::kObjectness;
    return decode_yolo_output(out.ptr<float>(), rows, cols, head, shape.width, shape.height, min_confidence_);
  }

 private:
  BackendDescriptor desc_;
  double min_confidence_;
  cv::dnn::Net net_;
};

}  // namespace fieldanno
