#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "fieldanno/annotation_format.hpp"
#include "fieldanno/detector.hpp"

namespace fieldanno {

// Scripted response for one frame.
struct ScriptedFrame {
  double delay_ms = 0;
  bool fail = false;
  std::vector<Detection> detections;
};

// Line-oriented script:
//
//   # comment
//   default <delay_ms>
//   <frame> <delay_ms> [fail] [| <class> <cx> <cy> <w> <h> <conf>]...
//
// Frames not listed respond after the default delay with no detections.
struct MockScript {
  double default_delay_ms = 0;
  std::map<std::uint64_t, ScriptedFrame> frames;

  const ScriptedFrame* find(std::uint64_t frame) const {
    auto it = frames.find(frame);
    return it == frames.end() ? nullptr : &it->second;
  }
};

inline MockScript parse_mock_script(std::string_view text) {
  MockScript script;
  constexpr auto kAnyClass = std::numeric_limits<std::size_t>::max();
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    std::vector<std::string_view> groups;
    std::size_t pos = 0;
    while (true) {
      auto bar = line.find('|', pos);
      groups.push_back(line.substr(pos, bar == std::string_view::npos ? line.npos : bar - pos));
      if (bar == std::string_view::npos) break;
      pos = bar + 1;
    }
    const auto head = detail::split_fields(groups[0]);
    if (head.empty()) {
      if (groups.size() > 1)
        throw FormatError(FormatError::Kind::kParse, line_no, "detections without a frame header");
      return;
    }
    if (head[0] == "default") {
      if (head.size() != 2 || groups.size() > 1)
        throw FormatError(FormatError::Kind::kParse, line_no, "expected 'default <delay_ms>'");
      script.default_delay_ms = detail::parse_real(head[1], line_no, "delay");
      if (script.default_delay_ms < 0)
        throw FormatError(FormatError::Kind::kBounds, line_no, "delay must be non-negative");
      return;
    }
    if (head.size() < 2 || head.size() > 3 || (head.size() == 3 && head[2] != "fail"))
      throw FormatError(FormatError::Kind::kParse, line_no, "expected '<frame> <delay_ms> [fail]'");
    const auto frame = detail::parse_class(head[0], line_no);
    ScriptedFrame sf;
    sf.delay_ms = detail::parse_real(head[1], line_no, "delay");
    if (sf.delay_ms < 0) throw FormatError(FormatError::Kind::kBounds, line_no, "delay must be non-negative");
    sf.fail = head.size() == 3;
    for (std::size_t g = 1; g < groups.size(); ++g) {
      const auto f = detail::split_fields(groups[g]);
      if (f.size() != 6)
        throw FormatError(FormatError::Kind::kParse, line_no,
                          "detection tuple needs 6 fields, found " + std::to_string(f.size()));
      Detection d;
      d.box = detail::parse_box_fields(f, line_no, kAnyClass);
      d.confidence = detail::parse_real(f[5], line_no, "confidence");
      if (d.confidence < 0 || d.confidence > 1)
        throw FormatError(FormatError::Kind::kBounds, line_no, "confidence outside [0,1]");
      sf.detections.push_back(d);
    }
    if (!script.frames.emplace(frame, std::move(sf)).second)
      throw FormatError(FormatError::Kind::kParse, line_no, "frame " + std::to_string(frame) + " listed twice");
  });
  return script;
}

inline MockScript load_mock_script(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BackendError("cannot open mock script '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_mock_script(ss.str());
}

// Deterministic stand-in for a neural runtime. The n-th call to infer()
// (0-based) answers with script frame n.
class MockBackend : public Backend {
 public:
  explicit MockBackend(MockScript script, BackendDescriptor desc = {"mock", "mock", {}})
      : script_(std::move(script)), desc_(std::move(desc)) {}

  const BackendDescriptor& descriptor() const override { return desc_; }

  std::vector<Detection> infer(const Image&) override {
    const auto index = calls_++;
    const auto* frame = script_.find(index);
    const double delay = frame ? frame->delay_ms : script_.default_delay_ms;
    if (delay > 0) std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(delay));
    if (frame && frame->fail) throw BackendError("scripted inference failure at frame " + std::to_string(index));
    return frame ? frame->detections : std::vector<Detection>{};
  }

  std::uint64_t calls() const { return calls_; }

 private:
  MockScript script_;
  BackendDescriptor desc_;
  std::uint64_t calls_ = 0;
};

}  // namespace fieldanno
