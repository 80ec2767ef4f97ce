#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "fieldanno/image.hpp"

namespace fieldanno {

// Tolerance for a box edge overhanging the image border.
inline constexpr double kEdgeTolerance = 1e-6;

using ClassId = std::uint32_t;

// YOLO box: class index plus centre/extent as fractions of image size.
struct NormalizedBox {
  ClassId class_id = 0;
  double cx = 0.5;
  double cy = 0.5;
  double w = 0.0;
  double h = 0.0;

  double left() const { return cx - w / 2; }
  double right() const { return cx + w / 2; }
  double top() const { return cy - h / 2; }
  double bottom() const { return cy + h / 2; }
  double area() const { return w * h; }

  friend bool operator==(const NormalizedBox&, const NormalizedBox&) = default;
};

class FormatError : public std::runtime_error {
 public:
  enum class Kind { kParse, kClassRange, kBounds };

  FormatError(Kind kind, std::size_t line, const std::string& what)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        kind_(kind),
        line_(line) {}

  Kind kind() const { return kind_; }
  // 1-based; 0 when the error is not tied to a line.
  std::size_t line() const { return line_; }

  // The same error with `where` (e.g. a file name) in front of the message.
  FormatError in(const std::string& where) const { return FormatError(kind_, line_, where + ": " + what(), true); }

 private:
  FormatError(Kind kind, std::size_t line, const std::string& message, bool)
      : std::runtime_error(message), kind_(kind), line_(line) {}

  Kind kind_;
  std::size_t line_;
};

// Empty string when valid, otherwise a description of the first violation.
inline std::string box_violation(const NormalizedBox& b, std::size_t class_count) {
  if (!std::isfinite(b.cx) || !std::isfinite(b.cy) || !std::isfinite(b.w) || !std::isfinite(b.h))
    return "non-finite coordinate";
  if (b.class_id >= class_count)
    return "class id " + std::to_string(b.class_id) + " out of range for " +
           std::to_string(class_count) + " classes";
  if (b.cx < 0 || b.cx > 1 || b.cy < 0 || b.cy > 1) return "centre outside [0,1]";
  if (b.w <= 0 || b.w > 1 || b.h <= 0 || b.h > 1) return "extent outside (0,1]";
  if (b.left() < -kEdgeTolerance || b.right() > 1 + kEdgeTolerance ||
      b.top() < -kEdgeTolerance || b.bottom() > 1 + kEdgeTolerance)
    return "box extends past image edge";
  return {};
}

inline bool is_valid_box(const NormalizedBox& b, std::size_t class_count) {
  return box_violation(b, class_count).empty();
}

// Rounds a unit-interval coordinate to the nearest multiple of 2^-53. On
// that grid 1 - x is exact, so reflections and quarter turns compose
// without drift. Moves a value by at most 2^-54.
inline double snap_unit(double v) {
  if (!std::isfinite(v)) return v;
  return std::ldexp(std::nearbyint(std::ldexp(v, 53)), -53);
}

inline NormalizedBox canonical(NormalizedBox b) {
  b.cx = snap_unit(b.cx);
  b.cy = snap_unit(b.cy);
  return b;
}

// Throws FormatError (kClassRange or kBounds) if the box is invalid.
inline void check_box(const NormalizedBox& b, std::size_t class_count, std::size_t line = 0) {
  auto why = box_violation(b, class_count);
  if (why.empty()) return;
  const auto kind = b.class_id >= class_count && std::isfinite(b.cx) && std::isfinite(b.cy) &&
                            std::isfinite(b.w) && std::isfinite(b.h)
                        ? FormatError::Kind::kClassRange
                        : FormatError::Kind::kBounds;
  throw FormatError(kind, line, why);
}

// Ordered class names; position is the class id.
class ClassMap {
 public:
  ClassMap() = default;
  explicit ClassMap(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.empty()) throw std::invalid_argument("class map must not be empty");
    std::unordered_set<std::string> seen;
    for (const auto& n : names_)
      if (!seen.insert(n).second) throw std::invalid_argument("duplicate class name '" + n + "'");
  }

  std::size_t size() const { return names_.size(); }
  const std::string& name(ClassId id) const { return names_.at(id); }
  const std::vector<std::string>& names() const { return names_; }

  std::optional<ClassId> index_of(std::string_view name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) return std::nullopt;
    return static_cast<ClassId>(it - names_.begin());
  }

  friend bool operator==(const ClassMap&, const ClassMap&) = default;

 private:
  std::vector<std::string> names_;
};

// An image plus its annotation set. `pixels` is absent when only the
// reference and dimensions are known (e.g. split planning over a directory).
struct LabeledImage {
  std::string image_ref;
  int width = 0;
  int height = 0;
  std::vector<NormalizedBox> boxes;
  std::optional<Image> pixels;

  static LabeledImage from_pixels(std::string ref, Image img, std::vector<NormalizedBox> boxes) {
    LabeledImage li;
    li.image_ref = std::move(ref);
    li.width = img.width;
    li.height = img.height;
    li.boxes = std::move(boxes);
    li.pixels = std::move(img);
    return li;
  }
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    fn(++line_no, line);
    pos = end + 1;
  }
}

inline double parse_real(std::string_view field, std::size_t line, const char* what) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || ptr != field.data() + field.size() || !std::isfinite(v))
    throw FormatError(FormatError::Kind::kParse, line,
                      std::string("non-numeric ") + what + " '" + std::string(field) + "'");
  return v;
}

inline ClassId parse_class(std::string_view field, std::size_t line) {
  ClassId v = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || ptr != field.data() + field.size())
    throw FormatError(FormatError::Kind::kParse, line,
                      "class id '" + std::string(field) + "' is not a non-negative integer");
  return v;
}

// Pulls centre/extent values sitting within rounding distance of their
// range limits back inside it. Edge overhang within kEdgeTolerance is
// already valid and is left as written.
inline void clamp_fields(NormalizedBox& b) {
  auto pull = [](double& v, double lo, double hi) {
    if (v < lo && v >= lo - kEdgeTolerance) v = lo;
    if (v > hi && v <= hi + kEdgeTolerance) v = hi;
  };
  pull(b.cx, 0.0, 1.0);
  pull(b.cy, 0.0, 1.0);
  pull(b.w, 0.0, 1.0);
  pull(b.h, 0.0, 1.0);
}

inline NormalizedBox parse_box_fields(const std::vector<std::string_view>& f, std::size_t line,
                                      std::size_t class_count) {
  NormalizedBox b;
  b.class_id = parse_class(f[0], line);
  b.cx = parse_real(f[1], line, "cx");
  b.cy = parse_real(f[2], line, "cy");
  b.w = parse_real(f[3], line, "w");
  b.h = parse_real(f[4], line, "h");
  clamp_fields(b);
  check_box(b, class_count, line);
  return b;
}

inline void append_fixed6(std::string& out, double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 6);
  std::string_view s(buf, static_cast<std::size_t>(ptr - buf));
  if (s == "-0.000000") s.remove_prefix(1);
  out.append(s);
}

}  // namespace detail

// One box per non-blank line: `class cx cy w h`. Accepts LF or CRLF and a
// missing final newline.
inline std::vector<NormalizedBox> parse_label_file(std::string_view text, std::size_t class_count) {
  if (class_count == 0) throw std::invalid_argument("class_count must be at least 1");
  std::vector<NormalizedBox> boxes;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const auto fields = detail::split_fields(line);
    if (fields.empty()) return;
    if (fields.size() != 5)
      throw FormatError(FormatError::Kind::kParse, line_no,
                        "expected 5 fields, found " + std::to_string(fields.size()));
    boxes.push_back(detail::parse_box_fields(fields, line_no, class_count));
  });
  return boxes;
}

// Prediction files add a trailing confidence: `class cx cy w h conf`.
struct ScoredBox {
  NormalizedBox box;
  double confidence = 0;
};

inline std::vector<ScoredBox> parse_prediction_file(std::string_view text, std::size_t class_count) {
  if (class_count == 0) throw std::invalid_argument("class_count must be at least 1");
  std::vector<ScoredBox> out;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const auto fields = detail::split_fields(line);
    if (fields.empty()) return;
    if (fields.size() != 6)
      throw FormatError(FormatError::Kind::kParse, line_no,
                        "expected 6 fields, found " + std::to_string(fields.size()));
    ScoredBox s;
    s.box = detail::parse_box_fields(fields, line_no, class_count);
    s.confidence = detail::parse_real(fields[5], line_no, "confidence");
    if (s.confidence < 0 || s.confidence > 1)
      throw FormatError(FormatError::Kind::kBounds, line_no, "confidence outside [0,1]");
    out.push_back(s);
  });
  return out;
}

// `<class> <cx> <cy> <w> <h>` at 6 decimals, every line LF-terminated.
inline std::string serialize_labels(const std::vector<NormalizedBox>& boxes) {
  std::string out;
  out.reserve(boxes.size() * 40);
  for (const auto& b : boxes) {
    out.append(std::to_string(b.class_id));
    for (double v : {b.cx, b.cy, b.w, b.h}) {
      out.push_back(' ');
      detail::append_fixed6(out, v);
    }
    out.push_back('\n');
  }
  return out;
}

}  // namespace fieldanno
