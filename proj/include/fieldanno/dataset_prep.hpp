#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fieldanno/annotation_format.hpp"
#include "fieldanno/image.hpp"
#include "fieldanno/random.hpp"

namespace fieldanno {

struct Dataset {
  ClassMap class_map;
  std::vector<LabeledImage> items;

  std::size_t box_count() const {
    std::size_t n = 0;
    for (const auto& it : items) n += it.boxes.size();
    return n;
  }
};

// ---------------------------------------------------------------------------
// Class collapse

inline Dataset collapse_classes(const Dataset& ds, const std::string& target_name) {
  Dataset out{ClassMap({target_name}), ds.items};
  for (auto& item : out.items)
    for (auto& b : item.boxes) b.class_id = 0;
  return out;
}

// ---------------------------------------------------------------------------
// Stratified split

struct SplitRatios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

struct SplitResult {
  Dataset train;
  Dataset val;
  Dataset test;
  std::vector<std::string> warnings;
};

// Stratum key for an image: its most frequent box class (lowest id on ties),
// or -1 for images without boxes.
inline long dominant_class(const LabeledImage& item) {
  if (item.boxes.empty()) return -1;
  std::map<ClassId, std::size_t> counts;
  for (const auto& b : item.boxes) ++counts[b.class_id];
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it)
    if (it->second > best->second) best = it;
  return static_cast<long>(best->first);
}

// Largest-remainder apportionment of n items: each count is within one item
// of n * ratio. Remainder ties go to the earlier split (train, val, test).
inline std::array<std::size_t, 3> apportion(std::size_t n, const SplitRatios& r) {
  const std::array<double, 3> exact = {n * r.train, n * r.val, n * r.test};
  std::array<std::size_t, 3> counts{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    counts[i] = static_cast<std::size_t>(std::floor(exact[i]));
    assigned += counts[i];
  }
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return exact[a] - std::floor(exact[a]) > exact[b] - std::floor(exact[b]);
  });
  for (int k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % 3]];
  return counts;
}

inline SplitResult stratified_split(const Dataset& ds, const SplitRatios& ratios, std::uint64_t seed) {
  if (ds.items.empty()) throw std::invalid_argument("cannot split an empty dataset");
  if (ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0)
    throw std::invalid_argument("split ratios must be positive");
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
    throw std::invalid_argument("split ratios must sum to 1");

  std::map<long, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < ds.items.size(); ++i) strata[dominant_class(ds.items[i])].push_back(i);

  SplitResult out;
  std::array<std::vector<std::size_t>, 3> picked;
  for (auto& [key, members] : strata) {
    if (members.size() < 3) {
      const std::string label = key < 0 ? "background" : key < static_cast<long>(ds.class_map.size())
                                                             ? ds.class_map.name(static_cast<ClassId>(key))
                                                             : std::to_string(key);
      out.warnings.push_back("stratum '" + label + "' has " + std::to_string(members.size()) +
                             " item(s); assigned to train first");
    }
    auto rng = SplitMix64::substream(seed, static_cast<std::uint64_t>(key + 1));
    shuffle(members, rng);
    const auto counts = apportion(members.size(), ratios);
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s)
      for (std::size_t k = 0; k < counts[s]; ++k) picked[s].push_back(members[pos++]);
  }

  Dataset* targets[3] = {&out.train, &out.val, &out.test};
  for (int s = 0; s < 3; ++s) {
    std::sort(picked[s].begin(), picked[s].end());
    targets[s]->class_map = ds.class_map;
    for (auto idx : picked[s]) targets[s]->items.push_back(ds.items[idx]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Geometry. On canonical boxes every rule below is exact, so the group
// identities hold bit for bit.

inline NormalizedBox flip_box_h(NormalizedBox b) {
  b.cx = 1.0 - b.cx;
  return b;
}
inline NormalizedBox flip_box_v(NormalizedBox b) {
  b.cy = 1.0 - b.cy;
  return b;
}

enum class Rotation { kClockwise, kCounterClockwise, kHalfTurn };

inline NormalizedBox rotate_box(const NormalizedBox& b, Rotation dir) {
  switch (dir) {
    case Rotation::kClockwise: return {b.class_id, 1.0 - b.cy, b.cx, b.h, b.w};
    case Rotation::kCounterClockwise: return {b.class_id, b.cy, 1.0 - b.cx, b.h, b.w};
    case Rotation::kHalfTurn: return {b.class_id, 1.0 - b.cx, 1.0 - b.cy, b.w, b.h};
  }
  return b;
}

inline LabeledImage resize_stretch(const LabeledImage& img, int width, int height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("target dimensions must be positive");
  LabeledImage out = img;
  out.width = width;
  out.height = height;
  if (img.pixels) out.pixels = resize_bilinear(*img.pixels, width, height);
  return out;
}

inline LabeledImage flip_h(const LabeledImage& item) {
  LabeledImage out = item;
  for (auto& b : out.boxes) b = flip_box_h(b);
  if (item.pixels) out.pixels = mirror_horizontal(*item.pixels);
  return out;
}

inline LabeledImage flip_v(const LabeledImage& item) {
  LabeledImage out = item;
  for (auto& b : out.boxes) b = flip_box_v(b);
  if (item.pixels) out.pixels = mirror_vertical(*item.pixels);
  return out;
}

inline LabeledImage rotate90(const LabeledImage& item, Rotation dir) {
  LabeledImage out = item;
  for (auto& b : out.boxes) b = rotate_box(b, dir);
  if (dir != Rotation::kHalfTurn) std::swap(out.width, out.height);
  if (item.pixels) {
    switch (dir) {
      case Rotation::kClockwise: out.pixels = rotate_pixels_cw(*item.pixels); break;
      case Rotation::kCounterClockwise: out.pixels = rotate_pixels_ccw(*item.pixels); break;
      case Rotation::kHalfTurn: out.pixels = rotate_pixels_180(*item.pixels); break;
    }
  }
  return out;
}

inline LabeledImage color_jitter(const LabeledImage& item, const JitterFactors& f) {
  LabeledImage out = item;
  if (item.pixels) out.pixels = color_jitter(*item.pixels, f);
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

enum class GeometricOp { kNone, kFlipH, kFlipV, kRotateCW, kRotateCCW, kRotate180 };

inline constexpr std::array<GeometricOp, 6> kGeometricOps = {
    GeometricOp::kNone,     GeometricOp::kFlipH,     GeometricOp::kFlipV,
    GeometricOp::kRotateCW, GeometricOp::kRotateCCW, GeometricOp::kRotate180};

inline const char* to_string(GeometricOp op) {
  switch (op) {
    case GeometricOp::kNone: return "none";
    case GeometricOp::kFlipH: return "flip_h";
    case GeometricOp::kFlipV: return "flip_v";
    case GeometricOp::kRotateCW: return "rot90_cw";
    case GeometricOp::kRotateCCW: return "rot90_ccw";
    case GeometricOp::kRotate180: return "rot180";
  }
  return "?";
}

inline LabeledImage apply_geometric(const LabeledImage& item, GeometricOp op) {
  switch (op) {
    case GeometricOp::kNone: return item;
    case GeometricOp::kFlipH: return flip_h(item);
    case GeometricOp::kFlipV: return flip_v(item);
    case GeometricOp::kRotateCW: return rotate90(item, Rotation::kClockwise);
    case GeometricOp::kRotateCCW: return rotate90(item, Rotation::kCounterClockwise);
    case GeometricOp::kRotate180: return rotate90(item, Rotation::kHalfTurn);
  }
  return item;
}

struct AugmentSpec {
  int variants_per_image = 3;
  double saturation_range = 0.25;
  double brightness_range = 0.15;
  double exposure_range = 0.10;
  std::vector<GeometricOp> geometric_ops{kGeometricOps.begin(), kGeometricOps.end()};
  int target_width = 640;
  int target_height = 640;
  bool keep_originals = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (variants_per_image < 1) throw std::invalid_argument("variants_per_image must be >= 1");
    for (double r : {saturation_range, brightness_range, exposure_range})
      if (!(r >= 0 && r < 1)) throw std::invalid_argument("jitter ranges must lie in [0, 1)");
    if (geometric_ops.empty()) throw std::invalid_argument("at least one geometric op is required");
    if (target_width <= 0 || target_height <= 0)
      throw std::invalid_argument("target size must be positive");
  }
};

// What a single variant was built from; kept for audit logs.
struct VariantRecipe {
  GeometricOp op = GeometricOp::kNone;
  JitterFactors jitter;
};

inline std::string variant_name(const std::string& image_ref, int k) {
  const std::filesystem::path p(image_ref);
  return p.stem().string() + "_aug" + std::to_string(k) + p.extension().string();
}

struct AugmentResult {
  Dataset dataset;
  std::vector<VariantRecipe> recipes;  // one per variant, in output order
};

// Boxes are first snapped with canonical(). Variant k of item i draws from
// SplitMix64::substream(seed, i): an op uniformly from spec.geometric_ops,
// then saturation, brightness and exposure factors each uniform in
// [1 - range, 1 + range].
inline AugmentResult augment_dataset(const Dataset& ds, const AugmentSpec& spec) {
  spec.validate();
  AugmentResult result;
  result.dataset.class_map = ds.class_map;
  auto& out = result.dataset.items;
  out.reserve(ds.items.size() * (spec.variants_per_image + (spec.keep_originals ? 1 : 0)));
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    auto base = resize_stretch(ds.items[i], spec.target_width, spec.target_height);
    for (auto& b : base.boxes) b = canonical(b);
    if (spec.keep_originals) out.push_back(base);
    auto rng = SplitMix64::substream(spec.seed, i);
    for (int k = 1; k <= spec.variants_per_image; ++k) {
      VariantRecipe recipe;
      recipe.op = spec.geometric_ops[rng.below(spec.geometric_ops.size())];
      recipe.jitter.saturation = rng.uniform(1 - spec.saturation_range, 1 + spec.saturation_range);
      recipe.jitter.brightness = rng.uniform(1 - spec.brightness_range, 1 + spec.brightness_range);
      recipe.jitter.exposure = rng.uniform(1 - spec.exposure_range, 1 + spec.exposure_range);
      auto variant = color_jitter(apply_geometric(base, recipe.op), recipe.jitter);
      variant.image_ref = variant_name(base.image_ref, k);
      out.push_back(std::move(variant));
      result.recipes.push_back(recipe);
    }
  }
  return result;
}

}  // namespace fieldanno
