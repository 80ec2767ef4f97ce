#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fieldanno/annotation_format.hpp"
#include "fieldanno/dataset_config.hpp"
#include "fieldanno/dataset_prep.hpp"
#include "fieldanno/eval_metrics.hpp"
#include "fieldanno/image_codec.hpp"

// On-disk layout: a split directory holds `images/` and `labels/`, and each
// label file is named after its image stem. A dataset directory holds
// `data.yaml` naming the class list and the split directories.
namespace fieldanno {

class DatasetIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string read_text_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DatasetIoError("cannot read '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
  write_bytes(p, text.data(), text.size());
}

// `dir` may be the split directory itself or its `images/` child.
inline std::filesystem::path split_root(const std::filesystem::path& dir) {
  if (dir.filename() == "images") return dir.parent_path();
  return dir;
}

// Prefixes a label parse error with the file it came from.
inline std::vector<NormalizedBox> read_label_file(const std::filesystem::path& p, std::size_t class_count) {
  try {
    return parse_label_file(read_text_file(p), class_count);
  } catch (const FormatError& e) {
    throw e.in(p.filename().string());
  }
}

// Images without a label file are background images. Without
// `load_pixels` width and height stay 0.
inline std::vector<LabeledImage> load_split(const std::filesystem::path& dir, std::size_t class_count,
                                            bool load_pixels) {
  namespace fs = std::filesystem;
  const auto root = split_root(dir);
  const auto images = root / "images";
  if (!fs::is_directory(images)) throw DatasetIoError("'" + images.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(images))
    if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<LabeledImage> out;
  for (const auto& f : files) {
    LabeledImage li;
    li.image_ref = f.string();
    const auto label = root / "labels" / (f.stem().string() + ".txt");
    if (fs::exists(label)) li.boxes = read_label_file(label, class_count);
    if (load_pixels) {
      li.pixels = load_image(f);
      li.width = li.pixels->width;
      li.height = li.pixels->height;
    }
    out.push_back(std::move(li));
  }
  return out;
}

// Reads `<dir>/data.yaml` and every distinct split directory it names.
// Relative split paths resolve against `path:` if given, else `dir`.
inline Dataset load_dataset_dir(const std::filesystem::path& dir, bool load_pixels, DatasetConfig* cfg_out = nullptr) {
  namespace fs = std::filesystem;
  const auto yaml = dir / "data.yaml";
  if (!fs::is_regular_file(yaml)) throw DatasetIoError("'" + yaml.string() + "' not found");
  const auto cfg = load_dataset_config(read_text_file(yaml));
  if (cfg_out) *cfg_out = cfg;
  fs::path base = dir;
  if (!cfg.root.empty()) base = fs::path(cfg.root).is_absolute() ? fs::path(cfg.root) : dir / cfg.root;
  Dataset ds{cfg.classes, {}};
  std::set<fs::path> seen;
  for (const auto& split : {cfg.train, cfg.val, cfg.test}) {
    const fs::path p = fs::path(split).is_absolute() ? fs::path(split) : base / split;
    const auto root = fs::weakly_canonical(split_root(p));
    if (!seen.insert(root).second) continue;
    auto items = load_split(root, cfg.classes.size(), load_pixels);
    for (auto& it : items) ds.items.push_back(std::move(it));
  }
  return ds;
}

// Writes items into `<dir>/images` and `<dir>/labels`. Items with pixels are
// encoded by extension; others copy their source file.
inline void write_split(const std::filesystem::path& dir, const Dataset& ds, int jpeg_quality = 95) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "labels");
  for (const auto& it : ds.items) {
    const fs::path ref(it.image_ref);
    const auto target = dir / "images" / ref.filename();
    if (fs::exists(target)) throw DatasetIoError("duplicate image name '" + ref.filename().string() + "'");
    if (it.pixels) save_image(target, *it.pixels, jpeg_quality);
    else fs::copy_file(ref, target);
    write_text_file(dir / "labels" / (ref.stem().string() + ".txt"), serialize_labels(it.boxes));
  }
}

// Pairs `<gt>/<stem>.txt` with `<preds>/<stem>.txt`; a missing prediction
// file means no predictions for that image.
inline std::vector<ImageEval> load_eval_pairs(const std::filesystem::path& gt_dir, const std::filesystem::path& pred_dir,
                                              std::size_t class_count) {
  namespace fs = std::filesystem;
  for (const auto& d : {gt_dir, pred_dir})
    if (!fs::is_directory(d)) throw DatasetIoError("'" + d.string() + "' is not a directory");
  std::vector<fs::path> gts;
  for (const auto& e : fs::directory_iterator(gt_dir))
    if (e.is_regular_file() && e.path().extension() == ".txt") gts.push_back(e.path());
  std::sort(gts.begin(), gts.end());
  std::vector<ImageEval> out;
  for (const auto& g : gts) {
    ImageEval im;
    im.gts = read_label_file(g, class_count);
    const auto p = pred_dir / g.filename();
    if (fs::exists(p)) {
      try {
        for (const auto& s : parse_prediction_file(read_text_file(p), class_count))
          im.preds.push_back({s.box, s.confidence});
      } catch (const FormatError& e) {
        throw e.in(p.filename().string());
      }
    }
    out.push_back(std::move(im));
  }
  return out;
}

}  // namespace fieldanno
