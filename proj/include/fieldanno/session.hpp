#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fieldanno/annotation_format.hpp"
#include "fieldanno/dataset_prep.hpp"
#include "fieldanno/detector.hpp"
#include "fieldanno/frame_source.hpp"
#include "fieldanno/image_codec.hpp"

namespace fieldanno {

using FrameId = std::uint64_t;

enum class Outcome { kDetection, kNonDetection, kError };
enum class Disposition { kPending, kSaved, kSkipped };

inline const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::kDetection: return "detection";
    case Outcome::kNonDetection: return "non_detection";
    case Outcome::kError: return "error";
  }
  return "?";
}

inline const char* to_string(Disposition d) {
  switch (d) {
    case Disposition::kPending: return "pending";
    case Disposition::kSaved: return "saved";
    case Disposition::kSkipped: return "skipped";
  }
  return "?";
}

struct FrameRecord {
  FrameId frame_id = 0;
  std::chrono::steady_clock::time_point capture_timestamp;
  std::string source_name;
  std::vector<Detection> detections;
  double inference_latency_ms = 0;  // detect() wall time only
  double end_to_end_ms = 0;         // capture through record creation, diagnostics only
  Outcome outcome = Outcome::kNonDetection;
  Disposition disposition = Disposition::kPending;
  std::string error;
};

struct SessionConfig {
  std::string source_descriptor;  // recorded in the manifest
  DetectorConfig detector;
  std::filesystem::path output_root;
  ClassMap classes{{"Plant"}};
  ClassId active_class = 0;
  // Single-class mode saves every box with the active class; multi-class
  // mode keeps each detection's class and runs per-class NMS.
  bool multi_class = false;
  // Unattended capture: frames with detections are saved, others skipped.
  bool auto_save = false;
  int jpeg_quality = 95;
  std::string session_name;  // defaults to a local timestamp
};

// Operator commands.
namespace cmd {
struct Save {};
struct Skip {};
struct SetClass {
  ClassId class_id = 0;
};
// AdjustBox with this class id keeps the box's current class.
inline constexpr ClassId kKeepClass = std::numeric_limits<ClassId>::max();
struct AdjustBox {
  std::size_t index = 0;
  NormalizedBox box;
};
struct DeleteBox {
  std::size_t index = 0;
};
struct Quit {};
}  // namespace cmd

using OperatorCommand = std::variant<cmd::Save, cmd::Skip, cmd::SetClass, cmd::AdjustBox, cmd::DeleteBox, cmd::Quit>;

inline const char* action_name(const OperatorCommand& c) {
  static constexpr const char* kNames[] = {"save", "skip", "set_class", "adjust_box", "delete_box", "quit"};
  return kNames[c.index()];
}

// Local keyboard mapping: Enter saves, S skips, digits set the class,
// D deletes the highlighted box, Q quits.
inline std::optional<OperatorCommand> command_for_key(int key, std::size_t highlighted = 0) {
  if (key == '\r' || key == '\n') return cmd::Save{};
  if (key == 's' || key == 'S') return cmd::Skip{};
  if (key >= '0' && key <= '9') return cmd::SetClass{static_cast<ClassId>(key - '0')};
  if (key == 'd' || key == 'D') return cmd::DeleteBox{highlighted};
  if (key == 'q' || key == 'Q') return cmd::Quit{};
  return std::nullopt;
}

class SessionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StaleFrameError : public SessionError {
 public:
  using SessionError::SessionError;
};

class CommandError : public SessionError {
 public:
  using SessionError::SessionError;
};

struct CommandEffect {
  std::string action;
  FrameId frame_id = 0;
  std::vector<std::filesystem::path> written;
  bool stopped = false;
};

struct LatencySummary {
  std::size_t count = 0;
  double mean_ms = 0;
  double min_ms = 0;
  double max_ms = 0;
};

struct SessionStats {
  std::size_t frames_processed = 0;
  std::size_t frames_saved = 0;
  std::size_t frames_skipped = 0;
  std::size_t frames_errored = 0;
  std::size_t frames_dropped = 0;  // live sources only
  LatencySummary overall;
  LatencySummary detection;
  LatencySummary non_detection;
};

inline LatencySummary summarize_latency(const std::vector<double>& ms) {
  LatencySummary s;
  s.count = ms.size();
  if (ms.empty()) return s;
  double sum = 0;
  s.min_ms = std::numeric_limits<double>::infinity();
  s.max_ms = -std::numeric_limits<double>::infinity();
  for (double v : ms) {
    sum += v;
    s.min_ms = std::min(s.min_ms, v);
    s.max_ms = std::max(s.max_ms, v);
  }
  s.mean_ms = sum / ms.size();
  return s;
}

// Error frames count as processed but stay out of the latency figures.
inline SessionStats compute_stats(const std::vector<FrameRecord>& records) {
  SessionStats st;
  std::vector<double> all, det, non;
  for (const auto& r : records) {
    ++st.frames_processed;
    if (r.disposition == Disposition::kSaved) ++st.frames_saved;
    if (r.disposition == Disposition::kSkipped) ++st.frames_skipped;
    switch (r.outcome) {
      case Outcome::kError: ++st.frames_errored; continue;
      case Outcome::kDetection: det.push_back(r.inference_latency_ms); break;
      case Outcome::kNonDetection: non.push_back(r.inference_latency_ms); break;
    }
    all.push_back(r.inference_latency_ms);
  }
  st.overall = summarize_latency(all);
  st.detection = summarize_latency(det);
  st.non_detection = summarize_latency(non);
  return st;
}

// Rows `frame_id,outcome,latency_ms,disposition`, one per processed frame.
inline std::string format_latency_csv(const std::vector<FrameRecord>& records) {
  std::string out = "frame_id,outcome,latency_ms,disposition\n";
  char ms[32];
  for (const auto& r : records) {
    std::snprintf(ms, sizeof ms, "%.3f", r.inference_latency_ms);
    out += std::to_string(r.frame_id) + "," + to_string(r.outcome) + "," + ms + "," + to_string(r.disposition) + "\n";
  }
  return out;
}

inline nlohmann::json to_json(const LatencySummary& s) {
  return {{"count", s.count}, {"mean_ms", s.mean_ms}, {"min_ms", s.min_ms}, {"max_ms", s.max_ms}};
}

inline nlohmann::json to_json(const SessionStats& s) {
  return {{"frames_processed", s.frames_processed},
          {"frames_saved", s.frames_saved},
          {"frames_skipped", s.frames_skipped},
          {"frames_errored", s.frames_errored},
          {"frames_dropped", s.frames_dropped},
          {"latency",
           {{"overall", to_json(s.overall)},
            {"detection", to_json(s.detection)},
            {"non_detection", to_json(s.non_detection)}}}};
}

// ---------------------------------------------------------------------------
// Persistence

// Points at which a save can be interrupted, in order.
enum class SaveStage { kBeforeLabelTemp, kBeforeImageTemp, kBeforeImageCommit, kBeforeLabelCommit };

struct SessionPaths {
  std::filesystem::path root;
  std::filesystem::path images() const { return root / "images"; }
  std::filesystem::path labels() const { return root / "labels"; }
  std::filesystem::path image(FrameId id) const { return images() / ("frame_" + std::to_string(id) + ".jpg"); }
  std::filesystem::path label(FrameId id) const { return labels() / ("frame_" + std::to_string(id) + ".txt"); }
  std::filesystem::path image_temp(FrameId id) const {
    return images() / (".frame_" + std::to_string(id) + ".jpg.tmp");
  }
  std::filesystem::path label_temp(FrameId id) const {
    return labels() / (".frame_" + std::to_string(id) + ".txt.tmp");
  }
  std::filesystem::path latency_csv() const { return root / "session.csv"; }
  std::filesystem::path timing_csv() const { return root / "timing.csv"; }
  std::filesystem::path manifest() const { return root / "manifest"; }
};

struct RecoveryReport {
  std::vector<std::filesystem::path> rolled_forward;  // labels committed from temp
  std::vector<std::filesystem::path> removed;         // orphans and temp files
};

// Brings a session directory back to the invariant "every image has its
// label". Saves commit the image before the label, so an image whose label
// is missing either has a complete label temp (commit it) or is removed.
inline RecoveryReport recover_session_dir(const std::filesystem::path& root, std::size_t class_count) {
  namespace fs = std::filesystem;
  const SessionPaths paths{root};
  RecoveryReport rep;
  if (!fs::is_directory(paths.images()) || !fs::is_directory(paths.labels()))
    throw SessionError("'" + root.string() + "' is not a session directory");
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(paths.images())) images.push_back(e.path());
  std::sort(images.begin(), images.end());
  for (const auto& img : images) {
    const auto name = img.filename().string();
    if (name.rfind("frame_", 0) != 0 || img.extension() != ".jpg") continue;
    const auto label = paths.labels() / (img.stem().string() + ".txt");
    if (fs::exists(label)) continue;
    const auto temp = paths.labels() / ("." + img.stem().string() + ".txt.tmp");
    bool committed = false;
    if (fs::exists(temp)) {
      std::ifstream in(temp, std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      try {
        parse_label_file(ss.str(), class_count);
        fs::rename(temp, label);
        rep.rolled_forward.push_back(label);
        committed = true;
      } catch (const FormatError&) {
      }
    }
    if (!committed) {
      fs::remove(img);
      rep.removed.push_back(img);
    }
  }
  for (const auto& dir : {paths.images(), paths.labels()}) {
    std::vector<fs::path> temps;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".tmp") temps.push_back(e.path());
    for (const auto& t : temps) {
      fs::remove(t);
      rep.removed.push_back(t);
    }
  }
  return rep;
}

namespace detail {

inline std::string local_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_bytes(path, text.data(), text.size());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Session

// The on-the-go annotation loop. process_next() captures, resizes and runs
// detection on one frame, leaving it pending; apply_command() resolves the
// pending frame. All methods are safe to call from different threads, but
// process_next() calls are serialised.
class Session {
 public:
  using FaultHook = std::function<void(SaveStage, FrameId)>;

  static std::unique_ptr<Session> start(SessionConfig cfg, std::unique_ptr<FrameSource> source,
                                        std::unique_ptr<Backend> backend) {
    if (!source) throw SourceError("frame source unavailable");
    if (!backend) throw BackendError("backend unavailable");
    if (cfg.active_class >= cfg.classes.size())
      throw std::invalid_argument("active class " + std::to_string(cfg.active_class) + " not in class map");
    auto detector = std::make_unique<Detector>(std::move(backend), cfg.detector, cfg.multi_class);
    return std::unique_ptr<Session>(new Session(std::move(cfg), std::move(source), std::move(detector)));
  }

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const std::filesystem::path& directory() const { return paths_.root; }
  const SessionPaths& paths() const { return paths_; }
  const SessionConfig& config() const { return cfg_; }
  const FrameSource& source() const { return *source_; }
  const Detector& detector() const { return *detector_; }

  bool running() const {
    std::lock_guard lock(mu_);
    return running_;
  }

  ClassId active_class() const {
    std::lock_guard lock(mu_);
    return cfg_.active_class;
  }

  void set_fault_hook(FaultHook hook) {
    std::lock_guard lock(mu_);
    fault_hook_ = std::move(hook);
  }

  // nullopt when the source is exhausted. A frame still pending from an
  // earlier call stays pending but can no longer be resolved.
  std::optional<FrameRecord> process_next() {
    std::lock_guard advance(advance_mu_);
    {
      std::lock_guard lock(mu_);
      if (!running_) throw SessionError("session is not running");
    }
    auto frame = source_->next();
    if (!frame) {
      std::lock_guard lock(mu_);
      exhausted_ = true;
      return std::nullopt;
    }
    const auto& shape = detector_->descriptor().expected_input;
    Image input = resize_bilinear(frame->pixels, shape.width, shape.height);

    FrameRecord rec;
    rec.capture_timestamp = frame->captured_at;
    rec.source_name = frame->name;
    try {
      auto result = detector_->detect(input);
      rec.detections = std::move(result.detections);
      rec.inference_latency_ms = result.latency_ms;
      if (cfg_.multi_class)
        for (const auto& d : rec.detections)
          if (d.box.class_id >= cfg_.classes.size())
            throw BackendError("backend produced class " + std::to_string(d.box.class_id) +
                               " outside the session class map");
      rec.outcome = rec.detections.empty() ? Outcome::kNonDetection : Outcome::kDetection;
    } catch (const TimeoutError& e) {
      rec.outcome = Outcome::kError;
      rec.inference_latency_ms = e.elapsed_ms();
      rec.error = e.what();
    } catch (const BackendError& e) {
      rec.outcome = Outcome::kError;
      rec.detections.clear();
      rec.error = e.what();
    }

    std::lock_guard lock(mu_);
    rec.frame_id = next_id_++;
    if (!cfg_.multi_class)
      for (auto& d : rec.detections) d.box.class_id = cfg_.active_class;
    rec.end_to_end_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - rec.capture_timestamp).count();
    records_.push_back(rec);
    pending_ = Pending{records_.size() - 1, std::move(input), rec.detections};
    if (cfg_.auto_save) {
      if (rec.outcome == Outcome::kDetection) save_locked();
      else resolve_locked(Disposition::kSkipped);
    }
    return records_.back();
  }

  std::optional<FrameId> pending_frame() const {
    std::lock_guard lock(mu_);
    if (!pending_) return std::nullopt;
    return records_[pending_->record].frame_id;
  }

  // Boxes as they would be saved right now.
  std::vector<Detection> pending_detections() const {
    std::lock_guard lock(mu_);
    if (!pending_) return {};
    return pending_->boxes;
  }

  // The pending frame as presented to the detector.
  std::optional<Image> pending_image() const {
    std::lock_guard lock(mu_);
    if (!pending_) return std::nullopt;
    return pending_->image;
  }

  std::optional<FrameRecord> record(FrameId id) const {
    std::lock_guard lock(mu_);
    for (const auto& r : records_)
      if (r.frame_id == id) return r;
    return std::nullopt;
  }

  CommandEffect apply_command(FrameId frame_id, const OperatorCommand& command) {
    std::lock_guard lock(mu_);
    CommandEffect effect;
    effect.action = action_name(command);
    effect.frame_id = frame_id;
    if (std::holds_alternative<cmd::Quit>(command)) {
      stop_locked();
      effect.stopped = true;
      return effect;
    }
    if (!running_) throw SessionError("session is not running");
    if (!pending_ || records_[pending_->record].frame_id != frame_id)
      throw StaleFrameError("frame " + std::to_string(frame_id) + " is not the pending frame");

    std::visit(
        [&](const auto& c) {
          using T = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<T, cmd::Save>) {
            effect.written = save_locked();
          } else if constexpr (std::is_same_v<T, cmd::Skip>) {
            resolve_locked(Disposition::kSkipped);
          } else if constexpr (std::is_same_v<T, cmd::SetClass>) {
            if (c.class_id >= cfg_.classes.size())
              throw CommandError("class " + std::to_string(c.class_id) + " not in class map");
            cfg_.active_class = c.class_id;
            for (auto& d : pending_->boxes) d.box.class_id = c.class_id;
          } else if constexpr (std::is_same_v<T, cmd::AdjustBox>) {
            if (c.index >= pending_->boxes.size())
              throw CommandError("no box at index " + std::to_string(c.index));
            auto box = c.box;
            if (box.class_id == cmd::kKeepClass) box.class_id = pending_->boxes[c.index].box.class_id;
            if (auto why = box_violation(box, cfg_.classes.size()); !why.empty())
              throw CommandError("invalid box: " + why);
            pending_->boxes[c.index].box = box;
          } else if constexpr (std::is_same_v<T, cmd::DeleteBox>) {
            if (c.index >= pending_->boxes.size())
              throw CommandError("no box at index " + std::to_string(c.index));
            pending_->boxes.erase(pending_->boxes.begin() + static_cast<std::ptrdiff_t>(c.index));
          }
        },
        command);
    return effect;
  }

  SessionStats stats() const {
    std::lock_guard lock(mu_);
    auto st = compute_stats(records_);
    st.frames_dropped = source_->dropped();
    return st;
  }

  std::vector<FrameRecord> records() const {
    std::lock_guard lock(mu_);
    return records_;
  }

  bool exhausted() const {
    std::lock_guard lock(mu_);
    return exhausted_;
  }

  // Writes session.csv and timing.csv; returns the latency CSV path.
  std::filesystem::path write_report() const {
    std::lock_guard lock(mu_);
    return write_report_locked();
  }

  // Idempotent: flushes the report and stops accepting frames.
  std::filesystem::path stop() {
    std::lock_guard lock(mu_);
    stop_locked();
    return paths_.latency_csv();
  }

 private:
  struct Pending {
    std::size_t record;
    Image image;
    std::vector<Detection> boxes;
  };

  Session(SessionConfig cfg, std::unique_ptr<FrameSource> source, std::unique_ptr<Detector> detector)
      : cfg_(std::move(cfg)), source_(std::move(source)), detector_(std::move(detector)) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(cfg_.output_root, ec);
    if (ec || !fs::is_directory(cfg_.output_root))
      throw SessionError("output root '" + cfg_.output_root.string() + "' is not writable");
    const std::string base = cfg_.session_name.empty() ? detail::local_timestamp() : cfg_.session_name;
    fs::path dir = cfg_.output_root / base;
    for (int n = 2; !fs::create_directory(dir, ec); ++n) {
      if (ec) throw SessionError("cannot create session directory '" + dir.string() + "': " + ec.message());
      dir = cfg_.output_root / (base + "-" + std::to_string(n));
    }
    paths_.root = dir;
    fs::create_directory(paths_.images());
    fs::create_directory(paths_.labels());
    write_manifest();
  }

  void write_manifest() const {
    const auto& d = detector_->descriptor();
    nlohmann::json m = {
        {"source", cfg_.source_descriptor.empty() ? source_->describe() : cfg_.source_descriptor},
        {"backend", {{"id", d.id}, {"model_label", d.model_label},
                     {"input", {d.expected_input.width, d.expected_input.height, d.expected_input.channels}}}},
        {"detector",
         {{"confidence_threshold", cfg_.detector.confidence_threshold},
          {"nms_iou_threshold", cfg_.detector.nms_iou_threshold},
          {"deadline_ms", cfg_.detector.deadline_ms},
          {"model_path", cfg_.detector.model_path}}},
        {"classes", cfg_.classes.names()},
        {"active_class", cfg_.active_class},
        {"multi_class", cfg_.multi_class},
        {"auto_save", cfg_.auto_save},
        {"live_source", source_->live()},
    };
    detail::write_text(paths_.manifest(), m.dump(2) + "\n");
  }

  void fault(SaveStage stage, FrameId id) {
    if (fault_hook_) fault_hook_(stage, id);
  }

  // Label temp, image temp, image rename, label rename. A crash leaves at
  // worst an image whose label temp is complete; see recover_session_dir().
  std::vector<std::filesystem::path> save_locked() {
    auto& rec = records_[pending_->record];
    const FrameId id = rec.frame_id;
    std::vector<NormalizedBox> boxes;
    for (const auto& d : pending_->boxes) boxes.push_back(d.box);
    const auto text = serialize_labels(boxes);
    const auto jpeg = encode_image(pending_->image, ".jpg", cfg_.jpeg_quality);

    fault(SaveStage::kBeforeLabelTemp, id);
    detail::write_text(paths_.label_temp(id), text);
    fault(SaveStage::kBeforeImageTemp, id);
    write_bytes(paths_.image_temp(id), jpeg.data(), jpeg.size());
    fault(SaveStage::kBeforeImageCommit, id);
    std::filesystem::rename(paths_.image_temp(id), paths_.image(id));
    fault(SaveStage::kBeforeLabelCommit, id);
    std::filesystem::rename(paths_.label_temp(id), paths_.label(id));

    rec.detections = pending_->boxes;
    resolve_locked(Disposition::kSaved);
    return {paths_.image(id), paths_.label(id)};
  }

  void resolve_locked(Disposition d) {
    records_[pending_->record].disposition = d;
    pending_.reset();
  }

  std::filesystem::path write_report_locked() const {
    detail::write_text(paths_.latency_csv(), format_latency_csv(records_));
    std::string timing = "frame_id,source,inference_ms,end_to_end_ms,error\n";
    char buf[64];
    for (const auto& r : records_) {
      std::snprintf(buf, sizeof buf, "%.3f,%.3f", r.inference_latency_ms, r.end_to_end_ms);
      std::string err = r.error;
      std::replace(err.begin(), err.end(), ',', ';');
      timing += std::to_string(r.frame_id) + "," + r.source_name + "," + buf + "," + err + "\n";
    }
    detail::write_text(paths_.timing_csv(), timing);
    return paths_.latency_csv();
  }

  void stop_locked() {
    if (!running_) return;
    running_ = false;
    write_report_locked();
  }

  SessionConfig cfg_;
  std::unique_ptr<FrameSource> source_;
  std::unique_ptr<Detector> detector_;
  SessionPaths paths_;

  mutable std::mutex mu_;
  std::mutex advance_mu_;
  bool running_ = true;
  bool exhausted_ = false;
  FrameId next_id_ = 0;
  std::vector<FrameRecord> records_;
  std::optional<Pending> pending_;
  FaultHook fault_hook_;
};

// Reads `session.csv` back into records (for offline reporting).
inline std::vector<FrameRecord> load_latency_csv(const std::string& text) {
  std::vector<FrameRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != "frame_id,outcome,latency_ms,disposition")
        throw SessionError("unexpected session.csv header '" + line + "'");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 4) throw SessionError("line " + std::to_string(line_no) + ": expected 4 cells");
    FrameRecord r;
    try {
      r.frame_id = std::stoull(cells[0]);
      r.inference_latency_ms = std::stod(cells[2]);
    } catch (const std::exception&) {
      throw SessionError("line " + std::to_string(line_no) + ": non-numeric cell");
    }
    if (cells[1] == "detection") r.outcome = Outcome::kDetection;
    else if (cells[1] == "non_detection") r.outcome = Outcome::kNonDetection;
    else if (cells[1] == "error") r.outcome = Outcome::kError;
    else throw SessionError("line " + std::to_string(line_no) + ": unknown outcome '" + cells[1] + "'");
    if (cells[3] == "pending") r.disposition = Disposition::kPending;
    else if (cells[3] == "saved") r.disposition = Disposition::kSaved;
    else if (cells[3] == "skipped") r.disposition = Disposition::kSkipped;
    else throw SessionError("line " + std::to_string(line_no) + ": unknown disposition '" + cells[3] + "'");
    out.push_back(r);
  }
  return out;
}

}  // namespace fieldanno
