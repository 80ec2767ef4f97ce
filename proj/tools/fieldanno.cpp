#include <pthread.h>

#include <CLI11.hpp>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <thread>

#include "fieldanno/dataset_io.hpp"
#include "fieldanno/gateway.hpp"
#include "fieldanno/mock_backend.hpp"
#include "fieldanno/onnx_backend.hpp"
#include "fieldanno/session.hpp"
#include "fieldanno/training_log.hpp"

namespace fa = fieldanno;
namespace fs = std::filesystem;

namespace {

// Bad flags, paths or input files: exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

fs::path prepare_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw UsageError("cannot create output directory '" + dir.string() + "'");
  return dir;
}

void require_empty(const fs::path& dir) {
  if (fs::exists(dir) && !fs::is_empty(dir)) throw UsageError("output '" + dir.string() + "' is not empty");
}

fa::ClassMap class_map_from(const fs::path& yaml) {
  if (!fs::is_regular_file(yaml)) throw UsageError("dataset descriptor '" + yaml.string() + "' not found");
  return fa::load_dataset_config(fa::read_text_file(yaml)).classes;
}

// data.yaml next to the split or one level up.
fs::path find_descriptor(const fs::path& split) {
  const auto root = fa::split_root(split);
  for (const auto& p : {root / "data.yaml", root.parent_path() / "data.yaml"})
    if (fs::is_regular_file(p)) return p;
  throw UsageError("no data.yaml next to '" + split.string() + "'; pass --data");
}

// ---------------------------------------------------------------------------

struct PrepArgs {
  std::string in, out, name = "Plant", split = "0.7,0.15,0.15";
  bool single_class = false;
  std::uint64_t seed = 0;
};

int run_prep(const PrepArgs& a) {
  const auto parts = split_list(a.split, ',');
  if (parts.size() != 3) throw UsageError("--split needs three comma-separated ratios");
  fa::SplitRatios ratios;
  try {
    ratios = {std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2])};
  } catch (const std::exception&) {
    throw UsageError("--split ratios must be numbers");
  }
  const fs::path out(a.out);
  for (const char* s : {"train", "val", "test"}) require_empty(out / s);

  auto ds = fa::load_dataset_dir(a.in, false);
  if (ds.items.empty()) throw UsageError("dataset '" + a.in + "' has no images");
  if (a.single_class) ds = fa::collapse_classes(ds, a.name);
  const auto result = fa::stratified_split(ds, ratios, a.seed);
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";

  prepare_output_dir(out);
  fa::write_split(out / "train", result.train);
  fa::write_split(out / "val", result.val);
  fa::write_split(out / "test", result.test);
  fa::DatasetConfig cfg{ds.class_map, "train/images", "val/images", "test/images", ""};
  fa::write_text_file(out / "data.yaml", fa::dump_dataset_config(cfg));
  std::printf("train=%zu val=%zu test=%zu classes=%zu\n", result.train.items.size(), result.val.items.size(),
              result.test.items.size(), ds.class_map.size());
  return 0;
}

// ---------------------------------------------------------------------------

struct AugmentArgs {
  std::string in, out, data;
  fa::AugmentSpec spec;
  bool no_originals = false;
  int size = 640;
};

int run_augment(AugmentArgs a) {
  a.spec.keep_originals = !a.no_originals;
  a.spec.target_width = a.spec.target_height = a.size;
  try {
    a.spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto classes = class_map_from(a.data.empty() ? find_descriptor(a.in) : fs::path(a.data));
  require_empty(fs::path(a.out) / "images");
  fa::Dataset ds{classes, fa::load_split(a.in, classes.size(), true)};
  if (ds.items.empty()) throw UsageError("split '" + a.in + "' has no images");
  const auto result = fa::augment_dataset(ds, a.spec);
  prepare_output_dir(a.out);
  fa::write_split(a.out, result.dataset);

  std::string log = "image,op,saturation,brightness,exposure\n";
  std::size_t r = 0;
  for (const auto& it : result.dataset.items) {
    if (r == result.recipes.size() || it.image_ref.find("_aug") == std::string::npos) continue;
    const auto& rec = result.recipes[r++];
    char buf[96];
    std::snprintf(buf, sizeof buf, ",%s,%.6f,%.6f,%.6f\n", fa::to_string(rec.op), rec.jitter.saturation,
                  rec.jitter.brightness, rec.jitter.exposure);
    log += fs::path(it.image_ref).filename().string() + buf;
  }
  fa::write_text_file(fs::path(a.out) / "augment_log.csv", log);
  std::printf("inputs=%zu variants=%zu written=%zu\n", ds.items.size(), result.recipes.size(),
              result.dataset.items.size());
  return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string preds, gt, out, data;
  double conf = 0.25;
};

int run_evaluate(const EvaluateArgs& a) {
  fs::path gt(a.gt);
  if (fs::is_directory(gt / "labels")) gt /= "labels";
  std::optional<fa::ClassMap> classes;
  if (!a.data.empty()) classes = class_map_from(a.data);
  const std::size_t class_count = classes ? classes->size() : std::numeric_limits<std::uint32_t>::max();
  const auto images = fa::load_eval_pairs(gt, a.preds, class_count);
  if (images.empty()) throw UsageError("no ground-truth label files in '" + gt.string() + "'");
  auto report = fa::map_50_95(images, a.conf);
  if (classes) report.class_names = classes->names();
  const auto out = prepare_output_dir(a.out);
  fa::write_text_file(out / "report.txt", fa::format_report(report));
  fa::write_text_file(out / "ap.csv", fa::format_ap_csv(report));
  fa::write_text_file(out / "pr.csv", fa::format_pr_csv(images, 0.5, report.class_names));
  std::printf("map_50_95=%s precision=%s recall=%s f1=%s\n", fa::detail::fixed6(report.overall.map_50_95).c_str(),
              fa::detail::fixed6(report.overall.precision).c_str(), fa::detail::fixed6(report.overall.recall).c_str(),
              fa::detail::fixed6(report.overall.f1).c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct CompareArgs {
  std::string logs, pairs, metric = "f1", variant = "pooled", out, plots;
  double alpha = fa::kDefaultAlpha;
  std::size_t bins = 10;
};

int run_compare(const CompareArgs& a) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.logs))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw UsageError("no .csv training logs in '" + a.logs + "'");
  std::vector<fa::MetricSeries> all;
  for (const auto& f : files) {
    try {
      auto s = fa::ingest_training_log(fa::read_text_file(f), f.stem().string());
      all.insert(all.end(), s.begin(), s.end());
    } catch (const fa::LogError& e) {
      throw UsageError(f.filename().string() + ": " + e.what());
    }
  }
  std::vector<std::pair<std::string, std::string>> pairs;
  std::istringstream in(fa::read_text_file(a.pairs));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    for (auto& ch : line)
      if (ch == ',' || ch == '\t' || ch == '\r') ch = ' ';
    std::vector<std::string> ids;
    for (const auto& w : split_list(line, ' '))
      if (w != "vs") ids.push_back(w);
    if (ids.empty()) continue;
    if (ids.size() != 2) throw UsageError(a.pairs + " line " + std::to_string(line_no) + ": expected two config ids");
    pairs.emplace_back(ids[0], ids[1]);
  }
  if (pairs.empty()) throw UsageError("no pairs in '" + a.pairs + "'");
  const auto variant = a.variant == "welch" ? fa::TTestVariant::kWelch : fa::TTestVariant::kPooled;
  const auto rows = fa::compare_configs(all, pairs, a.metric, variant, a.alpha);
  fa::write_text_file(a.out, fa::format_comparison_csv(rows));
  for (const auto& r : rows)
    std::printf("%s vs %s (%s): %s\n", r.config_a.c_str(), r.config_b.c_str(), r.metric.c_str(),
                fa::describe(r.result).c_str());
  if (!a.plots.empty()) {
    const auto dir = prepare_output_dir(a.plots);
    fa::write_text_file(dir / "box.csv", fa::format_box_csv(all));
    fa::write_text_file(dir / "histogram.csv", fa::format_histogram_csv(all, a.bins));
    fa::write_text_file(dir / "curves.csv", fa::format_curves_csv(all));
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct AnnotateArgs {
  std::string source, backend = "mock", script, model, out, serve, classes = "Plant", name;
  fa::DetectorConfig detector;
  unsigned active_class = 0;
  int input = 640;
  bool multi_class = false, auto_save = false;
};

std::unique_ptr<fa::Backend> make_backend(const AnnotateArgs& a) {
  const fa::BackendDescriptor desc{a.backend, a.backend == "onnx" ? fs::path(a.model).stem().string() : "mock",
                                   {a.input, a.input, 3}};
  if (a.backend == "mock")
    return std::make_unique<fa::MockBackend>(a.script.empty() ? fa::MockScript{} : fa::load_mock_script(a.script), desc);
  if (a.backend == "onnx") {
    if (a.model.empty()) throw UsageError("--backend onnx needs --model");
    return std::make_unique<fa::OnnxBackend>(a.model, desc);
  }
  throw UsageError("unknown backend '" + a.backend + "'");
}

// Reads one line per pending frame: empty saves, "s" skips, a digit sets
// the class, "d [i]" deletes box i, "q" quits.
void operator_loop(fa::Session& s) {
  while (const auto rec = s.process_next()) {
    std::printf("frame %llu %s %zu box(es) %.1f ms%s%s\n", static_cast<unsigned long long>(rec->frame_id),
                fa::to_string(rec->outcome), rec->detections.size(), rec->inference_latency_ms,
                rec->error.empty() ? "" : " ", rec->error.c_str());
    std::fflush(stdout);
    while (s.pending_frame()) {
      std::string line;
      if (!std::getline(std::cin, line)) {
        s.apply_command(rec->frame_id, fa::cmd::Quit{});
        return;
      }
      const int key = line.empty() ? '\n' : line[0];
      std::size_t index = 0;
      if (line.size() > 2) index = std::strtoul(line.c_str() + 2, nullptr, 10);
      const auto command = fa::command_for_key(key, index);
      if (!command) {
        std::printf("keys: <enter> save, s skip, 0-9 class, d [i] delete, q quit\n");
        continue;
      }
      try {
        const auto effect = s.apply_command(rec->frame_id, *command);
        if (effect.stopped) return;
      } catch (const fa::SessionError& e) {
        std::printf("rejected: %s\n", e.what());
      }
      std::fflush(stdout);
    }
  }
}

int run_annotate(const AnnotateArgs& a) {
  try {
    a.detector.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  fa::SessionConfig cfg;
  cfg.source_descriptor = a.source;
  cfg.detector = a.detector;
  cfg.detector.backend_id = a.backend;
  cfg.detector.model_path = a.model;
  cfg.detector.input_width = cfg.detector.input_height = a.input;
  cfg.output_root = a.out;
  try {
    cfg.classes = fa::ClassMap(split_list(a.classes, ','));
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("--classes: ") + e.what());
  }
  cfg.active_class = a.active_class;
  cfg.multi_class = a.multi_class;
  cfg.auto_save = a.auto_save;
  cfg.session_name = a.name;

  std::string address;
  unsigned short port = 0;
  if (!a.serve.empty()) {
    const auto colon = a.serve.rfind(':');
    if (colon == std::string::npos) throw UsageError("--serve expects <address>:<port>");
    address = a.serve.substr(0, colon);
    try {
      port = static_cast<unsigned short>(std::stoul(a.serve.substr(colon + 1)));
    } catch (const std::exception&) {
      throw UsageError("--serve port must be a number");
    }
  }

  auto backend = make_backend(a);
  auto session = fa::Session::start(cfg, fa::open_source(a.source), std::move(backend));
  std::printf("session %s\n", session->directory().c_str());

  if (!a.serve.empty()) {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    sigaddset(&set, SIGUSR1);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    fa::Gateway gateway(*session, address, port);
    gateway.start();
    std::printf("serving on %s:%u (stream at /stream)\n", address.c_str(), gateway.port());
    std::fflush(stdout);
    // SIGUSR1 only wakes the waiter after the gateway stopped on its own.
    std::thread waiter([&gateway, set] {
      int sig = 0;
      sigwait(&set, &sig);
      if (sig != SIGUSR1) gateway.stop();
    });
    gateway.join();
    pthread_kill(waiter.native_handle(), SIGUSR1);
    waiter.join();
  } else if (a.auto_save) {
    while (session->process_next()) {
    }
  } else {
    operator_loop(*session);
  }
  const auto report = session->stop();
  std::printf("report %s\n%s\n", report.c_str(), fa::to_json(session->stats()).dump().c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string session, out;
};

int run_report(const ReportArgs& a) {
  const auto csv = fs::path(a.session) / "session.csv";
  if (!fs::is_regular_file(csv)) throw UsageError("'" + csv.string() + "' not found; stop the session first");
  std::vector<fa::FrameRecord> records;
  try {
    records = fa::load_latency_csv(fa::read_text_file(csv));
  } catch (const fa::SessionError& e) {
    throw UsageError(csv.string() + ": " + e.what());
  }
  std::string out = "outcome,latency_ms\n";
  char ms[32];
  for (const auto& r : records) {
    if (r.outcome == fa::Outcome::kError) continue;
    std::snprintf(ms, sizeof ms, "%.3f", r.inference_latency_ms);
    out += std::string(fa::to_string(r.outcome)) + "," + ms + "\n";
  }
  fa::write_text_file(a.out, out);
  std::printf("%s\n", fa::to_json(fa::compute_stats(records)).dump(2).c_str());
  return 0;
}

struct RecoverArgs {
  std::string session;
};

int run_recover(const RecoverArgs& a) {
  const auto manifest = fs::path(a.session) / "manifest";
  if (!fs::is_regular_file(manifest)) throw UsageError("'" + manifest.string() + "' not found");
  std::size_t classes = 0;
  try {
    classes = nlohmann::json::parse(fa::read_text_file(manifest)).at("classes").size();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("bad manifest: " + std::string(e.what()));
  }
  const auto rep = fa::recover_session_dir(a.session, classes);
  for (const auto& p : rep.rolled_forward) std::printf("committed %s\n", p.c_str());
  for (const auto& p : rep.removed) std::printf("removed %s\n", p.c_str());
  std::printf("committed=%zu removed=%zu\n", rep.rolled_forward.size(), rep.removed.size());
  return 0;
}

// Problems with the arguments or the input files, as opposed to failures
// while doing the work.
bool is_validation_error(const std::exception& e) {
  return dynamic_cast<const UsageError*>(&e) || dynamic_cast<const fa::FormatError*>(&e) ||
         dynamic_cast<const fa::ConfigError*>(&e) || dynamic_cast<const fa::DatasetIoError*>(&e) ||
         dynamic_cast<const fa::LogError*>(&e) || dynamic_cast<const fa::SourceError*>(&e) ||
         dynamic_cast<const fa::UndefinedStatisticError*>(&e) || dynamic_cast<const fa::UndefinedMetricError*>(&e) ||
         dynamic_cast<const std::invalid_argument*>(&e);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Field annotation toolkit: dataset preparation, evaluation, statistics and live annotation."};
  app.require_subcommand(1);
  std::function<int()> action;

  PrepArgs prep;
  auto* p = app.add_subcommand("prep", "Collapse classes and split a dataset into train/val/test");
  p->add_option("--in", prep.in, "Dataset directory containing data.yaml")->required()->check(CLI::ExistingDirectory);
  p->add_option("--out", prep.out, "Output directory")->required();
  p->add_flag("--single-class", prep.single_class, "Relabel every box as one class");
  p->add_option("--name", prep.name, "Class name used with --single-class")->capture_default_str();
  p->add_option("--split", prep.split, "train,val,test ratios")->capture_default_str();
  p->add_option("--seed", prep.seed, "Shuffle seed")->capture_default_str();
  p->callback([&] { action = [&] { return run_prep(prep); }; });

  AugmentArgs aug;
  auto* g = app.add_subcommand("augment", "Resize and write augmented variants of a split");
  g->add_option("--in", aug.in, "Split directory with images/ and labels/")->required()->check(CLI::ExistingDirectory);
  g->add_option("--out", aug.out, "Output split directory")->required();
  g->add_option("--data", aug.data, "data.yaml for the class list (default: next to --in)")->check(CLI::ExistingFile);
  g->add_option("--variants", aug.spec.variants_per_image, "Variants per image")->capture_default_str();
  g->add_option("--seed", aug.spec.seed, "Augmentation seed")->capture_default_str();
  g->add_option("--size", aug.size, "Square output size in pixels")->capture_default_str();
  g->add_option("--saturation", aug.spec.saturation_range, "Saturation range (fraction)")->capture_default_str();
  g->add_option("--brightness", aug.spec.brightness_range, "Brightness range (fraction)")->capture_default_str();
  g->add_option("--exposure", aug.spec.exposure_range, "Exposure range (fraction)")->capture_default_str();
  g->add_flag("--no-originals", aug.no_originals, "Write only the variants");
  g->callback([&] { action = [&] { return run_augment(aug); }; });

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "mAP@50-95, precision, recall and F1 of predictions");
  e->add_option("--preds", ev.preds, "Prediction label directory (class cx cy w h conf)")
      ->required()
      ->check(CLI::ExistingDirectory);
  e->add_option("--gt", ev.gt, "Ground-truth labels directory or split directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  e->add_option("--out", ev.out, "Report directory (report.txt, ap.csv, pr.csv)")->required();
  e->add_option("--data", ev.data, "data.yaml for class names and count")->check(CLI::ExistingFile);
  e->add_option("--conf", ev.conf, "Confidence for precision/recall/F1")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  e->callback([&] { action = [&] { return run_evaluate(ev); }; });

  CompareArgs cmp;
  auto* c = app.add_subcommand("compare", "Two-sample t-tests between training configurations");
  c->add_option("--logs", cmp.logs, "Directory of <config>.csv training logs")->required()->check(CLI::ExistingDirectory);
  c->add_option("--pairs", cmp.pairs, "File with one 'a,b' pair per line")->required()->check(CLI::ExistingFile);
  c->add_option("--metric", cmp.metric, "map_50_95, precision, recall or f1")
      ->capture_default_str()
      ->check(CLI::IsMember({"map_50_95", "precision", "recall", "f1"}));
  c->add_option("--variant", cmp.variant, "pooled or welch")->capture_default_str()->check(CLI::IsMember({"pooled", "welch"}));
  c->add_option("--alpha", cmp.alpha, "Significance level")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  c->add_option("--out", cmp.out, "Comparison CSV")->required();
  c->add_option("--plots", cmp.plots, "Directory for box, histogram and curve CSVs");
  c->add_option("--bins", cmp.bins, "Histogram bins")->capture_default_str()->check(CLI::PositiveNumber);
  c->callback([&] { action = [&] { return run_compare(cmp); }; });

  AnnotateArgs ann;
  auto* n = app.add_subcommand("annotate", "Run a live annotation session");
  n->add_option("--source", ann.source, "camera index, image directory or video file (camera:N, dir:P, video:P)")
      ->required();
  n->add_option("--backend", ann.backend, "mock or onnx")->capture_default_str()->check(CLI::IsMember({"mock", "onnx"}));
  n->add_option("--script", ann.script, "Mock backend script")->check(CLI::ExistingFile);
  n->add_option("--model", ann.model, "ONNX model file")->check(CLI::ExistingFile);
  n->add_option("--out", ann.out, "Output root for session directories")->required();
  n->add_option("--serve", ann.serve, "Serve the operator stream on <address>:<port>");
  n->add_option("--classes", ann.classes, "Comma-separated class names")->capture_default_str();
  n->add_option("--class", ann.active_class, "Initial active class")->capture_default_str();
  n->add_flag("--multi-class", ann.multi_class, "Keep backend classes and run per-class NMS");
  n->add_flag("--auto-save", ann.auto_save, "Save frames with detections, skip the rest");
  n->add_option("--conf", ann.detector.confidence_threshold, "Confidence threshold")->capture_default_str();
  n->add_option("--iou", ann.detector.nms_iou_threshold, "NMS IoU threshold")->capture_default_str();
  n->add_option("--deadline", ann.detector.deadline_ms, "Inference deadline in ms (0: none)")->capture_default_str();
  n->add_option("--input", ann.input, "Square backend input size")->capture_default_str()->check(CLI::PositiveNumber);
  n->add_option("--name", ann.name, "Session directory name (default: timestamp)");
  n->callback([&] { action = [&] { return run_annotate(ann); }; });

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "Latency records of a finished session for plotting");
  r->add_option("--session", rep.session, "Session directory")->required()->check(CLI::ExistingDirectory);
  r->add_option("--out", rep.out, "CSV of outcome,latency_ms")->required();
  r->callback([&] { action = [&] { return run_report(rep); }; });

  RecoverArgs rec;
  auto* v = app.add_subcommand("recover", "Repair a session directory after a crash");
  v->add_option("--session", rec.session, "Session directory")->required()->check(CLI::ExistingDirectory);
  v->callback([&] { action = [&] { return run_recover(rec); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }
  try {
    return action();
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return is_validation_error(err) ? 1 : 2;
  }
}
