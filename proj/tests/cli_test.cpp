#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <regex>

#include "support/dataset_fixture.hpp"
#include "support/ws_client.hpp"

namespace fs = std::filesystem;
using namespace testsupport;

namespace {

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(FIELDANNO_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed");
  RunResult r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
  return out;
}

std::size_t count_files(const fs::path& dir) {
  return std::distance(fs::directory_iterator(dir), fs::directory_iterator{});
}

const fs::path kSamples = FIELDANNO_SAMPLES;

}  // namespace

TEST(Cli, HelpEverywhere) {
  EXPECT_EQ(run("--help").code, 0);
  for (const char* sub : {"prep", "augment", "evaluate", "compare", "annotate", "report", "recover"}) {
    const auto r = run(std::string(sub) + " --help");
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.output.find("Usage"), std::string::npos) << sub;
  }
}

TEST(Cli, UsageErrorsExitOne) {
  TempDir tmp;
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("prep --out " + q(tmp.path())).code, 1);  // missing --in
  EXPECT_EQ(run("prep --in " + q(tmp.path() / "nope") + " --out " + q(tmp.path())).code, 1);
  EXPECT_EQ(run("compare --logs " + q(kSamples / "logs") + " --pairs " + q(kSamples / "pairs.txt") +
                " --out x.csv --bogus")
                .code,
            1);
  EXPECT_EQ(run("compare --logs " + q(kSamples / "logs") + " --pairs " + q(kSamples / "pairs.txt") +
                " --out x.csv --metric speed")
                .code,
            1);
}

TEST(Cli, PrepSplitsAndIsReproducible) {
  TempDir tmp;
  write_toy_dataset(tmp.path() / "raw", 40);
  const auto args = " --in " + q(tmp.path() / "raw") + " --single-class --seed 11 --split 0.7,0.15,0.15";
  const auto r = run("prep" + args + " --out " + q(tmp.path() / "a"));
  ASSERT_EQ(r.code, 0) << r.output;
  std::size_t total = 0;
  for (const char* s : {"train", "val", "test"}) total += count_files(tmp.path() / "a" / s / "images");
  EXPECT_EQ(total, 40u);
  EXPECT_EQ(count_files(tmp.path() / "a" / "train" / "images"), 28u);
  const auto cfg = fa::load_dataset_config(read_file(tmp.path() / "a" / "data.yaml"));
  EXPECT_EQ(cfg.classes.names(), std::vector<std::string>{"Plant"});

  ASSERT_EQ(run("prep" + args + " --out " + q(tmp.path() / "b")).code, 0);
  EXPECT_EQ(tree(tmp.path() / "a"), tree(tmp.path() / "b"));
  EXPECT_EQ(run("prep" + args + " --out " + q(tmp.path() / "a")).code, 1);  // refuses to mix outputs
}

TEST(Cli, PrepRejectsEmptyDataset) {
  TempDir tmp;
  write_toy_dataset(tmp.path() / "raw", 0);
  const auto r = run("prep --in " + q(tmp.path() / "raw") + " --out " + q(tmp.path() / "out"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("no images"), std::string::npos) << r.output;
}

TEST(Cli, PrepReportsLabelErrorWithFileAndLine) {
  TempDir tmp;
  write_toy_dataset(tmp.path() / "raw", 3);
  fa::write_text_file(tmp.path() / "raw" / "labels" / "img002.txt", "0 0.5 0.5 0.2\n");
  const auto r = run("prep --in " + q(tmp.path() / "raw") + " --out " + q(tmp.path() / "out"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("img002.txt: line 1: "), std::string::npos) << r.output;
}

TEST(Cli, AugmentWritesVariantsDeterministically) {
  TempDir tmp;
  write_toy_dataset(tmp.path() / "raw", 6);
  const auto args = " --in " + q(tmp.path() / "raw") + " --variants 2 --size 64 --seed 5";
  const auto r = run("augment" + args + " --out " + q(tmp.path() / "a"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(count_files(tmp.path() / "a" / "images"), 18u);
  EXPECT_EQ(count_files(tmp.path() / "a" / "labels"), 18u);
  const auto log = read_file(tmp.path() / "a" / "augment_log.csv");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 13);
  for (const auto& it : fa::load_split(tmp.path() / "a", 2, true)) {
    EXPECT_EQ(it.width, 64);
    EXPECT_EQ(it.height, 64);
  }
  ASSERT_EQ(run("augment" + args + " --out " + q(tmp.path() / "b")).code, 0);
  EXPECT_EQ(tree(tmp.path() / "a"), tree(tmp.path() / "b"));
}

TEST(Cli, EvaluatePerfectPredictions) {
  TempDir tmp;
  write_toy_dataset(tmp.path() / "raw", 10);
  fs::create_directories(tmp.path() / "preds");
  for (const auto& e : fs::directory_iterator(tmp.path() / "raw" / "labels")) {
    std::string text;
    for (const auto& b : fa::parse_label_file(read_file(e.path()), 2)) {
      const auto row = fa::serialize_labels({b});
      text += row.substr(0, row.size() - 1) + " 0.9\n";
    }
    fa::write_text_file(tmp.path() / "preds" / e.path().filename(), text);
  }
  const auto r = run("evaluate --gt " + q(tmp.path() / "raw") + " --preds " + q(tmp.path() / "preds") + " --data " +
                     q(tmp.path() / "raw" / "data.yaml") + " --out " + q(tmp.path() / "report"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("map_50_95=1.000000"), std::string::npos) << r.output;
  for (const char* f : {"report.txt", "ap.csv", "pr.csv"}) EXPECT_TRUE(fs::exists(tmp.path() / "report" / f)) << f;
  EXPECT_NE(read_file(tmp.path() / "report" / "report.txt").find("Weed"), std::string::npos);

  fa::write_text_file(tmp.path() / "preds" / "img000.txt", "0 0.5 0.5 0.2 0.2 1.5\n");
  const auto bad = run("evaluate --gt " + q(tmp.path() / "raw") + " --preds " + q(tmp.path() / "preds") +
                       " --out " + q(tmp.path() / "report"));
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.output.find("img000.txt: line 1"), std::string::npos) << bad.output;
}

TEST(Cli, CompareSamplesAtDefaultAlpha) {
  TempDir tmp;
  const auto out = tmp.path() / "cmp.csv";
  const auto r = run("compare --logs " + q(kSamples / "logs") + " --pairs " + q(kSamples / "pairs.txt") +
                     " --out " + q(out) + " --plots " + q(tmp.path() / "plots"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("alpha = 0.05"), std::string::npos) << r.output;
  const auto csv = read_file(out);
  EXPECT_EQ(csv.rfind("pair,metric,t,df,p,significant,direction,unit,p_exact\n", 0), 0u);
  EXPECT_NE(csv.find("v8-SP vs v8-MP,f1,"), std::string::npos);
  for (const char* f : {"box.csv", "histogram.csv", "curves.csv"})
    EXPECT_TRUE(fs::exists(tmp.path() / "plots" / f)) << f;

  fa::write_text_file(tmp.path() / "pairs.txt", "v8-SP,v9\n");
  EXPECT_EQ(run("compare --logs " + q(kSamples / "logs") + " --pairs " + q(tmp.path() / "pairs.txt") + " --out " +
                q(out))
                .code,
            1);
}

TEST(Cli, AnnotateAutoSaveThenReportAndRecover) {
  TempDir tmp;
  write_toy_dataset(tmp.path() / "frames", 6);
  const auto r = run("annotate --source dir:" + (tmp.path() / "frames" / "images").string() + " --script " +
                     q(kSamples / "mock_script.txt") + " --out " + q(tmp.path() / "sessions") +
                     " --auto-save --name run --input 32");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto dir = tmp.path() / "sessions" / "run";
  // the sample script has detections on frames 0, 2 and 4; frame 3 fails
  EXPECT_EQ(count_files(dir / "labels"), 3u);
  EXPECT_TRUE(fs::exists(dir / "session.csv"));

  const auto rep = run("report --session " + q(dir) + " --out " + q(tmp.path() / "lat.csv"));
  ASSERT_EQ(rep.code, 0) << rep.output;
  const auto lat = read_file(tmp.path() / "lat.csv");
  EXPECT_EQ(std::count(lat.begin(), lat.end(), '\n'), 6);  // header + 5 non-error frames

  fa::write_text_file(dir / "images" / "frame_99.jpg", "x");
  const auto rec = run("recover --session " + q(dir));
  ASSERT_EQ(rec.code, 0) << rec.output;
  EXPECT_FALSE(fs::exists(dir / "images" / "frame_99.jpg"));
  EXPECT_NE(rec.output.find("removed=1"), std::string::npos) << rec.output;
}

TEST(Cli, AnnotateBadSourceIsUsageError) {
  TempDir tmp;
  EXPECT_EQ(run("annotate --source dir:" + (tmp.path() / "missing").string() + " --out " + q(tmp.path())).code, 1);
  EXPECT_EQ(run("annotate --source x --backend tflite --out " + q(tmp.path())).code, 1);
}

TEST(Cli, AnnotateServesUntilStopped) {
  TempDir tmp;
  write_toy_dataset(tmp.path() / "frames", 3);
  const std::string cmd = std::string(FIELDANNO_CLI) + " annotate --source dir:" +
                          (tmp.path() / "frames" / "images").string() + " --out " + q(tmp.path() / "s") +
                          " --name live --input 32 --serve 127.0.0.1:0 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  ASSERT_NE(pipe, nullptr);
  unsigned short port = 0;
  char line[512];
  const std::regex serving(R"(serving on 127\.0\.0\.1:(\d+))");
  while (!port && fgets(line, sizeof line, pipe)) {
    std::cmatch m;
    if (std::regex_search(line, m, serving)) port = static_cast<unsigned short>(std::stoi(m[1]));
  }
  ASSERT_NE(port, 0);
  {
    HeadlessClient client(port);
    const auto frame = client.next("frame");
    ASSERT_TRUE(frame);
    EXPECT_EQ((*frame)["frame_id"], 0);
    client.send(nlohmann::json{{"type", "command"}, {"frame_id", 0}, {"action", "save"}});
    ASSERT_TRUE(client.next("ack"));
  }
  EXPECT_EQ(http_call(port, boost::beast::http::verb::post, "/stop").status, 200u);
  std::string rest;
  while (fgets(line, sizeof line, pipe)) rest += line;
  const int status = pclose(pipe);
  EXPECT_TRUE(WIFEXITED(status) && WEXITSTATUS(status) == 0) << rest;
  EXPECT_NE(rest.find("report "), std::string::npos) << rest;
  EXPECT_TRUE(fs::exists(tmp.path() / "s" / "live" / "labels" / "frame_0.txt"));
}
