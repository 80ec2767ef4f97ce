#include "fieldanno/annotation_format.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "support/generators.hpp"

namespace fa = fieldanno;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Independent decimal rendering: round half away from zero at 1e-6 through
// long double, then print the integer parts.
std::string reference_fixed6(double v) {
  const long double scaled = std::round(static_cast<long double>(v) * 1000000.0L);
  const auto micro = static_cast<long long>(scaled);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%lld.%06lld", micro / 1000000, micro % 1000000);
  return buf;
}

}  // namespace

TEST(ParseLabelFile, ReadsSingleLine) {
  const auto boxes = fa::parse_label_file("0 0.5 0.5 0.2 0.3", 1);
  ASSERT_EQ(boxes.size(), 1u);
  EXPECT_EQ(boxes[0], (fa::NormalizedBox{0, 0.5, 0.5, 0.2, 0.3}));
}

TEST(ParseLabelFile, EmptyInputGivesNoBoxes) {
  EXPECT_TRUE(fa::parse_label_file("", 1).empty());
  EXPECT_TRUE(fa::parse_label_file("\n\n  \n", 1).empty());
}

TEST(ParseLabelFile, ClassOutOfRange) {
  try {
    fa::parse_label_file("5 0.5 0.5 0.2 0.3", 1);
    FAIL() << "no error";
  } catch (const fa::FormatError& e) {
    EXPECT_EQ(e.kind(), fa::FormatError::Kind::kClassRange);
    EXPECT_EQ(e.line(), 1u);
  }
}

TEST(ParseLabelFile, AcceptsCrlfAndMissingFinalNewline) {
  const auto a = fa::parse_label_file("0 0.5 0.5 0.2 0.3\r\n1 0.25 0.25 0.1 0.1", 2);
  const auto b = fa::parse_label_file("0 0.5 0.5 0.2 0.3\n1 0.25 0.25 0.1 0.1\n", 2);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 2u);
}

TEST(ParseLabelFile, PreservesOrder) {
  const auto boxes = fa::parse_label_file("2 0.1 0.1 0.1 0.1\n0 0.9 0.9 0.1 0.1\n1 0.5 0.5 0.5 0.5\n", 3);
  ASSERT_EQ(boxes.size(), 3u);
  EXPECT_EQ(boxes[0].class_id, 2u);
  EXPECT_EQ(boxes[1].class_id, 0u);
  EXPECT_EQ(boxes[2].class_id, 1u);
}

TEST(ParseLabelFile, EdgeOverhangWithinToleranceAccepted) {
  // right edge at 1 + 5e-7
  const auto boxes = fa::parse_label_file("0 0.9000005 0.5 0.2 0.2\n", 1);
  ASSERT_EQ(boxes.size(), 1u);
  EXPECT_THROW(fa::parse_label_file("0 0.900002 0.5 0.2 0.2\n", 1), fa::FormatError);
}

TEST(ParseLabelFile, ExtentJustAboveOneClamped) {
  const auto boxes = fa::parse_label_file("0 0.5 0.5 1.0000004 0.2\n", 1);
  ASSERT_EQ(boxes.size(), 1u);
  EXPECT_EQ(boxes[0].w, 1.0);
}

TEST(ParseLabelFile, ZeroClassCountRejected) {
  EXPECT_THROW(fa::parse_label_file("", 0), std::invalid_argument);
}

TEST(ParseLabelFile, MalformedCorpusNamesTheLine) {
  const std::filesystem::path dir = FIELDANNO_TEST_DATA "/malformed";
  std::ifstream expected(FIELDANNO_TEST_DATA "/malformed_expected_lines.txt");
  std::map<std::string, std::size_t> lines;
  std::string name;
  std::size_t line = 0;
  while (expected >> name >> line) lines[name] = line;
  ASSERT_EQ(lines.size(), 20u);
  for (const auto& [file, want] : lines) {
    SCOPED_TRACE(file);
    const auto text = slurp(dir / file);
    try {
      fa::parse_label_file(text, 1);
      ADD_FAILURE() << "accepted";
    } catch (const fa::FormatError& e) {
      EXPECT_EQ(e.line(), want);
      EXPECT_EQ(std::string(e.what()).rfind("line " + std::to_string(want) + ": ", 0), 0u) << e.what();
    }
  }
}

TEST(SerializeLabels, FormatsSixDecimals) {
  EXPECT_EQ(fa::serialize_labels({{0, 0.5, 0.5, 0.2, 0.3}}), "0 0.500000 0.500000 0.200000 0.300000\n");
  EXPECT_EQ(fa::serialize_labels({}), "");
}

TEST(SerializeLabels, NeverPrintsNegativeZero) {
  EXPECT_EQ(fa::serialize_labels({{0, 0.5, 0.5, 1.0, 1.0}}), "0 0.500000 0.500000 1.000000 1.000000\n");
  std::string out;
  fa::detail::append_fixed6(out, -1e-9);
  EXPECT_EQ(out, "0.000000");
}

TEST(SerializeLabels, MatchesReferenceRendering) {
  fa::SplitMix64 rng(11);
  for (int i = 0; i < 2000; ++i) {
    const auto b = testsupport::random_box(rng, 13);
    const std::string want = std::to_string(b.class_id) + " " + reference_fixed6(b.cx) + " " +
                             reference_fixed6(b.cy) + " " + reference_fixed6(b.w) + " " +
                             reference_fixed6(b.h) + "\n";
    ASSERT_EQ(fa::serialize_labels({b}), want);
  }
}

TEST(SerializeLabels, RoundTripWithinHalfMicro) {
  fa::SplitMix64 rng(7);
  for (int set = 0; set < 1000; ++set) {
    std::vector<fa::NormalizedBox> boxes(rng.below(20));
    for (auto& b : boxes) b = testsupport::random_box(rng, 13);
    const auto text = fa::serialize_labels(boxes);
    const auto back = fa::parse_label_file(text, 13);
    ASSERT_EQ(back.size(), boxes.size());
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      EXPECT_EQ(back[i].class_id, boxes[i].class_id);
      EXPECT_LE(std::abs(back[i].cx - boxes[i].cx), 5e-7);
      EXPECT_LE(std::abs(back[i].cy - boxes[i].cy), 5e-7);
      EXPECT_LE(std::abs(back[i].w - boxes[i].w), 5e-7);
      EXPECT_LE(std::abs(back[i].h - boxes[i].h), 5e-7);
    }
    EXPECT_EQ(fa::serialize_labels(back), text);
  }
}

TEST(SerializeLabels, EdgeTouchingBoxesSurvive) {
  // Rendering can push an edge up to 1e-6 past the border.
  const fa::NormalizedBox b{0, 0.9999996, 0.5, 0.0000008, 0.5};
  const auto back = fa::parse_label_file(fa::serialize_labels({b}), 1);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_LE(std::abs(back[0].cx - b.cx), 5e-7);
}

TEST(ParsePredictionFile, ReadsConfidence) {
  const auto preds = fa::parse_prediction_file("0 0.5 0.5 0.2 0.3 0.75\n", 1);
  ASSERT_EQ(preds.size(), 1u);
  EXPECT_DOUBLE_EQ(preds[0].confidence, 0.75);
  EXPECT_THROW(fa::parse_prediction_file("0 0.5 0.5 0.2 0.3 1.5\n", 1), fa::FormatError);
  EXPECT_THROW(fa::parse_prediction_file("0 0.5 0.5 0.2 0.3\n", 1), fa::FormatError);
}

TEST(ClassMap, RejectsDuplicatesAndEmpty) {
  EXPECT_THROW(fa::ClassMap({"a", "b", "a"}), std::invalid_argument);
  EXPECT_THROW(fa::ClassMap(std::vector<std::string>{}), std::invalid_argument);
  const fa::ClassMap m({"crop", "weed"});
  EXPECT_EQ(m.index_of("weed"), 1u);
  EXPECT_FALSE(m.index_of("tree"));
}

TEST(BoxViolation, ReportsEachInvariant) {
  EXPECT_EQ(fa::box_violation({0, 0.5, 0.5, 0.2, 0.2}, 1), "");
  EXPECT_NE(fa::box_violation({1, 0.5, 0.5, 0.2, 0.2}, 1), "");
  EXPECT_NE(fa::box_violation({0, 0.5, 0.5, 0.0, 0.2}, 1), "");
  EXPECT_NE(fa::box_violation({0, 0.05, 0.5, 0.2, 0.2}, 1), "");
  EXPECT_NE(fa::box_violation({0, NAN, 0.5, 0.2, 0.2}, 1), "");
}
