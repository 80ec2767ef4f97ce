#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fieldanno/eval_metrics.hpp"
#include "fieldanno/stats.hpp"

namespace fieldanno {

inline constexpr const char* kMetricNames[] = {"map_50_95", "precision", "recall", "f1"};

inline bool is_metric_name(std::string_view name) {
  return std::find(std::begin(kMetricNames), std::end(kMetricNames), name) != std::end(kMetricNames);
}

struct MetricSeries {
  std::string config_id;
  std::string metric_name;
  std::string unit = "epoch";  // "epoch" or "run": what one value stands for
  std::vector<double> steps;
  std::vector<double> values;
};

class LogError : public std::runtime_error {
 public:
  LogError(std::size_t line, const std::string& what)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what) {}
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    auto comma = line.find(',', pos);
    out.push_back(trim(line.substr(pos, comma == line.npos ? line.npos : comma - pos)));
    if (comma == line.npos) break;
    pos = comma + 1;
  }
  return out;
}

// Header spellings accepted for each canonical column, including the
// Ultralytics results.csv names.
inline std::optional<std::string> canonical_column(std::string_view name) {
  static const std::map<std::string_view, std::string_view> kAliases = {
      {"epoch", "epoch"},
      {"run", "run"},
      {"config", "config"},
      {"config_id", "config"},
      {"map_50_95", "map_50_95"},
      {"mAP50-95", "map_50_95"},
      {"metrics/mAP50-95(B)", "map_50_95"},
      {"precision", "precision"},
      {"metrics/precision(B)", "precision"},
      {"recall", "recall"},
      {"metrics/recall(B)", "recall"},
      {"f1", "f1"},
  };
  auto it = kAliases.find(name);
  if (it == kAliases.end()) return std::nullopt;
  return std::string(it->second);
}

}  // namespace detail

// Parses a training log with header `epoch,map_50_95,precision,recall,f1`
// (or `run,...` for per-run replicates). An optional `config` column splits
// rows by configuration; otherwise every row belongs to `config_id`. `f1` is
// derived from precision and recall when absent. Steps must strictly
// increase within each configuration.
inline std::vector<MetricSeries> ingest_training_log(std::string_view csv, const std::string& config_id) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    auto nl = csv.find('\n', pos);
    lines.push_back(csv.substr(pos, nl == csv.npos ? csv.npos : nl - pos));
    if (nl == csv.npos) break;
    pos = nl + 1;
  }
  while (!lines.empty() && detail::trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw LogError(0, "training log is empty");

  const auto header = detail::split_csv(lines[0]);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (auto c = detail::canonical_column(header[i])) col.emplace(*c, i);

  std::string unit;
  if (col.count("epoch")) unit = "epoch";
  else if (col.count("run")) unit = "run";
  else throw LogError(1, "missing column 'epoch' (or 'run')");
  for (const char* need : {"map_50_95", "precision", "recall"})
    if (!col.count(need)) throw LogError(1, std::string("missing column '") + need + "'");
  const bool derive_f1 = !col.count("f1");
  if (lines.size() < 2) throw LogError(0, "training log has no data rows");

  struct Rows {
    std::vector<double> steps;
    std::map<std::string, std::vector<double>> values;
  };
  std::vector<std::string> order;
  std::map<std::string, Rows> by_config;

  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    const std::size_t line_no = ln + 1;
    if (detail::trim(lines[ln]).empty()) continue;
    const auto cells = detail::split_csv(lines[ln]);
    if (cells.size() != header.size())
      throw LogError(line_no, "expected " + std::to_string(header.size()) + " cells, found " +
                                  std::to_string(cells.size()));
    auto number = [&](const std::string& key) {
      const auto cell = cells[col.at(key)];
      double v = 0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v))
        throw LogError(line_no, "non-numeric " + key + " '" + std::string(cell) + "'");
      return v;
    };
    const std::string cfg = col.count("config") ? std::string(cells[col.at("config")]) : config_id;
    if (cfg.empty()) throw LogError(line_no, "empty config id");
    auto [it, fresh] = by_config.try_emplace(cfg);
    if (fresh) order.push_back(cfg);
    auto& rows = it->second;
    const double step = number(unit);
    if (!rows.steps.empty() && step <= rows.steps.back())
      throw LogError(line_no, unit + " values must be strictly increasing");
    rows.steps.push_back(step);
    const double p = number("precision");
    const double r = number("recall");
    rows.values["map_50_95"].push_back(number("map_50_95"));
    rows.values["precision"].push_back(p);
    rows.values["recall"].push_back(r);
    rows.values["f1"].push_back(derive_f1 ? f1(p, r) : number("f1"));
  }
  if (by_config.empty()) throw LogError(0, "training log has no data rows");

  std::vector<MetricSeries> out;
  for (const auto& cfg : order) {
    const auto& rows = by_config.at(cfg);
    for (const char* metric : kMetricNames)
      out.push_back({cfg, metric, unit, rows.steps, rows.values.at(metric)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration comparison

struct ComparisonRow {
  std::string config_a;
  std::string config_b;
  std::string metric;
  std::string unit;
  TestResult result;
  double mean_a = 0;
  double mean_b = 0;

  // Which configuration's mean is higher.
  std::string direction() const {
    if (mean_a > mean_b) return config_a + ">" + config_b;
    if (mean_b > mean_a) return config_b + ">" + config_a;
    return "equal";
  }
};

inline const MetricSeries& find_series(const std::vector<MetricSeries>& all, const std::string& config,
                                       const std::string& metric) {
  bool config_seen = false;
  for (const auto& s : all) {
    if (s.config_id != config) continue;
    config_seen = true;
    if (s.metric_name == metric) return s;
  }
  if (!config_seen) throw std::invalid_argument("unknown config id '" + config + "'");
  throw std::invalid_argument("config '" + config + "' has no metric '" + metric + "'");
}

// One row per pair, in pair order.
inline std::vector<ComparisonRow> compare_configs(const std::vector<MetricSeries>& all,
                                                  const std::vector<std::pair<std::string, std::string>>& pairs,
                                                  const std::string& metric,
                                                  TTestVariant variant = TTestVariant::kPooled,
                                                  double alpha = kDefaultAlpha) {
  if (!is_metric_name(metric)) throw std::invalid_argument("unknown metric '" + metric + "'");
  std::vector<ComparisonRow> rows;
  for (const auto& [a, b] : pairs) {
    const auto& sa = find_series(all, a, metric);
    const auto& sb = find_series(all, b, metric);
    ComparisonRow row;
    row.config_a = a;
    row.config_b = b;
    row.metric = metric;
    row.unit = sa.unit == sb.unit ? sa.unit : sa.unit + "/" + sb.unit;
    row.result = t_test(sa.values, sb.values, variant, alpha);
    row.mean_a = moments(sa.values).mean;
    row.mean_b = moments(sb.values).mean;
    rows.push_back(std::move(row));
  }
  return rows;
}

// `pair,metric,t,df,p,significant,direction,unit,p_exact`; `p` uses the
// report rendering, `p_exact` keeps full precision.
inline std::string format_comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::string out = "pair,metric,t,df,p,significant,direction,unit,p_exact\n";
  char df[32], pe[32];
  for (const auto& r : rows) {
    std::snprintf(df, sizeof df, "%.2f", r.result.degrees_of_freedom);
    std::snprintf(pe, sizeof pe, "%.6e", r.result.p_value);
    out += r.config_a + " vs " + r.config_b + "," + r.metric + "," + format_statistic(r.result.t_statistic) + "," +
           df + "," + format_p_value(r.result.p_value) + "," + (r.result.significant ? "true" : "false") + "," +
           r.direction() + "," + r.unit + "," + pe + "\n";
  }
  return out;
}

inline std::string format_box_csv(const std::vector<MetricSeries>& all) {
  std::string out = "config,metric,median,q1,q3,iqr,whisker_low,whisker_high,outliers\n";
  for (const auto& s : all) {
    const auto b = box_summary(s.values);
    std::string outliers;
    for (double v : b.outliers) {
      if (!outliers.empty()) outliers += ';';
      outliers += detail::fixed6(v);
    }
    out += s.config_id + "," + s.metric_name + "," + detail::fixed6(b.median) + "," + detail::fixed6(b.q1) + "," +
           detail::fixed6(b.q3) + "," + detail::fixed6(b.iqr) + "," + detail::fixed6(b.whisker_low) + "," +
           detail::fixed6(b.whisker_high) + "," + outliers + "\n";
  }
  return out;
}

inline std::string format_histogram_csv(const std::vector<MetricSeries>& all, std::size_t bins) {
  std::string out = "config,metric,bin_low,bin_high,count\n";
  for (const auto& s : all)
    for (const auto& b : histogram(s.values, bins))
      out += s.config_id + "," + s.metric_name + "," + detail::fixed6(b.low) + "," + detail::fixed6(b.high) + "," +
             std::to_string(b.count) + "\n";
  return out;
}

inline std::string format_curves_csv(const std::vector<MetricSeries>& all) {
  std::string out = "config,metric,unit,step,value\n";
  for (const auto& s : all)
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      char step[32];
      std::snprintf(step, sizeof step, "%g", s.steps[i]);
      out += s.config_id + "," + s.metric_name + "," + s.unit + "," + step + "," + detail::fixed6(s.values[i]) + "\n";
    }
  return out;
}

}  // namespace fieldanno
