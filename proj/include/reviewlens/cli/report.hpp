#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reviewlens/category.hpp"
#include "reviewlens/cli/plot.hpp"
#include "reviewlens/error.hpp"
#include "reviewlens/metrics.hpp"

namespace reviewlens::cli {

// Rebuilds tables and plots from the files a run left behind, without rerunning anything.
namespace report_detail {

using Json = nlohmann::ordered_json;

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name, const std::string& where) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    fail(ErrorKind::MalformedRecord, where + " lacks column '" + std::string(name) + "'");
  }
};

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline Table read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::InvalidArgument, "missing " + path.string());
  Table t;
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::InvalidArgument, path.string() + " is empty");
  t.header = split_line(line);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != t.header.size()) fail(ErrorKind::MalformedRecord, path.string() + ": ragged row");
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline double to_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::MalformedRecord, where + ": not a number '" + s + "'");
}

inline bool is_index(const std::string& s) { return !s.empty() && std::all_of(s.begin(), s.end(), ::isdigit); }

inline std::string display(const std::string& codebook) {
  const auto c = parse_category(codebook);
  return c ? std::string(display_name(*c)) : codebook;
}

inline std::ofstream create(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + p.string());
  return out;
}

// The metric columns shared by results.csv and report.csv, in table order.
inline std::vector<std::string> metric_columns() {
  std::vector<std::string> out;
  for (std::size_t i = 1; i < metrics::kReportColumns.size(); ++i) out.emplace_back(metrics::kReportColumns[i]);
  return out;
}

struct Group {
  std::string variant, category;
  std::vector<double> fold_f1;
  std::vector<std::vector<double>> fold_values;
  std::vector<double> mean_values;  // from the "mean" row when present
};

/// Per (variant, category): min/mean/max of F1 (Macro) over folds plus the mean metric row.
inline std::vector<std::string> cv_like(const std::filesystem::path& run, const std::filesystem::path& out,
                                        const std::string& kind) {
  const auto results = read_csv(run / "results.csv");
  const auto where = (run / "results.csv").string();
  const auto cols = metric_columns();
  std::vector<std::size_t> idx;
  for (const auto& c : cols) idx.push_back(results.column(c, where));
  const auto v_col = results.column("variant", where), c_col = results.column("category", where),
             f_col = results.column("fold", where), f1_col = results.column("F1 (Macro)", where);

  std::vector<Group> groups;
  for (const auto& row : results.rows) {
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const Group& g) { return g.variant == row[v_col] && g.category == row[c_col]; });
    if (it == groups.end()) {
      groups.push_back({row[v_col], row[c_col], {}, {}, {}});
      it = std::prev(groups.end());
    }
    std::vector<double> values;
    for (auto i : idx) values.push_back(to_double(row[i], where));
    if (row[f_col] == "mean") {
      it->mean_values = std::move(values);
    } else {
      it->fold_f1.push_back(to_double(row[f1_col], where));
      it->fold_values.push_back(std::move(values));
    }
  }
  if (groups.empty()) fail(ErrorKind::InvalidArgument, where + " has no result rows");

  auto table = create(out / "summary.csv");
  table << "variant,category,folds,F1 min,F1 mean,F1 max";
  for (const auto& c : cols) table << ',' << c;
  table << '\n';
  std::vector<plot::Range> ranges;
  std::set<std::string> variants;
  for (const auto& g : groups) variants.insert(g.variant);
  for (auto& g : groups) {
    if (g.fold_f1.empty()) fail(ErrorKind::MalformedRecord, where + ": no fold rows for " + g.category);
    if (g.mean_values.empty()) {
      g.mean_values.assign(cols.size(), 0.0);
      for (const auto& v : g.fold_values)
        for (std::size_t i = 0; i < v.size(); ++i) g.mean_values[i] += v[i] / static_cast<double>(g.fold_values.size());
    }
    const double lo = *std::min_element(g.fold_f1.begin(), g.fold_f1.end());
    const double hi = *std::max_element(g.fold_f1.begin(), g.fold_f1.end());
    const double mean = std::clamp(g.mean_values[3], lo, hi);  // index 3 is F1 (Macro)
    table << g.variant << ',' << g.category << ',' << g.fold_f1.size() << ',' << metrics::format_number(lo) << ','
          << metrics::format_number(mean) << ',' << metrics::format_number(hi);
    for (double v : g.mean_values) table << ',' << metrics::format_number(v);
    table << '\n';
    const auto label = variants.size() > 1 ? g.variant + ": " + display(g.category) : display(g.category);
    ranges.push_back({label, lo, mean, hi});
  }
  auto svg = create(out / "f1_ranges.svg");
  plot::range_plot(svg, kind + ": F1 (Macro) range over folds", ranges);
  return {"summary.csv", "f1_ranges.svg"};
}

/// One row per train size with the F1 (Macro) of every category and their average.
inline std::vector<std::string> ablation(const std::filesystem::path& run, const std::filesystem::path& out) {
  const auto results = read_csv(run / "results.csv");
  const auto where = (run / "results.csv").string();
  const auto c_col = results.column("category", where), f_col = results.column("fold", where),
             f1_col = results.column("F1 (Macro)", where);
  std::vector<std::string> cats;
  std::map<long long, std::map<std::string, double>> by_size;
  for (const auto& row : results.rows) {
    if (!is_index(row[f_col])) fail(ErrorKind::MalformedRecord, where + ": train size '" + row[f_col] + "'");
    if (std::find(cats.begin(), cats.end(), row[c_col]) == cats.end()) cats.push_back(row[c_col]);
    by_size[std::stoll(row[f_col])][row[c_col]] = to_double(row[f1_col], where);
  }
  if (by_size.empty()) fail(ErrorKind::InvalidArgument, where + " has no result rows");
  auto table = create(out / "learning_curve.csv");
  table << "train_size";
  for (const auto& c : cats) table << ',' << c;
  table << ",average\n";
  std::vector<double> xs;
  std::vector<plot::Series> series;
  for (const auto& c : cats) series.push_back({display(c), {}});
  plot::Series avg{"average", {}};
  for (const auto& [size, f1] : by_size) {
    xs.push_back(static_cast<double>(size));
    table << size;
    double total = 0;
    for (std::size_t i = 0; i < cats.size(); ++i) {
      const auto it = f1.find(cats[i]);
      if (it == f1.end()) fail(ErrorKind::MalformedRecord, where + ": missing " + cats[i] + " at " + std::to_string(size));
      table << ',' << metrics::format_number(it->second);
      series[i].ys.push_back(it->second);
      total += it->second;
    }
    const double mean = total / static_cast<double>(cats.size());
    avg.ys.push_back(mean);
    table << ',' << metrics::format_number(mean) << '\n';
  }
  if (cats.size() > 1) series.push_back(std::move(avg));
  auto svg = create(out / "learning_curve.svg");
  plot::line_plot(svg, "Learning curve", "training sentences", "F1 (Macro)", xs, series);
  return {"learning_curve.csv", "learning_curve.svg"};
}

inline std::vector<std::string> prevalence(const std::filesystem::path& run, const std::filesystem::path& out) {
  std::ifstream in(run / "summary.json");
  if (!in) fail(ErrorKind::InvalidArgument, "missing " + (run / "summary.json").string());
  const auto j = Json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("categories")) fail(ErrorKind::MalformedRecord, "unreadable prevalence summary");
  const double width = j.value("bin_width", 0.05);
  auto table = create(out / "prevalence_means.csv");
  table << "category,mean,n_defined,below_low,above_high\n";
  std::vector<std::string> written{"prevalence_means.csv"};
  for (const auto& [name, cs] : j.at("categories").items()) {
    table << name << ',' << (cs.at("mean").is_null() ? "" : metrics::format_number(cs.at("mean").get<double>())) << ','
          << cs.at("n_defined").get<long long>() << ',' << cs.at("below_low").get<long long>() << ','
          << cs.at("above_high").get<long long>() << '\n';
    const auto file = "hist_" + name + ".svg";
    auto svg = create(out / file);
    plot::histogram(svg, display(name) + ": per-review prevalence", cs.at("bins").get<std::vector<long long>>(), width);
    written.push_back(file);
  }
  return written;
}

/// Single-split reports (evaluate, fewshot): F1 (Macro) per category as a point plot.
inline std::vector<std::string> single(const std::filesystem::path& run, const std::filesystem::path& out) {
  const auto table = read_csv(run / "report.csv");
  const auto where = (run / "report.csv").string();
  const auto c_col = table.column("Category", where), f1_col = table.column("F1 (Macro)", where);
  if (table.rows.empty()) fail(ErrorKind::InvalidArgument, where + " has no rows");
  std::vector<plot::Range> points;
  for (const auto& row : table.rows) {
    const double f1 = to_double(row[f1_col], where);
    points.push_back({display(row[c_col]), f1, f1, f1});
  }
  std::filesystem::copy_file(run / "report.csv", out / "summary.csv", std::filesystem::copy_options::overwrite_existing);
  auto svg = create(out / "f1.svg");
  plot::range_plot(svg, "F1 (Macro) per category", points);
  return {"summary.csv", "f1.svg"};
}

}  // namespace report_detail

/// Writes summary tables and SVG plots for a run directory into `out`; returns the file names.
inline std::vector<std::string> report(const std::filesystem::path& run_dir, const std::filesystem::path& out) {
  namespace rd = report_detail;
  if (!std::filesystem::is_directory(run_dir)) fail(ErrorKind::InvalidArgument, "no run directory at " + run_dir.string());
  std::ifstream in(run_dir / "manifest.json");
  if (!in) fail(ErrorKind::InvalidArgument, run_dir.string() + " holds no run (manifest.json missing)");
  const auto manifest = rd::Json::parse(in, nullptr, false);
  if (manifest.is_discarded() || !manifest.is_object()) fail(ErrorKind::MalformedRecord, "unreadable manifest in " + run_dir.string());
  const auto kind = manifest.value("kind", std::string());
  std::filesystem::create_directories(out);
  if (kind == "cv" || kind == "compare-encoders" || kind == "compare-agreement" || kind == "compare-context")
    return rd::cv_like(run_dir, out, kind);
  if (kind == "ablation") return rd::ablation(run_dir, out);
  if (kind == "prevalence") return rd::prevalence(run_dir, out);
  if (kind == "evaluate" || kind == "fewshot") return rd::single(run_dir, out);
  fail(ErrorKind::InvalidArgument, "no report for run kind '" + kind + "'");
}

}  // namespace reviewlens::cli
