#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtsp/core.hpp"
#include "dtsp/error.hpp"

namespace dtsp {

/// Mean and population standard deviation of optimality gap and raw cost.
struct GapReport {
  std::string method;
  /// Heuristic that produced the training data; groups rows in comparisons.
  std::string data;
  int n = 0;
  std::size_t count = 0;
  std::optional<double> mean_gap;
  std::optional<double> std_gap;
  double mean_cost = 0.0;
  double std_cost = 0.0;
};

struct ScoredTour {
  std::string id;
  double cost = 0.0;
};

struct Reference {
  std::string id;
  std::optional<double> opt_cost;
};

namespace detail {

inline std::pair<double, double> mean_pop_std(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - mean) * (x - mean);
  return {mean, std::sqrt(sq / static_cast<double>(xs.size()))};
}

}  // namespace detail

/// Gaps are computed per instance and then averaged. When any optimum is
/// missing the report carries costs only.
inline GapReport evaluate(const std::string& method, int n, const std::vector<ScoredTour>& predictions,
                          const std::vector<Reference>& references) {
  if (predictions.empty()) fail(ErrorCode::InvalidArg, "nothing to evaluate");
  std::map<std::string, std::optional<double>> optimum;
  for (const auto& r : references) {
    if (!optimum.emplace(r.id, r.opt_cost).second) fail(ErrorCode::Mismatch, "duplicate reference id '" + r.id + "'");
  }
  std::set<std::string> seen;
  for (const auto& p : predictions) {
    if (!optimum.contains(p.id)) fail(ErrorCode::Mismatch, "prediction id '" + p.id + "' is not in the reference set");
    if (!seen.insert(p.id).second) fail(ErrorCode::Mismatch, "duplicate prediction id '" + p.id + "'");
  }
  if (seen.size() != optimum.size()) fail(ErrorCode::Mismatch, "reference ids without predictions: " + std::to_string(optimum.size() - seen.size()));

  GapReport report;
  report.method = method;
  report.n = n;
  report.count = predictions.size();
  std::vector<double> costs;
  std::vector<double> gaps;
  bool have_optima = true;
  for (const auto& p : predictions) {
    costs.push_back(p.cost);
    const auto& opt = optimum.at(p.id);
    if (opt) gaps.push_back(optimality_gap(p.cost, *opt));
    else have_optima = false;
  }
  std::tie(report.mean_cost, report.std_cost) = detail::mean_pop_std(costs);
  if (have_optima) {
    const auto [mg, sg] = detail::mean_pop_std(gaps);
    report.mean_gap = mg;
    report.std_gap = sg;
  }
  return report;
}

inline nlohmann::json to_json(const GapReport& r) {
  nlohmann::json j = {{"method", r.method}, {"n", r.n}, {"count", r.count}, {"mean_cost", r.mean_cost}, {"std_cost", r.std_cost}};
  j["mean_gap"] = r.mean_gap ? nlohmann::json(*r.mean_gap) : nlohmann::json(nullptr);
  j["std_gap"] = r.std_gap ? nlohmann::json(*r.std_gap) : nlohmann::json(nullptr);
  if (!r.data.empty()) j["data"] = r.data;
  j["std_kind"] = "population";
  return j;
}

inline GapReport gap_report_from_json(const nlohmann::json& j) {
  GapReport r;
  r.method = j.at("method").get<std::string>();
  r.n = j.at("n").get<int>();
  r.count = j.at("count").get<std::size_t>();
  r.mean_cost = j.at("mean_cost").get<double>();
  r.std_cost = j.at("std_cost").get<double>();
  if (!j.at("mean_gap").is_null()) r.mean_gap = j.at("mean_gap").get<double>();
  if (!j.at("std_gap").is_null()) r.std_gap = j.at("std_gap").get<double>();
  if (j.contains("data")) r.data = j.at("data").get<std::string>();
  return r;
}

/// A comparison table: rows grouped by data heuristic, one column per N.
struct ComparisonTable {
  struct Cell {
    double mean = 0.0;
    double std = 0.0;
    bool is_gap = true;
    bool best = false;
  };
  struct Row {
    std::string data;
    std::string method;
    std::map<int, Cell> cells;
  };
  std::vector<int> columns;
  std::vector<Row> rows;

  std::string text() const;
  nlohmann::json json() const;
};

inline std::string format_fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

/// Groups reports by data heuristic (first appearance order), unions the N
/// columns and marks the lowest mean per group and column.
inline ComparisonTable compare(const std::vector<GapReport>& reports) {
  if (reports.empty()) fail(ErrorCode::InvalidArg, "no reports to compare");
  ComparisonTable table;
  std::set<int> columns;
  std::vector<std::string> groups;
  for (const auto& r : reports) {
    columns.insert(r.n);
    if (std::find(groups.begin(), groups.end(), r.data) == groups.end()) groups.push_back(r.data);
  }
  table.columns.assign(columns.begin(), columns.end());
  for (const auto& group : groups) {
    const std::size_t first = table.rows.size();
    for (const auto& r : reports) {
      if (r.data != group) continue;
      auto row = std::find_if(table.rows.begin() + static_cast<std::ptrdiff_t>(first), table.rows.end(),
                              [&](const auto& existing) { return existing.method == r.method; });
      if (row == table.rows.end()) {
        table.rows.push_back({group, r.method, {}});
        row = table.rows.end() - 1;
      }
      ComparisonTable::Cell cell;
      cell.is_gap = r.mean_gap.has_value();
      cell.mean = cell.is_gap ? *r.mean_gap : r.mean_cost;
      cell.std = cell.is_gap ? *r.std_gap : r.std_cost;
      row->cells[r.n] = cell;
    }
    for (int col : table.columns) {
      ComparisonTable::Cell* best = nullptr;
      for (std::size_t i = first; i < table.rows.size(); ++i) {
        auto it = table.rows[i].cells.find(col);
        if (it == table.rows[i].cells.end()) continue;
        if (best == nullptr || it->second.mean < best->mean) best = &it->second;
      }
      if (best != nullptr) best->best = true;
    }
  }
  return table;
}

inline std::string ComparisonTable::text() const {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"Data", "Method"};
  for (int col : columns) header.push_back("N=" + std::to_string(col));
  grid.push_back(header);
  for (const auto& row : rows) {
    std::vector<std::string> line{row.data, row.method};
    for (int col : columns) {
      auto it = row.cells.find(col);
      if (it == row.cells.end()) {
        line.emplace_back("");
        continue;
      }
      std::string s = format_fixed2(it->second.mean) + " ± " + format_fixed2(it->second.std);
      if (!it->second.is_gap) s += " (cost)";
      if (it->second.best) s += " *";
      line.push_back(s);
    }
    grid.push_back(line);
  }
  // "±" is two bytes but one column wide.
  auto width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char ch : s) w += (ch & 0xC0U) != 0x80U;
    return w;
  };
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& line : grid) {
    for (std::size_t i = 0; i < line.size(); ++i) widths[i] = std::max(widths[i], width(line[i]));
  }
  std::string out;
  for (std::size_t r = 0; r < grid.size(); ++r) {
    for (std::size_t i = 0; i < grid[r].size(); ++i) {
      const auto& s = grid[r][i];
      const std::size_t pad = widths[i] - width(s);
      if (i < 2) out += s + std::string(pad, ' ');
      else out += std::string(pad, ' ') + s;
      out += i + 1 < grid[r].size() ? "  " : "";
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : widths) total += w + 2;
      out += std::string(total - 2, '-') + '\n';
    }
  }
  return out;
}

inline nlohmann::json ComparisonTable::json() const {
  nlohmann::json j;
  j["columns"] = columns;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json cells = nlohmann::json::object();
    for (const auto& [col, cell] : row.cells) {
      cells[std::to_string(col)] = {{"mean", cell.mean}, {"std", cell.std}, {"metric", cell.is_gap ? "gap" : "cost"}, {"best", cell.best}};
    }
    j["rows"].push_back({{"data", row.data}, {"method", row.method}, {"cells", cells}});
  }
  return j;
}

}  // namespace dtsp
