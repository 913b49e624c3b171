#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtsp/core.hpp"
#include "dtsp/error.hpp"
#include "dtsp/io.hpp"
#include "dtsp/random.hpp"
#include "dtsp/solvers.hpp"

namespace dtsp {

/// An instance with one or more heuristic tours and, for small N, the exact optimum cost.
struct SolvedInstance {
  Instance instance;
  std::map<std::string, Tour> tours;
  std::map<std::string, double> costs;
  std::optional<double> opt_cost;

  friend bool operator==(const SolvedInstance&, const SolvedInstance&) = default;
};

/// Decision-Transformer view of a solved tour: obs[t] is the node visited at
/// step t, act[t] the next node (the depot for the final step), and rtg[t]
/// the negative length of the completed tour.
struct Trajectory {
  std::vector<int> obs;
  std::vector<double> rtg;
  std::vector<int> act;

  std::size_t size() const { return obs.size(); }
};

struct DatasetMeta {
  int n = 0;
  std::string method;
  std::int64_t count = 0;
  std::uint64_t seed = 0;
  double mean_rtg = 0.0;
  double std_rtg = 0.0;

  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

inline Trajectory tour_to_trajectory(const Instance& instance, const Tour& tour) {
  const double cost = tour_cost(instance, tour);
  const std::size_t n = tour.size();
  Trajectory traj;
  traj.obs = tour;
  traj.act.resize(n);
  for (std::size_t t = 0; t + 1 < n; ++t) traj.act[t] = tour[t + 1];
  traj.act[n - 1] = 0;
  traj.rtg.assign(n, -cost);
  return traj;
}

namespace detail {

inline std::string meta_to_json(const DatasetMeta& meta) {
  return "{\"n\":" + std::to_string(meta.n) + ",\"method\":" + nlohmann::json(meta.method).dump() +
         ",\"count\":" + std::to_string(meta.count) + ",\"seed\":" + std::to_string(meta.seed) +
         ",\"mean_rtg\":" + io::format_double(meta.mean_rtg) + ",\"std_rtg\":" + io::format_double(meta.std_rtg) + "}";
}

inline std::string record_to_json(const SolvedInstance& rec, const std::string& method) {
  std::string s = "{\"id\":" + nlohmann::json(rec.instance.id()).dump() + ",\"coords\":[";
  const auto& coords = rec.instance.coords();
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (i) s += ',';
    s += '[' + io::format_double(coords[i].x) + ',' + io::format_double(coords[i].y) + ']';
  }
  s += "],\"tour\":[";
  const Tour& tour = rec.tours.at(method);
  for (std::size_t i = 0; i < tour.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(tour[i]);
  }
  s += "],\"cost\":" + io::format_double(rec.costs.at(method)) + ",\"opt_cost\":";
  s += rec.opt_cost ? io::format_double(*rec.opt_cost) : std::string("null");
  s += '}';
  return s;
}

template <typename T>
T require_field(const nlohmann::json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(ErrorCode::ParseError, "line " + std::to_string(line) + ": missing field '" + key + "'");
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::ParseError, "line " + std::to_string(line) + ": bad type for field '" + key + "'");
  }
}

}  // namespace detail

inline constexpr double kCostTolerance = 1e-9;

/// Checks the stored-record invariants; returns a description of the first violation.
inline std::optional<std::string> check_record(const SolvedInstance& rec) {
  for (const auto& [method, tour] : rec.tours) {
    if (auto violation = validate_tour(rec.instance, tour)) return method + " tour: " + *violation;
    auto cost = rec.costs.find(method);
    if (cost == rec.costs.end()) return method + " has no stored cost";
    const double actual = tour_cost(rec.instance, tour);
    if (std::abs(actual - cost->second) > kCostTolerance) {
      return method + " cost " + io::format_double(cost->second) + " differs from tour length " + io::format_double(actual);
    }
    if (rec.opt_cost && *rec.opt_cost > cost->second + kCostTolerance) return "opt_cost exceeds " + method + " cost";
  }
  return std::nullopt;
}

/// Streaming reader: the meta line is parsed on open, records on demand.
class DatasetReader {
 public:
  explicit DatasetReader(const std::filesystem::path& path) : lines_(path) {
    std::string line;
    bool complete = false;
    if (!lines_.next(line, complete)) fail(ErrorCode::ParseError, "line 1: empty dataset file");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ParseError, "line 1: " + std::string(e.what()));
    }
    meta_.n = detail::require_field<int>(j, "n", 1);
    meta_.method = detail::require_field<std::string>(j, "method", 1);
    meta_.count = detail::require_field<std::int64_t>(j, "count", 1);
    meta_.seed = detail::require_field<std::uint64_t>(j, "seed", 1);
    meta_.mean_rtg = detail::require_field<double>(j, "mean_rtg", 1);
    meta_.std_rtg = detail::require_field<double>(j, "std_rtg", 1);
  }

  const DatasetMeta& meta() const { return meta_; }

  /// Returns false after the last record. Throws ParseError(line) or
  /// InvariantViolation(record index).
  bool next(SolvedInstance& out) {
    std::string line;
    bool complete = false;
    if (!lines_.next(line, complete)) {
      if (read_ < meta_.count) {
        fail(ErrorCode::ParseError, "line " + std::to_string(lines_.line_no() + 1) + ": expected " +
                                        std::to_string(meta_.count) + " records, found " + std::to_string(read_));
      }
      return false;
    }
    const std::size_t line_no = lines_.line_no();
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + (complete ? ": " : ": truncated record: ") + e.what());
    }
    if (read_ >= meta_.count) fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": more records than declared");

    const auto raw_coords = detail::require_field<std::vector<std::array<double, 2>>>(j, "coords", line_no);
    std::vector<Point> coords;
    coords.reserve(raw_coords.size());
    for (const auto& c : raw_coords) coords.push_back({c[0], c[1]});
    const std::string index_str = std::to_string(read_);
    SolvedInstance rec;
    try {
      rec.instance = Instance(std::move(coords), detail::require_field<std::string>(j, "id", line_no));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ParseError) throw;
      fail(ErrorCode::InvariantViolation, "record " + index_str + ": " + e.what());
    }
    if (rec.instance.n() != meta_.n) fail(ErrorCode::InvariantViolation, "record " + index_str + ": node count differs from meta.n");
    rec.tours[meta_.method] = detail::require_field<std::vector<int>>(j, "tour", line_no);
    rec.costs[meta_.method] = detail::require_field<double>(j, "cost", line_no);
    auto opt = j.find("opt_cost");
    if (opt != j.end() && !opt->is_null()) {
      if (!opt->is_number()) fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": bad type for field 'opt_cost'");
      rec.opt_cost = opt->get<double>();
    }
    if (auto violation = check_record(rec)) fail(ErrorCode::InvariantViolation, "record " + index_str + ": " + *violation);
    ++read_;
    out = std::move(rec);
    return true;
  }

 private:
  io::LineReader lines_;
  DatasetMeta meta_;
  std::int64_t read_ = 0;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<SolvedInstance> records;

  const Tour& tour(std::size_t i) const { return records[i].tours.at(meta.method); }
  double cost(std::size_t i) const { return records[i].costs.at(meta.method); }
};

inline Dataset load_dataset(const std::filesystem::path& path) {
  DatasetReader reader(path);
  Dataset ds;
  ds.meta = reader.meta();
  ds.records.reserve(static_cast<std::size_t>(std::max<std::int64_t>(0, ds.meta.count)));
  SolvedInstance rec;
  while (reader.next(rec)) ds.records.push_back(std::move(rec));
  return ds;
}

/// Mean/population-std of rtg[0] (= -cost) over the records.
inline void fill_rtg_stats(DatasetMeta& meta, const std::vector<double>& costs) {
  double sum = 0.0;
  for (double c : costs) sum += -c;
  meta.mean_rtg = costs.empty() ? 0.0 : sum / static_cast<double>(costs.size());
  double sq = 0.0;
  for (double c : costs) sq += (-c - meta.mean_rtg) * (-c - meta.mean_rtg);
  meta.std_rtg = costs.empty() ? 0.0 : std::sqrt(sq / static_cast<double>(costs.size()));
}

inline void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  io::AtomicWriter out(path);
  out.write_line(detail::meta_to_json(ds.meta));
  for (const auto& rec : ds.records) out.write_line(detail::record_to_json(rec, ds.meta.method));
  out.commit();
}

struct BuildOptions {
  int n = 10;
  std::int64_t count = 100;
  std::string method = "fi";
  std::uint64_t seed = 0;
  std::optional<SaConfig> sa_cfg;
  unsigned workers = 1;
  /// Records are solved and written in blocks of this size.
  std::size_t block = 1024;
};

inline std::string record_id(std::uint64_t seed, std::int64_t index) { return std::to_string(seed) + "-" + std::to_string(index); }

/// Solves one generated record. Pure in (opts, index).
inline SolvedInstance build_record(const BuildOptions& opts, Method method, std::int64_t index) {
  const auto idx = static_cast<std::uint64_t>(index);
  SolvedInstance rec;
  rec.instance = generate_instance(opts.n, derive_seed(opts.seed, idx));
  rec.instance.set_id(record_id(opts.seed, index));
  SaConfig sa = opts.sa_cfg.value_or(sa_presets::desk());
  sa.seed = derive_seed(derive_seed(opts.seed ^ sa.seed, 0x5a), idx);
  Tour tour = solve(method, rec.instance, sa);
  rec.costs[opts.method] = tour_cost(rec.instance, tour);
  rec.tours[opts.method] = std::move(tour);
  if (opts.n <= kExactMaxNodes) rec.opt_cost = tour_cost(rec.instance, solve_exact(rec.instance));
  return rec;
}

/// Generates, solves and writes `count` records. Output bytes depend only on
/// (n, count, method, seed, sa_cfg), never on the worker count.
inline DatasetMeta build_dataset(const std::filesystem::path& path, const BuildOptions& opts) {
  const Method method = parse_method(opts.method);
  if (opts.n < 3) fail(ErrorCode::InvalidArg, "n must be >= 3");
  if (opts.count < 0) fail(ErrorCode::InvalidArg, "count must be >= 0");
  if (method == Method::SimulatedAnnealing && opts.sa_cfg) opts.sa_cfg->validate();

  const std::filesystem::path body_path = path.string() + ".body";
  std::vector<double> costs;
  costs.reserve(static_cast<std::size_t>(opts.count));
  {
    io::AtomicWriter body(body_path);
    const unsigned workers = std::max(1U, opts.workers);
    std::vector<std::string> lines;
    for (std::int64_t start = 0; start < opts.count; start += static_cast<std::int64_t>(opts.block)) {
      const std::int64_t end = std::min(opts.count, start + static_cast<std::int64_t>(opts.block));
      lines.assign(static_cast<std::size_t>(end - start), {});
      std::vector<double> block_costs(lines.size());
      auto work = [&](unsigned w) {
        for (std::int64_t i = start + w; i < end; i += workers) {
          const auto rec = build_record(opts, method, i);
          lines[static_cast<std::size_t>(i - start)] = detail::record_to_json(rec, opts.method);
          block_costs[static_cast<std::size_t>(i - start)] = rec.costs.at(opts.method);
        }
      };
      if (workers == 1) {
        work(0);
      } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
      }
      for (const auto& line : lines) body.write_line(line);
      costs.insert(costs.end(), block_costs.begin(), block_costs.end());
    }
    body.commit();
  }

  DatasetMeta meta{opts.n, opts.method, opts.count, opts.seed, 0.0, 0.0};
  fill_rtg_stats(meta, costs);
  {
    io::AtomicWriter out(path);
    out.write_line(detail::meta_to_json(meta));
    io::LineReader body(body_path);
    std::string line;
    bool complete = false;
    while (body.next(line, complete)) out.write_line(line);
    out.commit();
  }
  std::filesystem::remove(body_path);
  return meta;
}

}  // namespace dtsp
