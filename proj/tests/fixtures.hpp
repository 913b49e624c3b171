#pragma once

// In-memory datasets for tests that do not need a file on disk.

#include "dtsp/dataset.hpp"

namespace dtsp::fixture {

inline Dataset make_dataset(int n, std::int64_t count, std::uint64_t seed, const std::string& method = "fi") {
  BuildOptions opts;
  opts.n = n;
  opts.count = count;
  opts.method = method;
  opts.seed = seed;
  const Method m = parse_method(method);
  Dataset ds;
  ds.meta = {n, method, count, seed, 0.0, 0.0};
  std::vector<double> costs;
  for (std::int64_t i = 0; i < count; ++i) {
    ds.records.push_back(build_record(opts, m, i));
    costs.push_back(ds.cost(static_cast<std::size_t>(i)));
  }
  fill_rtg_stats(ds.meta, costs);
  return ds;
}

}  // namespace dtsp::fixture
