#pragma once

// Length-scaling benchmark. Times single-worker forward passes at a range of
// input lengths (median of >= 3 repeats, warm-up excluded), records peak heap
// via the allocator hook, and fits a least-squares slope of log(wallclock)
// against log(length). Exceeded-capacity lengths are reported and excluded
// from the fit.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dass/audio.hpp"
#include "dass/classifier.hpp"

namespace dass {

struct BenchRecord {
  std::string model_id;
  double input_seconds = 0.0;
  int frames = 0;
  long tokens = 0;
  double wallclock_ms = 0.0;  // median over repeats
  std::size_t peak_mem_bytes = 0;
  std::string status = "ok";  // ok | exceeded-capacity
};

// Least-squares slope of log(y) vs log(x). Returns NaN for fewer than 3
// points or non-positive values.
double fit_loglog_slope(const std::vector<std::pair<double, double>>& points);

// Median wallclock of `repeats` calls, excluding one warm-up call.
double time_callable_ms(const std::function<void()>& fn, int repeats);

struct BenchResult {
  std::vector<BenchRecord> records;
  std::map<std::string, double> slopes;  // model id -> slope (NaN if undefined)
};

struct BenchPlan {
  std::vector<int> frame_lengths;
  int mel_bins = 32;
  int repeats = 5;  // >= 3 enforced
  std::uint64_t seed = 0;
};

BenchResult scaling_bench(const std::vector<std::pair<std::string, const Classifier<float>*>>& models,
                          const BenchPlan& plan);

std::string bench_csv(const BenchResult& result);
std::string bench_json(const BenchResult& result);

}  // namespace dass
