#include "dass/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "dass/memtrack.hpp"

namespace dass {

double fit_loglog_slope(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 3) return std::nan("");
  double mx = 0, my = 0;
  for (const auto& [x, y] : points) {
    if (x <= 0.0 || y <= 0.0) return std::nan("");
    mx += std::log(x);
    my += std::log(y);
  }
  mx /= double(points.size());
  my /= double(points.size());
  double num = 0, den = 0;
  for (const auto& [x, y] : points) {
    double dx = std::log(x) - mx;
    num += dx * (std::log(y) - my);
    den += dx * dx;
  }
  if (den == 0.0) return std::nan("");
  return num / den;
}

double time_callable_ms(const std::function<void()>& fn, int repeats) {
  require_arg(repeats >= 3, "bench: repeats must be >= 3");
  fn();  // warm-up, excluded
  std::vector<double> times;
  times.reserve(std::size_t(repeats));
  for (int r = 0; r < repeats; ++r) {
    auto t0 = std::chrono::steady_clock::now();
    fn();
    auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t n = times.size();
  return n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
}

BenchResult scaling_bench(
    const std::vector<std::pair<std::string, const Classifier<float>*>>& models,
    const BenchPlan& plan) {
  require_arg(!models.empty(), "scaling_bench: no models");
  require_arg(plan.frame_lengths.size() >= 4, "scaling_bench: need >= 4 lengths");
  int lmin = plan.frame_lengths.front(), lmax = plan.frame_lengths.front();
  for (int l : plan.frame_lengths) {
    lmin = std::min(lmin, l);
    lmax = std::max(lmax, l);
  }
  require_arg(lmax >= 8 * lmin, "scaling_bench: lengths must span an 8x range");

  BenchResult result;
  for (const auto& [id, model] : models) {
    std::vector<std::pair<double, double>> fit_points;
    for (int frames : plan.frame_lengths) {
      Rng rng(plan.seed ^ std::uint64_t(frames));
      Mat<float> input(frames, plan.mel_bins);
      for (auto& v : input.v) v = float(rng.normal());

      BenchRecord rec;
      rec.model_id = id;
      rec.frames = frames;
      rec.tokens = frames;
      memtrack::reset_peak();
      try {
        // timing runs pin to a single worker: the forward itself is
        // single-threaded by construction
        rec.wallclock_ms =
            time_callable_ms([&] { (void)model->forward(input); }, plan.repeats);
        rec.peak_mem_bytes = memtrack::peak_bytes();
        fit_points.emplace_back(double(frames), rec.wallclock_ms);
      } catch (const ResourceExhausted&) {
        rec.status = "exceeded-capacity";
        rec.wallclock_ms = std::nan("");
      }
      result.records.push_back(std::move(rec));
    }
    result.slopes[id] = fit_loglog_slope(fit_points);
  }
  return result;
}

std::string bench_csv(const BenchResult& result) {
  std::ostringstream os;
  os << "model,frames,tokens,wallclock_ms,peak_mem_bytes,status\n";
  os.precision(10);
  for (const auto& r : result.records)
    os << r.model_id << ',' << r.frames << ',' << r.tokens << ',' << r.wallclock_ms << ','
       << r.peak_mem_bytes << ',' << r.status << '\n';
  return os.str();
}

std::string bench_json(const BenchResult& result) {
  nlohmann::json j;
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : result.records)
    recs.push_back({{"model", r.model_id},
                    {"frames", r.frames},
                    {"tokens", r.tokens},
                    {"wallclock_ms", r.wallclock_ms},
                    {"peak_mem_bytes", r.peak_mem_bytes},
                    {"status", r.status}});
  j["records"] = recs;
  nlohmann::json slopes;
  for (const auto& [id, s] : result.slopes)
    slopes[id] = std::isnan(s) ? nlohmann::json(nullptr) : nlohmann::json(s);
  j["slopes"] = slopes;
  j["note"] = "peak_mem_bytes counts in-process heap allocations (operator new), not OS RSS";
  return j.dump(2);
}

}  // namespace dass
