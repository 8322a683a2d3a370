#include "dass/niah.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dass/memtrack.hpp"

namespace dass {

namespace {

struct Biquad {
  double b0, b1, b2, a1, a2;
  double z1 = 0.0, z2 = 0.0;
  static Biquad bandpass(double freq, double q, int sample_rate) {
    double w0 = 2.0 * M_PI * freq / sample_rate;
    double alpha = std::sin(w0) / (2.0 * q);
    double a0 = 1.0 + alpha;
    Biquad b{};
    b.b0 = alpha / a0;
    b.b1 = 0.0;
    b.b2 = -alpha / a0;
    b.a1 = -2.0 * std::cos(w0) / a0;
    b.a2 = (1.0 - alpha) / a0;
    return b;
  }
  double step(double x) {
    double y = b0 * x + z1;
    z1 = b1 * x - a1 * y + z2;
    z2 = b2 * x - a2 * y;
    return y;
  }
};

void normalize_power(std::vector<double>& w) {
  double p = waveform_power(w);
  if (p <= 0.0) return;
  double g = 1.0 / std::sqrt(p);
  for (double& v : w) v *= g;
}

}  // namespace

std::vector<double> synth_white_noise(double seconds, int sample_rate, std::uint64_t seed) {
  require_arg(seconds > 0.0, "synth_white_noise: duration must be positive");
  Rng rng(seed ^ 0x77686974656e6fULL);
  std::vector<double> w(std::size_t(seconds * sample_rate + 0.5), 0.0);
  for (double& v : w) v = rng.normal();
  normalize_power(w);
  return w;
}

std::vector<double> synth_babble(double seconds, int sample_rate, std::uint64_t seed) {
  require_arg(seconds > 0.0, "synth_babble: duration must be positive");
  const int kStreams = 30;
  Rng root(seed ^ 0x626162626c65ULL);
  std::vector<double> mix(std::size_t(seconds * sample_rate + 0.5), 0.0);
  for (int s = 0; s < kStreams; ++s) {
    Rng rng = root.derive(std::uint64_t(s));
    // speech-like: band-limited noise, 100-4000 Hz, syllabic 2-8 Hz envelope
    double center = std::exp(rng.uniform(std::log(150.0), std::log(3200.0)));
    double q = rng.uniform(1.5, 3.0);
    double fm = rng.uniform(2.0, 8.0);
    double fm_phase = rng.uniform(0.0, 2.0 * M_PI);
    Biquad bp1 = Biquad::bandpass(center, q, sample_rate);
    Biquad bp2 = Biquad::bandpass(center, q, sample_rate);
    for (std::size_t i = 0; i < mix.size(); ++i) {
      double t = double(i) / sample_rate;
      double env = 0.5 + 0.5 * std::sin(2.0 * M_PI * fm * t + fm_phase);
      mix[i] += env * bp2.step(bp1.step(rng.normal()));
    }
  }
  normalize_power(mix);
  return mix;
}

ApResult mean_average_precision(const Mat<double>& scores, const Mat<double>& labels) {
  require_shape(scores.rows == labels.rows && scores.cols == labels.cols,
                "mAP: scores/labels shape mismatch");
  require_shape(scores.rows >= 1 && scores.cols >= 1, "mAP: empty input");
  const int n = scores.rows, k = scores.cols;
  ApResult res;
  res.per_class.assign(std::size_t(k), std::nan(""));
  double sum = 0.0;
  int included = 0;
  std::vector<int> order(std::size_t(n), 0);
  for (int c = 0; c < k; ++c) {
    int num_pos = 0;
    for (int i = 0; i < n; ++i)
      if (labels(i, c) > 0.5) ++num_pos;
    if (num_pos == 0) continue;
    std::iota(order.begin(), order.end(), 0);
    // descending score; ties keep ascending clip index
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores(a, c) > scores(b, c); });
    double ap = 0.0;
    int hits = 0;
    for (int r = 0; r < n; ++r) {
      if (labels(order[std::size_t(r)], c) > 0.5) {
        ++hits;
        ap += double(hits) / double(r + 1);
      }
    }
    ap /= double(num_pos);
    res.per_class[std::size_t(c)] = ap;
    sum += ap;
    ++included;
  }
  require_arg(included > 0, "mAP: no class has a positive example");
  res.map = sum / double(included);
  return res;
}

double eval_map(const Classifier<float>& model, const std::vector<LabeledClip>& clips,
                int workers, int max_clips) {
  require_arg(!clips.empty(), "eval_map: no clips");
  const int n = (max_clips > 0 && max_clips < int(clips.size())) ? max_clips : int(clips.size());
  const int k = model.num_classes();
  Mat<double> scores(n, k), labels(n, k);
  parallel_chunks(n, workers, [&](int b, int e, int) {
    for (int i = b; i < e; ++i) {
      auto logits = model.forward(clips[std::size_t(i)].features);
      for (int c = 0; c < k; ++c) {
        scores(i, c) = double(sigmoid(logits[std::size_t(c)]));
        labels(i, c) = double(clips[std::size_t(i)].labels[std::size_t(c)]);
      }
    }
  });
  return mean_average_precision(scores, labels).map;
}

EvalReport run_sweep(const std::vector<SweepModel>& models,
                     const std::vector<LabeledClip>& needles, const FbankConfig& fbank_cfg,
                     const SweepPlan& plan) {
  require_arg(!models.empty(), "run_sweep: no models");
  require_arg(!needles.empty(), "run_sweep: no needles");
  require_arg(!plan.lengths_seconds.empty() && !plan.positions.empty() && !plan.fillers.empty(),
              "run_sweep: empty plan axis");

  const int n = (plan.max_eval_clips > 0 && plan.max_eval_clips < int(needles.size()))
                    ? plan.max_eval_clips
                    : int(needles.size());

  EvalReport report;
  for (const auto& sm : models) {
    const int k = sm.model->num_classes();
    const double map10 = eval_map(*sm.model, needles, plan.workers, n);
    for (double len : plan.lengths_seconds) {
      for (double pos : plan.positions) {
        for (const auto& [filler, snr] : plan.fillers) {
          NiahSpec spec;
          spec.haystack_seconds = len;
          spec.needle_pos = pos;
          spec.filler = filler;
          spec.snr_db = snr;
          spec.seed = plan.seed;

          EvalRow row;
          row.model_id = sm.id;
          row.spec = spec;
          row.map10 = map10;

          Mat<double> scores(n, k), labels(n, k);
          std::vector<char> failed(std::size_t(n), 0);
          memtrack::reset_peak();
          auto t0 = std::chrono::steady_clock::now();
          parallel_chunks(n, plan.workers, [&](int b, int e, int) {
            for (int i = b; i < e; ++i) {
              const auto& clip = needles[std::size_t(i)];
              NiahSpec cspec = spec;
              std::uint64_t mix =
                  plan.seed ^ (0x9e3779b97f4a7c15ULL * std::uint64_t(clip.id + 1));
              cspec.seed = splitmix64(mix);
              auto hay = build_haystack(clip.features, clip.wave_power, cspec, fbank_cfg);
              try {
                auto logits = sm.model->forward(hay.features);
                for (int c = 0; c < k; ++c) {
                  scores(i, c) = double(sigmoid(logits[std::size_t(c)]));
                  labels(i, c) = double(clip.labels[std::size_t(c)]);
                }
              } catch (const ResourceExhausted&) {
                failed[std::size_t(i)] = 1;
              }
            }
          });
          auto t1 = std::chrono::steady_clock::now();
          row.wallclock_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
          row.peak_mem_bytes = memtrack::peak_bytes();

          bool any_failed = std::any_of(failed.begin(), failed.end(), [](char c) { return c; });
          if (any_failed) {
            row.status = "exceeded-capacity";
            row.map = std::nan("");
            row.relative_drop = std::nan("");
          } else {
            row.map = mean_average_precision(scores, labels).map;
            row.relative_drop = (map10 - row.map) / map10;
          }
          report.rows.push_back(std::move(row));
        }
      }
    }
  }
  return report;
}

namespace {

nlohmann::json row_json(const EvalRow& r) {
  nlohmann::json j;
  j["model"] = r.model_id;
  j["length_s"] = r.spec.haystack_seconds;
  j["position"] = r.spec.needle_pos;
  j["filler"] = filler_name(r.spec.filler);
  j["snr_db"] = r.spec.snr_db;
  j["map"] = r.map;
  j["map10"] = r.map10;
  j["relative_drop"] = r.relative_drop;
  j["wallclock_ms"] = r.wallclock_ms;
  j["peak_mem_bytes"] = r.peak_mem_bytes;
  j["status"] = r.status;
  return j;
}

}  // namespace

std::string report_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "model,length_s,position,filler,snr_db,map,map10,relative_drop,wallclock_ms,"
        "peak_mem_bytes,status\n";
  os.precision(12);
  for (const auto& r : report.rows) {
    os << r.model_id << ',' << r.spec.haystack_seconds << ',' << r.spec.needle_pos << ','
       << filler_name(r.spec.filler) << ',' << r.spec.snr_db << ',' << r.map << ',' << r.map10
       << ',' << r.relative_drop << ',' << r.wallclock_ms << ',' << r.peak_mem_bytes << ','
       << r.status << '\n';
  }
  return os.str();
}

std::string report_json(const EvalReport& report) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : report.rows) arr.push_back(row_json(r));
  return arr.dump(2);
}

void write_plot_csvs(const EvalReport& report, const std::string& dir) {
  // length vs mAP (per model/position/filler), position vs relative drop
  // (per model/length/filler), SNR vs mAP (per model/length/position/filler)
  std::ofstream len_f(dir + "/plot_len_vs_map.csv");
  len_f << "model,filler,position,snr_db,length_s,map,relative_drop\n";
  std::ofstream pos_f(dir + "/plot_pos_vs_drop.csv");
  pos_f << "model,filler,length_s,snr_db,position,relative_drop\n";
  std::ofstream snr_f(dir + "/plot_snr_vs_map.csv");
  snr_f << "model,filler,length_s,position,snr_db,map\n";
  len_f.precision(12);
  pos_f.precision(12);
  snr_f.precision(12);
  for (const auto& r : report.rows) {
    len_f << r.model_id << ',' << filler_name(r.spec.filler) << ',' << r.spec.needle_pos << ','
          << r.spec.snr_db << ',' << r.spec.haystack_seconds << ',' << r.map << ','
          << r.relative_drop << '\n';
    pos_f << r.model_id << ',' << filler_name(r.spec.filler) << ',' << r.spec.haystack_seconds
          << ',' << r.spec.snr_db << ',' << r.spec.needle_pos << ',' << r.relative_drop << '\n';
    if (r.spec.filler != FillerKind::ZeroPad)
      snr_f << r.model_id << ',' << filler_name(r.spec.filler) << ',' << r.spec.haystack_seconds
            << ',' << r.spec.needle_pos << ',' << r.spec.snr_db << ',' << r.map << '\n';
  }
}

}  // namespace dass
