#pragma once

// Audio Needle-In-A-Haystack: place an unmodified needle spectrogram inside
// a longer filler spectrogram (normalized-domain zero padding, or white /
// babble noise rendered through the identical fbank pipeline at a target
// SNR), then score classifiers with mAP and the relative drop
// (mAP10 - mAPt) / mAP10 against their training-length performance.

#include <string>
#include <vector>

#include "dass/audio.hpp"
#include "dass/classifier.hpp"
#include "dass/common.hpp"
#include "dass/dataset.hpp"

namespace dass {

enum class FillerKind { ZeroPad, WhiteNoise, Babble };

inline const char* filler_name(FillerKind f) {
  switch (f) {
    case FillerKind::ZeroPad: return "zeropad";
    case FillerKind::WhiteNoise: return "whitenoise";
    case FillerKind::Babble: return "babble";
  }
  return "?";
}

inline FillerKind filler_from_name(const std::string& s) {
  if (s == "zeropad") return FillerKind::ZeroPad;
  if (s == "whitenoise") return FillerKind::WhiteNoise;
  if (s == "babble") return FillerKind::Babble;
  throw InvalidArgument("unknown filler: " + s);
}

struct NiahSpec {
  double haystack_seconds = 10.0;
  double needle_pos = 0.5;  // 0 = beginning, 1 = end
  FillerKind filler = FillerKind::ZeroPad;
  double snr_db = 0.0;  // needle power over filler power, noise fillers only
  std::uint64_t seed = 0;

  void validate() const {
    require_param(haystack_seconds > 0.0, "NiahSpec: haystack length");
    require_param(needle_pos >= 0.0 && needle_pos <= 1.0, "NiahSpec: needle_pos in [0,1]");
  }
};

// White Gaussian noise with unit power.
std::vector<double> synth_white_noise(double seconds, int sample_rate, std::uint64_t seed);

// 30 summed speech-like streams: band-limited (100-4000 Hz) noise with
// syllabic 2-8 Hz amplitude modulation, normalized to unit power.
std::vector<double> synth_babble(double seconds, int sample_rate, std::uint64_t seed);

template <typename T>
struct Haystack {
  Mat<T> features;
  int needle_start_frame = 0;
  double noise_power = 0.0;  // waveform power of the scaled filler (0 for ZeroPad)
};

template <typename T>
Haystack<T> build_haystack(const Mat<T>& needle, double needle_power, const NiahSpec& spec,
                           const FbankConfig& cfg) {
  spec.validate();
  cfg.validate();
  const int l_needle = needle.rows;
  const int l_hay = cfg.frames_for_seconds(spec.haystack_seconds);
  require_arg(l_hay >= l_needle, "build_haystack: haystack shorter than needle");

  Haystack<T> out;
  out.needle_start_frame = int(std::llround(spec.needle_pos * double(l_hay - l_needle)));

  if (spec.filler == FillerKind::ZeroPad) {
    out.features = Mat<T>(l_hay, needle.cols, zero_pad_value<T>(cfg));
  } else {
    require_param(needle_power > 0.0, "build_haystack: needle power must be positive for noise");
    const std::size_t n_samples = std::size_t(spec.haystack_seconds * cfg.sample_rate + 0.5);
    const double seconds = double(n_samples) / cfg.sample_rate;
    std::vector<double> noise = (spec.filler == FillerKind::WhiteNoise)
                                    ? synth_white_noise(seconds, cfg.sample_rate, spec.seed)
                                    : synth_babble(seconds, cfg.sample_rate, spec.seed);
    // scale so that 10*log10(P_needle / P_noise) = snr_db
    const double target_power = needle_power * std::pow(10.0, -spec.snr_db / 10.0);
    const double raw_power = waveform_power(noise);
    const double gain = std::sqrt(target_power / raw_power);
    for (double& v : noise) v *= gain;
    out.noise_power = waveform_power(noise);
    out.features = fbank<T>(noise, cfg);
    require_shape(out.features.rows == l_hay, "build_haystack: filler frame count mismatch");
    require_shape(out.features.cols == needle.cols, "build_haystack: mel bin mismatch");
  }
  // the needle is copied bit-identically, never modified
  for (int r = 0; r < l_needle; ++r) {
    const T* src = needle.row(r);
    T* dst = out.features.row(out.needle_start_frame + r);
    for (int c = 0; c < needle.cols; ++c) dst[c] = src[c];
  }
  return out;
}

// ---- mAP ----

struct ApResult {
  double map = 0.0;
  std::vector<double> per_class;  // NaN for classes with no positives
};

// scores/labels: clips x classes; labels binary. Classes without positives
// are excluded from the mean; ties broken by clip index.
ApResult mean_average_precision(const Mat<double>& scores, const Mat<double>& labels);

// ---- sweep ----

struct EvalRow {
  std::string model_id;
  NiahSpec spec;
  double map = 0.0;
  double map10 = 0.0;
  double relative_drop = 0.0;
  double wallclock_ms = 0.0;
  std::size_t peak_mem_bytes = 0;
  std::string status = "ok";  // ok | exceeded-capacity
};

struct EvalReport {
  std::vector<EvalRow> rows;
};

struct SweepModel {
  std::string id;
  const Classifier<float>* model = nullptr;
};

struct SweepPlan {
  std::vector<double> lengths_seconds;
  std::vector<double> positions;
  std::vector<std::pair<FillerKind, double>> fillers;  // kind, snr_db
  std::uint64_t seed = 0;
  int workers = 1;
  int max_eval_clips = 0;  // 0 = all
};

EvalReport run_sweep(const std::vector<SweepModel>& models,
                     const std::vector<LabeledClip>& needles, const FbankConfig& fbank_cfg,
                     const SweepPlan& plan);

// Evaluates mAP of one model over clips as-is (the training-length baseline).
double eval_map(const Classifier<float>& model, const std::vector<LabeledClip>& clips,
                int workers, int max_clips = 0);

std::string report_csv(const EvalReport& report);
std::string report_json(const EvalReport& report);

// Per-figure pivots: length vs mAP, position vs drop, SNR vs mAP.
void write_plot_csvs(const EvalReport& report, const std::string& dir);

}  // namespace dass
