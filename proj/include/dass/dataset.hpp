#pragma once

// Synthetic multi-label audio-event dataset. Each clip holds 1-3 events over
// a low white-noise floor; an event's class determines its kind (tone, chirp,
// noise burst, AM tone) and frequency band deterministically. Rendering is
// reproducible: every clip derives its own RNG stream from the dataset seed.

#include <string>
#include <vector>

#include "dass/audio.hpp"
#include "dass/common.hpp"

namespace dass {

enum class EventKind { Tone = 0, Chirp = 1, NoiseBurst = 2, AmTone = 3 };

struct SynthEvent {
  int class_id = 0;
  EventKind kind = EventKind::Tone;
  double onset = 0.0;     // seconds
  double duration = 1.0;  // seconds
  double freq = 440.0;    // Hz, base frequency inside the class band
  double level_db = -12.0;
};

struct ClipSpec {
  int clip_id = 0;
  std::vector<SynthEvent> events;
  std::uint64_t render_seed = 0;
};

struct DatasetConfig {
  int train_clips = 2000;
  int eval_clips = 500;
  int num_classes = 8;
  double clip_seconds = 10.0;
  double noise_floor_db = -38.0;
  double min_level_db = -23.0;
  double max_level_db = -7.0;
  double min_duration = 0.4;
  double max_duration = 1.8;
  int max_events = 3;
  std::uint64_t seed = 1;

  void validate() const {
    require_param(train_clips >= 1 && eval_clips >= 0, "DatasetConfig: clip counts");
    require_param(num_classes >= 1 && num_classes <= 16,
                  "DatasetConfig: num_classes must be in 1..16 (4 kinds x 4 bands)");
    require_param(clip_seconds > 0.0, "DatasetConfig: clip_seconds");
    require_param(max_events >= 1, "DatasetConfig: max_events");
    require_param(min_duration > 0.0 && min_duration <= max_duration, "DatasetConfig: durations");
  }
};

// class -> (kind, band): kind cycles fastest so small class counts cover all
// kinds before reusing a band.
inline EventKind class_kind(int class_id) { return EventKind(class_id % 4); }
inline int class_band(int class_id) { return class_id / 4; }
inline std::pair<double, double> band_range(int band) {
  switch (band) {
    case 0: return {250.0, 700.0};
    case 1: return {900.0, 2500.0};
    case 2: return {3000.0, 7000.0};
    default: return {120.0, 350.0};
  }
}

std::vector<ClipSpec> generate_clip_specs(const DatasetConfig& cfg, int count,
                                          std::uint64_t stream);

std::vector<double> render_clip(const ClipSpec& spec, const DatasetConfig& cfg, int sample_rate);

std::vector<float> clip_labels(const ClipSpec& spec, int num_classes);

struct LabeledClip {
  int id = 0;
  Mat<float> features;        // frames x mel, normalized
  std::vector<float> labels;  // multi-hot, num_classes
  double wave_power = 0.0;    // mean square of the rendered waveform
};

struct SynthDataset {
  DatasetConfig cfg;
  FbankConfig fbank_cfg;  // mean/stddev filled from the training split
  std::vector<ClipSpec> train_specs, eval_specs;
  std::vector<LabeledClip> train, eval;
  std::uint64_t hash = 0;
};

// Generates specs, renders waveforms, extracts features, computes the
// normalization statistics on the training split and applies them to both.
SynthDataset build_synth_dataset(const DatasetConfig& cfg, FbankConfig fbank_cfg,
                                 int workers = 1);

// JSON manifest (config, class table, stats, per-clip events/labels, hash).
std::string dataset_manifest_json(const SynthDataset& ds);

// On-disk layout: manifest.json plus one array-container file per split
// (features and labels per clip); optionally the rendered WAVs.
void save_dataset_dir(const SynthDataset& ds, const std::string& dir, bool write_wavs = false);
SynthDataset load_dataset_dir(const std::string& dir);

}  // namespace dass
