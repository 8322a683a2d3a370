#include "dass/dataset.hpp"

#include <algorithm>
#include <cmath>

#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "dass/checkpoint.hpp"

namespace dass {

namespace {

// RBJ cookbook bandpass biquad (constant skirt gain), applied in-place.
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

double db_to_amp(double db) { return std::pow(10.0, db / 20.0); }

}  // namespace

std::vector<ClipSpec> generate_clip_specs(const DatasetConfig& cfg, int count,
                                          std::uint64_t stream) {
  cfg.validate();
  Rng root(cfg.seed);
  Rng gen = root.derive(stream);
  std::vector<ClipSpec> specs;
  specs.reserve(std::size_t(count));
  for (int i = 0; i < count; ++i) {
    ClipSpec spec;
    spec.clip_id = int(stream * 1000000) + i;
    spec.render_seed = gen.next_u64();
    int n_events = 1 + int(gen.uniform_int(0, cfg.max_events - 1));
    for (int e = 0; e < n_events; ++e) {
      SynthEvent ev;
      ev.class_id = int(gen.uniform_int(0, cfg.num_classes - 1));
      ev.kind = class_kind(ev.class_id);
      auto [flo, fhi] = band_range(class_band(ev.class_id));
      ev.freq = std::exp(gen.uniform(std::log(flo), std::log(fhi)));
      ev.duration = gen.uniform(cfg.min_duration, cfg.max_duration);
      double max_onset = std::max(0.0, cfg.clip_seconds - ev.duration);
      ev.onset = gen.uniform(0.0, max_onset);
      ev.level_db = gen.uniform(cfg.min_level_db, cfg.max_level_db);
      spec.events.push_back(ev);
    }
    specs.push_back(std::move(spec));
  }
  return specs;
}

std::vector<float> clip_labels(const ClipSpec& spec, int num_classes) {
  std::vector<float> labels(std::size_t(num_classes), 0.0f);
  for (const auto& ev : spec.events) labels[std::size_t(ev.class_id)] = 1.0f;
  return labels;
}

std::vector<double> render_clip(const ClipSpec& spec, const DatasetConfig& cfg, int sample_rate) {
  const std::size_t n = std::size_t(cfg.clip_seconds * sample_rate + 0.5);
  std::vector<double> wav(n, 0.0);
  Rng rng(spec.render_seed);

  // noise floor
  const double floor_amp = db_to_amp(cfg.noise_floor_db);
  for (double& v : wav) v = floor_amp * rng.normal();

  const double fade = 0.010;  // seconds
  for (const auto& ev : spec.events) {
    const std::size_t start = std::size_t(ev.onset * sample_rate);
    const std::size_t len = std::min(std::size_t(ev.duration * sample_rate), n - start);
    if (len == 0) continue;
    const double amp = db_to_amp(ev.level_db);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    const double fm = rng.uniform(3.0, 9.0);
    const double fm_phase = rng.uniform(0.0, 2.0 * M_PI);
    // chirps sweep up to one octave, clamped to the class band
    auto [flo, fhi] = band_range(class_band(ev.class_id));
    double f1 = std::min(ev.freq * rng.uniform(1.3, 2.0), fhi);
    if (rng.uniform() < 0.5) f1 = std::max(ev.freq * rng.uniform(0.5, 0.77), flo);

    Biquad bp1 = Biquad::bandpass(ev.freq, 2.0, sample_rate);
    Biquad bp2 = Biquad::bandpass(ev.freq, 2.0, sample_rate);

    for (std::size_t i = 0; i < len; ++i) {
      const double tau = double(i) / sample_rate;
      double s = 0.0;
      switch (ev.kind) {
        case EventKind::Tone:
          s = std::sin(2.0 * M_PI * ev.freq * tau + phase);
          break;
        case EventKind::Chirp: {
          const double dur = double(len) / sample_rate;
          double ph = 2.0 * M_PI * (ev.freq * tau + 0.5 * (f1 - ev.freq) * tau * tau / dur);
          s = std::sin(ph + phase);
          break;
        }
        case EventKind::NoiseBurst:
          // two cascaded bandpasses; ~12 dB gain keeps the band energy
          // comparable to a tone at the same nominal level
          s = 4.0 * bp2.step(bp1.step(rng.normal()));
          break;
        case EventKind::AmTone:
          s = std::sin(2.0 * M_PI * ev.freq * tau + phase) *
              (0.5 + 0.5 * std::sin(2.0 * M_PI * fm * tau + fm_phase));
          break;
      }
      // raised-cosine fade at both ends
      double g = 1.0;
      const double edge = double(std::min(i, len - 1 - i)) / sample_rate;
      if (edge < fade) g = 0.5 - 0.5 * std::cos(M_PI * edge / fade);
      wav[start + i] += amp * g * s;
    }
  }
  return wav;
}

SynthDataset build_synth_dataset(const DatasetConfig& cfg, FbankConfig fbank_cfg, int workers) {
  cfg.validate();
  fbank_cfg.validate();
  SynthDataset ds;
  ds.cfg = cfg;
  fbank_cfg.mean = 0.0;
  fbank_cfg.stddev = 1.0;
  ds.train_specs = generate_clip_specs(cfg, cfg.train_clips, /*stream=*/1);
  ds.eval_specs = generate_clip_specs(cfg, cfg.eval_clips, /*stream=*/2);

  auto render_split = [&](const std::vector<ClipSpec>& specs, std::vector<LabeledClip>& out) {
    out.resize(specs.size());
    parallel_chunks(int(specs.size()), workers, [&](int b, int e, int) {
      for (int i = b; i < e; ++i) {
        const ClipSpec& spec = specs[std::size_t(i)];
        auto wav = render_clip(spec, cfg, fbank_cfg.sample_rate);
        LabeledClip clip;
        clip.id = spec.clip_id;
        clip.wave_power = waveform_power(wav);
        clip.features = fbank<float>(wav, fbank_cfg);  // raw: mean 0, std 1
        clip.labels = clip_labels(spec, cfg.num_classes);
        out[std::size_t(i)] = std::move(clip);
      }
    });
  };
  render_split(ds.train_specs, ds.train);
  render_split(ds.eval_specs, ds.eval);

  // normalization statistics from the training split
  double sum = 0.0, sum_sq = 0.0;
  std::size_t count = 0;
  for (const auto& clip : ds.train) {
    for (float v : clip.features.v) {
      sum += v;
      sum_sq += double(v) * v;
    }
    count += clip.features.v.size();
  }
  double mean = count ? sum / double(count) : 0.0;
  double var = count ? std::max(1e-12, sum_sq / double(count) - mean * mean) : 1.0;
  fbank_cfg.mean = mean;
  fbank_cfg.stddev = std::sqrt(var);
  ds.fbank_cfg = fbank_cfg;

  auto apply_norm = [&](std::vector<LabeledClip>& split) {
    const float m = float(fbank_cfg.mean), inv = float(1.0 / fbank_cfg.stddev);
    for (auto& clip : split)
      for (float& v : clip.features.v) v = (v - m) * inv;
  };
  apply_norm(ds.train);
  apply_norm(ds.eval);

  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& split : {std::cref(ds.train), std::cref(ds.eval)})
    for (const auto& clip : split.get()) {
      h = fnv1a64_vec(clip.features.v, h);
      h = fnv1a64_vec(clip.labels, h);
    }
  ds.hash = h;
  return ds;
}

std::string dataset_manifest_json(const SynthDataset& ds) {
  nlohmann::json j;
  j["version"] = 1;
  j["config"] = {{"train_clips", ds.cfg.train_clips},
                 {"eval_clips", ds.cfg.eval_clips},
                 {"num_classes", ds.cfg.num_classes},
                 {"clip_seconds", ds.cfg.clip_seconds},
                 {"seed", ds.cfg.seed}};
  j["fbank"] = {{"sample_rate", ds.fbank_cfg.sample_rate},
                {"window_ms", ds.fbank_cfg.window_ms},
                {"hop_ms", ds.fbank_cfg.hop_ms},
                {"mel_bins", ds.fbank_cfg.mel_bins},
                {"log_floor", ds.fbank_cfg.log_floor},
                {"mean", ds.fbank_cfg.mean},
                {"stddev", ds.fbank_cfg.stddev}};
  nlohmann::json classes = nlohmann::json::array();
  for (int c = 0; c < ds.cfg.num_classes; ++c) {
    auto [flo, fhi] = band_range(class_band(c));
    classes.push_back({{"id", c},
                       {"kind", int(class_kind(c))},
                       {"band_lo_hz", flo},
                       {"band_hi_hz", fhi}});
  }
  j["classes"] = classes;
  auto split_json = [&](const std::vector<ClipSpec>& specs, const std::vector<LabeledClip>& clips) {
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t i = 0; i < specs.size(); ++i) {
      nlohmann::json cj;
      cj["id"] = specs[i].clip_id;
      cj["render_seed"] = specs[i].render_seed;
      cj["wave_power"] = clips[i].wave_power;
      cj["labels"] = clips[i].labels;
      nlohmann::json evs = nlohmann::json::array();
      for (const auto& ev : specs[i].events)
        evs.push_back({{"class", ev.class_id},
                       {"kind", int(ev.kind)},
                       {"onset", ev.onset},
                       {"duration", ev.duration},
                       {"freq", ev.freq},
                       {"level_db", ev.level_db}});
      cj["events"] = evs;
      arr.push_back(cj);
    }
    return arr;
  };
  j["train"] = split_json(ds.train_specs, ds.train);
  j["eval"] = split_json(ds.eval_specs, ds.eval);
  j["hash"] = hash_hex(ds.hash);
  return j.dump(2);
}

void save_dataset_dir(const SynthDataset& ds, const std::string& dir, bool write_wavs) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream mf(dir + "/manifest.json");
    if (!mf) throw IoError("save_dataset_dir: cannot write manifest in " + dir);
    mf << dataset_manifest_json(ds);
  }
  auto save_split = [&](const std::vector<LabeledClip>& clips, const std::string& name) {
    CheckpointData data;
    data.model_kind = "dataset-features";
    data.config_json = "{\"split\":\"" + name + "\"}";
    for (const auto& clip : clips) {
      data.names.push_back("clip." + std::to_string(clip.id) + ".features");
      data.dims.push_back({clip.features.rows, clip.features.cols});
      data.arrays.push_back(clip.features.v);
      data.names.push_back("clip." + std::to_string(clip.id) + ".labels");
      data.dims.push_back({int(clip.labels.size())});
      data.arrays.push_back(clip.labels);
    }
    save_checkpoint(dir + "/features_" + name + ".bin", data);
  };
  save_split(ds.train, "train");
  save_split(ds.eval, "eval");
  if (write_wavs) {
    std::filesystem::create_directories(dir + "/wavs");
    auto dump = [&](const std::vector<ClipSpec>& specs) {
      for (const auto& spec : specs) {
        auto wav = render_clip(spec, ds.cfg, ds.fbank_cfg.sample_rate);
        write_wav(dir + "/wavs/clip_" + std::to_string(spec.clip_id) + ".wav", wav,
                  ds.fbank_cfg.sample_rate);
      }
    };
    dump(ds.train_specs);
    dump(ds.eval_specs);
  }
}

SynthDataset load_dataset_dir(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw IoError("load_dataset_dir: cannot open " + dir + "/manifest.json");
  nlohmann::json j = nlohmann::json::parse(mf, nullptr, false);
  if (j.is_discarded()) throw IoError("load_dataset_dir: corrupt manifest in " + dir);

  SynthDataset ds;
  ds.cfg.train_clips = j["config"]["train_clips"].get<int>();
  ds.cfg.eval_clips = j["config"]["eval_clips"].get<int>();
  ds.cfg.num_classes = j["config"]["num_classes"].get<int>();
  ds.cfg.clip_seconds = j["config"]["clip_seconds"].get<double>();
  ds.cfg.seed = j["config"]["seed"].get<std::uint64_t>();
  ds.fbank_cfg.sample_rate = j["fbank"]["sample_rate"].get<int>();
  ds.fbank_cfg.window_ms = j["fbank"]["window_ms"].get<double>();
  ds.fbank_cfg.hop_ms = j["fbank"]["hop_ms"].get<double>();
  ds.fbank_cfg.mel_bins = j["fbank"]["mel_bins"].get<int>();
  ds.fbank_cfg.log_floor = j["fbank"]["log_floor"].get<double>();
  ds.fbank_cfg.mean = j["fbank"]["mean"].get<double>();
  ds.fbank_cfg.stddev = j["fbank"]["stddev"].get<double>();
  ds.hash = std::stoull(j["hash"].get<std::string>(), nullptr, 16);

  auto load_split = [&](const std::string& name, std::vector<LabeledClip>& out) {
    CheckpointData data = load_checkpoint(dir + "/features_" + name + ".bin");
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < data.names.size(); ++i) index[data.names[i]] = i;
    for (const auto& cj : j[name]) {
      LabeledClip clip;
      clip.id = cj["id"].get<int>();
      clip.wave_power = cj["wave_power"].get<double>();
      const std::string base = "clip." + std::to_string(clip.id);
      auto fit = index.find(base + ".features");
      auto lit = index.find(base + ".labels");
      if (fit == index.end() || lit == index.end())
        throw IoError("load_dataset_dir: missing arrays for clip " + std::to_string(clip.id));
      const auto& fdims = data.dims[fit->second];
      clip.features = Mat<float>(fdims[0], fdims[1]);
      clip.features.v = data.arrays[fit->second];
      clip.labels = data.arrays[lit->second];
      out.push_back(std::move(clip));
    }
  };
  load_split("train", ds.train);
  load_split("eval", ds.eval);
  return ds;
}

}  // namespace dass
