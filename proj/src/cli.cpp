#include "dass/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dass/bench.hpp"
#include "dass/checkpoint.hpp"
#include "dass/config_io.hpp"
#include "dass/distill.hpp"
#include "dass/memtrack.hpp"
#include "dass/niah.hpp"

namespace dass {

namespace {

namespace fs = std::filesystem;

std::vector<double> parse_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(std::stod(tok));
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  for (double v : parse_list(csv)) out.push_back(int(v));
  return out;
}

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

std::string default_run_dir(const std::string& cmd) {
  const char* root = std::getenv("DASS_RUN_ROOT");
  std::string base = root ? root : "runs";
  auto now = std::chrono::system_clock::now().time_since_epoch();
  auto us = std::chrono::duration_cast<std::chrono::microseconds>(now).count();
  return base + "/" + cmd + "-" + std::to_string(us);
}

// Resolution order: built-in default < config file < explicit flag.
struct Resolver {
  KvConfig file;
  CLI::App* cmd = nullptr;

  bool flag_given(const std::string& flag) const {
    auto* opt = cmd->get_option_no_throw("--" + flag);
    return opt && opt->count() > 0;
  }
  template <typename T>
  T pick(const std::string& flag, const std::string& key, T flag_val, T def) const {
    if (flag_given(flag)) return flag_val;
    if (file.has(key)) {
      if constexpr (std::is_same_v<T, double>)
        return file.get_double(key, def);
      else if constexpr (std::is_same_v<T, bool>)
        return file.get_bool(key, def);
      else if constexpr (std::is_same_v<T, std::string>)
        return file.get_str(key, def);
      else if constexpr (std::is_same_v<T, std::uint64_t>)
        return T(file.get_u64(key, def));
      else
        return T(file.get_int(key, std::int64_t(def)));
    }
    return flag_val;  // CLI11 already applied the built-in default
  }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << text;
}

struct LoadedModel {
  std::unique_ptr<Classifier<float>> model;
  std::string id;
};

LoadedModel load_model(const std::string& path) {
  LoadedModel lm;
  lm.model = classifier_from_checkpoint(load_checkpoint(path));
  lm.id = fs::path(path).stem().string();
  return lm;
}

int cmd_gen_data(Resolver& r, const std::string& out_dir, int clips, int eval_clips, int classes,
                 double clip_seconds, std::uint64_t seed, const std::string& fbank_preset,
                 int mel_bins, bool write_wavs, int workers, KvConfig& resolved) {
  DatasetConfig cfg;
  cfg.train_clips = r.pick("clips", "data.clips", clips, 2000);
  cfg.eval_clips = r.pick("eval-clips", "data.eval_clips", eval_clips, 500);
  cfg.num_classes = r.pick("classes", "data.classes", classes, 8);
  cfg.clip_seconds = r.pick("clip-seconds", "data.clip_seconds", clip_seconds, 10.0);
  cfg.seed = r.pick("seed", "data.seed", seed, std::uint64_t(1));
  FbankConfig fb = (r.pick("fbank-preset", "fbank.preset", fbank_preset,
                           std::string("toy")) == std::string("default"))
                       ? FbankConfig{}
                       : FbankConfig::toy();
  if (r.flag_given("mel-bins") || r.file.has("fbank.mel_bins"))
    fb.mel_bins = r.pick("mel-bins", "fbank.mel_bins", mel_bins, fb.mel_bins);

  auto ds = build_synth_dataset(cfg, fb, workers);
  save_dataset_dir(ds, out_dir, write_wavs);

  resolved.set("data.clips", std::to_string(cfg.train_clips));
  resolved.set("data.eval_clips", std::to_string(cfg.eval_clips));
  resolved.set("data.classes", std::to_string(cfg.num_classes));
  resolved.set("data.clip_seconds", std::to_string(cfg.clip_seconds));
  resolved.set("data.seed", std::to_string(cfg.seed));
  resolved.set("fbank.mel_bins", std::to_string(fb.mel_bins));
  resolved.set("fbank.window_ms", std::to_string(fb.window_ms));
  resolved.set("fbank.hop_ms", std::to_string(fb.hop_ms));

  std::cout << "dataset written to " << out_dir << "\nhash " << hash_hex(ds.hash) << "\n";
  return 0;
}

ModelConfig model_preset(const std::string& name, int classes) {
  if (name == "tiny" || name == "toy") return ModelConfig::tiny(classes);
  if (name == "small") return ModelConfig::dass_small(classes);
  if (name == "medium") return ModelConfig::dass_medium(classes);
  throw InvalidArgument("unknown model preset: " + name);
}

int cmd_train(Resolver& r, const std::string& data_dir, const std::string& out_dir,
              std::string arch, std::string preset, std::string pooling, std::uint64_t seed,
              int epochs, std::string schedule, double lr, int batch_size, int workers,
              std::string teacher_paths, std::string distill_kind, KvConfig& resolved) {
  arch = r.pick("arch", "train.arch", arch, std::string("dass"));
  preset = r.pick("preset", "train.preset", preset, std::string("tiny"));
  pooling = r.pick("pooling", "train.pooling", pooling, std::string("mean"));
  seed = r.pick("seed", "train.seed", seed, std::uint64_t(0));
  epochs = r.pick("epochs", "train.epochs", epochs, 0);
  schedule = r.pick("schedule", "train.schedule", schedule, std::string("fixed"));
  lr = r.pick("lr", "train.lr", lr, 1e-4);
  batch_size = r.pick("batch-size", "train.batch_size", batch_size, 12);
  teacher_paths = r.pick("teacher", "train.teachers", teacher_paths, std::string());
  distill_kind = r.pick("distill", "train.distill", distill_kind, std::string("kl"));

  auto data = load_dataset_dir(data_dir);
  const int classes = data.cfg.num_classes;

  std::unique_ptr<Classifier<float>> model;
  if (arch == "dass") {
    ModelConfig mc = model_preset(preset, classes);
    mc.pooling = pooling_from_name(pooling);
    auto dm = std::make_unique<DassClassifier<float>>(mc);
    dm->model().init_params(seed);
    model = std::move(dm);
  } else if (arch == "attn") {
    AttnConfig ac = AttnConfig::toy(classes);
    auto am = std::make_unique<AttnClassifier<float>>(ac);
    am->model().init_params(seed);
    model = std::move(am);
  } else {
    throw InvalidArgument("unknown arch (want dass|attn): " + arch);
  }

  DistillConfig cfg;
  cfg.lr = lr;
  cfg.batch_size = batch_size;
  cfg.seed = seed;
  cfg.workers = workers;
  cfg.epochs = epochs;
  if (schedule == "balanced")
    cfg.schedule = SchedulePreset::Balanced;
  else if (schedule == "full")
    cfg.schedule = SchedulePreset::Full;
  else if (schedule == "fixed")
    cfg.schedule = SchedulePreset::Fixed;
  else
    throw InvalidArgument("unknown schedule (want balanced|full|fixed): " + schedule);
  if (distill_kind == "kl")
    cfg.distill_loss = DistillLoss::KlDiv;
  else if (distill_kind == "bce")
    cfg.distill_loss = DistillLoss::BceOnTeacher;
  else
    throw InvalidArgument("unknown distill loss (want kl|bce): " + distill_kind);

  std::vector<LoadedModel> teachers;
  TeacherHandle<float> handle;
  for (const auto& path : split_csv(teacher_paths)) {
    teachers.push_back(load_model(path));
    handle.teachers.push_back(teachers.back().model.get());
  }

  auto result = train(*model, data, cfg, handle.teachers.empty() ? nullptr : &handle);

  const std::string ckpt_path = out_dir + "/checkpoint.ckpt";
  save_checkpoint(ckpt_path, checkpoint_from(*model, cfg.epoch_count(), seed));
  write_text(out_dir + "/metrics.jsonl", metrics_jsonl(result.log));

  resolved.set("train.arch", arch);
  resolved.set("train.preset", preset);
  resolved.set("train.pooling", pooling);
  resolved.set("train.seed", std::to_string(seed));
  resolved.set("train.epochs", std::to_string(cfg.epoch_count()));
  resolved.set("train.schedule", schedule);
  resolved.set("train.lr", std::to_string(lr));
  resolved.set("train.batch_size", std::to_string(batch_size));
  resolved.set("train.distill", distill_kind);
  resolved.set("train.teachers", teacher_paths);
  resolved.set("train.data", data_dir);

  std::cout << "checkpoint " << ckpt_path << "\nhash " << hash_hex(file_hash(ckpt_path))
            << "\nfinal eval mAP " << (result.log.empty() ? 0.0 : result.log.back().eval_map)
            << "\n";
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_dir, const std::string& split,
             int workers, const std::string& out_dir) {
  auto data = load_dataset_dir(data_dir);
  auto lm = load_model(model_path);
  const auto& clips = (split == "train") ? data.train : data.eval;
  double map = eval_map(*lm.model, clips, workers);
  nlohmann::json j;
  j["model"] = lm.id;
  j["split"] = split;
  j["mAP"] = map;
  if (!out_dir.empty()) write_text(out_dir + "/eval.json", j.dump(2));
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_niah(Resolver& r, const std::string& model_paths, const std::string& data_dir,
             std::string lengths, std::string positions, std::string filler, std::string snrs,
             std::uint64_t seed, int workers, int max_clips, const std::string& out_dir,
             KvConfig& resolved) {
  lengths = r.pick("lengths", "niah.lengths", lengths, std::string("10,30,50"));
  positions = r.pick("positions", "niah.positions", positions, std::string("0,0.25,0.5,0.75,1"));
  filler = r.pick("filler", "niah.filler", filler, std::string("zeropad"));
  snrs = r.pick("snr", "niah.snrs", snrs, std::string("0"));
  seed = r.pick("seed", "niah.seed", seed, std::uint64_t(0));
  auto data = load_dataset_dir(data_dir);
  std::vector<LoadedModel> loaded;
  std::vector<SweepModel> models;
  for (const auto& path : split_csv(model_paths)) {
    loaded.push_back(load_model(path));
    models.push_back({loaded.back().id, loaded.back().model.get()});
  }

  SweepPlan plan;
  plan.lengths_seconds = parse_list(lengths);
  plan.positions = parse_list(positions);
  for (const auto& fname : split_csv(filler)) {
    FillerKind kind = filler_from_name(fname);
    if (kind == FillerKind::ZeroPad) {
      plan.fillers.emplace_back(kind, 0.0);
    } else {
      for (double snr : parse_list(snrs)) plan.fillers.emplace_back(kind, snr);
    }
  }
  plan.seed = seed;
  plan.workers = workers;
  plan.max_eval_clips = max_clips;

  auto report = run_sweep(models, data.eval, data.fbank_cfg, plan);
  write_text(out_dir + "/report.csv", report_csv(report));
  write_text(out_dir + "/report.json", report_json(report));
  write_plot_csvs(report, out_dir);

  resolved.set("niah.models", model_paths);
  resolved.set("niah.lengths", lengths);
  resolved.set("niah.positions", positions);
  resolved.set("niah.filler", filler);
  resolved.set("niah.snrs", snrs);
  resolved.set("niah.seed", std::to_string(seed));

  std::cout << report.rows.size() << " conditions written to " << out_dir << "\n";
  return 0;
}

int cmd_bench(Resolver& r, const std::string& model_paths, std::string frames, int repeats,
              int mel_bins, std::uint64_t seed, const std::string& out_dir, KvConfig& resolved) {
  frames = r.pick("frames", "bench.frames", frames, std::string("128,256,512,1024"));
  repeats = r.pick("repeats", "bench.repeats", repeats, 5);
  mel_bins = r.pick("mel-bins", "bench.mel_bins", mel_bins, 32);
  seed = r.pick("seed", "bench.seed", seed, std::uint64_t(0));
  std::vector<LoadedModel> loaded;
  std::vector<std::pair<std::string, const Classifier<float>*>> models;
  for (const auto& path : split_csv(model_paths)) {
    loaded.push_back(load_model(path));
    models.emplace_back(loaded.back().id, loaded.back().model.get());
  }
  BenchPlan plan;
  plan.frame_lengths = parse_int_list(frames);
  plan.repeats = repeats;
  plan.mel_bins = mel_bins;
  plan.seed = seed;
  auto result = scaling_bench(models, plan);
  write_text(out_dir + "/bench.csv", bench_csv(result));
  write_text(out_dir + "/bench.json", bench_json(result));

  resolved.set("bench.models", model_paths);
  resolved.set("bench.frames", frames);
  resolved.set("bench.repeats", std::to_string(repeats));
  resolved.set("bench.mel_bins", std::to_string(mel_bins));

  for (const auto& [id, slope] : result.slopes)
    std::cout << id << " slope " << slope << "\n";
  std::cout << "bench written to " << out_dir << "\n";
  return 0;
}

int cmd_features(const std::string& wav_path, const std::string& out_path, int mel_bins,
                 double window_ms, double hop_ms, int sample_rate) {
  FbankConfig fb;
  fb.mel_bins = mel_bins;
  fb.window_ms = window_ms;
  fb.hop_ms = hop_ms;
  fb.sample_rate = sample_rate;
  auto wav = read_wav(wav_path, sample_rate);
  auto feats = fbank<float>(wav, fb);
  CheckpointData data;
  data.model_kind = "features";
  nlohmann::json cj;
  cj["source"] = wav_path;
  cj["sample_rate"] = fb.sample_rate;
  cj["window_ms"] = fb.window_ms;
  cj["hop_ms"] = fb.hop_ms;
  cj["mel_bins"] = fb.mel_bins;
  data.config_json = cj.dump();
  data.names.push_back("features");
  data.dims.push_back({feats.rows, feats.cols});
  data.arrays.push_back(feats.v);
  save_checkpoint(out_path, data);
  std::cout << "features " << feats.rows << "x" << feats.cols << " written to " << out_path
            << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"dass: state-space audio classifier toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "key-value config file (flags override it)");
  std::vector<std::string> sets;
  app.add_option("--set", sets, "extra key=value overrides (repeatable)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic event dataset");
  std::string gen_out;
  int gen_clips = 2000, gen_eval = 500, gen_classes = 8, gen_mels = 32, gen_workers = 2;
  double gen_secs = 10.0;
  std::uint64_t gen_seed = 1;
  std::string gen_preset = "toy";
  bool gen_wavs = false;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--clips", gen_clips, "training clips");
  gen->add_option("--eval-clips", gen_eval, "evaluation clips");
  gen->add_option("--classes", gen_classes, "number of classes (<= 16)");
  gen->add_option("--clip-seconds", gen_secs, "clip length in seconds");
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--fbank-preset", gen_preset, "toy|default");
  gen->add_option("--mel-bins", gen_mels, "mel bins override");
  gen->add_option("--workers", gen_workers, "render workers");
  gen->add_flag("--write-wavs", gen_wavs, "also write per-clip WAV files");

  // train
  auto* tr = app.add_subcommand("train", "train a classifier");
  std::string tr_data, tr_out, tr_arch = "dass", tr_preset = "tiny", tr_pool = "mean";
  std::string tr_sched = "fixed", tr_teachers, tr_distill = "kl";
  std::uint64_t tr_seed = 0;
  int tr_epochs = 0, tr_batch = 12, tr_workers = 2;
  double tr_lr = 1e-4;
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--out", tr_out, "run directory");
  tr->add_option("--arch", tr_arch, "dass|attn");
  tr->add_option("--preset", tr_preset, "tiny|toy|small|medium");
  tr->add_option("--pooling", tr_pool, "first|mid|last|mean|sum");
  tr->add_option("--seed", tr_seed, "training seed");
  tr->add_option("--epochs", tr_epochs, "epoch count (0 = schedule default)");
  tr->add_option("--schedule", tr_sched, "balanced|full|fixed");
  tr->add_option("--lr", tr_lr, "base learning rate");
  tr->add_option("--batch-size", tr_batch, "batch size");
  tr->add_option("--workers", tr_workers, "gradient workers");
  tr->add_option("--teacher", tr_teachers, "teacher checkpoint(s), comma separated");
  tr->add_option("--distill", tr_distill, "kl|bce");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate mAP on a dataset split");
  std::string ev_model, ev_data, ev_split = "eval", ev_out;
  int ev_workers = 2;
  ev->add_option("--model", ev_model, "checkpoint path")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--split", ev_split, "eval|train");
  ev->add_option("--workers", ev_workers, "workers");
  ev->add_option("--out", ev_out, "run directory (optional)");

  // niah
  auto* ni = app.add_subcommand("niah", "needle-in-a-haystack sweep");
  std::string ni_models, ni_data, ni_lengths = "10,30,50", ni_positions = "0,0.25,0.5,0.75,1";
  std::string ni_filler = "zeropad", ni_snrs = "0", ni_out;
  std::uint64_t ni_seed = 0;
  int ni_workers = 2, ni_max = 0;
  ni->add_option("--models", ni_models, "checkpoint path(s), comma separated")->required();
  ni->add_option("--data", ni_data, "dataset directory")->required();
  ni->add_option("--lengths", ni_lengths, "haystack lengths in seconds");
  ni->add_option("--positions", ni_positions, "needle positions in [0,1]");
  ni->add_option("--filler", ni_filler, "zeropad|whitenoise|babble (comma separated)");
  ni->add_option("--snr", ni_snrs, "SNR dB list for noise fillers");
  ni->add_option("--seed", ni_seed, "sweep seed");
  ni->add_option("--workers", ni_workers, "workers");
  ni->add_option("--max-clips", ni_max, "cap on evaluation clips (0 = all)");
  ni->add_option("--out", ni_out, "run directory");

  // bench
  auto* be = app.add_subcommand("bench", "length-scaling benchmark");
  std::string be_models, be_frames = "128,256,512,1024", be_out;
  int be_repeats = 5, be_mels = 32;
  std::uint64_t be_seed = 0;
  be->add_option("--models", be_models, "checkpoint path(s), comma separated")->required();
  be->add_option("--frames", be_frames, "input frame counts (>=4, 8x span)");
  be->add_option("--repeats", be_repeats, "timed repeats (median reported)");
  be->add_option("--mel-bins", be_mels, "mel bins of the synthetic input");
  be->add_option("--seed", be_seed, "input seed");
  be->add_option("--out", be_out, "run directory");

  // features
  auto* fe = app.add_subcommand("features", "WAV -> fbank array container");
  std::string fe_wav, fe_out;
  int fe_mels = 128, fe_rate = 16000;
  double fe_window = 25.0, fe_hop = 10.0;
  fe->add_option("--wav", fe_wav, "input mono 16-bit PCM WAV")->required();
  fe->add_option("--out", fe_out, "output container path")->required();
  fe->add_option("--mel-bins", fe_mels, "mel bins");
  fe->add_option("--window-ms", fe_window, "window in ms");
  fe->add_option("--hop-ms", fe_hop, "hop in ms");
  fe->add_option("--sample-rate", fe_rate, "expected sample rate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      std::cout << app.help();
      return 0;
    }
    std::cerr << nlohmann::json{{"error", {{"type", "usage"}, {"message", e.what()}}}}.dump()
              << "\n";
    return 2;
  }

  try {
    Resolver resolver;
    if (!config_path.empty()) {
      if (!fs::exists(config_path)) {
        std::cerr << nlohmann::json{{"error",
                                     {{"type", "usage"},
                                      {"message", "config file not found: " + config_path}}}}
                         .dump()
                  << "\n";
        return 2;
      }
      resolver.file = KvConfig::from_file(config_path);
    }
    for (const auto& kv : sets) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) {
        std::cerr << nlohmann::json{{"error",
                                     {{"type", "usage"},
                                      {"message", "--set expects key=value: " + kv}}}}
                         .dump()
                  << "\n";
        return 2;
      }
      resolver.file.set(kv.substr(0, eq), kv.substr(eq + 1));
    }

    KvConfig resolved;
    resolved.set("config_version", "1");
    auto finalize = [&](const std::string& cmd, const std::string& out_dir) {
      resolved.set("cmd", cmd);
      write_text(out_dir + "/config.resolved.conf", resolved.to_string());
    };

    if (gen->parsed()) {
      resolver.cmd = gen;
      std::string out = gen_out.empty() ? default_run_dir("gen-data") : gen_out;
      fs::create_directories(out);
      int rc = cmd_gen_data(resolver, out, gen_clips, gen_eval, gen_classes, gen_secs, gen_seed,
                            gen_preset, gen_mels, gen_wavs, gen_workers, resolved);
      finalize("gen-data", out);
      return rc;
    }
    if (tr->parsed()) {
      resolver.cmd = tr;
      std::string out = tr_out.empty() ? default_run_dir("train") : tr_out;
      fs::create_directories(out);
      int rc = cmd_train(resolver, tr_data, out, tr_arch, tr_preset, tr_pool, tr_seed, tr_epochs,
                         tr_sched, tr_lr, tr_batch, tr_workers, tr_teachers, tr_distill, resolved);
      finalize("train", out);
      return rc;
    }
    if (ev->parsed()) {
      if (!ev_out.empty()) fs::create_directories(ev_out);
      return cmd_eval(ev_model, ev_data, ev_split, ev_workers, ev_out);
    }
    if (ni->parsed()) {
      resolver.cmd = ni;
      std::string out = ni_out.empty() ? default_run_dir("niah") : ni_out;
      fs::create_directories(out);
      int rc = cmd_niah(resolver, ni_models, ni_data, ni_lengths, ni_positions, ni_filler,
                        ni_snrs, ni_seed, ni_workers, ni_max, out, resolved);
      finalize("niah", out);
      return rc;
    }
    if (be->parsed()) {
      resolver.cmd = be;
      std::string out = be_out.empty() ? default_run_dir("bench") : be_out;
      fs::create_directories(out);
      int rc = cmd_bench(resolver, be_models, be_frames, be_repeats, be_mels, be_seed, out, resolved);
      finalize("bench", out);
      return rc;
    }
    if (fe->parsed()) {
      return cmd_features(fe_wav, fe_out, fe_mels, fe_window, fe_hop, fe_rate);
    }
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << nlohmann::json{{"error",
                                 {{"type", "divergence"},
                                  {"message", e.what()},
                                  {"record", e.record}}}}
                     .dump()
              << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << nlohmann::json{{"error", {{"type", "runtime"}, {"message", e.what()}}}}.dump()
              << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", {{"type", "internal"}, {"message", e.what()}}}}.dump()
              << "\n";
    return 1;
  }
}

}  // namespace dass
