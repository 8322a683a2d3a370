#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "dass/niah.hpp"
#include "oracles.hpp"

using namespace dass;

namespace {

Mat<float> random_needle(Rng& rng, const FbankConfig& cfg, double seconds) {
  Mat<float> m(cfg.frames_for_seconds(seconds), cfg.mel_bins);
  for (auto& v : m.v) v = float(rng.normal());
  return m;
}

// brute-force AP: for each positive, rank = 1 + #{better}, precision at that
// rank = positives at better-or-equal rank / rank
double brute_force_ap(const std::vector<double>& scores, const std::vector<double>& labels) {
  const int n = int(scores.size());
  double ap = 0.0;
  int num_pos = 0;
  for (int i = 0; i < n; ++i) {
    if (labels[std::size_t(i)] < 0.5) continue;
    ++num_pos;
    int rank = 1, hits = 0;
    for (int j = 0; j < n; ++j) {
      bool better = scores[std::size_t(j)] > scores[std::size_t(i)] ||
                    (scores[std::size_t(j)] == scores[std::size_t(i)] && j < i);
      if (j != i && better) ++rank;
      if (labels[std::size_t(j)] > 0.5 && (better || j == i)) ++hits;
    }
    ap += double(hits) / double(rank);
  }
  return num_pos ? ap / num_pos : 0.0;
}

}  // namespace

TEST_CASE("build_haystack: needle at position 0 occupies the first frames") {
  FbankConfig cfg = FbankConfig::toy();
  cfg.mean = -5.0;
  cfg.stddev = 2.0;
  Rng rng(1);
  auto needle = random_needle(rng, cfg, 1.0);
  NiahSpec spec;
  spec.haystack_seconds = 3.0;
  spec.needle_pos = 0.0;
  auto hay = build_haystack(needle, 1.0, spec, cfg);
  CHECK(hay.needle_start_frame == 0);
  CHECK(hay.features.rows == cfg.frames_for_seconds(3.0));
  for (int r = 0; r < needle.rows; ++r)
    for (int c = 0; c < needle.cols; ++c) CHECK(hay.features(r, c) == needle(r, c));
  const float pad = zero_pad_value<float>(cfg);
  for (int r = needle.rows; r < hay.features.rows; ++r)
    for (int c = 0; c < needle.cols; ++c) CHECK(hay.features(r, c) == pad);
}

TEST_CASE("build_haystack: centered placement formula") {
  FbankConfig cfg = FbankConfig::toy();
  Rng rng(2);
  auto needle = random_needle(rng, cfg, 10.0);
  NiahSpec spec;
  spec.haystack_seconds = 30.0;
  spec.needle_pos = 0.5;
  auto hay = build_haystack(needle, 1.0, spec, cfg);
  int l_hay = cfg.frames_for_seconds(30.0), l_needle = needle.rows;
  CHECK(hay.needle_start_frame == int(std::llround(0.5 * (l_hay - l_needle))));

  spec.needle_pos = 1.0;  // end-aligned exactly
  auto hay_end = build_haystack(needle, 1.0, spec, cfg);
  CHECK(hay_end.needle_start_frame + l_needle == l_hay);

  spec.haystack_seconds = 5.0;  // shorter than the needle
  CHECK_THROWS_AS(build_haystack(needle, 1.0, spec, cfg), InvalidArgument);
}

TEST_CASE("build_haystack: needle immutability inside noise haystacks") {
  FbankConfig cfg = FbankConfig::toy();
  cfg.mean = -4.0;
  cfg.stddev = 3.0;
  Rng rng(3);
  auto needle = random_needle(rng, cfg, 1.0);
  for (FillerKind f : {FillerKind::WhiteNoise, FillerKind::Babble}) {
    NiahSpec spec;
    spec.haystack_seconds = 4.0;
    spec.needle_pos = 0.25;
    spec.filler = f;
    spec.snr_db = 5.0;
    spec.seed = 9;
    auto hay = build_haystack(needle, 0.01, spec, cfg);
    CHECK(hay.features.rows == cfg.frames_for_seconds(4.0));
    for (int r = 0; r < needle.rows; ++r)
      for (int c = 0; c < needle.cols; ++c)
        CHECK(hay.features(hay.needle_start_frame + r, c) == needle(r, c));
  }
}

TEST_CASE("SNR calibration within 0.1 dB for snr in {0,5,10,15,20}") {
  FbankConfig cfg = FbankConfig::toy();
  Rng rng(4);
  auto needle = random_needle(rng, cfg, 1.0);
  const double needle_power = 0.0123;
  for (double snr : {0.0, 5.0, 10.0, 15.0, 20.0}) {
    for (FillerKind f : {FillerKind::WhiteNoise, FillerKind::Babble}) {
      NiahSpec spec;
      spec.haystack_seconds = 3.0;
      spec.filler = f;
      spec.snr_db = snr;
      spec.seed = 5;
      auto hay = build_haystack(needle, needle_power, spec, cfg);
      double measured = 10.0 * std::log10(needle_power / hay.noise_power);
      CHECK(std::fabs(measured - snr) < 0.1);
    }
  }
}

TEST_CASE("synth_babble: unit power, deterministic, centroid in band") {
  auto b1 = synth_babble(2.0, 16000, 77);
  auto b2 = synth_babble(2.0, 16000, 77);
  CHECK(b1 == b2);
  CHECK(std::fabs(waveform_power(b1) - 1.0) < 1e-6);

  // spectral centroid via the power spectrum of a long window
  std::size_t n = 1 << 15;
  std::vector<std::complex<double>> buf(n, std::complex<double>(0.0, 0.0));
  for (std::size_t i = 0; i < n && i < b1.size(); ++i) buf[i] = b1[i];
  fft_radix2(buf);
  double num = 0.0, den = 0.0;
  for (std::size_t k = 1; k < n / 2; ++k) {
    double f = double(k) * 16000.0 / double(n);
    double p = std::norm(buf[k]);
    num += f * p;
    den += p;
  }
  double centroid = num / den;
  CHECK(centroid >= 100.0);
  CHECK(centroid <= 4000.0);
}

TEST_CASE("mAP: perfect ranking gives exactly 1") {
  Mat<double> scores(4, 2), labels(4, 2);
  for (int i = 0; i < 4; ++i) {
    scores(i, 0) = 4 - i;
    labels(i, 0) = i < 2 ? 1.0 : 0.0;
    scores(i, 1) = i;
    labels(i, 1) = i >= 3 ? 1.0 : 0.0;
  }
  auto r = mean_average_precision(scores, labels);
  CHECK(r.map == 1.0);
}

TEST_CASE("mAP: single positive ranked 2nd of 3 -> 0.5") {
  Mat<double> scores(3, 1), labels(3, 1);
  scores(0, 0) = 0.9;
  scores(1, 0) = 0.5;
  scores(2, 0) = 0.1;
  labels(1, 0) = 1.0;
  auto r = mean_average_precision(scores, labels);
  CHECK(r.map == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("mAP: zero-positive classes excluded; all-negative input is an error") {
  Mat<double> scores(3, 2), labels(3, 2);
  scores(0, 0) = 0.9;
  labels(0, 0) = 1.0;
  auto r = mean_average_precision(scores, labels);
  CHECK(std::isnan(r.per_class[1]));
  CHECK(r.map == 1.0);

  Mat<double> none(3, 2), lnone(3, 2);
  CHECK_THROWS_AS(mean_average_precision(none, lnone), InvalidArgument);
}

TEST_CASE("mAP: matches the brute-force oracle on random instances") {
  Rng rng(8);
  for (int it = 0; it < 50; ++it) {
    int n = 3 + int(rng.uniform_int(0, 12));
    Mat<double> scores(n, 1), labels(n, 1);
    bool any = false;
    for (int i = 0; i < n; ++i) {
      // quantized scores force ties
      scores(i, 0) = std::floor(rng.uniform(0.0, 5.0)) / 5.0;
      labels(i, 0) = rng.uniform() < 0.4 ? 1.0 : 0.0;
      any = any || labels(i, 0) > 0.5;
    }
    if (!any) labels(int(rng.uniform_int(0, n - 1)), 0) = 1.0;
    std::vector<double> s(scores.v), l(labels.v);
    auto got = mean_average_precision(scores, labels);
    CHECK(std::fabs(got.map - brute_force_ap(s, l)) < 1e-12);
  }
}

TEST_CASE("mAP: invariant under strictly increasing score transforms") {
  Rng rng(9);
  Mat<double> scores(10, 3), labels(10, 3);
  for (auto& v : scores.v) v = rng.normal();
  for (int c = 0; c < 3; ++c) labels(int(rng.uniform_int(0, 9)), c) = 1.0;
  auto base = mean_average_precision(scores, labels);
  Mat<double> warped = scores;
  for (auto& v : warped.v) v = std::tanh(v) * 3.0 + 7.0;
  auto after = mean_average_precision(warped, labels);
  CHECK(base.map == doctest::Approx(after.map).epsilon(1e-12));
  CHECK(base.map >= 0.0);
  CHECK(base.map <= 1.0);
}

namespace {

SynthDataset sweep_dataset() {
  DatasetConfig cfg;
  cfg.train_clips = 8;
  cfg.eval_clips = 10;
  cfg.clip_seconds = 1.0;
  cfg.num_classes = 4;
  cfg.seed = 10;
  return build_synth_dataset(cfg, FbankConfig::toy(), 2);
}

}  // namespace

TEST_CASE("run_sweep: degenerate 10 s condition reproduces mAP10 exactly") {
  auto data = sweep_dataset();
  ModelConfig mc = ModelConfig::tiny(4);
  mc.channel_dims = {4, 8, 16, 32};
  mc.state_size = 2;
  DassClassifier<float> model(mc);
  model.model().init_params(12);

  SweepPlan plan;
  plan.lengths_seconds = {1.0};  // clips are 1 s: haystack == needle
  plan.positions = {0.0, 0.5, 1.0};
  plan.fillers = {{FillerKind::ZeroPad, 0.0}};
  plan.workers = 2;

  std::vector<SweepModel> models{{"ssm-tiny", &model}};
  auto report = run_sweep(models, data.eval, data.fbank_cfg, plan);
  REQUIRE(report.rows.size() == 3);
  for (const auto& row : report.rows) {
    CHECK(row.map == row.map10);
    CHECK(row.relative_drop == 0.0);
    CHECK(row.status == "ok");
    // stored drop is recomputable from stored mAPs
    CHECK(std::fabs(row.relative_drop - (row.map10 - row.map) / row.map10) < 1e-12);
  }
}

TEST_CASE("run_sweep: cross-product row count and capacity rows") {
  auto data = sweep_dataset();
  ModelConfig mc = ModelConfig::tiny(4);
  mc.channel_dims = {4, 8, 16, 32};
  mc.state_size = 2;
  DassClassifier<float> ssm(mc);
  ssm.model().init_params(13);

  AttnConfig ac = AttnConfig::toy(4);
  ac.width = 16;
  ac.heads = 2;
  ac.depth = 1;
  ac.memory_budget = 20000;  // tiny: fails at the longest length
  AttnClassifier<float> attn(ac);
  attn.model().init_params(14);

  SweepPlan plan;
  plan.lengths_seconds = {1.0, 3.0, 10.0};
  plan.positions = {0.0};
  plan.fillers = {{FillerKind::ZeroPad, 0.0}};
  plan.workers = 2;

  std::vector<SweepModel> models{{"ssm", &ssm}, {"attn", &attn}};
  auto report = run_sweep(models, data.eval, data.fbank_cfg, plan);
  CHECK(report.rows.size() == 6);  // 2 models x 3 lengths x 1 pos x 1 filler

  int exceeded = 0;
  for (const auto& row : report.rows)
    if (row.status == "exceeded-capacity") {
      ++exceeded;
      CHECK(row.model_id == "attn");
      CHECK(std::isnan(row.map));
    }
  CHECK(exceeded >= 1);  // the attention model hits its budget, sweep survives

  auto csv = report_csv(report);
  CHECK(csv.find("exceeded-capacity") != std::string::npos);
  CHECK(csv.find("model,length_s") != std::string::npos);
  auto json = report_json(report);
  CHECK(json.find("\"relative_drop\"") != std::string::npos);

  auto dir = std::filesystem::temp_directory_path() / "dass_plot_test";
  std::filesystem::create_directories(dir);
  write_plot_csvs(report, dir.string());
  CHECK(std::filesystem::exists(dir / "plot_len_vs_map.csv"));
  CHECK(std::filesystem::exists(dir / "plot_pos_vs_drop.csv"));
  std::filesystem::remove_all(dir);
}
