#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dass/distill.hpp"
#include "oracles.hpp"

using namespace dass;

TEST_CASE("bce: closed forms") {
  // z=0, y=1 -> ln 2
  CHECK(double(bce_multilabel<double>({0.0}, {1.0})) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // z -> +inf, y=1 -> 0
  CHECK(double(bce_multilabel<double>({40.0}, {1.0})) < 1e-12);
  // labels outside [0,1] rejected
  CHECK_THROWS_AS(bce_multilabel<double>({0.0}, {1.5}), InvalidArgument);
  CHECK_THROWS_AS(bce_multilabel<double>({}, {}), InvalidArgument);
}

TEST_CASE("bce: gradient vanishes when y = sigmoid(z)") {
  std::vector<double> z{0.3, -1.2, 2.0};
  std::vector<double> y(z.size(), 0.0);
  for (std::size_t i = 0; i < z.size(); ++i) y[i] = sigmoid(z[i]);
  auto g = total_loss_grad<double>(y, z, nullptr);
  for (double v : g) CHECK(std::fabs(v) < 1e-12);
}

TEST_CASE("bce: gradient matches finite differences") {
  Rng rng(1);
  std::vector<double> z{0.5, -0.7, 1.3, -2.1}, y{1.0, 0.0, 0.25, 0.9};
  auto g = total_loss_grad<double>(y, z, nullptr);
  const double eps = 1e-6;
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto zp = z, zm = z;
    zp[i] += eps;
    zm[i] -= eps;
    double fd = (bce_multilabel(zp, y) - bce_multilabel(zm, y)) / (2 * eps);
    CHECK(oracles::rel_err(g[i], fd) < 1e-6);
  }
}

TEST_CASE("kl: closed forms") {
  // sigma(z) = p -> 0
  std::vector<double> p{0.3, 0.8}, z(2, 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) z[i] = std::log(p[i] / (1.0 - p[i]));
  CHECK(double(kl_distill(p, z)) < 1e-12);
  // p=0.5, z=0 -> 0
  CHECK(double(kl_distill<double>({0.5}, {0.0})) < 1e-15);
  // p=0.8, sigma(z)=0.5: 0.8 ln 1.6 + 0.2 ln 0.4
  double want = 0.8 * std::log(1.6) + 0.2 * std::log(0.4);
  CHECK(double(kl_distill<double>({0.8}, {0.0})) == doctest::Approx(want).epsilon(1e-12));
  CHECK(want == doctest::Approx(0.1927).epsilon(1e-3));
  // clamping keeps extreme teacher probabilities finite
  CHECK(std::isfinite(double(kl_distill<double>({0.0, 1.0}, {0.0, 0.0}))));
}

TEST_CASE("kl: gradient matches finite differences") {
  std::vector<double> p{0.8, 0.2, 0.55}, z{0.4, -1.0, 0.0}, y{1.0, 0.0, 1.0};
  auto g = total_loss_grad(y, z, &p);
  const double eps = 1e-6;
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto zp = z, zm = z;
    zp[i] += eps;
    zm[i] -= eps;
    double fd = (total_loss(y, zp, &p) - total_loss(y, zm, &p)) / (2 * eps);
    CHECK(oracles::rel_err(g[i], fd) < 1e-6);
  }
}

TEST_CASE("total_loss: composition and teacher-free reduction") {
  // teacher matched to student: total = 0.5 * bce
  std::vector<double> z{0.7, -0.4}, y{1.0, 0.0};
  std::vector<double> p(z.size(), 0.0);
  for (std::size_t i = 0; i < z.size(); ++i) p[i] = sigmoid(z[i]);
  CHECK(double(total_loss(y, z, &p)) ==
        doctest::Approx(0.5 * double(bce_multilabel(z, y))).epsilon(1e-9));

  // both terms zero -> 0 (y=p=sigma(z) at saturation)
  std::vector<double> zs{40.0}, ys{1.0}, ps{1.0};
  CHECK(double(total_loss(ys, zs, &ps)) < 1e-5);  // limited by the probability clamp

  // bce=ln2, kl=0.1927 -> 0.4429
  double bce = std::log(2.0);
  double kl = 0.8 * std::log(1.6) + 0.2 * std::log(0.4);
  CHECK(0.5 * (bce + kl) == doctest::Approx(0.4429).epsilon(1e-3));

  // without teacher: plain bce
  CHECK(double(total_loss<double>(y, z, nullptr)) == doctest::Approx(double(bce_multilabel(z, y))));

  // total_loss >= 0 on random inputs
  Rng rng(5);
  for (int it = 0; it < 200; ++it) {
    std::vector<double> zz{rng.normal() * 3}, yy{rng.uniform()}, pp{rng.uniform()};
    CHECK(double(total_loss(yy, zz, &pp)) >= -1e-12);
  }
}

TEST_CASE("ensemble_teacher: identity, mean, convexity") {
  std::vector<double> a{0.2, 0.9};
  CHECK(ensemble_teacher<double>({a}) == a);
  auto m = ensemble_teacher<double>({{0.2}, {0.8}});
  CHECK(m[0] == doctest::Approx(0.5));
  Rng rng(6);
  for (int it = 0; it < 50; ++it) {
    std::vector<std::vector<double>> probs(3, std::vector<double>(4, 0.0));
    for (auto& p : probs)
      for (auto& v : p) v = rng.uniform();
    auto e = ensemble_teacher(probs);
    for (std::size_t c = 0; c < e.size(); ++c) {
      double lo = 1.0, hi = 0.0;
      for (const auto& p : probs) {
        lo = std::min(lo, p[c]);
        hi = std::max(hi, p[c]);
      }
      CHECK(e[c] >= lo - 1e-12);
      CHECK(e[c] <= hi + 1e-12);
    }
  }
}

TEST_CASE("lr schedule: balanced preset") {
  DistillConfig cfg;
  cfg.schedule = SchedulePreset::Balanced;
  cfg.lr = 1e-4;
  CHECK(cfg.epoch_count() == 25);
  CHECK(lr_for_epoch(cfg, 1) == doctest::Approx(1e-4));
  CHECK(lr_for_epoch(cfg, 10) == doctest::Approx(1e-4));
  CHECK(lr_for_epoch(cfg, 15) == doctest::Approx(0.5e-4));
  CHECK(lr_for_epoch(cfg, 20) == doctest::Approx(0.25e-4));
  CHECK(lr_for_epoch(cfg, 25) == doctest::Approx(0.125e-4));
}

TEST_CASE("lr schedule: full preset halves every epoch from the second") {
  DistillConfig cfg;
  cfg.schedule = SchedulePreset::Full;
  cfg.lr = 1e-4;
  CHECK(cfg.epoch_count() == 10);
  CHECK(lr_for_epoch(cfg, 1) == doctest::Approx(1e-4));
  CHECK(lr_for_epoch(cfg, 2) == doctest::Approx(5e-5));
  CHECK(lr_for_epoch(cfg, 3) == doctest::Approx(2.5e-5));
}

namespace {

SynthDataset tiny_dataset(int train = 24, int eval = 8, std::uint64_t seed = 3) {
  DatasetConfig cfg;
  cfg.train_clips = train;
  cfg.eval_clips = eval;
  cfg.clip_seconds = 1.0;
  cfg.num_classes = 4;
  cfg.seed = seed;
  FbankConfig fb = FbankConfig::toy();
  return build_synth_dataset(cfg, fb, 2);
}

ModelConfig micro_model_config(int classes) {
  ModelConfig mc = ModelConfig::tiny(classes);
  mc.channel_dims = {4, 8, 16, 32};
  mc.state_size = 2;
  return mc;
}

}  // namespace

TEST_CASE("train: deterministic given seed, regardless of worker count") {
  auto data = tiny_dataset();
  DistillConfig cfg;
  cfg.schedule = SchedulePreset::Fixed;
  cfg.epochs = 1;
  cfg.batch_size = 6;
  cfg.seed = 11;
  cfg.eval_each_epoch = false;

  DassClassifier<float> m1(micro_model_config(4));
  m1.model().init_params(11);
  cfg.workers = 1;
  auto r1 = train(m1, data, cfg);

  DassClassifier<float> m2(micro_model_config(4));
  m2.model().init_params(11);
  cfg.workers = 2;
  auto r2 = train(m2, data, cfg);

  CHECK(r1.theta_hash == r2.theta_hash);
  CHECK(m1.theta() == m2.theta());
}

TEST_CASE("train: teacher parameters are byte-identical before and after") {
  auto data = tiny_dataset();
  DassClassifier<float> teacher(micro_model_config(4));
  teacher.model().init_params(21);
  auto before = fnv1a64_vec(teacher.theta());

  DassClassifier<float> student(micro_model_config(4));
  student.model().init_params(22);
  TeacherHandle<float> handle;
  handle.teachers.push_back(&teacher);

  DistillConfig cfg;
  cfg.schedule = SchedulePreset::Fixed;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.workers = 2;
  cfg.eval_each_epoch = false;
  train(student, data, cfg, &handle);

  CHECK(fnv1a64_vec(teacher.theta()) == before);
}

TEST_CASE("train: loss decreases over the first 3 epochs (median of 3 seeds)") {
  auto data = tiny_dataset(48, 8, 7);
  int decreased = 0;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    DassClassifier<float> model(micro_model_config(4));
    model.model().init_params(seed);
    DistillConfig cfg;
    cfg.schedule = SchedulePreset::Fixed;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.lr = 3e-4;
    cfg.seed = seed;
    cfg.workers = 2;
    cfg.eval_each_epoch = false;
    auto r = train(model, data, cfg);
    REQUIRE(r.log.size() == 3);
    if (r.log.back().train_loss < r.log.front().train_loss) ++decreased;
  }
  CHECK(decreased >= 2);  // median over 3 seeds decreases
}

TEST_CASE("train: divergence aborts with a diagnostic record") {
  auto data = tiny_dataset();
  DassClassifier<float> model(micro_model_config(4));
  model.model().init_params(31);
  DistillConfig cfg;
  cfg.schedule = SchedulePreset::Fixed;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.lr = 1e18;  // blows up immediately
  cfg.workers = 2;
  cfg.eval_each_epoch = false;
  try {
    train(model, data, cfg);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.record.find("divergence") != std::string::npos);
    CHECK(e.record.find("epoch") != std::string::npos);
  }
}

TEST_CASE("metrics log: one JSON record per epoch") {
  std::vector<EpochRecord> log{{1, 1e-4, 0.5, 0.7}, {2, 5e-5, 0.4, 0.75}};
  auto s = metrics_jsonl(log);
  CHECK(std::count(s.begin(), s.end(), '\n') == 2);
  CHECK(s.find("\"epoch\":1") != std::string::npos);
  CHECK(s.find("\"eval_mAP\":0.75") != std::string::npos);
  CHECK(s.find("\"lr\":") != std::string::npos);
  CHECK(s.find("\"train_loss\":") != std::string::npos);
}
