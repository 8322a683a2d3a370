#pragma once

// Multi-label training with optional knowledge distillation.
// Total loss with a teacher: 0.5 * (BCE(labels, student) + D(teacher, student))
// where D is per-class Bernoulli KL by default (BCE-on-teacher-targets kept
// as a config option). Without a teacher the loss is plain BCE.
// Optimizer: Adam. Schedules: "balanced" (25 epochs, halve every 5 after 10)
// and "full" (10 epochs, halve every epoch from the second).

#include <functional>
#include <string>
#include <vector>

#include "dass/classifier.hpp"
#include "dass/common.hpp"
#include "dass/dataset.hpp"
#include "dass/niah.hpp"
#include "dass/ssm.hpp"

namespace dass {

// ---- losses (numerically stabilized in logit space) ----

// mean over classes of -[y log s(z) + (1-y) log(1-s(z))]
template <typename T>
T bce_multilabel(const std::vector<T>& logits, const std::vector<T>& labels) {
  require_shape(logits.size() == labels.size(), "bce: length mismatch");
  require_arg(!logits.empty(), "bce: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double y = double(labels[i]);
    require_arg(y >= 0.0 && y <= 1.0, "bce: labels must lie in [0,1]");
    double z = double(logits[i]);
    acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::fabs(z)));
  }
  return T(acc / double(logits.size()));
}

constexpr double kProbClamp = 1e-7;

// mean over classes of Bernoulli KL(p || s(z))
template <typename T>
T kl_distill(const std::vector<T>& teacher_probs, const std::vector<T>& logits) {
  require_shape(teacher_probs.size() == logits.size(), "kl: length mismatch");
  require_arg(!logits.empty(), "kl: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double p = std::min(std::max(double(teacher_probs[i]), kProbClamp), 1.0 - kProbClamp);
    double z = double(logits[i]);
    // cross entropy -[p log s + (1-p) log(1-s)] minus entropy of p
    double ce = std::max(z, 0.0) - z * p + std::log1p(std::exp(-std::fabs(z)));
    double ent = -(p * std::log(p) + (1.0 - p) * std::log(1.0 - p));
    acc += ce - ent;
  }
  return T(acc / double(logits.size()));
}

enum class DistillLoss { KlDiv, BceOnTeacher };

// 0.5*(bce + distill) with a teacher; bce alone without.
template <typename T>
T total_loss(const std::vector<T>& labels, const std::vector<T>& logits,
             const std::vector<T>* teacher_probs,
             DistillLoss kind = DistillLoss::KlDiv) {
  T bce = bce_multilabel(logits, labels);
  if (!teacher_probs) return bce;
  T d = (kind == DistillLoss::KlDiv) ? kl_distill(*teacher_probs, logits)
                                     : bce_multilabel(logits, *teacher_probs);
  return T(0.5) * (bce + d);
}

// d total_loss / d logits. For both KL and BCE-on-teacher the distill term
// contributes (s(z) - p) / K.
template <typename T>
std::vector<T> total_loss_grad(const std::vector<T>& labels, const std::vector<T>& logits,
                               const std::vector<T>* teacher_probs) {
  const std::size_t k = logits.size();
  std::vector<T> g(k, T(0));
  const T inv = T(1) / T(k);
  for (std::size_t i = 0; i < k; ++i) {
    T s = sigmoid(logits[i]);
    if (teacher_probs) {
      T p = T(std::min(std::max(double((*teacher_probs)[i]), kProbClamp), 1.0 - kProbClamp));
      g[i] = T(0.5) * ((s - labels[i]) + (s - p)) * inv;
    } else {
      g[i] = (s - labels[i]) * inv;
    }
  }
  return g;
}

// ---- optimizer and schedule ----

template <typename T>
struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<T> m, v;
  long step = 0;

  void init(std::size_t n) {
    m.assign(n, T(0));
    v.assign(n, T(0));
    step = 0;
  }

  void update(std::vector<T>& theta, const std::vector<T>& grad, double lr) {
    require_shape(theta.size() == grad.size() && theta.size() == m.size(), "adam: size mismatch");
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, double(step));
    const double bc2 = 1.0 - std::pow(beta2, double(step));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      double g = double(grad[i]);
      double mi = beta1 * double(m[i]) + (1.0 - beta1) * g;
      double vi = beta2 * double(v[i]) + (1.0 - beta2) * g * g;
      m[i] = T(mi);
      v[i] = T(vi);
      theta[i] -= T(lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
    }
  }
};

enum class SchedulePreset { Balanced, Full, Fixed };

struct DistillConfig {
  double lr = 1e-4;
  int batch_size = 12;
  SchedulePreset schedule = SchedulePreset::Full;
  int epochs = 0;  // 0: use the preset's count (25 balanced / 10 full)
  DistillLoss distill_loss = DistillLoss::KlDiv;
  std::uint64_t seed = 0;
  int workers = 1;
  bool eval_each_epoch = true;
  int eval_max_clips = 0;

  int epoch_count() const {
    if (epochs > 0) return epochs;
    switch (schedule) {
      case SchedulePreset::Balanced: return 25;
      case SchedulePreset::Full: return 10;
      case SchedulePreset::Fixed: return 10;
    }
    return 10;
  }
};

// epoch is 1-based.
inline double lr_for_epoch(const DistillConfig& cfg, int epoch) {
  switch (cfg.schedule) {
    case SchedulePreset::Balanced:
      // halve every 5 epochs after epoch 10
      return epoch <= 10 ? cfg.lr : cfg.lr * std::pow(0.5, (epoch - 11) / 5 + 1);
    case SchedulePreset::Full:
      // halve every epoch starting from the second
      return cfg.lr * std::pow(0.5, epoch - 1);
    case SchedulePreset::Fixed:
      return cfg.lr;
  }
  return cfg.lr;
}

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double eval_map = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  std::uint64_t theta_hash = 0;
};

std::string metrics_jsonl(const std::vector<EpochRecord>& log);

// Deterministic given cfg.seed: batch order, droppath streams and the
// thread-count-independent gradient reduction are all derived from it.
// Throws DivergenceError (with a JSON diagnostic) if the loss goes
// non-finite.
template <typename T>
TrainResult train(Classifier<T>& model, const SynthDataset& data, const DistillConfig& cfg,
                  const TeacherHandle<T>* teacher = nullptr) {
  require_arg(!data.train.empty(), "train: empty dataset");
  const int n = int(data.train.size());
  const std::size_t n_params = model.theta().size();
  Adam<T> adam;
  adam.init(n_params);

  Rng shuffle_rng(cfg.seed ^ 0x5748554646ULL);
  std::vector<int> order(std::size_t(n), 0);
  for (int i = 0; i < n; ++i) order[std::size_t(i)] = i;

  const int workers = cfg.workers < 1 ? 1 : cfg.workers;
  // Per-item gradient buffers reduced in item order: results are bit-identical
  // no matter how many workers run the batch.
  std::vector<std::vector<T>> item_grads(std::size_t(cfg.batch_size), std::vector<T>{});
  std::vector<T> grad(n_params, T(0));

  TrainResult result;
  const int epochs = cfg.epoch_count();
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    const double lr = lr_for_epoch(cfg, epoch);
    // Fisher-Yates with the run's own stream
    for (int i = n - 1; i > 0; --i) {
      int j = int(shuffle_rng.uniform_int(0, i));
      std::swap(order[std::size_t(i)], order[std::size_t(j)]);
    }
    double loss_sum = 0.0;
    long loss_count = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int bsz = std::min(cfg.batch_size, n - start);
      for (int bi = 0; bi < bsz; ++bi) item_grads[std::size_t(bi)].assign(n_params, T(0));
      std::vector<double> item_loss(std::size_t(bsz), 0.0);
      auto divergence = [&](const char* why) {
        std::string diag = std::string("{\"event\":\"divergence\",\"epoch\":") +
                           std::to_string(epoch) + ",\"batch_start\":" + std::to_string(start) +
                           ",\"loss\":\"" + why + "\",\"lr\":" + std::to_string(lr) + "}";
        return DivergenceError("training diverged: " + std::string(why), diag);
      };
      try {
      parallel_chunks(bsz, workers, [&](int b, int e, int) {
        for (int bi = b; bi < e; ++bi) {
          T* tg = item_grads[std::size_t(bi)].data();
          const LabeledClip& clip = data.train[std::size_t(order[std::size_t(start + bi)])];
          std::vector<T> labels(clip.labels.begin(), clip.labels.end());
          std::vector<T> teacher_probs;
          if (teacher) teacher_probs = teacher->predict_probs(clip.features);
          // droppath stream tied to (epoch, clip id): independent of batch
          // composition and thread assignment
          Rng dp_rng(cfg.seed ^ (std::uint64_t(epoch) << 32) ^ std::uint64_t(clip.id));
          double this_loss = 0.0;
          auto grad_fn = [&](const std::vector<T>& logits) {
            this_loss = double(total_loss(labels, logits, teacher ? &teacher_probs : nullptr,
                                          cfg.distill_loss));
            auto g = total_loss_grad(labels, logits, teacher ? &teacher_probs : nullptr);
            const T scale = T(1) / T(bsz);
            for (T& v : g) v *= scale;
            return g;
          };
          model.forward_backward(clip.features, grad_fn, tg, &dp_rng);
          item_loss[std::size_t(bi)] = this_loss;
        }
      });
      } catch (const InvalidParameter& e) {
        // a numeric domain error mid-training means the forward pass blew up
        throw divergence(e.what());
      }
      grad.assign(n_params, T(0));
      for (int bi = 0; bi < bsz; ++bi) {
        const T* tg = item_grads[std::size_t(bi)].data();
        for (std::size_t i = 0; i < n_params; ++i) grad[i] += tg[i];
      }

      double batch_loss = 0.0;
      for (double l : item_loss) batch_loss += l;
      batch_loss /= double(bsz);
      loss_sum += batch_loss;
      ++loss_count;
      if (!std::isfinite(batch_loss)) throw divergence("non-finite loss");
      adam.update(model.theta(), grad, lr);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / double(loss_count);
    if (cfg.eval_each_epoch && !data.eval.empty()) {
      if constexpr (std::is_same_v<T, float>) {
        rec.eval_map = eval_map(model, data.eval, workers, cfg.eval_max_clips);
      }
    }
    result.log.push_back(rec);
  }
  result.theta_hash = fnv1a64_vec(model.theta());
  return result;
}

}  // namespace dass
