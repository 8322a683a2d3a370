#pragma once

// Common classifier surface for training and evaluation. Both model
// families expose: an eval forward, a re-entrant forward+backward (tape kept
// on the caller's stack so threads can share one frozen model), and the flat
// parameter vector with its layout.

#include <functional>
#include <memory>
#include <string>

#include "dass/attn.hpp"
#include "dass/model.hpp"

namespace dass {

template <typename T>
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual std::vector<T> forward(const Mat<T>& features) const = 0;

  // Runs forward in training mode, asks `grad_of_logits` for dL/dlogits,
  // then accumulates dL/dtheta into `grad`. Safe to call concurrently.
  virtual std::vector<T> forward_backward(
      const Mat<T>& features,
      const std::function<std::vector<T>(const std::vector<T>&)>& grad_of_logits, T* grad,
      Rng* droppath_rng) const = 0;

  virtual std::vector<T>& theta() = 0;
  virtual const std::vector<T>& theta() const = 0;
  virtual const ParamLayout& layout() const = 0;
  virtual int num_classes() const = 0;
  virtual std::string kind() const = 0;
};

template <typename T>
class DassClassifier final : public Classifier<T> {
 public:
  explicit DassClassifier(ModelConfig cfg) : model_(std::move(cfg)) {}

  DassModel<T>& model() { return model_; }
  const DassModel<T>& model() const { return model_; }

  std::vector<T> forward(const Mat<T>& x) const override { return model_.forward(x); }

  std::vector<T> forward_backward(
      const Mat<T>& x, const std::function<std::vector<T>(const std::vector<T>&)>& grad_of_logits,
      T* grad, Rng* droppath_rng) const override {
    typename DassModel<T>::Tape tape;
    auto logits = model_.forward_train(x, tape, droppath_rng);
    auto dlogits = grad_of_logits(logits);
    model_.backward(tape, dlogits, grad);
    return logits;
  }

  std::vector<T>& theta() override { return model_.theta; }
  const std::vector<T>& theta() const override { return model_.theta; }
  const ParamLayout& layout() const override { return model_.layout(); }
  int num_classes() const override { return model_.config().num_classes; }
  std::string kind() const override { return "dass"; }

 private:
  DassModel<T> model_;
};

template <typename T>
class AttnClassifier final : public Classifier<T> {
 public:
  explicit AttnClassifier(AttnConfig cfg) : model_(std::move(cfg)) {}

  AttnModel<T>& model() { return model_; }
  const AttnModel<T>& model() const { return model_; }

  std::vector<T> forward(const Mat<T>& x) const override { return model_.forward(x); }

  std::vector<T> forward_backward(
      const Mat<T>& x, const std::function<std::vector<T>(const std::vector<T>&)>& grad_of_logits,
      T* grad, Rng* /*droppath_rng*/) const override {
    typename AttnModel<T>::Tape tape;
    auto logits = model_.forward_train(x, tape);
    auto dlogits = grad_of_logits(logits);
    model_.backward(tape, dlogits, grad);
    return logits;
  }

  std::vector<T>& theta() override { return model_.theta; }
  const std::vector<T>& theta() const override { return model_.theta; }
  const ParamLayout& layout() const override { return model_.layout(); }
  int num_classes() const override { return model_.config().num_classes; }
  std::string kind() const override { return "attn"; }

 private:
  AttnModel<T> model_;
};

// One or more frozen teachers; the ensemble rule is the per-class mean of
// sigmoid probabilities.
template <typename T>
struct TeacherHandle {
  std::vector<const Classifier<T>*> teachers;

  std::vector<T> predict_probs(const Mat<T>& x) const {
    require_arg(!teachers.empty(), "TeacherHandle: no teachers");
    std::vector<T> acc;
    for (const auto* t : teachers) {
      auto logits = t->forward(x);
      if (acc.empty()) acc.assign(logits.size(), T(0));
      require_shape(logits.size() == acc.size(), "TeacherHandle: class count mismatch");
      for (std::size_t i = 0; i < logits.size(); ++i) acc[i] += sigmoid(logits[i]);
    }
    T inv = T(1) / T(teachers.size());
    for (T& v : acc) v *= inv;
    return acc;
  }
};

// Ensemble rule as a standalone operation on probability vectors.
template <typename T>
std::vector<T> ensemble_teacher(const std::vector<std::vector<T>>& probs) {
  require_arg(!probs.empty(), "ensemble_teacher: empty input");
  std::vector<T> acc(probs[0].size(), T(0));
  for (const auto& p : probs) {
    require_shape(p.size() == acc.size(), "ensemble_teacher: length mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) acc[i] += p[i];
  }
  T inv = T(1) / T(probs.size());
  for (T& v : acc) v *= inv;
  return acc;
}

}  // namespace dass
